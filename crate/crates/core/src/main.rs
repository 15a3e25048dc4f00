fn main() {
    std::process::exit(veridian::cli::main_with_args(std::env::args_os()));
}
