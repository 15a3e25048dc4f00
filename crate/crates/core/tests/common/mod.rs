#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veridian::data_ingest::{save_dataset, Dataset, Domain, Format, ReviewRecord};

const NEUTRAL: &[&str] = &[
    "the",
    "room",
    "was",
    "clean",
    "and",
    "staff",
    "at",
    "front",
    "desk",
    "checked",
    "us",
    "in",
    "we",
    "stayed",
    "two",
    "nights",
    "breakfast",
    "served",
    "until",
    "ten",
    "parking",
    "cost",
    "extra",
    "bed",
    "window",
    "faced",
    "street",
    "bathroom",
    "had",
    "shower",
    "location",
    "near",
    "station",
    "elevator",
    "slow",
    "wifi",
    "worked",
    "most",
    "time",
    "check",
    "out",
    "noon",
    "lobby",
    "small",
    "coffee",
    "table",
    "dinner",
    "menu",
    "waiter",
    "ordered",
    "pasta",
    "soup",
    "bill",
    "doctor",
    "appointment",
    "waited",
    "minutes",
    "nurse",
    "office",
    "visit",
    "price",
    "floor",
    "towels",
    "pool",
    "closed",
    "evening",
];

const SUPERLATIVES: &[&str] = &[
    "best",
    "amazing",
    "perfect",
    "incredible",
    "unbelievable",
    "greatest",
    "finest",
    "fantastic",
];

/// Reviews where every fake one carries two to four superlatives and no
/// genuine one carries any. Labels alternate so classes stay balanced.
pub fn synthetic_reviews(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains = [Domain::Hotel, Domain::Restaurant, Domain::Doctor];
    let records = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let len = rng.random_range(6..14);
            let mut words: Vec<&str> = (0..len).map(|_| *NEUTRAL.choose(&mut rng).unwrap()).collect();
            if label == 1 {
                for _ in 0..rng.random_range(2..5) {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, SUPERLATIVES.choose(&mut rng).unwrap());
                }
            }
            ReviewRecord {
                id: format!("r{i:04}"),
                domain: domains[i % 3],
                label,
                text: format!("{}.", words.join(" ")),
            }
        })
        .collect();
    Dataset::new("synthetic", records).unwrap()
}

pub fn write_synthetic(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join("reviews.csv");
    save_dataset(&synthetic_reviews(n, seed), &path, Format::Csv).unwrap();
    path
}

/// Config text for a quick three-member run.
pub fn quick_config(data: &Path, out: &Path, seed: u64) -> String {
    format!(
        "data = {}\noutput_dir = {}\nseed = {seed}\nmax_length = 24\nhidden = 16\nffn_dim = 32\nembed_dim = 8\nlearning_rate = 0.006\nbatch_size = 16\nmax_epochs = 20\npatience = 5\n",
        data.display(),
        out.display()
    )
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}
