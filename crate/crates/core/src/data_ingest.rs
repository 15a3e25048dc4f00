//! Labeled review corpora: loading, saving, stratified splitting and
//! per-(domain, label) statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::text_pipeline::Tokenizer;

pub const HEADER: [&str; 4] = ["id", "domain", "label", "text"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset file not found: {0}")]
    MissingFile(String),
    #[error("line {0}: wrong number of columns")]
    MalformedRow(u64),
    #[error("line {0}: label must be 0 or 1")]
    BadLabel(u64),
    #[error("line {0}: unknown domain {1:?}")]
    BadDomain(u64, String),
    #[error("line {0}: review text is empty")]
    EmptyText(u64),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("header must be `id,domain,label,text`")]
    BadHeader,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("train fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Hotel,
    Restaurant,
    Doctor,
    Other,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Hotel, Domain::Restaurant, Domain::Doctor, Domain::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Hotel => "hotel",
            Domain::Restaurant => "restaurant",
            Domain::Doctor => "doctor",
            Domain::Other => "other",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
}

impl Format {
    pub fn delimiter(self) -> u8 {
        match self {
            Format::Csv => b',',
            Format::Tsv => b'\t',
        }
    }

    /// `.tsv`/`.tab` extensions map to TSV, anything else to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("tsv") || e.eq_ignore_ascii_case("tab") => Format::Tsv,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            _ => Err(()),
        }
    }
}

/// One labeled review. `label` is 1 for fake, 0 for genuine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewRecord {
    pub id: String,
    pub domain: Domain,
    pub label: u8,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<ReviewRecord>,
}

impl Dataset {
    /// Validates id uniqueness, labels and non-empty texts.
    pub fn new(name: impl Into<String>, records: Vec<ReviewRecord>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.label > 1 {
                return Err(DataError::BadLabel(0));
            }
            if r.text.trim().is_empty() {
                return Err(DataError::EmptyText(0));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(DataError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Number of records per label, `[genuine, fake]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for r in &self.records {
            counts[r.label as usize] += 1;
        }
        counts
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    read_dataset(file, format, name)
}

/// Parses the delimited format from any reader.
pub fn read_dataset<R: std::io::Read>(reader: R, format: Format, name: String) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    match rows.next() {
        None => {
            return Ok(Dataset {
                name,
                records: Vec::new(),
            })
        }
        Some(header) => {
            let header = header?;
            if header.iter().map(str::trim).ne(HEADER) {
                return Err(DataError::BadHeader);
            }
        }
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != HEADER.len() {
            return Err(DataError::MalformedRow(line));
        }
        let label = match row[2].trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(DataError::BadLabel(line)),
        };
        let domain = row[1]
            .parse()
            .map_err(|_| DataError::BadDomain(line, row[1].to_string()))?;
        if row[3].trim().is_empty() {
            return Err(DataError::EmptyText(line));
        }
        let id = row[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId(id));
        }
        records.push(ReviewRecord {
            id,
            domain,
            label,
            text: row[3].to_string(),
        });
    }
    Ok(Dataset { name, records })
}

pub fn write_dataset<W: std::io::Write>(ds: &Dataset, writer: W, format: Format) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_writer(writer);
    wtr.write_record(HEADER)?;
    for r in &ds.records {
        let label = r.label.to_string();
        wtr.write_record([r.id.as_str(), r.domain.as_str(), label.as_str(), r.text.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_dataset(ds, std::io::BufWriter::new(file), format)
}

/// Per-class train counts by largest remainder so each class lands within
/// one record of its exact proportional share.
fn stratified_quota(counts: &[usize; 2], total: usize, n_train: usize) -> [usize; 2] {
    let exact: Vec<f64> = counts
        .iter()
        .map(|&c| n_train as f64 * c as f64 / total as f64)
        .collect();
    let mut quota = [exact[0].floor() as usize, exact[1].floor() as usize];
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = n_train - quota[0] - quota[1];
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    quota
}

/// Seeded, label-stratified split. The first part holds
/// `floor(train_fraction · N)` records.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let n = ds.len();
    // Guard against products like 0.29 * 100 = 28.999999999999996.
    let n_train = ((train_fraction * n as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in ds.records.iter().enumerate() {
        by_label[r.label as usize].push(i);
    }
    for group in by_label.iter_mut() {
        group.shuffle(&mut rng);
    }
    let quota = stratified_quota(&[by_label[0].len(), by_label[1].len()], n, n_train);

    let mut train_idx = Vec::with_capacity(n_train);
    let mut test_idx = Vec::with_capacity(n - n_train);
    for (group, &q) in by_label.iter().zip(&quota) {
        train_idx.extend_from_slice(&group[..q]);
        test_idx.extend_from_slice(&group[q..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);

    let pick = |idx: &[usize], suffix: &str| Dataset {
        name: format!("{}-{suffix}", ds.name),
        records: idx.iter().map(|&i| ds.records[i].clone()).collect(),
    };
    Ok((pick(&train_idx, "train"), pick(&test_idx, "test")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupStats {
    pub review_count: usize,
    pub unique_word_count: usize,
    pub sentence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetStats {
    pub groups: BTreeMap<(Domain, u8), GroupStats>,
}

impl DatasetStats {
    pub fn total_reviews(&self) -> usize {
        self.groups.values().map(|g| g.review_count).sum()
    }

    pub fn total_sentences(&self) -> usize {
        self.groups.values().map(|g| g.sentence_count).sum()
    }
}

const SENTENCE_END: &[char] = &['.', '!', '?'];

/// Segments ended by `.`, `!` or `?`; an unterminated tail counts too.
/// Segments without any non-whitespace content are skipped.
pub fn count_sentences(text: &str) -> usize {
    text.split(SENTENCE_END).filter(|seg| !seg.trim().is_empty()).count()
}

pub fn dataset_stats(ds: &Dataset, tokenizer: &Tokenizer) -> DatasetStats {
    let mut words: BTreeMap<(Domain, u8), HashSet<String>> = BTreeMap::new();
    let mut groups: BTreeMap<(Domain, u8), GroupStats> = BTreeMap::new();
    for r in &ds.records {
        let key = (r.domain, r.label);
        let g = groups.entry(key).or_default();
        g.review_count += 1;
        g.sentence_count += count_sentences(&crate::text_pipeline::clean_text(&r.text));
        words.entry(key).or_default().extend(tokenizer.words(&r.text));
    }
    for (key, set) in words {
        groups.get_mut(&key).expect("group exists").unique_word_count = set.len();
    }
    DatasetStats { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: usize, label: u8, text: &str) -> ReviewRecord {
        ReviewRecord {
            id: format!("r{id}"),
            domain: Domain::Hotel,
            label,
            text: text.to_string(),
        }
    }

    fn synthetic(n: usize, fake_every: usize) -> Dataset {
        let records = (0..n)
            .map(|i| record(i, u8::from(i % fake_every == 0), "some review text"))
            .collect();
        Dataset::new("syn", records).unwrap()
    }

    fn parse(text: &str) -> Result<Dataset, DataError> {
        read_dataset(text.as_bytes(), Format::Csv, "t".into())
    }

    #[test]
    fn loads_balanced_corpus() {
        let mut text = String::from("id,domain,label,text\n");
        for i in 0..1600 {
            text.push_str(&format!("{i},hotel,{},\"room, nice\"\n", i % 2));
        }
        let ds = parse(&text).unwrap();
        assert_eq!(ds.len(), 1600);
        assert_eq!(ds.class_counts(), [800, 800]);
        assert_eq!(ds.records[0].text, "room, nice");
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("id,domain,label,text\n").unwrap().is_empty());
    }

    #[test]
    fn row_errors_carry_line_numbers() {
        let mut text = String::from("id,domain,label,text\n");
        for i in 2..7 {
            text.push_str(&format!("a{i},hotel,0,fine\n"));
        }
        let bad_label = format!("{text}a7,hotel,2,oops\n");
        assert!(matches!(parse(&bad_label), Err(DataError::BadLabel(7))));
        let short = format!("{text}a7,hotel,1\n");
        assert!(matches!(parse(&short), Err(DataError::MalformedRow(7))));
        let dup = format!("{text}a2,hotel,1,again\n");
        assert!(matches!(parse(&dup), Err(DataError::DuplicateId(id)) if id == "a2"));
        assert!(matches!(parse("id,label,text\n"), Err(DataError::BadHeader)));
    }

    #[test]
    fn missing_file() {
        let err = load_dataset(Path::new("/nonexistent/reviews.csv"), Format::Csv);
        assert!(matches!(err, Err(DataError::MissingFile(_))));
    }

    #[test]
    fn tsv_with_quoted_tabs_and_newlines() {
        let text = "id\tdomain\tlabel\ttext\nx\tdoctor\t1\t\"a\tb\nc \"\"q\"\"\"\n";
        let ds = read_dataset(text.as_bytes(), Format::Tsv, "t".into()).unwrap();
        assert_eq!(ds.records[0].text, "a\tb\nc \"q\"");
        assert_eq!(ds.records[0].domain, Domain::Doctor);
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split_dataset(&synthetic(1600, 2), 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (1280, 320));
        let (tr, te) = split_dataset(&synthetic(5, 2), 0.8, 99).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));
        assert!(matches!(
            split_dataset(&Dataset::default(), 0.8, 0),
            Err(DataError::EmptyDataset)
        ));
        assert!(matches!(
            split_dataset(&synthetic(5, 2), 1.0, 0),
            Err(DataError::BadFraction(_))
        ));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = synthetic(57, 3);
        assert_eq!(split_dataset(&ds, 0.7, 4).unwrap(), split_dataset(&ds, 0.7, 4).unwrap());
        assert_ne!(
            split_dataset(&ds, 0.7, 4).unwrap().0,
            split_dataset(&ds, 0.7, 5).unwrap().0
        );
    }

    #[test]
    fn stats_examples() {
        let ds = Dataset::new("s", vec![record(0, 1, "Great. Great!")]).unwrap();
        let st = dataset_stats(&ds, &Tokenizer);
        let g = st.groups[&(Domain::Hotel, 1)];
        assert_eq!((g.review_count, g.unique_word_count, g.sentence_count), (1, 1, 2));

        let st = dataset_stats(&Dataset::default(), &Tokenizer);
        assert_eq!((st.total_reviews(), st.total_sentences()), (0, 0));

        let ds = Dataset::new("s", vec![record(0, 0, "hello")]).unwrap();
        assert_eq!(
            dataset_stats(&ds, &Tokenizer).groups[&(Domain::Hotel, 0)].sentence_count,
            1
        );
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        prop::collection::vec((any::<bool>(), 0usize..4, "[a-zA-Z ,.\"\n\t!?]{1,30}"), 1..60).prop_map(|rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (fake, d, text))| ReviewRecord {
                    id: format!("id-{i}"),
                    domain: Domain::ALL[d],
                    label: u8::from(fake),
                    text: format!("x{text}"),
                })
                .collect();
            Dataset::new("p", records).unwrap()
        })
    }

    proptest! {
        #[test]
        fn split_partitions_and_stratifies(ds in arb_dataset(), frac in 0.05f64..0.95, seed in any::<u64>()) {
            let (tr, te) = split_dataset(&ds, frac, seed).unwrap();
            prop_assert_eq!(tr.len(), (frac * ds.len() as f64 + 1e-9).floor() as usize);
            let mut all: Vec<&str> = tr.records.iter().chain(&te.records).map(|r| r.id.as_str()).collect();
            all.sort();
            let mut orig: Vec<&str> = ds.records.iter().map(|r| r.id.as_str()).collect();
            orig.sort();
            prop_assert_eq!(all, orig);
            if !tr.is_empty() {
                let frac_fake = |d: &Dataset| d.class_counts()[1] as f64 / d.len() as f64;
                prop_assert!((frac_fake(&tr) - frac_fake(&ds)).abs() <= 1.0 / tr.len() as f64 + 1e-12);
            }
        }

        #[test]
        fn save_load_round_trip(ds in arb_dataset(), tsv in any::<bool>()) {
            let format = if tsv { Format::Tsv } else { Format::Csv };
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf, format).unwrap();
            let back = read_dataset(buf.as_slice(), format, ds.name.clone()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
