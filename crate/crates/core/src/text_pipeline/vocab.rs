use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::{TextError, Tokenizer};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;

/// Reserved token strings, in id order. Uppercase, so they can never
/// collide with cleaned (lowercased) text.
pub const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

/// Dense token ↔ id mapping with the reserved tokens at ids 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens` (ids 3..) in the given order.
    /// Returns `None` on a duplicate or a token clashing with a reserved one.
    pub fn from_tokens<I, S>(tokens: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
        {
            if vocab.index.insert(t.clone(), vocab.tokens.len()).is_some() {
                return None;
            }
            vocab.tokens.push(t);
        }
        Some(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: the reserved tokens are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `token<TAB>id` per line.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (id, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{id}");
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self, TextError> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: &str| TextError::VocabFormat {
                line: line_no,
                reason: reason.to_string(),
            };
            let (token, id) = line.split_once('\t').ok_or_else(|| err("expected token<TAB>id"))?;
            let id: usize = id.parse().map_err(|_| err("id is not an integer"))?;
            if id != i {
                return Err(err("ids must be contiguous from 0"));
            }
            if id < RESERVED.len() && token != RESERVED[id] {
                return Err(err("reserved token out of place"));
            }
            tokens.push(token.to_string());
        }
        if tokens.len() < RESERVED.len() {
            return Err(TextError::VocabFormat {
                line: tokens.len() + 1,
                reason: "missing reserved tokens".into(),
            });
        }
        Self::from_tokens(tokens.into_iter().skip(RESERVED.len())).ok_or(TextError::VocabFormat {
            line: 0,
            reason: "duplicate token".into(),
        })
    }

    /// SHA-256 of the file representation, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}

/// Frequency-ranked vocabulary over `texts`. Ties break lexicographically;
/// the result holds at most `max_size` entries including reserved ones.
pub fn build_vocab<'a, I>(texts: I, min_freq: usize, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for token in Tokenizer.tokens(text) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size.saturating_sub(RESERVED.len()));
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t)).expect("counted tokens are distinct")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_freq_filters() {
        let v = build_vocab(["good good bad"], 2, 100);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("good"), Some(3));
        assert_eq!(v.id("bad"), None);
    }

    #[test]
    fn empty_corpus_is_reserved_only() {
        let v = build_vocab(std::iter::empty(), 1, 100);
        assert_eq!(v.len(), 3);
        assert_eq!(v.token(CLS_ID), Some("[CLS]"));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(["zeta alpha"], 1, 100);
        assert_eq!(v.id("alpha"), Some(3));
        assert_eq!(v.id("zeta"), Some(4));
    }

    #[test]
    fn max_size_truncates() {
        let v = build_vocab(["a a a b b c"], 1, 5);
        assert_eq!(v.tokens(), ["[PAD]", "[UNK]", "[CLS]", "a", "b"]);
    }

    #[test]
    fn counting_is_batching_independent() {
        let whole = build_vocab(["x y z y", "z z q"], 1, 50);
        let split = build_vocab(["x y", "z y", "z z", "q"], 1, 50);
        assert_eq!(whole, split);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let v = build_vocab(["the room was clean , the bed was soft"], 1, 100);
        let text = v.to_file_string();
        assert!(text.starts_with("[PAD]\t0\n[UNK]\t1\n[CLS]\t2\n"));
        assert_eq!(Vocabulary::from_file_string(&text).unwrap(), v);
        assert!(Vocabulary::from_file_string("[PAD]\t0\n[UNK]\t2\n").is_err());
        assert!(Vocabulary::from_file_string("[PAD]\t0\n").is_err());
        assert!(Vocabulary::from_file_string("[PAD]\t0\n[UNK]\t1\n[CLS]\t2\na\t3\na\t4\n").is_err());
    }
}
