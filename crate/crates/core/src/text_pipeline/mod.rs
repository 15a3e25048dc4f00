//! Review pre-processing: noise removal, word tokenization, vocabulary and
//! fixed-length id encoding with a leading CLS token.

mod vocab;

use thiserror::Error;

pub use vocab::{build_vocab, Vocabulary, CLS_ID, PAD_ID, RESERVED, UNK_ID};

/// Characters split off as standalone tokens.
pub const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"', '\''];

const URL_PREFIXES: &[&str] = &["http://", "https://", "www."];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("max_length must be at least 2, got {0}")]
    BadMaxLength(usize),
    #[error("vocabulary file line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },
}

pub fn is_emoji(c: char) -> bool {
    matches!(c as u32, 0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0xFE0F)
}

fn is_url(token: &str) -> bool {
    URL_PREFIXES.iter().any(|p| token.starts_with(p))
}

/// Strips emoji and URL tokens, lowercases, and collapses whitespace.
pub fn clean_text(raw: &str) -> String {
    let lowered: String = raw.chars().filter(|&c| !is_emoji(c)).collect::<String>().to_lowercase();
    let kept: Vec<&str> = lowered.split_whitespace().filter(|t| !is_url(t)).collect();
    kept.join(" ")
}

/// Whitespace split with punctuation characters detached.
pub fn tokenize(cleaned: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in cleaned.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if PUNCTUATION.contains(&c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// `clean_text` followed by `tokenize`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn tokens(&self, raw: &str) -> Vec<String> {
        tokenize(&clean_text(raw))
    }

    /// Tokens that contain at least one non-punctuation character.
    pub fn words(&self, raw: &str) -> Vec<String> {
        self.tokens(raw)
            .into_iter()
            .filter(|t| !t.chars().all(|c| PUNCTUATION.contains(&c)))
            .collect()
    }
}

/// Fixed-length encoder input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub original_length: usize,
}

impl TokenSequence {
    pub fn max_length(&self) -> usize {
        self.ids.len()
    }
}

/// `[CLS] ++ ids(tokens)`, truncated and PAD-extended to `max_length`.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_length: usize) -> Result<TokenSequence, TextError> {
    if max_length < 2 {
        return Err(TextError::BadMaxLength(max_length));
    }
    let mut ids = Vec::with_capacity(max_length);
    ids.push(CLS_ID);
    ids.extend(
        tokens
            .iter()
            .take(max_length - 1)
            .map(|t| vocab.id(t.as_ref()).unwrap_or(UNK_ID)),
    );
    let original_length = ids.len();
    let mut mask = vec![1u8; original_length];
    ids.resize(max_length, PAD_ID);
    mask.resize(max_length, 0);
    Ok(TokenSequence {
        ids,
        mask,
        original_length,
    })
}

/// Clean, tokenize and encode a raw review.
pub fn encode_text(raw: &str, vocab: &Vocabulary, max_length: usize) -> Result<TokenSequence, TextError> {
    encode(&Tokenizer.tokens(raw), vocab, max_length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_examples() {
        assert_eq!(clean_text("Nice stay!! http://t.co/x 😀"), "nice stay!!");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("no noise here"), "no noise here");
        assert_eq!(
            clean_text("  See WWW.example.com   or\tHTTPS://a.b \u{2600}ok "),
            "see or ok"
        );
        assert_eq!(clean_text("x\u{FE0F}y"), "xy");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("great hotel!"), ["great", "hotel", "!"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a.b"), ["a", ".", "b"]);
        assert_eq!(tokenize("(don't)"), ["(", "don", "'", "t", ")"]);
    }

    #[test]
    fn words_drop_punctuation_tokens() {
        assert_eq!(Tokenizer.words("Great. Great!"), ["great", "great"]);
    }

    fn toy_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["x0", "x1", "great", "x3", "hotel"]).unwrap()
    }

    #[test]
    fn encode_examples() {
        let vocab = toy_vocab();
        assert_eq!(vocab.id("great"), Some(5));
        assert_eq!(vocab.id("hotel"), Some(7));
        let seq = encode(&["great", "hotel"], &vocab, 6).unwrap();
        assert_eq!(seq.ids, [2, 5, 7, 0, 0, 0]);
        assert_eq!(seq.mask, [1, 1, 1, 0, 0, 0]);
        assert_eq!(seq.original_length, 3);

        let seq = encode(&["zzz"], &vocab, 4).unwrap();
        assert_eq!(seq.ids[1], UNK_ID);

        let long: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let seq = encode(&long, &vocab, 256).unwrap();
        assert_eq!(seq.original_length, 256);
        assert!(seq.mask.iter().all(|&m| m == 1));

        assert_eq!(encode(&["a"], &vocab, 1), Err(TextError::BadMaxLength(1)));
    }

    #[test]
    fn empty_text_encodes_to_cls_only() {
        let seq = encode_text("http://only.a/url", &toy_vocab(), 4).unwrap();
        assert_eq!(seq.ids, [CLS_ID, PAD_ID, PAD_ID, PAD_ID]);
        assert_eq!(seq.original_length, 1);
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(raw in "(\\PC|[ \\t\\n]|😀|http://x|www\\.|WWW\\.)*") {
            let once = clean_text(&raw);
            prop_assert_eq!(clean_text(&once), once);
        }

        #[test]
        fn encode_satisfies_sequence_invariants(
            tokens in prop::collection::vec("[a-z]{1,3}|great|hotel|[.!?]", 0..40),
            max_length in 2usize..32,
        ) {
            let vocab = toy_vocab();
            let seq = encode(&tokens, &vocab, max_length).unwrap();
            prop_assert_eq!(seq.ids.len(), max_length);
            prop_assert_eq!(seq.mask.len(), max_length);
            prop_assert_eq!(seq.ids[0], CLS_ID);
            prop_assert_eq!(seq.original_length, (1 + tokens.len()).min(max_length));
            for i in 0..max_length {
                prop_assert_eq!(seq.mask[i] == 1, i < seq.original_length);
                prop_assert_eq!(seq.ids[i] == PAD_ID, seq.mask[i] == 0);
                prop_assert!(seq.ids[i] < vocab.len());
            }
        }
    }
}
