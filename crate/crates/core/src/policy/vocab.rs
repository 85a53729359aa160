//! Token vocabulary of the toy policy, with a greedy longest-match
//! tokenizer and a detokenizer that renders digit runs contiguously.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grader::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};
use crate::hash::fnv1a64;

/// Surface of the end-of-sequence token. Every vocabulary must contain it.
pub const EOS: &str = "<eos>";
/// Surface of the self-reflection token.
pub const REFLECT: &str = "But wait,";

/// Ordered token alphabet. Construction validates uniqueness and the
/// presence of `<eos>`; [`Vocabulary::standard`] additionally pins the
/// structural tokens and the 16..=64 size band expected of a full policy
/// alphabet ([`Vocabulary::custom`] exists for the tiny alphabets used by
/// enumeration tests).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    /// Token ids ordered by surface length (longest first) for the
    /// greedy tokenizer.
    match_order: Vec<u32>,
    is_digit: Vec<bool>,
    eos: u32,
    think_open: Option<u32>,
    think_close: Option<u32>,
    answer_open: Option<u32>,
    answer_close: Option<u32>,
    reflect: Option<u32>,
    hash: u64,
}

/// Position of a tokenization failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UntokenizableAt {
    pub piece: String,
    pub offset: usize,
}

impl Vocabulary {
    /// The default 32-token alphabet used by the pipeline: digits,
    /// operators, structural tags, the reflection token and a small set of
    /// filler words matching the synthetic teacher's phrasing.
    pub fn standard() -> Vocabulary {
        let mut tokens: Vec<String> = Vec::new();
        for d in 0..=9u8 {
            tokens.push(d.to_string());
        }
        for op in ["+", "-", "*", "(", ")", "="] {
            tokens.push(op.to_string());
        }
        for tag in [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE, EOS] {
            tokens.push(tag.to_string());
        }
        tokens.push(REFLECT.to_string());
        for word in [
            "the", "answer", "is", "so", "we", "get", "have", "or", "check", "again",
        ] {
            tokens.push(word.to_string());
        }
        let vocab = Self::build(tokens).expect("standard vocabulary is well-formed");
        assert!(
            (16..=64).contains(&vocab.len()),
            "standard vocabulary must stay within the 16..=64 band"
        );
        vocab
    }

    /// A small custom alphabet for exact-enumeration experiments. Must
    /// include `"<eos>"`; the 16..=64 band is deliberately not enforced.
    pub fn custom<S: AsRef<str>>(tokens: &[S]) -> Result<Vocabulary> {
        Self::build(tokens.iter().map(|s| s.as_ref().to_string()).collect())
    }

    fn build(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < 2 {
            return Err(Error::Config("vocabulary needs at least two tokens".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Config("vocabulary token may not be empty".into()));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        let eos = *index
            .get(EOS)
            .ok_or_else(|| Error::Config(format!("vocabulary must contain `{EOS}`")))?;
        let mut match_order: Vec<u32> = (0..tokens.len() as u32).collect();
        match_order.sort_by(|&a, &b| {
            let (ta, tb) = (&tokens[a as usize], &tokens[b as usize]);
            tb.len().cmp(&ta.len()).then(a.cmp(&b))
        });
        let is_digit = tokens
            .iter()
            .map(|t| t.len() == 1 && t.chars().next().unwrap().is_ascii_digit())
            .collect();
        let mut hash = fnv1a64(0, &(tokens.len() as u64).to_le_bytes());
        for t in &tokens {
            hash = fnv1a64(hash, t.as_bytes());
            hash = fnv1a64(hash, &[0]);
        }
        let find = |s: &str| index.get(s).copied();
        Ok(Vocabulary {
            eos,
            think_open: find(THINK_OPEN),
            think_close: find(THINK_CLOSE),
            answer_open: find(ANSWER_OPEN),
            answer_close: find(ANSWER_CLOSE),
            reflect: find(REFLECT),
            match_order,
            is_digit,
            index,
            tokens,
            hash,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Stable fingerprint over the ordered token list.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn eos(&self) -> u32 {
        self.eos
    }

    pub fn think_open(&self) -> Option<u32> {
        self.think_open
    }

    pub fn think_close(&self) -> Option<u32> {
        self.think_close
    }

    pub fn answer_open(&self) -> Option<u32> {
        self.answer_open
    }

    pub fn answer_close(&self) -> Option<u32> {
        self.answer_close
    }

    pub fn reflect(&self) -> Option<u32> {
        self.reflect
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    fn is_digit_token(&self, id: u32) -> bool {
        self.is_digit[id as usize]
    }

    /// Greedy longest-match tokenization. Whitespace separates tokens but
    /// is not required between them, so digit runs like `"46"` split into
    /// single digits and the multi-word reflection token matches as one.
    pub fn tokenize(&self, text: &str) -> std::result::Result<Vec<u32>, UntokenizableAt> {
        let bytes = text.as_bytes();
        let mut ids = Vec::new();
        let mut pos = 0;
        'scan: while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
                continue;
            }
            let rest = &text[pos..];
            for &id in &self.match_order {
                let surface = &self.tokens[id as usize];
                if rest.starts_with(surface.as_str()) {
                    ids.push(id);
                    pos += surface.len();
                    continue 'scan;
                }
            }
            let piece: String = rest.split_whitespace().next().unwrap_or(rest).to_string();
            return Err(UntokenizableAt { piece, offset: pos });
        }
        Ok(ids)
    }

    /// Render token ids back to text: single spaces between tokens, except
    /// that consecutive digit tokens concatenate into one number.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut prev_digit = false;
        for &id in ids {
            let digit = self.is_digit_token(id);
            if !out.is_empty() && !(prev_digit && digit) {
                out.push(' ');
            }
            out.push_str(self.surface(id));
            prev_digit = digit;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_vocab_size_and_contents() {
        let v = Vocabulary::standard();
        assert!((16..=64).contains(&v.len()));
        for required in ["0", "9", "+", THINK_OPEN, ANSWER_CLOSE, EOS, REFLECT] {
            assert!(v.id(required).is_some(), "missing token {required:?}");
        }
        assert_eq!(v.surface(v.eos()), EOS);
    }

    #[test]
    fn custom_vocab_needs_eos() {
        assert!(Vocabulary::custom(&["a", "b"]).is_err());
        assert!(Vocabulary::custom(&["a", "a", EOS]).is_err());
        let v = Vocabulary::custom(&["a", "b", EOS]).unwrap();
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn digit_runs_split_and_rejoin() {
        let v = Vocabulary::standard();
        let ids = v.tokenize("<think> 12 + 34 = 46 </think> <answer> 46 </answer> <eos>").unwrap();
        let text = v.detokenize(&ids);
        assert_eq!(text, "<think> 12 + 34 = 46 </think> <answer> 46 </answer> <eos>");
        assert_eq!(v.tokenize(&text).unwrap(), ids);
    }

    #[test]
    fn reflection_token_round_trips() {
        let v = Vocabulary::standard();
        let ids = v.tokenize("7 But wait, check again").unwrap();
        assert!(ids.contains(&v.reflect().unwrap()));
        assert_eq!(v.detokenize(&ids), "7 But wait, check again");
    }

    #[test]
    fn detokenize_tokenize_round_trip_on_random_ids() {
        let v = Vocabulary::standard();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let len = rng.gen_range(1..20);
            let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(0..v.len() as u32)).collect();
            let text = v.detokenize(&ids);
            assert_eq!(v.tokenize(&text).unwrap(), ids, "text {text:?}");
        }
    }

    #[test]
    fn untokenizable_text_names_the_piece() {
        let v = Vocabulary::standard();
        let err = v.tokenize("the answer is bananas").unwrap_err();
        assert_eq!(err.piece, "bananas");
    }

    #[test]
    fn vocab_hash_tracks_token_order() {
        let a = Vocabulary::custom(&["a", "b", EOS]).unwrap();
        let b = Vocabulary::custom(&["b", "a", EOS]).unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
