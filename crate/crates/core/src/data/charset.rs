use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const NUM_SPECIALS: usize = 3;

/// Ordered recognizable characters. Token id of `symbols[i]` is `i + 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
    case_sensitive: bool,
}

impl Charset {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        let mut index = HashMap::new();
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i + NUM_SPECIALS).is_some() {
                return Err(Error::Config(format!("duplicate charset symbol {c:?}")));
            }
        }
        if symbols.is_empty() {
            return Err(Error::Config("empty charset".into()));
        }
        let case_sensitive = symbols.iter().any(|c| c.is_uppercase());
        Ok(Self {
            symbols,
            index,
            case_sensitive,
        })
    }

    /// `0-9a-z`, case-folded.
    pub fn lowercase_alnum() -> Self {
        Self::new(('0'..='9').chain('a'..='z')).unwrap()
    }

    /// Digits, both cases and a little punctuation.
    pub fn full() -> Self {
        Self::new(
            ('0'..='9')
                .chain('a'..='z')
                .chain('A'..='Z')
                .chain(".,!?-'&:".chars()),
        )
        .unwrap()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len() + NUM_SPECIALS
    }

    pub fn is_case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    /// Case-folds text when the charset has no uppercase symbols.
    pub fn normalize(&self, text: &str) -> String {
        if self.case_sensitive {
            text.to_string()
        } else {
            text.to_lowercase()
        }
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        id.checked_sub(NUM_SPECIALS).and_then(|i| self.symbols.get(i)).copied()
    }

    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<LabelSeq> {
        let norm = self.normalize(text);
        let mut ids = Vec::with_capacity(max_len);
        for c in norm.chars() {
            let id = self
                .id(c)
                .ok_or_else(|| Error::Data(format!("character {c:?} of {text:?} not in charset")))?;
            ids.push(id);
        }
        if ids.len() + 1 > max_len {
            return Err(Error::Data(format!(
                "label {text:?} has {} characters; at most {} fit in length {max_len}",
                ids.len(),
                max_len.saturating_sub(1)
            )));
        }
        ids.push(EOS);
        ids.resize(max_len, PAD);
        Ok(LabelSeq { ids })
    }

    /// Characters up to the first EOS (or PAD); BOS and unknown ids are skipped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS && i != PAD)
            .filter_map(|&i| self.symbol(i))
            .collect()
    }
}

/// Fixed-length label: `[chars..., EOS, PAD...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSeq {
    ids: Vec<usize>,
}

impl LabelSeq {
    pub fn from_ids(ids: Vec<usize>) -> Result<Self> {
        let eos: Vec<usize> = ids.iter().enumerate().filter(|(_, &i)| i == EOS).map(|(p, _)| p).collect();
        let [e] = eos[..] else {
            return Err(Error::Data(format!("label needs exactly one EOS: {ids:?}")));
        };
        if ids[..e].iter().any(|&i| i < NUM_SPECIALS) || ids[e + 1..].iter().any(|&i| i != PAD) {
            return Err(Error::Data(format!("malformed label {ids:?}")));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn eos_position(&self) -> usize {
        self.ids.iter().position(|&i| i == EOS).unwrap()
    }

    pub fn char_count(&self) -> usize {
        self.eos_position()
    }

    /// Teacher-forcing decoder input: BOS followed by the label shifted right.
    pub fn shifted_right(&self) -> Vec<usize> {
        let mut v = Vec::with_capacity(self.ids.len());
        v.push(BOS);
        v.extend_from_slice(&self.ids[..self.ids.len() - 1]);
        v
    }

    /// Positions up to and including EOS.
    pub fn loss_mask(&self) -> Vec<bool> {
        let e = self.eos_position();
        (0..self.ids.len()).map(|p| p <= e).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_construction() {
        let cs = Charset::new(['a', 'b']).unwrap();
        assert_eq!(cs.tokenize("ab", 5).unwrap().ids(), &[3, 4, EOS, PAD, PAD]);
        assert_eq!(cs.tokenize("", 4).unwrap().ids(), &[EOS, PAD, PAD, PAD]);
    }

    #[test]
    fn over_length_and_unknown_are_data_errors() {
        let cs = Charset::lowercase_alnum();
        let e = cs.tokenize("abcdef", 6).unwrap_err();
        assert!(matches!(e, Error::Data(ref m) if m.contains("abcdef")));
        assert!(cs.tokenize("a b", 25).is_err());
        assert!(Charset::new(['a', 'a']).is_err());
    }

    #[test]
    fn case_folding_follows_charset() {
        let cs = Charset::lowercase_alnum();
        assert_eq!(cs.tokenize("HeLLo", 25).unwrap(), cs.tokenize("hello", 25).unwrap());
        assert!(!cs.is_case_sensitive());
        assert!(Charset::full().is_case_sensitive());
        assert_eq!(cs.vocab_size(), 39);
    }

    #[test]
    fn shifted_input_and_mask() {
        let cs = Charset::new(['a', 'b']).unwrap();
        let l = cs.tokenize("ab", 5).unwrap();
        assert_eq!(l.shifted_right(), vec![BOS, 3, 4, EOS, PAD]);
        assert_eq!(l.loss_mask(), vec![true, true, true, false, false]);
        assert!(LabelSeq::from_ids(vec![3, PAD, EOS]).is_err());
        assert!(LabelSeq::from_ids(vec![3, 4, 5]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip(s in "[a-zA-Z0-9]{0,24}") {
            let cs = Charset::lowercase_alnum();
            let l = cs.tokenize(&s, 25).unwrap();
            prop_assert!(LabelSeq::from_ids(l.ids().to_vec()).is_ok());
            prop_assert_eq!(cs.detokenize(l.ids()), cs.normalize(&s));
        }
    }
}
