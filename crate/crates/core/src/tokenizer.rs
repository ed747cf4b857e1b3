//! The single tokenizer shared by vocabulary building, training-data encoding
//! and serving.
//!
//! Text is NFKC-normalized, lowercased and split on whitespace. CJK characters
//! become one unigram each. Every alphanumeric unigram of two or more
//! characters additionally contributes the letter trigrams of `#word#`.
//!
//! Structured features (user profile fields, item categories, ...) are stored
//! in the same [`Vocabulary`] under keys built by [`feature_token`]. Those keys
//! carry an uppercase prefix, which the tokenizer can never emit, so they never
//! collide with text tokens.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const UNK: u32 = 0;
pub const UNK_TEXT: &str = "<UNK>";
const FEATURE_PREFIX: &str = "FEAT:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Unigram,
    Trigram,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    fn unigram(text: String) -> Self {
        Self {
            text,
            kind: TokenKind::Unigram,
        }
    }

    fn trigram(text: String) -> Self {
        Self {
            text,
            kind: TokenKind::Trigram,
        }
    }
}

/// Vocabulary key for a structured feature, e.g. `feature_token("gender", "f")`.
pub fn feature_token(name: &str, value: &str) -> String {
    format!("{FEATURE_PREFIX}{name}={value}")
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF     // hiragana, katakana
        | 0x3400..=0x4DBF   // CJK extension A
        | 0x4E00..=0x9FFF   // CJK unified ideographs
        | 0xAC00..=0xD7AF   // hangul syllables
        | 0xF900..=0xFAFF   // CJK compatibility ideographs
        | 0x20000..=0x2FFFF)
}

fn normalize(text: &str) -> String {
    text.nfkc().collect::<String>().to_lowercase()
}

fn split_unigrams(normalized: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in normalized.split_whitespace() {
        let mut run = String::new();
        for c in word.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

fn trigrams_of(unigram: &str, out: &mut Vec<Token>) {
    let len = unigram.chars().count();
    if len < 2 || !unigram.chars().all(char::is_alphanumeric) {
        return;
    }
    let padded: Vec<char> = std::iter::once('#')
        .chain(unigram.chars())
        .chain(std::iter::once('#'))
        .collect();
    for window in padded.windows(3) {
        out.push(Token::trigram(window.iter().collect()));
    }
}

/// Tokenizes raw text: all unigrams in order, followed by the trigrams of
/// each eligible unigram in the same order.
pub fn tokenize(text: &str) -> Vec<Token> {
    let unigrams = split_unigrams(&normalize(text));
    let mut tokens: Vec<Token> = Vec::with_capacity(unigrams.len() * 4);
    let mut trigrams = Vec::new();
    for u in &unigrams {
        trigrams_of(u, &mut trigrams);
    }
    tokens.extend(unigrams.into_iter().map(Token::unigram));
    tokens.extend(trigrams);
    tokens
}

/// Ordered vocabulary ids for one piece of text (plus optional features).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when the sequence carries no known token at all.
    pub fn is_unknown(&self) -> bool {
        self.0.iter().all(|&id| id == UNK)
    }

    pub fn extend_ids(&mut self, ids: impl IntoIterator<Item = u32>) {
        self.0.extend(ids);
    }
}

/// Token → id map with build-time counts. Id 0 is reserved for `<UNK>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_sorted(entries: Vec<(String, u64)>) -> Self {
        let mut tokens = Vec::with_capacity(entries.len() + 1);
        let mut counts = Vec::with_capacity(entries.len() + 1);
        tokens.push(UNK_TEXT.to_string());
        counts.push(0);
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            counts,
            index,
        }
    }

    /// Builds a vocabulary from raw text only.
    pub fn build<I, S>(corpus: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::build_with_features(corpus, std::iter::empty::<String>(), min_count)
    }

    /// Builds a vocabulary from raw text plus pre-formed feature keys (see
    /// [`feature_token`]). Ids are assigned by descending count, ties broken
    /// lexicographically.
    pub fn build_with_features<I, S, F>(corpus: I, features: F, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
        F: IntoIterator<Item = String>,
    {
        if min_count < 1 {
            return Err(Error::Config("min_count must be >= 1".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in corpus {
            for tok in tokenize(line.as_ref()) {
                *counts.entry(tok.text).or_insert(0) += 1;
            }
        }
        for f in features {
            *counts.entry(f).or_insert(0) += 1;
        }
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_sorted(entries))
    }

    /// Number of ids including `<UNK>`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == 1
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    /// Encodes text. Unknown tokens are dropped; an empty result becomes `[UNK]`.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let ids: Vec<u32> = tokenize(text)
            .iter()
            .filter_map(|t| self.id(&t.text))
            .collect();
        if ids.is_empty() {
            TokenSequence(vec![UNK])
        } else {
            TokenSequence(ids)
        }
    }

    /// Encodes text and appends the ids of known feature keys.
    pub fn encode_with_features<S: AsRef<str>>(&self, text: &str, features: &[S]) -> TokenSequence {
        let mut seq = self.encode(text);
        seq.extend_ids(features.iter().filter_map(|f| self.id(f.as_ref())));
        seq
    }

    /// Ids of the known feature keys, unknown ones dropped.
    pub fn feature_ids<S: AsRef<str>>(&self, features: &[S]) -> Vec<u32> {
        features.iter().filter_map(|f| self.id(f.as_ref())).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{t}\t{i}\t{c}").expect("write to vec");
        }
        out
    }

    /// Hex SHA-256 of the serialized form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|(line, msg)| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })
    }

    fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err((n + 1, format!("expected 3 fields, got {}", fields.len())));
            }
            let id: usize = fields[1]
                .parse()
                .map_err(|e| (n + 1, format!("bad id: {e}")))?;
            let count: u64 = fields[2]
                .parse()
                .map_err(|e| (n + 1, format!("bad count: {e}")))?;
            if id != n {
                return Err((n + 1, format!("id {id} out of order")));
            }
            if n == 0 {
                if fields[0] != UNK_TEXT || count != 0 {
                    return Err((1, "first line must be <UNK>\t0\t0".into()));
                }
                continue;
            }
            if fields[0].is_empty() {
                return Err((n + 1, "empty token".into()));
            }
            entries.push((fields[0].to_string(), count));
        }
        if text.is_empty() {
            return Err((1, "empty vocabulary file".into()));
        }
        let vocab = Self::from_sorted(entries);
        if vocab.index.len() + 1 != vocab.tokens.len() {
            return Err((0, "duplicate token".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(tokens: &[Token], kind: TokenKind) -> Vec<&str> {
        tokens
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.text.as_str())
            .collect()
    }

    #[test]
    fn iphone_example() {
        let toks = tokenize("iPhone 11");
        assert_eq!(texts(&toks, TokenKind::Unigram), ["iphone", "11"]);
        assert_eq!(
            texts(&toks, TokenKind::Trigram),
            ["#ip", "iph", "pho", "hon", "one", "ne#", "#11", "11#"]
        );
    }

    #[test]
    fn empty_and_case_folding() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t ").is_empty());
        let toks = tokenize("Apple  APPLE");
        assert_eq!(texts(&toks, TokenKind::Unigram), ["apple", "apple"]);
    }

    #[test]
    fn cjk_split_per_character() {
        let toks = tokenize("苹果手机 iphone新款");
        assert_eq!(
            texts(&toks, TokenKind::Unigram),
            ["苹", "果", "手", "机", "iphone", "新", "款"]
        );
        // only "iphone" qualifies for trigrams
        assert_eq!(texts(&toks, TokenKind::Trigram).len(), 6);
    }

    #[test]
    fn compatibility_normalization() {
        // full-width letters and ideographic space
        let toks = tokenize("ＡＢＣ\u{3000}ｄｅ");
        assert_eq!(texts(&toks, TokenKind::Unigram), ["abc", "de"]);
    }

    #[test]
    fn single_chars_and_punctuation_get_no_trigrams() {
        let toks = tokenize("a x-ray");
        assert_eq!(texts(&toks, TokenKind::Unigram), ["a", "x-ray"]);
        assert!(texts(&toks, TokenKind::Trigram).is_empty());
    }

    #[test]
    fn min_count_filters() {
        let v = Vocabulary::build(["a b", "a"], 2).unwrap();
        assert_eq!(v.count(v.id("a").unwrap()), Some(2));
        assert!(v.id("b").is_none());
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn single_token_corpus() {
        let v = Vocabulary::build(["x"], 1).unwrap();
        assert_eq!(v.token(0), Some(UNK_TEXT));
        assert_eq!(v.id("x"), Some(1));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn empty_corpus_has_only_unk() {
        let v = Vocabulary::build(Vec::<String>::new(), 1).unwrap();
        assert_eq!(v.len(), 1);
        assert!(v.is_empty());
        assert_eq!(v.to_bytes(), b"<UNK>\t0\t0\n");
    }

    #[test]
    fn min_count_zero_rejected() {
        assert!(matches!(Vocabulary::build(["a"], 0), Err(Error::Config(_))));
    }

    #[test]
    fn ids_by_count_then_lexicographic() {
        let v = Vocabulary::build(["b a c c", "c b"], 1).unwrap();
        // c:3, b:2, a:1; trigram-free since all single characters
        assert_eq!(v.id("c"), Some(1));
        assert_eq!(v.id("b"), Some(2));
        assert_eq!(v.id("a"), Some(3));
        let v = Vocabulary::build(["zz yy"], 1).unwrap();
        let order: Vec<&str> = (1..v.len() as u32).map(|i| v.token(i).unwrap()).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
    }

    #[test]
    fn build_is_deterministic() {
        let corpus = ["red apple", "green apple pie", "苹果 phone", "phone case"];
        let a = Vocabulary::build(corpus, 1).unwrap().to_bytes();
        let b = Vocabulary::build(corpus, 1).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_known_and_unknown() {
        let v = Vocabulary::build(["apple phone"], 1).unwrap();
        let seq = v.encode("apple phone");
        assert!(seq.ids().iter().all(|&id| id >= 1));
        assert_eq!(seq, v.encode("apple phone"));
        assert_eq!(v.encode("zzz qqq").ids(), &[UNK]);
        assert!(v.encode("").is_unknown());
    }

    #[test]
    fn unknown_unigram_keeps_known_trigrams() {
        let v = Vocabulary::build(["apple"], 1).unwrap();
        // "apples" is unknown but shares #ap, app, ppl, ple with "apple"
        let seq = v.encode("apples");
        let expected: Vec<u32> = ["#ap", "app", "ppl", "ple"]
            .iter()
            .map(|t| v.id(t).unwrap())
            .collect();
        assert_eq!(seq.ids(), expected.as_slice());
    }

    #[test]
    fn feature_tokens_never_collide_with_text() {
        let key = feature_token("gender", "f");
        assert!(tokenize(&key).iter().all(|t| t.text != key));
        let v = Vocabulary::build_with_features(["shoes"], [key.clone()], 1).unwrap();
        let seq = v.encode_with_features("shoes", &[key.as_str(), "FEAT:unknown=1"]);
        assert_eq!(*seq.ids().last().unwrap(), v.id(&key).unwrap());
        assert_eq!(seq.len(), v.encode("shoes").len() + 1);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let v = Vocabulary::build_with_features(
            ["iphone 11 case", "苹果"],
            [feature_token("power", "3")],
            1,
        )
        .unwrap();
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded, v);
        assert_eq!(loaded.hash(), v.hash());
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<UNK>\t0\t0\n"));
    }

    #[test]
    fn load_rejects_bad_files() {
        assert!(Vocabulary::parse("").is_err());
        assert!(Vocabulary::parse("a\t0\t1\n").is_err());
        assert!(Vocabulary::parse("<UNK>\t0\t0\nx\t2\t1\n").is_err());
        assert!(Vocabulary::parse("<UNK>\t0\t0\nx\t1\n").is_err());
        assert!(Vocabulary::parse("<UNK>\t0\t0\nx\t1\t1\nx\t2\t1\n").is_err());
    }
}
