//! Word-level tokenizer over the closed template/caption corpus.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const USER: u32 = 4;
pub const ASSISTANT: u32 = 5;
pub const OBS: u32 = 6;
pub const POSE: u32 = 7;

pub const RESERVED: [&str; 8] = [
    "<pad>",
    "<bos>",
    "<eos>",
    "<unk>",
    "<user>",
    "<assistant>",
    "<obs>",
    "<pose>",
];

pub const MAX_VOCAB: usize = 4096;

/// Lowercases, splits on whitespace and separates punctuation. Bracketed
/// placeholders such as `<POSE>` stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for word in lower.split_whitespace() {
        let mut current = String::new();
        let mut chars = word.chars().peekable();
        while let Some(c) = chars.next() {
            if c == '<' {
                let rest: String = chars.clone().collect();
                if let Some(end) = rest.find('>') {
                    let inner = &rest[..end];
                    if !inner.is_empty() && inner.chars().all(|ch| ch.is_alphanumeric() || ch == '_') {
                        if !current.is_empty() {
                            out.push(std::mem::take(&mut current));
                        }
                        out.push(format!("<{inner}>"));
                        for _ in 0..=end {
                            chars.next();
                        }
                        continue;
                    }
                }
            }
            if c.is_ascii_punctuation() && c != '-' {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Whitespace/case normal form: the tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Config("vocabulary must start with the reserved tokens".into()));
        }
        if tokens.len() > MAX_VOCAB {
            return Err(Error::Config(format!("vocabulary size {} exceeds {MAX_VOCAB}", tokens.len())));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate token '{t}'")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Reserved ids, then words by descending frequency, ties lexicographic.
    pub fn build<S: AsRef<str>>(texts: &[S]) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for tok in tokenize(t.as_ref()) {
                if !RESERVED.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Vocab::from_tokens(tokens)
    }

    pub fn build_from_files<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let mut lines = Vec::new();
        for p in paths {
            let p = p.as_ref();
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            lines.extend(text.lines().map(str::to_string));
        }
        Vocab::build(&lines)
    }

    /// Vocabulary over everything the data generators can emit.
    pub fn shipped() -> Self {
        Vocab::build(&crate::data::templates::shipped_corpus()).expect("shipped corpus is nonempty")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word ids without any special framing.
    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Word ids followed by EOS.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = self.encode_words(text);
        ids.push(EOS);
        ids
    }

    /// `BOS USER question ASSISTANT`: the context the model answers from.
    pub fn prompt_ids(&self, question: &str) -> Vec<u32> {
        let mut ids = vec![BOS, USER];
        ids.extend(self.encode_words(question));
        ids.push(ASSISTANT);
        ids
    }

    /// Full teacher-forcing sequence, the prompt followed by the answer and
    /// EOS, together with the index of the first answer token.
    pub fn dialogue_ids(&self, question: &str, answer: &str) -> (Vec<u32>, usize) {
        let mut ids = self.prompt_ids(question);
        let start = ids.len();
        ids.extend(self.encode(answer));
        (ids, start)
    }

    /// Inverse of [`Vocab::encode`] up to normalization; PAD/BOS/EOS are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{t}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(n + 1, "expected `id<TAB>token`"))?;
            let id: usize = id.parse().map_err(|e| Error::parse(n + 1, format!("bad id: {e}")))?;
            if id != tokens.len() {
                return Err(Error::parse(n + 1, format!("ids must be contiguous, got {id}")));
            }
            tokens.push(tok.to_string());
        }
        Vocab::from_tokens(tokens)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Vocab::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// SHA-256 of the vocab file contents, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::templates::{Templates, DESCRIPTION_SLOT};

    #[test]
    fn frequency_order() {
        let v = Vocab::build(&["a a b"]).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v.id("a"), 8);
        assert_eq!(v.id("b"), 9);
        assert_eq!(&v.tokens()[..8], RESERVED.map(String::from).as_slice());
    }

    #[test]
    fn build_is_deterministic() {
        let corpus = crate::data::templates::shipped_corpus();
        assert_eq!(Vocab::build(&corpus).unwrap().to_text(), Vocab::build(&corpus).unwrap().to_text());
    }

    #[test]
    fn shipped_vocab_fits() {
        let v = Vocab::shipped();
        assert!(v.len() <= MAX_VOCAB);
        for text in crate::data::templates::shipped_corpus() {
            assert!(!v.encode_words(&text).contains(&UNK), "{text}");
        }
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(Vocab::build::<&str>(&[]), Err(Error::EmptyCorpus)));
        assert!(matches!(Vocab::build(&["   "]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn placeholders_map_to_reserved_ids() {
        let v = Vocab::shipped();
        let ids = v.encode("The SMPL pose is <POSE> .");
        let n = ids.len();
        assert_eq!(&ids[n - 3..], &[POSE, v.id("."), EOS]);
        assert_eq!(v.encode_words("<OBS> what")[0], OBS);
    }

    #[test]
    fn unknown_words() {
        let v = Vocab::shipped();
        assert_eq!(v.encode_words("xylophone"), vec![UNK]);
    }

    #[test]
    fn template_round_trip() {
        let v = Vocab::shipped();
        let t = Templates::default();
        let filled: Vec<String> = t
            .text_questions
            .iter()
            .map(|q| q.replace(DESCRIPTION_SLOT, "the left knee is fully bent"))
            .collect();
        for text in filled.iter().chain(&t.obs_questions).chain(&t.pose_answers) {
            assert_eq!(v.decode(&v.encode(text)), normalize(text));
        }
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("Sure, it is <POSE>. person's"),
            vec!["sure", ",", "it", "is", "<pose>", ".", "person", "'", "s"]
        );
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::shipped();
        assert_eq!(Vocab::parse(&v.to_text()).unwrap(), v);
        assert!(Vocab::parse("0\t<pad>\n2\tx\n").is_err());
    }
}
