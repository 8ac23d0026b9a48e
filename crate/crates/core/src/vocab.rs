//! Token ids, reserved symbols and the vocabulary file format.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
/// Number of reserved ids; content tokens start here.
pub const NUM_RESERVED: u32 = 4;

pub fn is_reserved(id: u32) -> bool {
    id < NUM_RESERVED
}

/// Content tokens followed by a single `EOS` terminator.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn from_content(content: &[u32]) -> Self {
        let mut v = Vec::with_capacity(content.len() + 1);
        v.extend_from_slice(content);
        v.push(EOS);
        Self(v)
    }

    pub fn content(&self) -> &[u32] {
        &self.0[..self.0.len() - 1]
    }

    /// Tokens including the trailing `EOS`.
    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// Number of content tokens.
    pub fn len(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.content())
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(content: Vec<u32>) -> Self {
        Self::from_content(&content)
    }
}

/// Dense id ↔ token map. Ids `0..4` are `<pad> <bos> <eos> <unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Reserved symbols plus `n_content` synthetic tokens `w4, w5, ...`.
    pub fn synthetic(n_content: usize) -> Self {
        let mut tokens: Vec<String> = ["<pad>", "<bos>", "<eos>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..n_content {
            tokens.push(format!("w{}", i + NUM_RESERVED as usize));
        }
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn render(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < NUM_RESERVED as usize {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "vocabulary is missing reserved tokens",
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_keeps_eos_terminator() {
        let s = TokenSequence::from_content(&[5, 6]);
        assert_eq!(s.as_slice(), &[5, 6, EOS]);
        assert_eq!(s.content(), &[5, 6]);
        assert_eq!(s.len(), 2);
        assert!(TokenSequence::from_content(&[]).is_empty());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::synthetic(5);
        assert_eq!(v.len(), 9);
        assert_eq!(v.id("<eos>"), EOS);
        assert_eq!(v.id("nope"), UNK);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
        assert_eq!(v.render(&[4, 8]), "w4 w8");
    }
}
