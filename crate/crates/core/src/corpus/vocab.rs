use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Dense token ↔ id map. Ids 0..4 are reserved for PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<String>> for Vocab {
    /// Rebuilds from a full token list (reserved entries included).
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocab::new();
        for t in tokens.into_iter().skip(RESERVED.len()) {
            v.insert(&t);
        }
        v
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn new() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().cloned().zip(0..).collect();
        Self { tokens, index }
    }

    /// Id of `token`, adding it at the end if new.
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercases, splits on whitespace, maps unknown tokens to UNK and
    /// optionally appends EOS.
    pub fn tokenize(&self, text: &str, append_eos: bool) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = split_words(text).map(|w| self.id_or_unk(&w)).collect();
        if append_eos {
            ids.push(EOS);
        }
        ids
    }

    /// Space-joined tokens, stopping at EOS and skipping PAD/BOS.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One non-reserved token per line; line `k` (0-based) holds id `k + 4`.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for t in &self.tokens[RESERVED.len()..] {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut v = Vocab::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            v.insert(line);
        }
        Ok(v)
    }
}

pub(crate) fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}
