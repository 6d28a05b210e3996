//! Shared vocabulary for the planner and the executor.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;
pub type TokenSequence = Vec<TokenId>;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const SEP: TokenId = 4;
pub const UNK: TokenId = 5;

const RESERVED: [&str; 6] = ["<pad>", "<mask>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// Extra non-ASCII symbols admitted by the character vocabulary.
const EXTRA_CHARS: [char; 1] = ['→'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    #[default]
    Char,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UnknownPolicy {
    #[default]
    Error,
    Substitute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    mode: TokenizerMode,
    unknown: UnknownPolicy,
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Reserved ids, then `'\n'`, printable ASCII, and a few extra symbols.
    pub fn char_level() -> Self {
        let chars = std::iter::once('\n')
            .chain((0x20u8..=0x7e).map(char::from))
            .chain(EXTRA_CHARS);
        Self::from_symbols(TokenizerMode::Char, chars.map(String::from))
    }

    /// Whitespace-separated words seen in `corpus`, in first-seen order.
    pub fn word_level<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = Vec::new();
        let mut set = std::collections::HashSet::new();
        for text in corpus {
            for w in text.split_whitespace() {
                if set.insert(w.to_string()) {
                    seen.push(w.to_string());
                }
            }
        }
        Self::from_symbols(TokenizerMode::Word, seen)
    }

    fn from_symbols(mode: TokenizerMode, symbols: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(symbols);
        let index = all.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self {
            mode,
            unknown: UnknownPolicy::Error,
            symbols: all,
            index,
        }
    }

    pub fn with_unknown_policy(mut self, policy: UnknownPolicy) -> Self {
        self.unknown = policy;
        self
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_special(id: TokenId) -> bool {
        id < RESERVED.len()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    fn lookup(&self, symbol: &str) -> Result<TokenId> {
        match (self.index.get(symbol), self.unknown) {
            (Some(&id), _) if !Self::is_special(id) => Ok(id),
            (_, UnknownPolicy::Substitute) => Ok(UNK),
            _ => Err(Error::Config(format!("symbol {symbol:?} is not in the vocabulary"))),
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        match self.mode {
            TokenizerMode::Char => {
                let mut buf = [0u8; 4];
                text.chars().map(|c| self.lookup(c.encode_utf8(&mut buf))).collect()
            }
            TokenizerMode::Word => text.split_whitespace().map(|w| self.lookup(w)).collect(),
        }
    }

    /// Inverse of [`tokenize`](Self::tokenize). Reserved ids other than UNK
    /// render as nothing.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let parts = ids.iter().filter_map(|&id| match id {
            UNK => Some("?"),
            id if Self::is_special(id) => None,
            id => self.symbol(id),
        });
        match self.mode {
            TokenizerMode::Char => parts.collect(),
            TokenizerMode::Word => parts.collect::<Vec<_>>().join(" "),
        }
    }

    /// Like `detokenize` but shows reserved ids, for logs.
    pub fn render_debug(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.symbol(id).unwrap_or("<?>").to_string())
            .collect::<Vec<_>>()
            .join(if self.mode == TokenizerMode::Word { " " } else { "" })
    }

    /// Text up to (not including) the first EOS or PAD.
    pub fn decode_until_eos(&self, ids: &[TokenId]) -> String {
        let end = ids.iter().position(|&t| t == EOS || t == PAD).unwrap_or(ids.len());
        self.detokenize(&ids[..end])
    }
}
