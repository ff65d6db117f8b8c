use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Word-level vocabulary built from training captions. Id 0 is the reserved
/// unknown token, id 1 the sequence-start readout token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const UNK_ID: usize = 0;
pub const CLS_ID: usize = 1;
const RESERVED: usize = 2;

impl Vocab {
    /// Lowercase, whitespace-split, sorted unique words from the corpus.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut words: Vec<String> = captions
            .into_iter()
            .flat_map(|c| c.to_lowercase().split_whitespace().map(String::from).collect::<Vec<_>>())
            .collect();
        words.sort();
        words.dedup();
        let mut v = Vocab {
            words,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + RESERVED))
            .collect();
    }

    /// Total id count including reserved tokens.
    pub fn size(&self) -> usize {
        self.words.len() + RESERVED
    }

    pub fn id(&self, word: &str) -> usize {
        *self.index.get(word).unwrap_or(&UNK_ID)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCaption {
    pub token_ids: Vec<usize>,
    pub length: usize,
}

/// Lowercase, split on whitespace, map to ids; unknown words become `UNK_ID`.
pub fn tokenize(caption: &str, vocab: &Vocab) -> Result<TokenizedCaption> {
    if caption.trim().is_empty() {
        return Err(Error::EmptyCaption);
    }
    let token_ids: Vec<usize> = caption
        .to_lowercase()
        .split_whitespace()
        .map(|w| vocab.id(w))
        .collect();
    let length = token_ids.len();
    Ok(TokenizedCaption { token_ids, length })
}
