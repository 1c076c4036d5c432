// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vocabulary loading, greedy longest-match encoding and vocabulary scans.
//!
//! A space in input text is encoded as the vocabulary's space marker (the
//! `▁` convention), so `" ra"` is looked up as `"▁ra"`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    space_marker: String,
    tokens: Vec<VocabEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabEntry {
    id: u32,
    text: String,
}

/// Immutable id <-> surface table.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    space_marker: String,
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
    max_chars: usize,
}

impl Vocabulary {
    /// Builds a vocabulary where `surfaces[i]` has id `i`.
    pub fn new(space_marker: impl Into<String>, surfaces: Vec<String>) -> Result<Self> {
        let space_marker = space_marker.into();
        if space_marker.is_empty() {
            return Err(Error::Format("space marker must be non-empty".into()));
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        let mut max_chars = 0;
        for (i, s) in surfaces.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Format(format!("token {i} has an empty surface")));
            }
            if let Some(pos) = s.rfind(space_marker.as_str()) {
                if pos != 0 {
                    return Err(Error::Format(format!(
                        "token {i} ({s:?}) contains the space marker after its first position"
                    )));
                }
            }
            if s.contains(' ') {
                return Err(Error::Format(format!(
                    "token {i} ({s:?}) contains a literal space"
                )));
            }
            if index.insert(s.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::Format(format!("duplicate surface {s:?}")));
            }
            max_chars = max_chars.max(s.chars().count());
        }
        Ok(Self {
            space_marker,
            surfaces,
            index,
            max_chars,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)
            .map_err(|e| Error::Format(format!("vocabulary JSON: {e}")))?;
        let n = file.tokens.len();
        let mut surfaces: Vec<Option<String>> = vec![None; n];
        for entry in file.tokens {
            let slot = surfaces.get_mut(entry.id as usize).ok_or_else(|| {
                Error::Format(format!("token id {} outside dense range [0, {n})", entry.id))
            })?;
            if slot.is_some() {
                return Err(Error::Format(format!("token id {} listed twice", entry.id)));
            }
            *slot = Some(entry.text);
        }
        // n entries, each id < n and none repeated, so every slot is filled
        let surfaces = surfaces.into_iter().map(Option::unwrap).collect();
        Self::new(file.space_marker, surfaces)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = VocabFile {
            space_marker: self.space_marker.clone(),
            tokens: self
                .surfaces
                .iter()
                .enumerate()
                .map(|(i, s)| VocabEntry {
                    id: i as u32,
                    text: s.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn space_marker(&self) -> &str {
        &self.space_marker
    }

    pub fn surface(&self, id: TokenId) -> Result<&str> {
        self.surfaces
            .get(id.index())
            .map(String::as_str)
            .ok_or_else(|| Error::Range(format!("token id {id} outside [0, {})", self.len())))
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    /// `surface` with the space marker prepended.
    pub fn with_marker(&self, surface: &str) -> String {
        format!("{}{surface}", self.space_marker)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(self
            .encode_with_offsets(text)?
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }

    /// Greedy longest-match segmentation, returning each token together
    /// with the character range of `text` it covers.
    pub fn encode_with_offsets(&self, text: &str) -> Result<Vec<(TokenId, Range<usize>)>> {
        // Rewrite spaces to the marker, remembering for every char of the
        // rewritten string which original char it came from.
        let mut rewritten = String::with_capacity(text.len());
        let mut origin: Vec<usize> = Vec::with_capacity(text.len());
        let mut byte_starts: Vec<usize> = Vec::with_capacity(text.len() + 1);
        for (i, ch) in text.chars().enumerate() {
            if ch == ' ' {
                for _ in self.space_marker.chars() {
                    origin.push(i);
                }
                for (b, _) in self.space_marker.char_indices() {
                    byte_starts.push(rewritten.len() + b);
                }
                rewritten.push_str(&self.space_marker);
            } else {
                origin.push(i);
                byte_starts.push(rewritten.len());
                rewritten.push(ch);
            }
        }
        byte_starts.push(rewritten.len());
        let n = origin.len();

        let mut out = Vec::new();
        let mut pos = 0;
        while pos < n {
            let longest = self.max_chars.min(n - pos);
            let hit = (1..=longest).rev().find_map(|len| {
                let piece = &rewritten[byte_starts[pos]..byte_starts[pos + len]];
                self.index.get(piece).map(|&id| (id, len))
            });
            let Some((id, len)) = hit else {
                let offset = origin[pos];
                let ch = text.chars().nth(offset).unwrap_or(' ');
                return Err(Error::Coverage { ch, offset });
            };
            out.push((id, origin[pos]..origin[pos + len - 1] + 1));
            pos += len;
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut text = String::new();
        for &id in ids {
            let s = self.surface(id)?;
            match s.strip_prefix(self.space_marker.as_str()) {
                Some(rest) => {
                    text.push(' ');
                    text.push_str(rest);
                }
                None => text.push_str(s),
            }
        }
        Ok(text)
    }

    /// Ids of every surface exactly equal to one of `candidates`.
    pub fn scan<'a, I>(&self, candidates: I) -> BTreeSet<TokenId>
    where
        I: IntoIterator<Item = &'a str>,
    {
        candidates
            .into_iter()
            .filter_map(|c| self.id_of(c))
            .collect()
    }
}

/// Free-function form of [`Vocabulary::scan`].
pub fn scan_vocabulary<'a, I>(candidates: I, vocab: &Vocabulary) -> BTreeSet<TokenId>
where
    I: IntoIterator<Item = &'a str>,
{
    vocab.scan(candidates)
}

/// Accumulates surfaces for a synthetic vocabulary.
///
/// Used to derive desk-scale fixture vocabularies from a concept dataset:
/// every character seen, the bare marker, and whatever word pieces the
/// caller adds. Ids are assigned in (char length, lexical) order.
#[derive(Debug, Clone)]
pub struct VocabularyBuilder {
    space_marker: String,
    surfaces: BTreeSet<String>,
}

impl VocabularyBuilder {
    pub fn new(space_marker: impl Into<String>) -> Self {
        let space_marker = space_marker.into();
        let mut surfaces = BTreeSet::new();
        surfaces.insert(space_marker.clone());
        Self {
            space_marker,
            surfaces,
        }
    }

    /// Adds every non-space character of `text` as a single-char token.
    pub fn add_chars(&mut self, text: &str) -> &mut Self {
        for ch in text.chars().filter(|&c| c != ' ') {
            self.surfaces.insert(ch.to_string());
        }
        self
    }

    pub fn add(&mut self, surface: &str) -> &mut Self {
        if !surface.is_empty() && !surface.contains(' ') {
            self.surfaces.insert(surface.to_string());
        }
        self
    }

    /// Adds every prefix of `word`, with and without the space marker.
    pub fn add_prefixes(&mut self, word: &str) -> &mut Self {
        let chars: Vec<char> = word.chars().collect();
        for end in 1..=chars.len() {
            let piece: String = chars[..end].iter().collect();
            if piece.contains(' ') {
                break;
            }
            self.surfaces.insert(format!("{}{piece}", self.space_marker));
            self.surfaces.insert(piece);
        }
        self
    }

    /// Adds every contiguous substring of `word`.
    pub fn add_substrings(&mut self, word: &str) -> &mut Self {
        let chars: Vec<char> = word.chars().collect();
        for i in 0..chars.len() {
            for j in i + 1..=chars.len() {
                self.add(&chars[i..j].iter().collect::<String>());
            }
        }
        self
    }

    pub fn build(&self) -> Result<Vocabulary> {
        let mut surfaces: Vec<String> = self
            .surfaces
            .iter()
            .filter(|s| {
                // marker only as a prefix
                s.rfind(self.space_marker.as_str()).is_none_or(|p| p == 0)
            })
            .cloned()
            .collect();
        surfaces.sort_by(|a, b| a.chars().count().cmp(&b.chars().count()).then(a.cmp(b)));
        Vocabulary::new(self.space_marker.clone(), surfaces)
    }
}
