// SPDX-License-Identifier: MIT OR Apache-2.0

//! Table-driven romanization.
//!
//! A scheme is an ordered list of `source grapheme sequence -> roman` rules
//! applied left to right, longest source first. ASCII that no rule covers
//! passes through unchanged. Lossless schemes carry inverse rules (given
//! explicitly or derived by swapping) and are audited at load time: every
//! rule must invert back to its own source.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeMode {
    Lossless,
    Lossy,
}

/// Longest-match rewrite table.
#[derive(Debug, Clone, Default)]
struct RuleTable {
    map: HashMap<String, String>,
    max_chars: usize,
}

impl RuleTable {
    fn insert(&mut self, from: &str, to: &str) -> bool {
        self.max_chars = self.max_chars.max(from.chars().count());
        self.map.insert(from.to_string(), to.to_string()).is_none()
    }

    /// Rewrites `text`; `on_miss` decides what happens to an uncovered char.
    fn apply(&self, text: &str, on_miss: impl Fn(char, usize) -> Result<()>) -> Result<String> {
        let starts: Vec<usize> = text
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(text.len()))
            .collect();
        let n = starts.len() - 1;
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        while pos < n {
            let longest = self.max_chars.min(n - pos);
            let hit = (1..=longest).rev().find_map(|len| {
                self.map
                    .get(&text[starts[pos]..starts[pos + len]])
                    .map(|to| (to, len))
            });
            match hit {
                Some((to, len)) => {
                    out.push_str(to);
                    pos += len;
                }
                None => {
                    let ch = text[starts[pos]..].chars().next().unwrap();
                    on_miss(ch, pos)?;
                    out.push(ch);
                    pos += 1;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Scheme {
    name: String,
    mode: SchemeMode,
    rules: Vec<(String, String)>,
    forward: RuleTable,
    inverse: Option<RuleTable>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeFile {
    name: String,
    mode: String,
    rules: Vec<Vec<String>>,
    #[serde(default)]
    inverse_rules: Option<Vec<Vec<String>>>,
}

fn parse_pairs(raw: Vec<Vec<String>>, what: &str) -> Result<Vec<(String, String)>> {
    raw.into_iter()
        .enumerate()
        .map(|(i, pair)| match <[String; 2]>::try_from(pair) {
            Ok([src, dst]) if !src.is_empty() => Ok((src, dst)),
            Ok(_) => Err(Error::Parse(format!("{what} {i}: empty source sequence"))),
            Err(p) => Err(Error::Parse(format!(
                "{what} {i}: expected [source, target], got {} elements",
                p.len()
            ))),
        })
        .collect()
}

impl Scheme {
    /// Builds and (for lossless schemes) audits a scheme.
    pub fn new(
        name: impl Into<String>,
        mode: SchemeMode,
        rules: Vec<(String, String)>,
        inverse_rules: Option<Vec<(String, String)>>,
    ) -> Result<Self> {
        let mut forward = RuleTable::default();
        for (src, dst) in &rules {
            if src.is_empty() {
                return Err(Error::Parse("rule with empty source sequence".into()));
            }
            if !forward.insert(src, dst) {
                return Err(Error::Parse(format!("duplicate source sequence {src:?}")));
            }
        }
        let inverse = match mode {
            SchemeMode::Lossy => None,
            SchemeMode::Lossless => {
                let mut table = RuleTable::default();
                match &inverse_rules {
                    Some(inv) => {
                        for (roman, native) in inv {
                            if roman.is_empty() {
                                return Err(Error::Parse("inverse rule with empty source".into()));
                            }
                            if !table.insert(roman, native) {
                                return Err(Error::Parse(format!(
                                    "duplicate inverse source {roman:?}"
                                )));
                            }
                        }
                    }
                    None => {
                        for (src, dst) in &rules {
                            if dst.is_empty() {
                                return Err(Error::Losslessness(format!(
                                    "rule {src:?} maps to the empty string"
                                )));
                            }
                            if !table.insert(dst, src) {
                                return Err(Error::Losslessness(format!(
                                    "several rules romanize to {dst:?}"
                                )));
                            }
                        }
                    }
                }
                Some(table)
            }
        };
        let scheme = Self {
            name: name.into(),
            mode,
            rules,
            forward,
            inverse,
        };
        scheme.audit()?;
        Ok(scheme)
    }

    /// Per-rule round-trip check for lossless schemes.
    fn audit(&self) -> Result<()> {
        if self.mode == SchemeMode::Lossy {
            return Ok(());
        }
        for (src, dst) in &self.rules {
            match self.deromanize(dst) {
                Ok(back) if back == *src => {}
                Ok(back) => {
                    return Err(Error::Losslessness(format!(
                        "rule {src:?} -> {dst:?} inverts to {back:?}"
                    )))
                }
                Err(e) => {
                    return Err(Error::Losslessness(format!(
                        "rule {src:?} -> {dst:?} does not invert: {e}"
                    )))
                }
            }
        }
        if let Some(inv) = &self.inverse {
            for (roman, native) in &inv.map {
                match self.romanize(native) {
                    Ok(r) if r == *roman => {}
                    _ => {
                        return Err(Error::Losslessness(format!(
                            "inverse rule {roman:?} -> {native:?} does not romanize back"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let file: SchemeFile =
            serde_json::from_str(json).map_err(|e| Error::Parse(format!("scheme JSON: {e}")))?;
        let mode = match file.mode.as_str() {
            "lossless" => SchemeMode::Lossless,
            "lossy" => SchemeMode::Lossy,
            other => return Err(Error::Parse(format!("unknown scheme mode {other:?}"))),
        };
        let rules = parse_pairs(file.rules, "rule")?;
        let inverse = file
            .inverse_rules
            .map(|r| parse_pairs(r, "inverse rule"))
            .transpose()?;
        Self::new(file.name, mode, rules, inverse)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mode(&self) -> SchemeMode {
        self.mode
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    pub fn romanize(&self, text: &str) -> Result<String> {
        self.forward.apply(text, |ch, offset| {
            if ch.is_ascii() {
                Ok(())
            } else {
                Err(Error::Coverage { ch, offset })
            }
        })
    }

    pub fn deromanize(&self, text: &str) -> Result<String> {
        let inverse = self
            .inverse
            .as_ref()
            .ok_or_else(|| Error::Mode(format!("scheme {:?} is lossy", self.name)))?;
        inverse.apply(text, |ch, offset| {
            if ch.is_ascii() {
                Ok(())
            } else {
                Err(Error::Inversion {
                    span: ch.to_string(),
                    offset,
                })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(p: &[(&str, &str)]) -> Vec<(String, String)> {
        p.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn empty_lossless_is_identity() {
        let s = Scheme::new("id", SchemeMode::Lossless, vec![], None).unwrap();
        assert_eq!(s.romanize("hello, world").unwrap(), "hello, world");
        assert_eq!(s.deromanize("hello").unwrap(), "hello");
        assert_eq!(s.romanize("").unwrap(), "");
        assert!(matches!(s.romanize("é"), Err(Error::Coverage { ch: 'é', offset: 0 })));
    }

    #[test]
    fn duplicate_source_is_parse_error() {
        let json = r#"{"name":"x","mode":"lossy","rules":[["क","k"],["क","q"]]}"#;
        assert!(matches!(Scheme::from_json_str(json), Err(Error::Parse(_))));
        let bad = r#"{"name":"x","mode":"lossy","rules":[["क"]]}"#;
        assert!(matches!(Scheme::from_json_str(bad), Err(Error::Parse(_))));
        let mode = r#"{"name":"x","mode":"lossier","rules":[]}"#;
        assert!(matches!(Scheme::from_json_str(mode), Err(Error::Parse(_))));
    }

    #[test]
    fn longest_source_wins() {
        let s = Scheme::new("t", SchemeMode::Lossy, pairs(&[("क", "k"), ("क्ष", "x"), ("ष", "sh")]), None)
            .unwrap();
        assert_eq!(s.romanize("क्षक").unwrap(), "xk");
        assert!(matches!(s.romanize("क्"), Err(Error::Coverage { offset: 1, .. })));
    }

    #[test]
    fn lossy_scheme_cannot_deromanize() {
        let s = Scheme::new("t", SchemeMode::Lossy, pairs(&[("क", "k")]), None).unwrap();
        assert!(matches!(s.deromanize("k"), Err(Error::Mode(_))));
    }

    #[test]
    fn ambiguous_lossless_scheme_fails_audit() {
        let r = Scheme::new("t", SchemeMode::Lossless, pairs(&[("क", "k"), ("ख", "k")]), None);
        assert!(matches!(r, Err(Error::Losslessness(_))));
        // "kh" decodes greedily as a single rule, so क+ह cannot round-trip
        let r = Scheme::new(
            "t",
            SchemeMode::Lossless,
            pairs(&[("क", "k"), ("ह", "h"), ("ख", "kh"), ("कह", "x")]),
            Some(pairs(&[("k", "क"), ("h", "ह"), ("kh", "ख"), ("x", "कह")])),
        );
        assert!(r.is_ok());
        let r = Scheme::new(
            "t",
            SchemeMode::Lossless,
            pairs(&[("क", "k"), ("ह", "h"), ("ख", "kh"), ("ग", "kh")]),
            Some(pairs(&[("k", "क"), ("h", "ह"), ("kh", "ख")])),
        );
        assert!(matches!(r, Err(Error::Losslessness(_))));
    }

    #[test]
    fn inversion_error_on_foreign_glyph() {
        let s = Scheme::new("t", SchemeMode::Lossless, pairs(&[("क", "k")]), None).unwrap();
        assert_eq!(s.deromanize("").unwrap(), "");
        assert!(matches!(s.deromanize("kж"), Err(Error::Inversion { offset: 1, .. })));
    }
}
