// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concept dataset ingestion and few-shot prompt rendering for the
//! translation, repetition and cloze tasks.
//!
//! Dataset files are JSON Lines, one concept per line:
//!
//! ```json
//! {"concept_id": "flower", "entries": [
//!   {"lang": "fr", "script": "native", "word": "fleur", "display_name": "Français"},
//!   {"lang": "hi", "script": "native", "word": "फूल", "display_name": "हिन्दी"},
//!   {"lang": "hi", "script": "romanized", "word": "phool", "display_name": "Hindi"},
//!   {"lang": "en", "script": "native", "word": "flower", "synonyms": ["blossom"],
//!    "display_name": "English", "answer_cue": "Answer:",
//!    "cloze_sentence": "A \"___\" is often given as a gift and can be found in gardens."}
//! ]}
//! ```
//!
//! Prompts are rendered one example per line. Translation and repetition
//! lines read `<Src>: "<word>" <Tgt>: "<word>"` and the query line stops
//! after `<Tgt>:`. Cloze lines read `<sentence> <cue> "<word>"` and the query
//! stops after the cue.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Vocabulary, VocabularyBuilder};

/// Literal blank marker inside cloze sentences.
pub const CLOZE_BLANK: &str = "___";
pub const TRANSLATION_SHOTS: usize = 5;
pub const REPETITION_SHOTS: usize = 5;
pub const CLOZE_SHOTS: usize = 2;
/// Longest romanized piece added by [`dataset_vocabulary`].
pub const ROMAN_PIECE_CHARS: usize = 3;
/// Longest non-ASCII native prefix added by [`dataset_vocabulary`].
pub const NATIVE_PIECE_CHARS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Script {
    Native,
    Romanized,
}

/// A language code plus the script its words are written in.
///
/// Parsed from `"hi"` (native script) or `"hi:rom"` / `"hi:romanized"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LangRef {
    pub code: String,
    pub script: Script,
}

impl LangRef {
    pub fn native(code: &str) -> Self {
        Self {
            code: code.to_string(),
            script: Script::Native,
        }
    }

    pub fn romanized(code: &str) -> Self {
        Self {
            code: code.to_string(),
            script: Script::Romanized,
        }
    }

    pub fn with_script(&self, script: Script) -> Self {
        Self {
            code: self.code.clone(),
            script,
        }
    }
}

impl FromStr for LangRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (code, script) = match s.split_once(':') {
            None => (s, Script::Native),
            Some((c, "rom" | "romanized")) => (c, Script::Romanized),
            Some((c, "native")) => (c, Script::Native),
            Some((_, other)) => {
                return Err(Error::Argument(format!("unknown script suffix {other:?} in {s:?}")))
            }
        };
        if code.is_empty() {
            return Err(Error::Argument(format!("empty language code in {s:?}")));
        }
        Ok(Self {
            code: code.to_string(),
            script,
        })
    }
}

impl fmt::Display for LangRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.script {
            Script::Native => write!(f, "{}", self.code),
            Script::Romanized => write!(f, "{}:rom", self.code),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageEntry {
    pub lang: String,
    pub script: Script,
    pub word: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms: Vec<String>,
    /// Label used in prompts, e.g. `Français` or `हिन्दी`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloze_sentence: Option<String>,
    /// Cue that precedes the cloze answer, e.g. `Answer:`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_cue: Option<String>,
}

impl LanguageEntry {
    /// The word followed by its synonyms.
    pub fn all_words(&self) -> Vec<&str> {
        std::iter::once(self.word.as_str())
            .chain(self.synonyms.iter().map(String::as_str))
            .collect()
    }

    fn display_name(&self) -> Result<&str> {
        self.display_name.as_deref().ok_or_else(|| {
            Error::Data(format!("entry {}:{:?} has no display_name", self.lang, self.script))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptRecord {
    pub concept_id: String,
    pub entries: Vec<LanguageEntry>,
}

impl ConceptRecord {
    pub fn entry(&self, lang: &LangRef) -> Option<&LanguageEntry> {
        self.entries
            .iter()
            .find(|e| e.lang == lang.code && e.script == lang.script)
    }

    pub fn require(&self, lang: &LangRef) -> Result<&LanguageEntry> {
        self.entry(lang).ok_or_else(|| {
            Error::Data(format!("concept {:?} has no {lang} entry", self.concept_id))
        })
    }

    fn validate(&self, line: usize) -> Result<()> {
        let schema = |message: String| Error::Schema { line, message };
        if self.concept_id.trim().is_empty() {
            return Err(schema("empty concept_id".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.lang.as_str(), e.script)) {
                return Err(schema(format!(
                    "concept {:?}: duplicate entry for ({}, {:?})",
                    self.concept_id, e.lang, e.script
                )));
            }
            if e.word.trim().is_empty() || e.synonyms.iter().any(|s| s.trim().is_empty()) {
                return Err(schema(format!(
                    "concept {:?}: empty word in {} entry",
                    self.concept_id, e.lang
                )));
            }
            if let Some(s) = &e.cloze_sentence {
                let blanks = s.matches(CLOZE_BLANK).count();
                if blanks != 1 {
                    return Err(schema(format!(
                        "concept {:?}: cloze sentence in {} has {blanks} blanks",
                        self.concept_id, e.lang
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_dataset(text: &str) -> Result<Vec<ConceptRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: ConceptRecord = serde_json::from_str(raw).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        record.validate(line)?;
        if !ids.insert(record.concept_id.clone()) {
            return Err(Error::Schema {
                line,
                message: format!("duplicate concept_id {:?}", record.concept_id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<ConceptRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Translation,
    Repetition,
    Cloze,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(Task::Translation),
            "repetition" => Ok(Task::Repetition),
            "cloze" => Ok(Task::Cloze),
            other => Err(Error::Argument(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Translation => "translation",
            Task::Repetition => "repetition",
            Task::Cloze => "cloze",
        })
    }
}

/// Vocabulary covering a dataset: printable ASCII and every character used,
/// each ASCII native word and synonym with all its prefixes (with and
/// without the space marker), prefixes of other native words up to
/// [`NATIVE_PIECE_CHARS`] chars, substrings of romanized words up to
/// [`ROMAN_PIECE_CHARS`] chars, and the whole words of labels, cues and
/// cloze sentences.
pub fn dataset_vocabulary(records: &[ConceptRecord], space_marker: &str) -> Result<Vocabulary> {
    let mut b = VocabularyBuilder::new(space_marker);
    b.add("\n");
    for c in '!'..='~' {
        b.add(&c.to_string());
    }
    for e in records.iter().flat_map(|r| &r.entries) {
        for w in e.all_words() {
            b.add_chars(w);
            if e.script == Script::Romanized {
                let chars: Vec<char> = w.chars().collect();
                for i in 0..chars.len() {
                    for j in i + 1..=(i + ROMAN_PIECE_CHARS).min(chars.len()) {
                        let piece: String = chars[i..j].iter().collect();
                        if i == 0 {
                            b.add(&format!("{space_marker}{piece}"));
                        }
                        b.add(&piece);
                    }
                }
            } else if w.is_ascii() {
                b.add_prefixes(w);
            } else {
                let head: String = w.chars().take(NATIVE_PIECE_CHARS).collect();
                b.add_prefixes(&head);
            }
        }
        let extra = [&e.display_name, &e.cloze_sentence, &e.answer_cue];
        for text in extra.into_iter().flatten() {
            b.add_chars(text);
            for piece in text.split(' ').filter(|p| !p.is_empty()) {
                b.add(piece).add(&format!("{space_marker}{piece}"));
            }
        }
    }
    b.build()
}

/// Rendered prompt with token-level annotations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSpec {
    pub concept_id: String,
    pub text: String,
    pub token_ids: Vec<TokenId>,
    pub task: Task,
    pub answer_language: String,
    pub answer_script: Script,
    pub answer_word: String,
    /// Inclusive token range of the query word (the blank for cloze).
    pub answer_source_span: (usize, usize),
    /// Index of the final prompt token.
    pub prompt_end: usize,
}

impl PromptSpec {
    /// Last token of the word being translated or repeated (`n_s` / `n_t`).
    pub fn source_position(&self) -> usize {
        self.answer_source_span.1
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Text the model is expected to produce after the prompt.
pub fn answer_text(word: &str) -> String {
    format!(" {word}")
}

/// Picks `count` exemplars by walking the dataset cyclically from
/// `query_index + 1 + seed`, skipping the query concept and ineligible
/// records.
pub fn select_exemplars<'a>(
    records: &'a [ConceptRecord],
    query_index: usize,
    count: usize,
    seed: u64,
    eligible: impl Fn(&ConceptRecord) -> bool,
) -> Result<Vec<&'a ConceptRecord>> {
    let n = records.len();
    let query = records
        .get(query_index)
        .ok_or_else(|| Error::Argument(format!("query index {query_index} outside dataset")))?;
    let start = (query_index as u64 + 1 + seed % n as u64) as usize % n;
    let picked: Vec<&ConceptRecord> = (0..n)
        .map(|off| &records[(start + off) % n])
        .filter(|r| r.concept_id != query.concept_id && eligible(r))
        .take(count)
        .collect();
    if picked.len() < count {
        return Err(Error::Data(format!(
            "only {} eligible exemplars for concept {:?}, need {count}",
            picked.len(),
            query.concept_id
        )));
    }
    Ok(picked)
}

fn check_exemplars(record: &ConceptRecord, exemplars: &[&ConceptRecord], count: usize) -> Result<()> {
    if exemplars.len() != count {
        return Err(Error::Argument(format!(
            "expected {count} exemplars, got {}",
            exemplars.len()
        )));
    }
    if let Some(e) = exemplars.iter().find(|e| e.concept_id == record.concept_id) {
        return Err(Error::Argument(format!(
            "exemplar {:?} is the query concept",
            e.concept_id
        )));
    }
    Ok(())
}

struct Rendered {
    text: String,
    /// Character range of the annotated word inside `text`.
    span_chars: Range<usize>,
}

fn tokenize(
    rendered: Rendered,
    vocab: &Vocabulary,
    record: &ConceptRecord,
    task: Task,
    answer: &LanguageEntry,
) -> Result<PromptSpec> {
    let pieces = vocab.encode_with_offsets(&rendered.text)?;
    let overlapping: Vec<usize> = pieces
        .iter()
        .enumerate()
        .filter(|(_, (_, r))| r.start < rendered.span_chars.end && rendered.span_chars.start < r.end)
        .map(|(i, _)| i)
        .collect();
    let (Some(&first), Some(&last)) = (overlapping.first(), overlapping.last()) else {
        return Err(Error::Spec("query word covers no tokens".into()));
    };
    Ok(PromptSpec {
        concept_id: record.concept_id.clone(),
        text: rendered.text,
        token_ids: pieces.iter().map(|(id, _)| *id).collect(),
        task,
        answer_language: answer.lang.clone(),
        answer_script: answer.script,
        answer_word: answer.word.clone(),
        answer_source_span: (first, last),
        prompt_end: pieces.len() - 1,
    })
}

/// Joins example lines and the query line, returning the char range of
/// `word`, which starts `word_offset` bytes into `query`.
fn assemble(lines: Vec<String>, query: String, word_offset: usize, word: &str) -> Rendered {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    let start = text.chars().count() + query[..word_offset].chars().count();
    text.push_str(&query);
    Rendered {
        text,
        span_chars: start..start + word.chars().count(),
    }
}

fn pair_line(src_name: &str, src_word: &str, tgt_name: &str, tgt_word: &str) -> String {
    format!("{src_name}: \"{src_word}\" {tgt_name}: \"{tgt_word}\"")
}

/// Query line `<Src>: "<word>" <Tgt>:` plus the byte offset of the word.
fn pair_query(src_name: &str, word: &str, tgt_name: &str) -> (String, usize) {
    let offset = src_name.len() + 3;
    (format!("{src_name}: \"{word}\" {tgt_name}:"), offset)
}

pub fn build_translation_prompt(
    record: &ConceptRecord,
    src: &LangRef,
    tgt: &LangRef,
    exemplars: &[&ConceptRecord],
    vocab: &Vocabulary,
) -> Result<PromptSpec> {
    check_exemplars(record, exemplars, TRANSLATION_SHOTS)?;
    let query_src = record.require(src)?;
    let answer = record.require(tgt)?;
    let (src_name, tgt_name) = (query_src.display_name()?, answer.display_name()?);
    let lines = exemplars
        .iter()
        .map(|ex| {
            Ok(pair_line(
                src_name,
                &ex.require(src)?.word,
                tgt_name,
                &ex.require(tgt)?.word,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (query, offset) = pair_query(src_name, &query_src.word, tgt_name);
    let rendered = assemble(lines, query, offset, &query_src.word);
    tokenize(rendered, vocab, record, Task::Translation, answer)
}

pub fn build_repetition_prompt(
    record: &ConceptRecord,
    lang: &LangRef,
    exemplars: &[&ConceptRecord],
    vocab: &Vocabulary,
) -> Result<PromptSpec> {
    check_exemplars(record, exemplars, REPETITION_SHOTS)?;
    let answer = record.require(lang)?;
    let name = answer.display_name()?;
    let lines = exemplars
        .iter()
        .map(|ex| {
            let w = &ex.require(lang)?.word;
            Ok(pair_line(name, w, name, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let (query, offset) = pair_query(name, &answer.word, name);
    let rendered = assemble(lines, query, offset, &answer.word);
    tokenize(rendered, vocab, record, Task::Repetition, answer)
}

fn cloze_parts<'a>(r: &'a ConceptRecord, lang: &LangRef) -> Result<(&'a str, &'a str, &'a str)> {
    let e = r.require(lang)?;
    let sentence = e.cloze_sentence.as_deref().ok_or_else(|| {
        Error::Data(format!("concept {:?} has no {lang} cloze sentence", r.concept_id))
    })?;
    let cue = e.answer_cue.as_deref().ok_or_else(|| {
        Error::Data(format!("concept {:?} has no {lang} answer cue", r.concept_id))
    })?;
    Ok((sentence, cue, e.word.as_str()))
}

pub fn build_cloze_prompt(
    record: &ConceptRecord,
    lang: &LangRef,
    exemplars: &[&ConceptRecord],
    vocab: &Vocabulary,
) -> Result<PromptSpec> {
    check_exemplars(record, exemplars, CLOZE_SHOTS)?;
    let cloze_parts = |r| cloze_parts(r, lang);
    let lines = exemplars
        .iter()
        .map(|ex| {
            let (sentence, cue, word) = cloze_parts(ex)?;
            Ok(format!("{sentence} {cue} \"{word}\""))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sentence, cue, _) = cloze_parts(record)?;
    let query = format!("{sentence} {cue}");
    let blank = sentence.find(CLOZE_BLANK).expect("validated at load");
    let rendered = assemble(lines, query, blank, CLOZE_BLANK);
    tokenize(rendered, vocab, record, Task::Cloze, record.require(lang)?)
}

/// Builds the prompt for `task`, drawing exemplars from `dataset`.
///
/// Translation reads `src -> tgt`; repetition and cloze use `tgt` only.
pub fn build_task_prompt(
    task: Task,
    dataset: &[ConceptRecord],
    index: usize,
    src: &LangRef,
    tgt: &LangRef,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<PromptSpec> {
    let record = &dataset[index];
    match task {
        Task::Translation => {
            let ex = select_exemplars(dataset, index, TRANSLATION_SHOTS, seed, |r| {
                r.entry(src).is_some() && r.entry(tgt).is_some()
            })?;
            build_translation_prompt(record, src, tgt, &ex, vocab)
        }
        Task::Repetition => {
            let ex = select_exemplars(dataset, index, REPETITION_SHOTS, seed, |r| {
                r.entry(tgt).is_some()
            })?;
            build_repetition_prompt(record, tgt, &ex, vocab)
        }
        Task::Cloze => {
            let ex = select_exemplars(dataset, index, CLOZE_SHOTS, seed, |r| {
                r.entry(tgt)
                    .is_some_and(|e| e.cloze_sentence.is_some() && e.answer_cue.is_some())
            })?;
            build_cloze_prompt(record, tgt, &ex, vocab)
        }
    }
}
