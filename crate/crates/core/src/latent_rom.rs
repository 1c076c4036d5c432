// SPDX-License-Identifier: MIT OR Apache-2.0

//! Latent-romanization measurement.
//!
//! For each generation timestep of a target-language answer we track a set
//! of romanized candidate tokens and ask, layer by layer through the logit
//! lens, whether any of them receives more than `threshold` probability.
//! Timestep-specific candidate sets for a romanized word `w` of length `n`:
//!
//! * first timestep: prefixes `w[0:i]`, with and without the space marker
//! * intermediate timesteps: every substring `w[i:j]`
//! * final timestep: suffixes `w[i:n]`
//!
//! Samples whose romanized candidates collide with the native-script or
//! English candidates (prefixes with/without marker, suffixes for the final
//! step) are discarded, since a hit could not be attributed to romanization.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lens::decode_state;
use crate::model::Checkpoint;
use crate::numerics::Distribution;
use crate::prompts::{answer_text, build_task_prompt, ConceptRecord, LangRef, Script, Task};
use crate::romanize::Scheme;
use crate::tokenizer::{TokenId, Vocabulary};

pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_WINDOW: usize = 10;

fn chars(word: &str) -> Vec<char> {
    word.chars().collect()
}

/// `w[0:i]` for `1 <= i <= n`.
pub fn prefixes(word: &str) -> Vec<String> {
    let c = chars(word);
    (1..=c.len()).map(|i| c[..i].iter().collect()).collect()
}

/// `w[i:n]` for `0 <= i < n`.
pub fn suffixes(word: &str) -> Vec<String> {
    let c = chars(word);
    (0..c.len()).map(|i| c[i..].iter().collect()).collect()
}

/// `w[i:j]` for `0 <= i < j <= n`.
pub fn substrings(word: &str) -> Vec<String> {
    let c = chars(word);
    (0..c.len())
        .flat_map(|i| (i + 1..=c.len()).map(move |j| (i, j)))
        .map(|(i, j)| c[i..j].iter().collect())
        .collect()
}

/// All prefixes of every word, with and without the space marker.
pub fn prefix_candidates<'a>(words: impl IntoIterator<Item = &'a str>, marker: &str) -> BTreeSet<String> {
    words
        .into_iter()
        .flat_map(prefixes)
        .flat_map(|p| [format!("{marker}{p}"), p])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Timestep {
    First,
    Intermediate,
    Final,
}

impl Timestep {
    /// Kind of each of `count` answer timesteps. A single-token answer is
    /// treated as a first timestep.
    pub fn sequence(count: usize) -> Vec<Timestep> {
        (0..count)
            .map(|t| match t {
                0 => Timestep::First,
                t if t + 1 == count => Timestep::Final,
                _ => Timestep::Intermediate,
            })
            .collect()
    }
}

/// Candidate strings per timestep kind and the vocabulary ids they realize.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSets {
    pub first: BTreeSet<String>,
    pub intermediate: BTreeSet<String>,
    pub last: BTreeSet<String>,
    realized: [BTreeSet<TokenId>; 3],
}

impl TokenSets {
    fn realize(
        first: BTreeSet<String>,
        intermediate: BTreeSet<String>,
        last: BTreeSet<String>,
        vocab: &Vocabulary,
    ) -> Self {
        let realized = [
            vocab.scan(first.iter().map(String::as_str)),
            vocab.scan(intermediate.iter().map(String::as_str)),
            vocab.scan(last.iter().map(String::as_str)),
        ];
        Self {
            first,
            intermediate,
            last,
            realized,
        }
    }

    pub fn candidates(&self, step: Timestep) -> &BTreeSet<String> {
        match step {
            Timestep::First => &self.first,
            Timestep::Intermediate => &self.intermediate,
            Timestep::Final => &self.last,
        }
    }

    pub fn realized(&self, step: Timestep) -> &BTreeSet<TokenId> {
        &self.realized[step as usize]
    }
}

/// Candidate sets for a romanized answer word.
pub fn roman_token_sets(romanized_word: &str, vocab: &Vocabulary) -> Result<TokenSets> {
    if romanized_word.is_empty() {
        return Err(Error::Argument("empty romanized word".into()));
    }
    if !romanized_word.is_ascii() {
        return Err(Error::Argument(format!(
            "romanized word {romanized_word:?} is not ASCII"
        )));
    }
    let first = prefix_candidates([romanized_word], vocab.space_marker());
    let intermediate = substrings(romanized_word).into_iter().collect();
    let last = suffixes(romanized_word).into_iter().collect();
    Ok(TokenSets::realize(first, intermediate, last, vocab))
}

/// Native-script or English sets: prefixes (with/without marker) for every
/// timestep but the last, suffixes for the last.
pub fn reference_token_sets(words: &[&str], vocab: &Vocabulary) -> Result<TokenSets> {
    if words.is_empty() || words.iter().any(|w| w.is_empty()) {
        return Err(Error::Argument("empty reference word list".into()));
    }
    let first = prefix_candidates(words.iter().copied(), vocab.space_marker());
    let last = words.iter().flat_map(|w| suffixes(w)).collect();
    Ok(TokenSets::realize(first.clone(), first, last, vocab))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Keep,
    Discard {
        reason: String,
        /// Colliding surfaces that exist in the vocabulary.
        offending: Vec<String>,
    },
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

/// Discard iff, for some analysed timestep kind, a romanized candidate that
/// exists in the vocabulary is also a native or English candidate.
pub fn overlap_filter(
    rom: &TokenSets,
    native: &TokenSets,
    english: &TokenSets,
    steps: &[Timestep],
    vocab: &Vocabulary,
) -> Verdict {
    let mut offending = BTreeSet::new();
    for &step in steps {
        for s in rom.candidates(step) {
            let collides = native.candidates(step).contains(s) || english.candidates(step).contains(s);
            if collides && vocab.id_of(s).is_some() {
                offending.insert(s.clone());
            }
        }
    }
    if offending.is_empty() {
        Verdict::Keep
    } else {
        Verdict::Discard {
            reason: "romanized tokens overlap native/English tokens".into(),
            offending: offending.into_iter().collect(),
        }
    }
}

/// `1` iff some realized id has probability strictly above `threshold`,
/// compared at the f32 storage precision.
pub fn latent_condition(dist: &Distribution, realized: &BTreeSet<TokenId>, threshold: f64) -> bool {
    let threshold = threshold as f32;
    realized
        .iter()
        .filter_map(|id| dist.probs().get(id.index()))
        .any(|&p| p > threshold)
}

/// `(1/N) sum_i (1/T_i) sum_t r_t^(i)` for one layer; row `i` holds the
/// indicators of sample `i` over its timesteps.
pub fn latent_fraction<R: AsRef<[bool]>>(samples: &[R]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::UndefinedStatistic("latent fraction over zero samples".into()));
    }
    let mut total = 0.0;
    for row in samples {
        let row = row.as_ref();
        if row.is_empty() {
            return Err(Error::Argument("sample with zero timesteps".into()));
        }
        total += row.iter().filter(|&&r| r).count() as f64 / row.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Residual layers `[k - window + 1, k]`, clipped at 0.
pub fn analysis_window(final_layer: usize, window: usize) -> Vec<usize> {
    let lo = (final_layer + 1).saturating_sub(window.max(1));
    (lo..=final_layer).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Teacher-force the whole answer, analyse every timestep.
    Constrained,
    /// Only the first answer token.
    FirstSubword,
    /// Only the last answer token, with the rest of the answer in context.
    LastSubword,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Constrained, Scenario::FirstSubword, Scenario::LastSubword];
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(Scenario::Constrained),
            "first-subword" | "first_subword" => Ok(Scenario::FirstSubword),
            "last-subword" | "last_subword" => Ok(Scenario::LastSubword),
            other => Err(Error::Argument(format!("unknown scenario {other:?}"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Constrained => "constrained",
            Scenario::FirstSubword => "first_subword",
            Scenario::LastSubword => "last_subword",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Input language of translation prompts.
    pub source: LangRef,
    /// Native-script target language.
    pub target: LangRef,
    pub english: LangRef,
    pub threshold: f64,
    pub window: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(source: LangRef, target: LangRef) -> Self {
        Self {
            source,
            target,
            english: LangRef::native("en"),
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleIndicators {
    pub concept_id: String,
    pub timesteps: Vec<Timestep>,
    /// `indicators[w][t]` for window layer `w` and analysed timestep `t`.
    pub indicators: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discard {
    pub concept_id: String,
    pub reason: String,
    pub offending: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatentRomReport {
    pub scenario: Scenario,
    pub task: Task,
    pub language: String,
    pub layers: Vec<usize>,
    pub fractions: Vec<f64>,
    pub samples: Vec<SampleIndicators>,
    pub discarded: Vec<Discard>,
    pub total: usize,
}

impl LatentRomReport {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Timesteps analysed per kept sample.
    pub fn timestep_counts(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.timesteps.len()).collect()
    }

    /// Fraction of kept samples where any window layer meets the condition
    /// at any analysed timestep.
    pub fn any_layer_frequency(&self) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::UndefinedStatistic("no samples survived filtering".into()));
        }
        let hits = self
            .samples
            .iter()
            .filter(|s| s.indicators.iter().flatten().any(|&r| r))
            .count();
        Ok(hits as f64 / self.samples.len() as f64)
    }
}

enum Outcome {
    Kept(SampleIndicators),
    Dropped(Discard),
}

fn drop(concept_id: &str, reason: impl Into<String>) -> Outcome {
    Outcome::Dropped(Discard {
        concept_id: concept_id.to_string(),
        reason: reason.into(),
        offending: vec![],
    })
}

/// Romanized form of the answer: the dataset's romanized entry, else the
/// scheme's output.
fn romanized_form(record: &ConceptRecord, target: &LangRef, native_word: &str, scheme: Option<&Scheme>) -> Option<String> {
    if let Some(e) = record.entry(&target.with_script(Script::Romanized)) {
        return Some(e.word.clone());
    }
    scheme.and_then(|s| s.romanize(native_word).ok())
}

#[allow(clippy::too_many_arguments)]
fn analyse_sample(
    scenario: Scenario,
    task: Task,
    dataset: &[ConceptRecord],
    index: usize,
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    cfg: &ScenarioConfig,
    layers: &[usize],
    scheme: Option<&Scheme>,
) -> Result<Outcome> {
    let record = &dataset[index];
    let id = record.concept_id.as_str();
    let Some(target) = record.entry(&cfg.target) else {
        return Ok(drop(id, format!("no {} entry", cfg.target)));
    };
    let Some(english) = record.entry(&cfg.english) else {
        return Ok(drop(id, format!("no {} entry", cfg.english)));
    };
    if task == Task::Translation && record.entry(&cfg.source).is_none() {
        return Ok(drop(id, format!("no {} entry", cfg.source)));
    }
    if task == Task::Cloze && (target.cloze_sentence.is_none() || target.answer_cue.is_none()) {
        return Ok(drop(id, "no cloze sentence"));
    }
    let Some(roman) = romanized_form(record, &cfg.target, &target.word, scheme) else {
        return Ok(drop(id, "no romanized form"));
    };
    let rom_sets = match roman_token_sets(&roman, vocab) {
        Ok(s) => s,
        Err(e) => return Ok(drop(id, format!("unusable romanization: {e}"))),
    };
    let native_sets = reference_token_sets(&target.all_words(), vocab)?;
    let english_sets = reference_token_sets(&english.all_words(), vocab)?;

    let prompt = build_task_prompt(task, dataset, index, &cfg.source, &cfg.target, cfg.seed, vocab)?;
    let answer = vocab.encode(&answer_text(&target.word))?;
    let steps = match scenario {
        Scenario::Constrained => Timestep::sequence(answer.len()),
        Scenario::FirstSubword => vec![Timestep::First],
        Scenario::LastSubword => vec![Timestep::Final],
    };
    let kinds: Vec<Timestep> = steps.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if let Verdict::Discard { reason, offending } = overlap_filter(&rom_sets, &native_sets, &english_sets, &kinds, vocab) {
        return Ok(Outcome::Dropped(Discard {
            concept_id: id.to_string(),
            reason,
            offending,
        }));
    }

    // Input sequence and the positions whose next-token distribution is read.
    let mut tokens = prompt.token_ids.clone();
    let positions: Vec<usize> = match scenario {
        Scenario::Constrained => {
            tokens.extend_from_slice(&answer[..answer.len() - 1]);
            (0..answer.len()).map(|t| prompt.prompt_end + t).collect()
        }
        Scenario::FirstSubword => vec![prompt.prompt_end],
        Scenario::LastSubword => {
            tokens.extend_from_slice(&answer[..answer.len() - 1]);
            vec![tokens.len() - 1]
        }
    };
    let trace = match ckpt.forward(&tokens) {
        Ok(t) => t,
        Err(Error::Length { len, max }) => {
            return Ok(drop(id, format!("sequence of {len} tokens exceeds max {max}")))
        }
        Err(e) => return Err(e),
    };
    let mut indicators = vec![vec![false; steps.len()]; layers.len()];
    for (w, &layer) in layers.iter().enumerate() {
        for (t, (&pos, &step)) in positions.iter().zip(&steps).enumerate() {
            let dist = decode_state(ckpt, trace.state(layer, pos))?;
            indicators[w][t] = latent_condition(&dist, rom_sets.realized(step), cfg.threshold);
        }
    }
    Ok(Outcome::Kept(SampleIndicators {
        concept_id: id.to_string(),
        timesteps: steps,
        indicators,
    }))
}

pub fn run_scenario(
    scenario: Scenario,
    task: Task,
    dataset: &[ConceptRecord],
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    cfg: &ScenarioConfig,
    scheme: Option<&Scheme>,
) -> Result<LatentRomReport> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {} outside (0, 1)", cfg.threshold)));
    }
    let layers = analysis_window(ckpt.config().final_layer(), cfg.window);
    let outcomes = (0..dataset.len())
        .into_par_iter()
        .map(|i| analyse_sample(scenario, task, dataset, i, ckpt, vocab, cfg, &layers, scheme))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    let mut discarded = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept(s) => samples.push(s),
            Outcome::Dropped(d) => discarded.push(d),
        }
    }
    if samples.is_empty() {
        return Err(Error::UndefinedStatistic(format!(
            "no samples left for {scenario}/{task} after filtering ({} discarded)",
            discarded.len()
        )));
    }
    let fractions = (0..layers.len())
        .map(|w| {
            let rows: Vec<&[bool]> = samples.iter().map(|s| s.indicators[w].as_slice()).collect();
            latent_fraction(&rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentRomReport {
        scenario,
        task,
        language: cfg.target.code.clone(),
        layers,
        fractions,
        samples,
        discarded,
        total: dataset.len(),
    })
}

/// Share of samples whose last answer token triggers the latent condition
/// in at least one window layer.
pub fn romanization_frequency(
    task: Task,
    dataset: &[ConceptRecord],
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    cfg: &ScenarioConfig,
    scheme: Option<&Scheme>,
) -> Result<f64> {
    run_scenario(Scenario::LastSubword, task, dataset, ckpt, vocab, cfg, scheme)?.any_layer_frequency()
}

/// `(scenario, task, language, layer, latent_fraction, n_samples)` rows.
pub fn write_report_csv<W: Write>(reports: &[LatentRomReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "task", "language", "layer", "latent_fraction", "n_samples"])?;
    for r in reports {
        for (layer, frac) in r.layers.iter().zip(&r.fractions) {
            w.write_record([
                r.scenario.to_string(),
                r.task.to_string(),
                r.language.clone(),
                layer.to_string(),
                format!("{frac:.6}"),
                r.n_samples().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// `(concept_id, reason, offending_tokens)` rows; tokens joined by `|`.
pub fn write_discard_csv<W: Write>(discards: &[Discard], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["concept_id", "reason", "offending_tokens"])?;
    for d in discards {
        w.write_record([d.concept_id.as_str(), d.reason.as_str(), &d.offending.join("|")])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
