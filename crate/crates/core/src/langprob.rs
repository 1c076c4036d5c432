// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer language probability of the next token and the layer at which
//! it first rises above a threshold, compared between native-script and
//! romanized targets.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent_rom::Discard;
use crate::lens::lens_column;
use crate::model::Checkpoint;
use crate::numerics::Distribution;
use crate::patching::{mass, prefix_ids};
use crate::prompts::{build_translation_prompt, select_exemplars, ConceptRecord, LangRef, Script, TRANSLATION_SHOTS};
use crate::tokenizer::{TokenId, Vocabulary};

pub const DEFAULT_EMERGENCE_THRESHOLD: f64 = 0.1;

/// z for a two-sided 95% normal interval.
const Z95: f64 = 1.959963984540054;

/// Mass on every prefix (with or without leading space) of any of `words`.
pub fn language_probability(dist: &Distribution, words: &[&str], vocab: &Vocabulary) -> Result<f64> {
    if words.is_empty() || words.iter().all(|w| w.is_empty()) {
        return Err(Error::Argument("empty word list".into()));
    }
    Ok(mass(dist, &prefix_ids(words, vocab)))
}

/// Smallest layer whose value is strictly above `threshold`.
pub fn emergence_layer(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&v| v > threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageCurve {
    pub script: Script,
    /// Target-language probability per layer `0..=k`.
    pub target: Vec<f64>,
    /// English probability per layer.
    pub english: Vec<f64>,
    pub emergence_target: Option<usize>,
    pub emergence_english: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleComparison {
    pub concept_id: String,
    pub native: LanguageCurve,
    pub romanized: LanguageCurve,
}

impl SampleComparison {
    /// Native minus romanized target emergence layer, when both exist.
    pub fn emergence_difference(&self) -> Option<f64> {
        Some(self.native.emergence_target? as f64 - self.romanized.emergence_target? as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DifferenceSummary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean with a normal-approximation 95% interval. `None` for no values;
/// a single value gets a zero-width interval.
pub fn summarize_differences(values: &[f64]) -> Option<DifferenceSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let half = Z95 * std_dev / (n as f64).sqrt();
    Some(DifferenceSummary {
        n,
        mean,
        std_dev,
        ci_low: mean - half,
        ci_high: mean + half,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScriptComparison {
    pub source: String,
    pub target: String,
    pub threshold: f64,
    pub samples: Vec<SampleComparison>,
    pub discarded: Vec<Discard>,
    pub total: usize,
    pub summary: Option<DifferenceSummary>,
}

fn words_of<'a>(record: &'a ConceptRecord, lang: &LangRef) -> Result<Vec<&'a str>> {
    Ok(record.require(lang)?.all_words())
}

fn first_overlap(a: &[&str], b: &[&str], vocab: &Vocabulary) -> Vec<TokenId> {
    prefix_ids(a, vocab).intersection(&prefix_ids(b, vocab)).copied().collect()
}

enum Outcome {
    Kept(SampleComparison),
    Dropped(Discard),
}

#[allow(clippy::too_many_arguments)]
fn compare_sample(
    dataset: &[ConceptRecord],
    index: usize,
    src: &LangRef,
    native: &LangRef,
    romanized: &LangRef,
    english: &LangRef,
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    threshold: f64,
    seed: u64,
) -> Result<Outcome> {
    let record = &dataset[index];
    let english_words = words_of(record, english)?;
    let native_words = words_of(record, native)?;
    let roman_words = words_of(record, romanized)?;
    for (words, script) in [(&native_words, "native"), (&roman_words, "romanized")] {
        let overlap = first_overlap(words, &english_words, vocab);
        if !overlap.is_empty() {
            return Ok(Outcome::Dropped(Discard {
                concept_id: record.concept_id.clone(),
                reason: format!("{script} target and English first-token sets overlap"),
                offending: overlap
                    .iter()
                    .filter_map(|&id| vocab.surface(id).ok().map(String::from))
                    .collect(),
            }));
        }
    }
    let exemplars = select_exemplars(dataset, index, TRANSLATION_SHOTS, seed, |r| {
        r.entry(src).is_some() && r.entry(native).is_some() && r.entry(romanized).is_some()
    })?;
    let english_ids = prefix_ids(&english_words, vocab);
    let curve = |tgt: &LangRef, words: &[&str]| -> Result<LanguageCurve> {
        let prompt = build_translation_prompt(record, src, tgt, &exemplars, vocab)?;
        let trace = ckpt.forward(&prompt.token_ids)?;
        let column = lens_column(&trace, ckpt, prompt.prompt_end)?;
        let target_ids = prefix_ids(words, vocab);
        let target: Vec<f64> = column.iter().map(|d| mass(d, &target_ids)).collect();
        let english: Vec<f64> = column.iter().map(|d| mass(d, &english_ids)).collect();
        Ok(LanguageCurve {
            script: tgt.script,
            emergence_target: emergence_layer(&target, threshold),
            emergence_english: emergence_layer(&english, threshold),
            target,
            english,
        })
    };
    Ok(Outcome::Kept(SampleComparison {
        concept_id: record.concept_id.clone(),
        native: curve(native, &native_words)?,
        romanized: curve(romanized, &roman_words)?,
    }))
}

/// Runs the translation task `src -> target` once with the native-script
/// and once with the romanized target, reading the lens at the final prompt
/// token for every layer. Every record needs both target forms.
pub fn compare_scripts(
    dataset: &[ConceptRecord],
    src: &LangRef,
    target: &str,
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    threshold: f64,
    seed: u64,
) -> Result<ScriptComparison> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} outside (0, 1)")));
    }
    let native = LangRef::native(target);
    let romanized = LangRef::romanized(target);
    let english = LangRef::native("en");
    if let Some(r) = dataset.iter().find(|r| r.entry(&native).is_none() || r.entry(&romanized).is_none()) {
        return Err(Error::Data(format!(
            "concept {:?} lacks a native or romanized {target} form",
            r.concept_id
        )));
    }
    let outcomes = (0..dataset.len())
        .into_par_iter()
        .map(|i| compare_sample(dataset, i, src, &native, &romanized, &english, ckpt, vocab, threshold, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    let mut discarded = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept(s) => samples.push(s),
            Outcome::Dropped(d) => discarded.push(d),
        }
    }
    let diffs: Vec<f64> = samples.iter().filter_map(SampleComparison::emergence_difference).collect();
    Ok(ScriptComparison {
        source: src.to_string(),
        target: target.to_string(),
        threshold,
        summary: summarize_differences(&diffs),
        total: dataset.len(),
        samples,
        discarded,
    })
}

fn layer_cell(layer: Option<usize>) -> String {
    layer.map(|l| l.to_string()).unwrap_or_default()
}

/// One row per sample and script: emergence layers (empty when never
/// reached) followed by `target_l{j}` and `english_l{j}` columns.
pub fn write_comparison_csv<W: Write>(cmp: &ScriptComparison, out: W) -> Result<()> {
    let layers = cmp.samples.first().map_or(0, |s| s.native.target.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["concept_id", "script", "emergence_layer_target", "emergence_layer_english"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..layers).map(|j| format!("target_l{j}")));
    header.extend((0..layers).map(|j| format!("english_l{j}")));
    w.write_record(&header)?;
    for s in &cmp.samples {
        for (name, c) in [("native", &s.native), ("romanized", &s.romanized)] {
            let mut row = vec![
                s.concept_id.clone(),
                name.to_string(),
                layer_cell(c.emergence_target),
                layer_cell(c.emergence_english),
            ];
            row.extend(c.target.iter().chain(&c.english).map(|v| format!("{v:.6}")));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emergence_is_first_strict_crossing() {
        assert_eq!(emergence_layer(&[0.0, 0.1, 0.2, 0.05], 0.1), Some(2));
        assert_eq!(emergence_layer(&[0.0, 0.1], 0.1), None);
        assert_eq!(emergence_layer(&[], 0.1), None);
        assert_eq!(emergence_layer(&[0.5], 0.1), Some(0));
    }

    #[test]
    fn summary_statistics() {
        assert!(summarize_differences(&[]).is_none());
        let s = summarize_differences(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std_dev - 2f64.sqrt()).abs() < 1e-12);
        assert!((s.ci_high - (2.0 + Z95)).abs() < 1e-9);
        let one = summarize_differences(&[4.0]).unwrap();
        assert_eq!((one.ci_low, one.ci_high), (4.0, 4.0));
    }

    #[test]
    fn empty_word_list_rejected() {
        let v = Vocabulary::new("▁", vec!["a".into()]).unwrap();
        let d = Distribution::new(vec![1.0]).unwrap();
        assert!(matches!(language_probability(&d, &[], &v), Err(Error::Argument(_))));
        assert_eq!(language_probability(&d, &["ab"], &v).unwrap(), 1.0);
    }
}
