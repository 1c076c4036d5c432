// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching: donate the residual stream of the last token of a
//! source word to the matching position of a target prompt, from a start
//! layer `j` through the final layer, and watch which concept the target
//! prompt then produces.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent_rom::prefix_candidates;
use crate::model::{Checkpoint, PatchPlan};
use crate::numerics::{softmax, Distribution, Tensor};
use crate::prompts::{build_translation_prompt, select_exemplars, ConceptRecord, LangRef, PromptSpec, TRANSLATION_SHOTS};
use crate::tokenizer::{TokenId, Vocabulary};

/// Smoothing added to every curve point before normalizing for KL.
pub const CURVE_EPSILON: f64 = 1e-9;

/// Ids of every prefix of every word, with and without the space marker.
pub fn prefix_ids(words: &[&str], vocab: &Vocabulary) -> BTreeSet<TokenId> {
    let candidates = prefix_candidates(words.iter().copied(), vocab.space_marker());
    vocab.scan(candidates.iter().map(String::as_str))
}

pub(crate) fn mass(dist: &Distribution, ids: &BTreeSet<TokenId>) -> f64 {
    ids.iter()
        .filter(|id| id.index() < dist.len())
        .map(|id| dist.prob(id.index()))
        .sum::<f64>()
        .min(1.0)
}

/// Probability mass on every vocabulary token that is a prefix of `word`
/// or one of its synonyms (with or without leading space). Each id is
/// counted once.
pub fn concept_probability(dist: &Distribution, word: &str, synonyms: &[String], vocab: &Vocabulary) -> Result<f64> {
    if word.is_empty() {
        return Err(Error::Argument("empty concept word".into()));
    }
    let mut words = vec![word];
    words.extend(synonyms.iter().map(String::as_str).filter(|s| !s.is_empty()));
    Ok(mass(dist, &prefix_ids(&words, vocab)))
}

/// Residuals at the source word's last token, `(k + 1) x d`.
pub fn extract_donor(source: &PromptSpec, ckpt: &Checkpoint) -> Result<Tensor> {
    let pos = source.source_position();
    if source.answer_source_span.0 > pos || pos > source.prompt_end || source.prompt_end >= source.len() {
        return Err(Error::Spec(format!(
            "span {:?} / prompt end {} invalid for {} tokens",
            source.answer_source_span,
            source.prompt_end,
            source.len()
        )));
    }
    ckpt.forward(&source.token_ids)?.position_states(pos)
}

/// Element-wise mean of equally shaped donors.
pub fn mean_donor(donors: &[Tensor]) -> Result<Tensor> {
    let first = donors
        .first()
        .ok_or_else(|| Error::Argument("mean of zero donors".into()))?;
    if let Some(bad) = donors.iter().find(|d| d.dims() != first.dims()) {
        return Err(Error::Shape(format!(
            "donor dims {:?} differ from {:?}",
            bad.dims(),
            first.dims()
        )));
    }
    let mut acc = vec![0.0f64; first.len()];
    for d in donors {
        for (a, &v) in acc.iter_mut().zip(d.data()) {
            *a += f64::from(v);
        }
    }
    let n = donors.len() as f64;
    Tensor::new(first.dims().to_vec(), acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Words expressing one concept: in the target output language and in English.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptWords {
    pub concept_id: String,
    pub target_words: Vec<String>,
    pub english_words: Vec<String>,
}

impl ConceptWords {
    pub fn from_record(record: &ConceptRecord, target: &LangRef, english: &LangRef) -> Result<Self> {
        let words = |l: &LangRef| -> Result<Vec<String>> {
            Ok(record.require(l)?.all_words().into_iter().map(String::from).collect())
        };
        Ok(Self {
            concept_id: record.concept_id.clone(),
            target_words: words(target)?,
            english_words: words(english)?,
        })
    }

    fn target_refs(&self) -> Vec<&str> {
        self.target_words.iter().map(String::as_str).collect()
    }
}

/// Validated source/target pairing.
#[derive(Debug, Clone, Serialize)]
pub struct PatchExperiment {
    sources: Vec<PromptSpec>,
    target: PromptSpec,
    source_concept: ConceptWords,
    target_concept: ConceptWords,
    target_language: String,
}

impl PatchExperiment {
    /// Rejects pairings with equal concepts or whose target-language
    /// prefix tokens overlap.
    pub fn new(
        sources: Vec<PromptSpec>,
        target: PromptSpec,
        source_concept: ConceptWords,
        target_concept: ConceptWords,
        target_language: impl Into<String>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Argument("patch experiment without source prompts".into()));
        }
        if source_concept.concept_id == target_concept.concept_id {
            return Err(Error::Data(format!(
                "source and target concept are both {:?}",
                source_concept.concept_id
            )));
        }
        let overlap: Vec<TokenId> = prefix_ids(&source_concept.target_refs(), vocab)
            .intersection(&prefix_ids(&target_concept.target_refs(), vocab))
            .copied()
            .collect();
        if !overlap.is_empty() {
            let surfaces: Vec<&str> = overlap.iter().filter_map(|&id| vocab.surface(id).ok()).collect();
            return Err(Error::Data(format!(
                "target-language tokens of {:?} and {:?} overlap: {surfaces:?}",
                source_concept.concept_id, target_concept.concept_id
            )));
        }
        for p in sources.iter().chain(std::iter::once(&target)) {
            if p.token_ids.iter().any(|t| t.index() >= vocab.len()) {
                return Err(Error::Range(format!("prompt for {:?} uses ids outside the vocabulary", p.concept_id)));
            }
        }
        Ok(Self {
            sources,
            target,
            source_concept,
            target_concept,
            target_language: target_language.into(),
        })
    }

    /// Source prompts translate `dataset[source]` from each of
    /// `source_inputs` into `source_output`; the target prompt translates
    /// `dataset[target]` from `target_input` into `target_output`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_dataset(
        dataset: &[ConceptRecord],
        source: usize,
        target: usize,
        source_inputs: &[LangRef],
        source_output: &LangRef,
        target_input: &LangRef,
        target_output: &LangRef,
        english: &LangRef,
        seed: u64,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let prompt = |index: usize, src: &LangRef, tgt: &LangRef| -> Result<PromptSpec> {
            let ex = select_exemplars(dataset, index, TRANSLATION_SHOTS, seed, |r| {
                r.entry(src).is_some() && r.entry(tgt).is_some() && r.concept_id != dataset[source].concept_id && r.concept_id != dataset[target].concept_id
            })?;
            build_translation_prompt(&dataset[index], src, tgt, &ex, vocab)
        };
        let sources = source_inputs
            .iter()
            .map(|l| prompt(source, l, source_output))
            .collect::<Result<Vec<_>>>()?;
        let target_prompt = prompt(target, target_input, target_output)?;
        Self::new(
            sources,
            target_prompt,
            ConceptWords::from_record(&dataset[source], target_output, english)?,
            ConceptWords::from_record(&dataset[target], target_output, english)?,
            target_output.to_string(),
            vocab,
        )
    }

    pub fn sources(&self) -> &[PromptSpec] {
        &self.sources
    }

    pub fn target(&self) -> &PromptSpec {
        &self.target
    }

    pub fn source_concept(&self) -> &ConceptWords {
        &self.source_concept
    }

    pub fn target_concept(&self) -> &ConceptWords {
        &self.target_concept
    }

    pub fn target_language(&self) -> &str {
        &self.target_language
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Donor from the first source prompt only.
    Single,
    /// Mean donor over all source prompts.
    Multi,
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(SweepMode::Single),
            "multi" => Ok(SweepMode::Multi),
            other => Err(Error::Argument(format!("unknown patch mode {other:?}"))),
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Single => "single",
            SweepMode::Multi => "multi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// `P(C_S)` in the target language.
    pub p_source: f64,
    /// `P(C_T)` in the target language.
    pub p_target: f64,
    /// Either concept in English.
    pub p_english: f64,
}

/// One [`CurvePoint`] per start layer `j` in `0..=k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptCurve {
    pub mode: SweepMode,
    pub points: Vec<CurvePoint>,
}

impl ConceptCurve {
    pub fn source_curve(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_source).collect()
    }

    pub fn target_curve(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_target).collect()
    }

    pub fn english_curve(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.p_english).collect()
    }
}

fn refs(w: &[String]) -> Vec<&str> {
    w.iter().map(String::as_str).collect()
}

struct Readout {
    source: BTreeSet<TokenId>,
    target: BTreeSet<TokenId>,
    english: BTreeSet<TokenId>,
}

impl Readout {
    fn new(exp: &PatchExperiment, vocab: &Vocabulary) -> Self {
        let mut english = refs(&exp.source_concept.english_words);
        english.extend(refs(&exp.target_concept.english_words));
        Self {
            source: prefix_ids(&refs(&exp.source_concept.target_words), vocab),
            target: prefix_ids(&refs(&exp.target_concept.target_words), vocab),
            english: prefix_ids(&english, vocab),
        }
    }

    fn point(&self, logits: &[f32]) -> Result<CurvePoint> {
        let dist = softmax(logits)?;
        Ok(CurvePoint {
            p_source: mass(&dist, &self.source),
            p_target: mass(&dist, &self.target),
            p_english: mass(&dist, &self.english),
        })
    }
}

/// Unpatched next-token readout of the target prompt.
pub fn baseline(exp: &PatchExperiment, ckpt: &Checkpoint, vocab: &Vocabulary) -> Result<CurvePoint> {
    let trace = ckpt.forward(&exp.target.token_ids)?;
    Readout::new(exp, vocab).point(&trace.final_logits)
}

pub fn sweep(exp: &PatchExperiment, ckpt: &Checkpoint, vocab: &Vocabulary, mode: SweepMode) -> Result<ConceptCurve> {
    let donor = match mode {
        SweepMode::Single => extract_donor(&exp.sources[0], ckpt)?,
        SweepMode::Multi => {
            let donors = exp
                .sources
                .iter()
                .map(|s| extract_donor(s, ckpt))
                .collect::<Result<Vec<_>>>()?;
            mean_donor(&donors)?
        }
    };
    let readout = Readout::new(exp, vocab);
    let target_pos = exp.target.source_position();
    let points = (0..=ckpt.config().final_layer())
        .into_par_iter()
        .map(|j| {
            let plan = PatchPlan::new(donor.clone(), j, target_pos);
            let trace = ckpt.forward_patched(&exp.target.token_ids, &plan)?;
            readout.point(&trace.final_logits)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConceptCurve { mode, points })
}

/// `KL(a || b)` after adding [`CURVE_EPSILON`] to every point and
/// normalizing each curve to unit sum over layers.
pub fn compare_curves_kl(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "curves of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NumericInput("curve values must be finite and non-negative".into()));
    }
    let normalize = |c: &[f64]| -> Result<Vec<f64>> {
        if c.iter().sum::<f64>() == 0.0 {
            return Err(Error::UndefinedStatistic("curve with zero total".into()));
        }
        let total: f64 = c.iter().map(|v| v + CURVE_EPSILON).sum();
        Ok(c.iter().map(|v| (v + CURVE_EPSILON) / total).collect())
    };
    let (p, q) = (normalize(a)?, normalize(b)?);
    Ok(p.iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0))
}

/// `(mode, layer_j, p_source_concept_tgt, p_target_concept_tgt, p_english)` rows.
pub fn write_curve_csv<W: Write>(curves: &[ConceptCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mode", "layer_j", "p_source_concept_tgt", "p_target_concept_tgt", "p_english"])?;
    for c in curves {
        for (j, p) in c.points.iter().enumerate() {
            w.write_record([
                c.mode.to_string(),
                j.to_string(),
                format!("{:.6}", p.p_source),
                format!("{:.6}", p.p_target),
                format!("{:.6}", p.p_english),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Point-wise mean of curves from several experiments with the same mode.
pub fn average_curves(curves: &[ConceptCurve]) -> Result<ConceptCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::UndefinedStatistic("average of zero curves".into()))?;
    if curves.iter().any(|c| c.points.len() != first.points.len() || c.mode != first.mode) {
        return Err(Error::Shape("curves differ in length or mode".into()));
    }
    let n = curves.len() as f64;
    let points = (0..first.points.len())
        .map(|j| CurvePoint {
            p_source: curves.iter().map(|c| c.points[j].p_source).sum::<f64>() / n,
            p_target: curves.iter().map(|c| c.points[j].p_target).sum::<f64>() / n,
            p_english: curves.iter().map(|c| c.points[j].p_english).sum::<f64>() / n,
        })
        .collect();
    Ok(ConceptCurve {
        mode: first.mode,
        points,
    })
}
