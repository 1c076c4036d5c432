// SPDX-License-Identifier: MIT OR Apache-2.0

//! Interpretability toolkit for decoder-only transformers: logit lens,
//! latent romanization analysis, activation patching and language
//! probability tracking over a small Llama-style reference model.

pub mod error;
pub mod langprob;
pub mod latent_rom;
pub mod lens;
pub mod model;
pub mod numerics;
pub mod patching;
pub mod prompts;
pub mod romanize;
pub mod tokenizer;

pub use error::{Error, Result};
pub use latent_rom::{LatentRomReport, Scenario, ScenarioConfig, Timestep, TokenSets};
pub use lens::{logit_lens, LensGrid};
pub use model::{Checkpoint, ModelConfig, PatchPlan, ResidualTrace};
pub use numerics::{entropy, kl_divergence, matmul, softmax, Distribution, Tensor};
pub use patching::{ConceptCurve, PatchExperiment, SweepMode};
pub use prompts::{ConceptRecord, LangRef, PromptSpec, Script, Task};
pub use romanize::{Scheme, SchemeMode};
pub use tokenizer::{TokenId, Vocabulary, VocabularyBuilder};

/// Bundled Devanagari scheme.
pub const DEVANAGARI_SCHEME: &str = include_str!("../data/schemes/devanagari.json");
