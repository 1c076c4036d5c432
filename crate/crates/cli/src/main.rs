// SPDX-License-Identifier: MIT OR Apache-2.0

//! `romanlens` command-line front end.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use romanlens::langprob::{compare_scripts, write_comparison_csv};
use romanlens::latent_rom::{romanization_frequency, run_scenario, write_discard_csv, write_report_csv};
use romanlens::lens::{emit_heatmap, logit_lens};
use romanlens::patching::{average_curves, baseline, compare_curves_kl, sweep, write_curve_csv};
use romanlens::prompts::{build_task_prompt, dataset_vocabulary, load_dataset};
use romanlens::{
    Checkpoint, ConceptRecord, Error, LangRef, ModelConfig, PatchExperiment, Scenario, ScenarioConfig, Scheme,
    SweepMode, Task, Vocabulary,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const SPACE_MARKER: &str = "▁";

#[derive(Parser, Debug)]
#[command(name = "romanlens", version, about = "Residual-stream analyses for small decoder-only transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Logit-lens grid (CSV + SVG) for one prompt.
    Lens {
        #[command(flatten)]
        common: CommonArgs,
        /// Raw prompt text; otherwise the prompt is built from --concept.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        concept: Option<String>,
    },
    /// Latent-romanization fractions per scenario.
    LatentRom {
        #[command(flatten)]
        common: CommonArgs,
        /// Romanization scheme used when a record has no romanized form.
        #[arg(long)]
        scheme: Option<PathBuf>,
    },
    /// Activation-patching sweep over start layers.
    Patch {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of source/target concept pairs.
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Native vs romanized language-probability comparison.
    Langprob {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Transliterate stdin to stdout.
    Romanize {
        /// Scheme file, or `devanagari` for the bundled scheme.
        #[arg(long, default_value = "devanagari")]
        scheme: String,
        /// Map romanized text back to the native script.
        #[arg(long)]
        reverse: bool,
    },
    /// Audit dataset, vocabulary and checkpoint.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scheme: Option<PathBuf>,
    },
    /// Write a randomly initialised checkpoint sized to a vocabulary.
    InitCheckpoint {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 2)]
        kv_heads: usize,
        #[arg(long, default_value_t = 64)]
        mlp_hidden: usize,
        #[arg(long, default_value_t = 512)]
        max_seq_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the vocabulary covering a dataset.
    BuildVocab {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by the experiment subcommands; each overrides the
/// matching key of the `--config` file.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// constrained | first_subword | last_subword | all
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// single | multi | both
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated language refs, e.g. `fr,hi` or `de,fr,hi:rom`.
    #[arg(long)]
    languages: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    checkpoint: Option<PathBuf>,
    vocab: Option<PathBuf>,
    dataset: Option<PathBuf>,
    #[serde(default = "default_task")]
    task: String,
    #[serde(default = "default_scenario")]
    scenario: String,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default = "default_window")]
    window: usize,
    #[serde(default = "default_out")]
    out: PathBuf,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default)]
    seed: u64,
    languages: Option<String>,
}

fn default_task() -> String {
    "translation".into()
}
fn default_scenario() -> String {
    "all".into()
}
fn default_threshold() -> f64 {
    0.1
}
fn default_window() -> usize {
    10
}
fn default_out() -> PathBuf {
    PathBuf::from("romanlens-out")
}
fn default_mode() -> String {
    "both".into()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Bad invocation: exit code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

impl CommonArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("config {}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { cfg.$f = v.clone().into(); })*};
        }
        take!(checkpoint, vocab, dataset, task, scenario, threshold, window, out, mode, seed, languages);
        if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
            return usage(format!("--threshold {} must lie in (0, 1)", cfg.threshold));
        }
        Ok(cfg)
    }
}

impl ExperimentConfig {
    fn path(&self, p: &Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
        match p {
            Some(p) => Ok(p.clone()),
            None => usage(format!("missing --{flag}")),
        }
    }

    fn task(&self) -> anyhow::Result<Task> {
        self.task.parse().or_else(|e: Error| usage(e.to_string()))
    }

    fn languages(&self, default: &str) -> anyhow::Result<Vec<LangRef>> {
        self.languages
            .as_deref()
            .unwrap_or(default)
            .split(',')
            .map(|s| s.trim().parse::<LangRef>().or_else(|e| usage(e.to_string())))
            .collect()
    }
}

/// Loaded inputs plus their digests for the manifest.
struct Inputs {
    ckpt: Checkpoint,
    vocab: Vocabulary,
    dataset: Vec<ConceptRecord>,
    digests: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut f = File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn load_inputs(cfg: &ExperimentConfig, need_dataset: bool) -> anyhow::Result<Inputs> {
    let ckpt_path = cfg.path(&cfg.checkpoint, "checkpoint")?;
    let vocab_path = cfg.path(&cfg.vocab, "vocab")?;
    let mut digests = BTreeMap::new();
    let ckpt = Checkpoint::load(&ckpt_path)?;
    digests.insert(ckpt_path.display().to_string(), sha256_file(&ckpt_path)?);
    let vocab = Vocabulary::load(&vocab_path)?;
    digests.insert(vocab_path.display().to_string(), sha256_file(&vocab_path)?);
    if ckpt.config().vocab_size != vocab.len() {
        return Err(Error::Format(format!(
            "checkpoint {} expects {} tokens but vocabulary {} has {}",
            ckpt_path.display(),
            ckpt.config().vocab_size,
            vocab_path.display(),
            vocab.len()
        ))
        .into());
    }
    let dataset = match (&cfg.dataset, need_dataset) {
        (Some(p), _) => {
            let d = load_dataset(p)?;
            digests.insert(p.display().to_string(), sha256_file(p)?);
            d
        }
        (None, true) => return usage("missing --dataset"),
        (None, false) => Vec::new(),
    };
    Ok(Inputs { ckpt, vocab, dataset, digests })
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e }.into())
}

fn writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    digests: &BTreeMap<String, String>,
    outputs: &[&str],
    extra: serde_json::Value,
    started: Instant,
) -> anyhow::Result<()> {
    let manifest = json!({
        "command": command,
        "version": VERSION,
        "config": cfg,
        "inputs": digests,
        "outputs": outputs,
        "threads": rayon::current_num_threads(),
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "results": extra,
    });
    write_json(&cfg.out.join("manifest.json"), &manifest)
}

fn find_concept(dataset: &[ConceptRecord], id: &str) -> anyhow::Result<usize> {
    dataset
        .iter()
        .position(|r| r.concept_id == id)
        .ok_or_else(|| Error::Data(format!("concept {id:?} not in dataset")).into())
}

fn cmd_lens(common: &CommonArgs, prompt: Option<&str>, concept: Option<&str>) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = common.resolve()?;
    let inputs = load_inputs(&cfg, prompt.is_none())?;
    let tokens = match (prompt, concept) {
        (Some(text), _) => inputs.vocab.encode(text)?,
        (None, Some(id)) => {
            let langs = cfg.languages("fr,hi")?;
            let [src, tgt] = <[LangRef; 2]>::try_from(langs).or_else(|_| usage("--languages needs src,tgt"))?;
            let index = find_concept(&inputs.dataset, id)?;
            build_task_prompt(cfg.task()?, &inputs.dataset, index, &src, &tgt, cfg.seed, &inputs.vocab)?.token_ids
        }
        (None, None) => return usage("lens needs --prompt or --concept"),
    };
    create_out(&cfg.out)?;
    let trace = inputs.ckpt.forward(&tokens)?;
    let grid = logit_lens(&trace, &inputs.ckpt)?;
    grid.write_csv(writer(&cfg.out.join("lens.csv"))?)?;
    emit_heatmap(&grid, 0, grid.num_layers() - 1, &inputs.vocab, cfg.out.join("lens.svg"))?;
    write_manifest(
        &cfg,
        "lens",
        &inputs.digests,
        &["lens.csv", "lens.svg"],
        json!({"tokens": tokens.len(), "layers": grid.num_layers()}),
        started,
    )
}

fn load_scheme(spec: &str) -> anyhow::Result<Scheme> {
    Ok(match spec {
        "devanagari" => Scheme::from_json_str(romanlens::DEVANAGARI_SCHEME)?,
        path => Scheme::load(path)?,
    })
}

fn cmd_latent_rom(common: &CommonArgs, scheme: Option<&Path>) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = common.resolve()?;
    let task = cfg.task()?;
    let scenarios: Vec<Scenario> = match cfg.scenario.as_str() {
        "all" => Scenario::ALL.to_vec(),
        s => vec![s.parse().or_else(|e: Error| usage(e.to_string()))?],
    };
    let langs = cfg.languages("fr,hi")?;
    let [source, target] = <[LangRef; 2]>::try_from(langs).or_else(|_| usage("--languages needs src,tgt"))?;
    let inputs = load_inputs(&cfg, true)?;
    let mut digests = inputs.digests.clone();
    let scheme = match scheme {
        Some(p) => {
            digests.insert(p.display().to_string(), sha256_file(p)?);
            Scheme::load(p)?
        }
        None => Scheme::from_json_str(romanlens::DEVANAGARI_SCHEME)?,
    };
    let mut sc = ScenarioConfig::new(source, target);
    sc.threshold = cfg.threshold;
    sc.window = cfg.window;
    sc.seed = cfg.seed;
    create_out(&cfg.out)?;
    let mut reports = Vec::new();
    for s in &scenarios {
        reports.push(run_scenario(*s, task, &inputs.dataset, &inputs.ckpt, &inputs.vocab, &sc, Some(&scheme))?);
    }
    let frequency = romanization_frequency(task, &inputs.dataset, &inputs.ckpt, &inputs.vocab, &sc, Some(&scheme))?;
    write_report_csv(&reports, writer(&cfg.out.join("latent_rom.csv"))?)?;
    let discards: Vec<_> = reports.iter().flat_map(|r| r.discarded.iter().cloned()).collect();
    write_discard_csv(&discards, writer(&cfg.out.join("discarded.csv"))?)?;
    let summary: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "scenario": r.scenario,
                "task": r.task,
                "language": r.language,
                "layers": r.layers,
                "fractions": r.fractions,
                "kept": r.n_samples(),
                "discarded": r.discarded.len(),
                "total": r.total,
                "timestep_histogram": r.timestep_counts().iter().fold(BTreeMap::new(), |mut m, &c| {
                    *m.entry(c).or_insert(0usize) += 1;
                    m
                }),
            })
        })
        .collect();
    let report = json!({"reports": summary, "romanization_frequency": frequency});
    write_json(&cfg.out.join("report.json"), &report)?;
    write_manifest(
        &cfg,
        "latent-rom",
        &digests,
        &["latent_rom.csv", "discarded.csv", "report.json"],
        report,
        started,
    )
}

fn cmd_patch(common: &CommonArgs, pairs: usize) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = common.resolve()?;
    let modes = match cfg.mode.as_str() {
        "both" => vec![SweepMode::Single, SweepMode::Multi],
        m => vec![m.parse().or_else(|e: Error| usage(e.to_string()))?],
    };
    // source inputs..., target input, output language
    let mut langs = cfg.languages("de,fr,en,hi")?;
    if langs.len() < 3 {
        return usage("--languages needs at least src_in,tgt_in,out");
    }
    let output = langs.pop().expect("len checked");
    let target_in = langs.pop().expect("len checked");
    let english = LangRef::native("en");
    let inputs = load_inputs(&cfg, true)?;
    let n = inputs.dataset.len();
    let mut experiments = Vec::new();
    let mut rejected = Vec::new();
    'outer: for s in 0..n {
        for off in 1..n {
            if experiments.len() == pairs {
                break 'outer;
            }
            let t = (s + off) % n;
            match PatchExperiment::from_dataset(
                &inputs.dataset,
                s,
                t,
                &langs,
                &output,
                &target_in,
                &output,
                &english,
                cfg.seed,
                &inputs.vocab,
            ) {
                Ok(e) => {
                    experiments.push(e);
                    continue 'outer;
                }
                Err(Error::Data(reason)) => rejected.push(reason),
                Err(e) => return Err(e.into()),
            }
        }
    }
    if experiments.is_empty() {
        return Err(Error::Data("no valid source/target concept pair".into()).into());
    }
    create_out(&cfg.out)?;
    let mut averaged = Vec::new();
    let mut pair_info = Vec::new();
    for e in &experiments {
        let b = baseline(e, &inputs.ckpt, &inputs.vocab)?;
        pair_info.push(json!({
            "source": e.source_concept().concept_id,
            "target": e.target_concept().concept_id,
            "baseline": b,
        }));
    }
    for &mode in &modes {
        let curves = experiments
            .iter()
            .map(|e| sweep(e, &inputs.ckpt, &inputs.vocab, mode))
            .collect::<Result<Vec<_>, _>>()?;
        averaged.push(average_curves(&curves)?);
    }
    write_curve_csv(&averaged, writer(&cfg.out.join("patch_curves.csv"))?)?;
    let kl = if averaged.len() == 2 {
        compare_curves_kl(&averaged[0].source_curve(), &averaged[1].source_curve()).ok()
    } else {
        None
    };
    write_manifest(
        &cfg,
        "patch",
        &inputs.digests,
        &["patch_curves.csv"],
        json!({
            "pairs": pair_info,
            "rejected_pairs": rejected.len(),
            "output_language": output.to_string(),
            "kl_single_vs_multi_source_curve": kl,
        }),
        started,
    )
}

fn cmd_langprob(common: &CommonArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let cfg = common.resolve()?;
    let langs = cfg.languages("fr,hi")?;
    let [source, target] = <[LangRef; 2]>::try_from(langs).or_else(|_| usage("--languages needs src,tgt"))?;
    let inputs = load_inputs(&cfg, true)?;
    let cmp = compare_scripts(
        &inputs.dataset,
        &source,
        &target.code,
        &inputs.ckpt,
        &inputs.vocab,
        cfg.threshold,
        cfg.seed,
    )?;
    create_out(&cfg.out)?;
    write_comparison_csv(&cmp, writer(&cfg.out.join("langprob.csv"))?)?;
    write_discard_csv(&cmp.discarded, writer(&cfg.out.join("discarded.csv"))?)?;
    let summary = json!({
        "source": cmp.source,
        "target": cmp.target,
        "threshold": cmp.threshold,
        "kept": cmp.samples.len(),
        "discarded": cmp.discarded.len(),
        "total": cmp.total,
        "emergence_difference": cmp.summary,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    write_manifest(
        &cfg,
        "langprob",
        &inputs.digests,
        &["langprob.csv", "discarded.csv", "summary.json"],
        summary,
        started,
    )
}

fn cmd_romanize(scheme: &str, reverse: bool) -> anyhow::Result<()> {
    let scheme = load_scheme(scheme)?;
    let mut input = String::new();
    io::stdin().read_to_string(&mut input).context("reading stdin")?;
    let out = if reverse { scheme.deromanize(&input)? } else { scheme.romanize(&input)? };
    io::stdout().write_all(out.as_bytes())?;
    Ok(())
}

fn cmd_validate(common: &CommonArgs, scheme: Option<&Path>) -> anyhow::Result<()> {
    let cfg = common.resolve()?;
    let mut report = serde_json::Map::new();
    if let Some(p) = &cfg.dataset {
        let d = load_dataset(p)?;
        report.insert("concepts".into(), json!(d.len()));
        if let Some(v) = &cfg.vocab {
            let vocab = Vocabulary::load(v)?;
            for r in &d {
                for e in &r.entries {
                    vocab.encode(&e.word).with_context(|| format!("{}: word {:?}", v.display(), e.word))?;
                }
            }
        }
        let scheme = match scheme {
            Some(p) => Scheme::load(p)?,
            None => Scheme::from_json_str(romanlens::DEVANAGARI_SCHEME)?,
        };
        let hi = LangRef::native("hi");
        for r in &d {
            if let Some(e) = r.entry(&hi) {
                let roman = scheme.romanize(&e.word)?;
                if let Ok(back) = scheme.deromanize(&roman) {
                    if back != e.word {
                        return Err(Error::Losslessness(format!("{:?} round-trips to {back:?}", e.word)).into());
                    }
                }
            }
        }
    }
    if let Some(p) = &cfg.vocab {
        report.insert("vocab_size".into(), json!(Vocabulary::load(p)?.len()));
    }
    if let Some(p) = &cfg.checkpoint {
        let ckpt = Checkpoint::load(p)?;
        report.insert("layers".into(), json!(ckpt.config().n_layers));
        if let Some(v) = report.get("vocab_size") {
            if v.as_u64() != Some(ckpt.config().vocab_size as u64) {
                return Err(Error::Format(format!(
                    "checkpoint {} vocab_size {} does not match vocabulary",
                    p.display(),
                    ckpt.config().vocab_size
                ))
                .into());
            }
        }
    }
    if report.is_empty() {
        return usage("validate needs --dataset, --vocab or --checkpoint");
    }
    println!("{}", serde_json::Value::Object(report));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_init_checkpoint(
    vocab: &Path,
    out: &Path,
    layers: usize,
    dim: usize,
    heads: usize,
    kv_heads: usize,
    mlp_hidden: usize,
    max_seq_len: usize,
    seed: u64,
) -> anyhow::Result<()> {
    let v = Vocabulary::load(vocab)?;
    let config = ModelConfig {
        n_layers: layers,
        dim,
        n_heads: heads,
        n_kv_heads: kv_heads,
        mlp_hidden,
        vocab_size: v.len(),
        rope_theta: 10000.0,
        norm_eps: 1e-5,
        max_seq_len,
    };
    config.validate().map_err(|e| Usage(e.to_string()))?;
    Checkpoint::random(config, seed)?.save(out)?;
    Ok(())
}

fn cmd_build_vocab(dataset: &Path, out: &Path) -> anyhow::Result<()> {
    let d = load_dataset(dataset)?;
    dataset_vocabulary(&d, SPACE_MARKER)?.save(out)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Lens { common, prompt, concept } => cmd_lens(common, prompt.as_deref(), concept.as_deref()),
        Command::LatentRom { common, scheme } => cmd_latent_rom(common, scheme.as_deref()),
        Command::Patch { common, pairs } => cmd_patch(common, pairs.unwrap_or(5)),
        Command::Langprob { common } => cmd_langprob(common),
        Command::Romanize { scheme, reverse } => cmd_romanize(scheme, *reverse),
        Command::Validate { common, scheme } => cmd_validate(common, scheme.as_deref()),
        Command::InitCheckpoint { vocab, out, layers, dim, heads, kv_heads, mlp_hidden, max_seq_len, seed } => {
            cmd_init_checkpoint(vocab, out, *layers, *dim, *heads, *kv_heads, *mlp_hidden, *max_seq_len, *seed)
        }
        Command::BuildVocab { dataset, out } => cmd_build_vocab(dataset, out),
    }
}

fn init_threads() -> Result<(), Usage> {
    let Ok(raw) = std::env::var("ROMANLENS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Usage(format!("ROMANLENS_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
