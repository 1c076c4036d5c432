// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use romanlens::langprob::language_probability;
use romanlens::latent_rom::{latent_fraction, overlap_filter, reference_token_sets, roman_token_sets, Timestep, Verdict};
use romanlens::lens::logit_lens;
use romanlens::model::{Checkpoint, ModelConfig, PatchPlan};
use romanlens::numerics::{entropy, kl_divergence, softmax, Distribution, Tensor};
use romanlens::patching::mean_donor;
use romanlens::prompts::{build_cloze_prompt, build_repetition_prompt, build_translation_prompt, load_dataset, ConceptRecord, LangRef};
use romanlens::{Scheme, TokenId, Vocabulary};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        dim: 32,
        n_heads: 4,
        n_kv_heads: 2,
        mlp_hidden: 64,
        vocab_size,
        rope_theta: 10000.0,
        norm_eps: 1e-5,
        max_seq_len: 128,
    }
}

fn formula_oracles() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let n_inst = 1000;
    let (mut e_soft, mut e_ent, mut e_kl, mut e_lf, mut e_mean) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for _ in 0..n_inst {
        let n = rng.random_range(1..50);
        let x: Vec<f32> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
        let y: Vec<f32> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = softmax(&x).map_err(|e| e.to_string())?;
        let q = softmax(&y).map_err(|e| e.to_string())?;
        let m = x.iter().fold(f64::MIN, |a, &b| a.max(b as f64));
        let z: f64 = x.iter().map(|&v| (v as f64 - m).exp()).sum();
        for (i, &v) in x.iter().enumerate() {
            e_soft = e_soft.max(((v as f64 - m).exp() / z - p.prob(i)).abs());
        }
        let mut h = 0.0;
        for i in 0..n {
            let pi = p.prob(i);
            if pi > 0.0 {
                h -= pi * pi.ln();
            }
        }
        e_ent = e_ent.max((entropy(&p) - h.max(0.0)).abs());
        let mut kl = 0.0;
        for i in 0..n {
            let (pi, qi) = (p.prob(i), q.prob(i));
            if pi > 0.0 {
                kl += pi * (pi / qi).ln();
            }
        }
        e_kl = e_kl.max((kl_divergence(&p, &q).map_err(|e| e.to_string())? - kl.max(0.0)).abs());

        let rows: Vec<Vec<bool>> = (0..rng.random_range(1..10))
            .map(|_| (0..rng.random_range(1..6)).map(|_| rng.random_bool(0.3)).collect())
            .collect();
        let mut acc = 0.0;
        for r in &rows {
            acc += r.iter().filter(|&&b| b).count() as f64 / r.len() as f64;
        }
        e_lf = e_lf.max((latent_fraction(&rows).map_err(|e| e.to_string())? - acc / rows.len() as f64).abs());

        let k = rng.random_range(1..6);
        let donors: Vec<Tensor> = (0..k)
            .map(|_| Tensor::new(vec![5, 8], (0..40).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap())
            .collect();
        let mean = mean_donor(&donors).map_err(|e| e.to_string())?;
        for i in 0..40 {
            let s: f64 = donors.iter().map(|d| d.data()[i] as f64).sum::<f64>() / k as f64;
            e_mean = e_mean.max((mean.data()[i] as f64 - s).abs());
        }
    }
    ensure(e_soft <= 1e-6, format!("softmax err {e_soft:e}"))?;
    ensure(e_lf <= 1e-6, format!("latent_fraction err {e_lf:e}"))?;
    ensure(e_mean <= 1e-6, format!("mean_donor err {e_mean:e}"))?;
    ensure(e_ent <= 1e-4, format!("entropy err {e_ent:e}"))?;
    ensure(e_kl <= 1e-4, format!("KL err {e_kl:e}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(60), format!("took {t:?}"))?;
    Ok(format!(
        "{n_inst} instances; max err softmax {e_soft:.1e}, latent_fraction {e_lf:.1e}, mean_donor {e_mean:.1e}, entropy {e_ent:.1e}, KL {e_kl:.1e}; {t:.2?}"
    ))
}

fn marked(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().flat_map(|w| [w.to_string(), format!("▁{w}")]).collect()
}

fn rassi_fixture() -> Check {
    let rom = ["r", "ra", "ras", "rass", "rassi"];
    let en = ["r", "ro", "rop", "rope"];
    let nat = ["र", "रस", "रस्स", "रस्सी"];
    let surfaces: Vec<String> = marked(&rom).into_iter().chain(marked(&en)).chain(marked(&nat)).collect::<BTreeSet<_>>().into_iter().collect();
    let v = Vocabulary::new("▁", surfaces).map_err(|e| e.to_string())?;
    let r = roman_token_sets("rassi", &v).map_err(|e| e.to_string())?;
    let e = reference_token_sets(&["rope"], &v).map_err(|e| e.to_string())?;
    let n = reference_token_sets(&["रस्सी"], &v).map_err(|e| e.to_string())?;
    ensure(r.first == marked(&rom), format!("romanized set {:?}", r.first))?;
    ensure(e.first == marked(&en), format!("English set {:?}", e.first))?;
    ensure(marked(&nat).is_subset(&n.first), format!("native set {:?}", n.first))?;
    match overlap_filter(&r, &n, &e, &[Timestep::First], &v) {
        Verdict::Discard { offending, .. } if offending == ["r", "▁r"] => Ok("discard with intersection {r, ▁r}".into()),
        other => Err(format!("verdict {other:?}")),
    }
}

fn fast_swift_fixture() -> Check {
    let expected = marked(&["f", "fa", "fas", "fast", "s", "sw", "swi", "swif", "swift"]);
    ensure(expected.len() == 18, "fixture size")?;
    let mut surfaces: Vec<String> = expected.iter().cloned().collect();
    surfaces.extend(["q", "▁q", "st", "ift"].map(String::from));
    let v = Vocabulary::new("▁", surfaces.clone()).map_err(|e| e.to_string())?;
    let sets = reference_token_sets(&["fast", "swift"], &v).map_err(|e| e.to_string())?;
    ensure(sets.first == expected, format!("candidates {:?}", sets.first))?;
    ensure(sets.realized(Timestep::First).len() == 18, "realized count")?;
    let w: Vec<f32> = (0..surfaces.len()).map(|i| (i % 5 + 1) as f32).collect();
    let total: f32 = w.iter().sum();
    let probs: Vec<f32> = w.iter().map(|x| x / total).collect();
    let d = Distribution::new(probs.clone()).map_err(|e| e.to_string())?;
    let hand: f64 = surfaces.iter().zip(&probs).filter(|(s, _)| expected.contains(*s)).map(|(_, &p)| p as f64).sum();
    let got = language_probability(&d, &["fast", "swift"], &v).map_err(|e| e.to_string())?;
    ensure((got - hand).abs() < 1e-6, format!("{got} vs hand sum {hand}"))?;
    Ok(format!("18 candidates; P = {got:.6} equals hand sum"))
}

fn structural_patching() -> Check {
    let start = Instant::now();
    let ckpt = Checkpoint::random(tiny_config(64), 42).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(2);
    let (mut e_self, mut e_final) = (0f32, 0f32);
    for _ in 0..20 {
        let len = rng.random_range(3..16);
        let tokens: Vec<TokenId> = (0..len).map(|_| TokenId(rng.random_range(0..64))).collect();
        let other: Vec<TokenId> = (0..len).map(|_| TokenId(rng.random_range(0..64))).collect();
        let base = ckpt.forward(&tokens).map_err(|e| e.to_string())?;
        let donor_trace = ckpt.forward(&other).map_err(|e| e.to_string())?;
        let pos = rng.random_range(0..len - 1);
        let own = base.position_states(pos).map_err(|e| e.to_string())?;
        for j in 0..=4 {
            let p = ckpt.forward_patched(&tokens, &PatchPlan::new(own.clone(), j, pos)).map_err(|e| e.to_string())?;
            for (a, b) in p.final_logits.iter().zip(&base.final_logits) {
                e_self = e_self.max((a - b).abs());
            }
        }
        let foreign = donor_trace.position_states(pos).map_err(|e| e.to_string())?;
        let p = ckpt.forward_patched(&tokens, &PatchPlan::new(foreign.clone(), 4, pos)).map_err(|e| e.to_string())?;
        for (a, b) in p.final_logits.iter().zip(&base.final_logits) {
            e_final = e_final.max((a - b).abs());
        }
        let single = ckpt.forward_patched(&tokens, &PatchPlan::new(foreign.clone(), 1, pos)).map_err(|e| e.to_string())?;
        let mean = mean_donor(std::slice::from_ref(&foreign)).map_err(|e| e.to_string())?;
        ensure(mean == foreign, "mean of one donor differs from the donor")?;
        let multi = ckpt.forward_patched(&tokens, &PatchPlan::new(mean, 1, pos)).map_err(|e| e.to_string())?;
        ensure(
            single.final_logits.iter().zip(&multi.final_logits).all(|(a, b)| a.to_bits() == b.to_bits()),
            "multi-source with one source not bitwise equal to single-source",
        )?;
    }
    ensure(e_self <= 1e-5, format!("self-patch err {e_self:e}"))?;
    ensure(e_final <= 1e-6, format!("final-layer patch err {e_final:e}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(60), format!("took {t:?}"))?;
    Ok(format!("self-patch max err {e_self:.1e}, final-layer no-op max err {e_final:.1e}, multi==single bitwise; {t:.2?}"))
}

fn lens_consistency() -> Check {
    let ckpt = Checkpoint::random(tiny_config(64), 7).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(3);
    let mut worst = 0f64;
    for _ in 0..100 {
        let len = rng.random_range(1..24);
        let tokens: Vec<TokenId> = (0..len).map(|_| TokenId(rng.random_range(0..64))).collect();
        let trace = ckpt.forward(&tokens).map_err(|e| e.to_string())?;
        let grid = logit_lens(&trace, &ckpt).map_err(|e| e.to_string())?;
        let fwd = softmax(&trace.final_logits).map_err(|e| e.to_string())?;
        let row = grid.dist(grid.num_layers() - 1, len - 1);
        for i in 0..64 {
            worst = worst.max((row.prob(i) - fwd.prob(i)).abs());
        }
        for j in 0..grid.num_layers() {
            for i in 0..grid.seq_len() {
                let d = grid.dist(j, i);
                let s: f64 = d.probs().iter().map(|&p| p as f64).sum();
                ensure(d.len() == 64 && (s - 1.0).abs() <= 1e-5 && d.probs().iter().all(|p| (0.0..=1.0).contains(p)), format!("invalid cell ({j},{i})"))?;
            }
        }
    }
    ensure(worst <= 1e-6, format!("final-layer lens vs forward err {worst:e}"))?;
    Ok(format!("100 prompts; max err {worst:.1e}; all cells valid"))
}

fn find<'a>(d: &'a [ConceptRecord], ids: &[&str]) -> Vec<&'a ConceptRecord> {
    ids.iter().filter_map(|id| d.iter().find(|r| r.concept_id == *id)).collect()
}

fn prompt_fixtures() -> Check {
    let d = load_dataset(data("concepts.jsonl")).map_err(|e| e.to_string())?;
    let v = Vocabulary::load(data("vocab.json")).map_err(|e| e.to_string())?;
    let ex = find(&d, &["fish", "mango", "brother", "smell", "sun"]);
    let flower = find(&d, &["flower"]);
    ensure(ex.len() == 5 && flower.len() == 1, "fixture records missing")?;
    let hi = LangRef::native("hi");
    let t = build_translation_prompt(flower[0], &LangRef::native("fr"), &hi, &ex, &v).map_err(|e| e.to_string())?;
    let expect_t = "Français: \"poisson\" हिन्दी: \"मछली\"\nFrançais: \"mangue\" हिन्दी: \"आम\"\nFrançais: \"frère\" हिन्दी: \"भाई\"\nFrançais: \"odeur\" हिन्दी: \"गंध\"\nFrançais: \"soleil\" हिन्दी: \"सूरज\"\nFrançais: \"fleur\" हिन्दी:";
    ensure(t.text == expect_t, format!("translation block differs:\n{}", t.text))?;
    let r = build_repetition_prompt(flower[0], &hi, &ex, &v).map_err(|e| e.to_string())?;
    let expect_r = "हिन्दी: \"मछली\" हिन्दी: \"मछली\"\nहिन्दी: \"आम\" हिन्दी: \"आम\"\nहिन्दी: \"भाई\" हिन्दी: \"भाई\"\nहिन्दी: \"गंध\" हिन्दी: \"गंध\"\nहिन्दी: \"सूरज\" हिन्दी: \"सूरज\"\nहिन्दी: \"फूल\" हिन्दी:";
    ensure(r.text == expect_r, format!("repetition block differs:\n{}", r.text))?;
    let c = build_cloze_prompt(flower[0], &LangRef::native("en"), &find(&d, &["ball", "book"]), &v).map_err(|e| e.to_string())?;
    let expect_c = "A \"___\" is used to play sports like soccer and basketball. Answer: \"ball\"\nA \"___\" is used for reading stories. Answer: \"book\"\nA \"___\" is often given as a gift and can be found in gardens. Answer:";
    ensure(c.text == expect_c, format!("cloze block differs:\n{}", c.text))?;
    for p in [&t, &r, &c] {
        ensure(v.encode(&p.text).map_err(|e| e.to_string())? == p.token_ids, "token ids do not re-encode")?;
    }
    Ok("translation, repetition and cloze blocks byte-identical".into())
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| format!("{}: {e}", path.display())))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn unit_interval(cells: impl IntoIterator<Item = String>, what: &str) -> Result<usize, String> {
    let mut n = 0;
    for c in cells {
        if c.is_empty() {
            continue;
        }
        let v: f64 = c.parse().map_err(|_| format!("{what}: non-numeric {c:?}"))?;
        ensure((0.0..=1.0).contains(&v), format!("{what}: {v} outside [0,1]"))?;
        n += 1;
    }
    Ok(n)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<String>, String> {
    let i = header.iter().position(|h| h == name).ok_or(format!("missing column {name}"))?;
    Ok(rows.iter().map(|r| r[i].clone()).collect())
}

fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let bin = env!("CARGO_BIN_EXE_romanlens");
    let vocab = data("vocab.json");
    let dataset = data("concepts.jsonl");
    let ck = dir.join("model.rlns");
    let start = Instant::now();
    let run = |args: &[&str]| -> Result<(), String> {
        let o = Command::new(bin).args(args).env("ROMANLENS_THREADS", "1").output().map_err(|e| e.to_string())?;
        ensure(o.status.success(), format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    run(&["init-checkpoint", "--vocab", &s(&vocab), "--out", &s(&ck)])?;
    let common = ["--checkpoint".to_string(), s(&ck), "--vocab".into(), s(&vocab), "--dataset".into(), s(&dataset)];
    let with = |cmd: &str, out: &Path| -> Vec<String> {
        let mut a = vec![cmd.to_string()];
        a.extend(common.iter().cloned());
        a.extend(["--out".to_string(), s(out)]);
        a
    };
    let call = |args: Vec<String>| run(&args.iter().map(String::as_str).collect::<Vec<_>>());

    let lr = dir.join("latent");
    call(with("latent-rom", &lr))?;
    let (h, rows) = read_csv(&lr.join("latent_rom.csv"))?;
    ensure(h == ["scenario", "task", "language", "layer", "latent_fraction", "n_samples"], format!("latent header {h:?}"))?;
    ensure(!rows.is_empty(), "no latent rows")?;
    unit_interval(column(&h, &rows, "latent_fraction")?, "latent_fraction")?;
    let report = read_json(&lr.join("report.json"))?;
    let reports = report["reports"].as_array().ok_or("report.json: reports")?;
    ensure(reports.len() == 3, "expected three scenarios")?;
    for r in reports {
        let (k, d, t) = (r["kept"].as_u64(), r["discarded"].as_u64(), r["total"].as_u64());
        ensure(matches!((k, d, t), (Some(k), Some(d), Some(t)) if k + d == t && t >= 100), format!("counts do not reconcile: {r}"))?;
    }
    let freq = report["romanization_frequency"].as_f64().ok_or("romanization_frequency")?;
    ensure((0.0..=1.0).contains(&freq), "frequency outside [0,1]")?;
    read_csv(&lr.join("discarded.csv"))?;
    read_json(&lr.join("manifest.json"))?;

    let pd = dir.join("patch");
    call(with("patch", &pd))?;
    let (h, rows) = read_csv(&pd.join("patch_curves.csv"))?;
    ensure(h == ["mode", "layer_j", "p_source_concept_tgt", "p_target_concept_tgt", "p_english"], format!("patch header {h:?}"))?;
    ensure(rows.len() == 2 * 5, format!("{} patch rows", rows.len()))?;
    for c in ["p_source_concept_tgt", "p_target_concept_tgt", "p_english"] {
        unit_interval(column(&h, &rows, c)?, c)?;
    }
    let m = read_json(&pd.join("manifest.json"))?;
    ensure(m["version"].is_string() && m["inputs"].as_object().is_some_and(|o| o.len() == 3), "patch manifest")?;

    let ld = dir.join("langprob");
    call(with("langprob", &ld))?;
    let (h, rows) = read_csv(&ld.join("langprob.csv"))?;
    let summary = read_json(&ld.join("summary.json"))?;
    let kept = summary["kept"].as_u64().ok_or("summary kept")? as usize;
    let disc = summary["discarded"].as_u64().ok_or("summary discarded")? as usize;
    ensure(kept + disc == summary["total"].as_u64().unwrap_or(0) as usize, "langprob counts do not reconcile")?;
    ensure(rows.len() == 2 * kept, format!("{} langprob rows for {kept} kept samples", rows.len()))?;
    let curve_cols: Vec<String> = h.iter().filter(|c| c.starts_with("target_l") || c.starts_with("english_l")).cloned().collect();
    ensure(curve_cols.len() == 10, format!("curve columns {curve_cols:?}"))?;
    for c in &curve_cols {
        unit_interval(column(&h, &rows, c)?, c)?;
    }

    let lens = dir.join("lens");
    let mut a = with("lens", &lens);
    a.extend(["--concept".into(), "flower".into()]);
    call(a)?;
    let svg = std::fs::read_to_string(lens.join("lens.svg")).map_err(|e| e.to_string())?;
    let doc = roxmltree::Document::parse(&svg).map_err(|e| format!("lens.svg: {e}"))?;
    ensure(doc.root_element().tag_name().name() == "svg", "lens.svg root")?;
    let cells = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).count();
    let (h, rows) = read_csv(&lens.join("lens.csv"))?;
    ensure(cells == rows.len(), format!("{cells} svg cells vs {} csv rows", rows.len()))?;
    unit_interval(column(&h, &rows, "argmax_prob")?, "argmax_prob")?;

    let t = start.elapsed();
    ensure(t < Duration::from_secs(300), format!("took {t:?}"))?;
    Ok(format!("latent-rom, patch, langprob and lens on {} concepts in {t:.1?} (1 thread)", reports[0]["total"]))
}

const INDEPENDENT: &[&str] = &["अ", "आ", "इ", "ई", "उ", "ऊ", "ऋ", "ए", "ऐ", "ओ", "औ", "ऑ"];
const MATRAS: &[&str] = &["ा", "ि", "ी", "ु", "ू", "ृ", "े", "ै", "ो", "ौ", "ॉ", "्"];
const CONSONANTS: &[&str] = &[
    "क", "ख", "ग", "घ", "ङ", "च", "छ", "ज", "झ", "ञ", "ट", "ठ", "ड", "ढ", "ण", "त", "थ", "द", "ध", "न", "प", "फ", "ब",
    "भ", "म", "य", "र", "ल", "व", "श", "ष", "स", "ह",
];
const CODAS: &[&str] = &["ं", "ँ", "ः"];

fn covered_string(rng: &mut StdRng) -> String {
    let pick = |rng: &mut StdRng, xs: &[&str]| xs[rng.random_range(0..xs.len())].to_string();
    let mut words = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        let mut w = String::new();
        for _ in 0..rng.random_range(1..5) {
            if rng.random_bool(0.2) {
                w += &pick(rng, INDEPENDENT);
            } else {
                for c in 0..rng.random_range(1..3) {
                    if c > 0 {
                        w += "्";
                    }
                    w += &pick(rng, CONSONANTS);
                    if rng.random_bool(0.1) {
                        w += "़";
                    }
                }
                if rng.random_bool(0.6) {
                    w += &pick(rng, MATRAS);
                }
            }
            if rng.random_bool(0.15) {
                w += &pick(rng, CODAS);
            }
        }
        words.push(w);
    }
    words.join(if rng.random_bool(0.5) { " " } else { ", " })
}

fn romanizer() -> Check {
    let s = Scheme::from_json_str(romanlens::DEVANAGARI_SCHEME).map_err(|e| e.to_string())?;
    let phool = s.romanize("फूल").map_err(|e| e.to_string())?;
    ensure(phool == "phool", format!("फूल -> {phool}"))?;
    let mut rng = StdRng::seed_from_u64(10_000);
    let mut failures = 0;
    let mut first = None;
    for _ in 0..10_000 {
        let t = covered_string(&mut rng);
        let ok = s.romanize(&t).and_then(|r| s.deromanize(&r)).map(|b| b == t).unwrap_or(false);
        if !ok {
            failures += 1;
            first.get_or_insert(t);
        }
    }
    ensure(failures == 0, format!("{failures} round-trip failures, first {first:?}"))?;
    Ok("10000 round trips, 0 failures; फूल -> phool".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("formula oracles", formula_oracles),
        ("rassi/rope discard fixture", rassi_fixture),
        ("fast/swift summation fixture", fast_swift_fixture),
        ("structural patching suite", structural_patching),
        ("logit-lens consistency", lens_consistency),
        ("prompt fixtures", prompt_fixtures),
        ("end-to-end smoke", end_to_end),
        ("romanizer round trip", romanizer),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
