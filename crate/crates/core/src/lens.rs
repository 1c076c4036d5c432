// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logit lens: decode every residual state of a trace through the final
//! norm and unembedding, plus CSV and SVG renderings of the resulting
//! layer x position grid.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Checkpoint, ResidualTrace};
use crate::numerics::{entropy, softmax, Distribution};
use crate::tokenizer::{TokenId, Vocabulary};

/// Maximum number of characters rendered per heatmap cell.
pub const CELL_TEXT_CHARS: usize = 8;

/// Next-token distribution read from a single residual state.
pub fn decode_state(ckpt: &Checkpoint, state: &[f32]) -> Result<Distribution> {
    if state.len() != ckpt.config().dim {
        return Err(Error::Shape(format!(
            "state of length {} for model dim {}",
            state.len(),
            ckpt.config().dim
        )));
    }
    softmax(&ckpt.unembed_state(state))
}

/// Lens distributions at one position for every layer `0..=k`.
pub fn lens_column(trace: &ResidualTrace, ckpt: &Checkpoint, position: usize) -> Result<Vec<Distribution>> {
    check_trace(trace, ckpt)?;
    if position >= trace.seq_len() {
        return Err(Error::Range(format!(
            "position {position} outside sequence of length {}",
            trace.seq_len()
        )));
    }
    (0..trace.num_states())
        .map(|j| decode_state(ckpt, trace.state(j, position)))
        .collect()
}

fn check_trace(trace: &ResidualTrace, ckpt: &Checkpoint) -> Result<()> {
    let cfg = ckpt.config();
    if trace.num_states() != cfg.n_layers + 1 || trace.dim() != cfg.dim {
        return Err(Error::Shape(format!(
            "trace dims {:?} do not match config (k = {}, d = {})",
            trace.states.dims(),
            cfg.n_layers,
            cfg.dim
        )));
    }
    Ok(())
}

/// Per-cell lens output over `(k + 1) x n` cells, row-major by layer.
#[derive(Debug, Clone)]
pub struct LensGrid {
    num_layers: usize,
    seq_len: usize,
    dists: Vec<Distribution>,
    entropies: Vec<f64>,
    argmax: Vec<TokenId>,
}

impl LensGrid {
    /// Number of residual states (`k + 1`).
    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn vocab_size(&self) -> usize {
        self.dists[0].len()
    }

    fn at(&self, layer: usize, position: usize) -> usize {
        assert!(layer < self.num_layers && position < self.seq_len, "cell out of range");
        layer * self.seq_len + position
    }

    pub fn dist(&self, layer: usize, position: usize) -> &Distribution {
        &self.dists[self.at(layer, position)]
    }

    pub fn entropy(&self, layer: usize, position: usize) -> f64 {
        self.entropies[self.at(layer, position)]
    }

    pub fn argmax(&self, layer: usize, position: usize) -> TokenId {
        self.argmax[self.at(layer, position)]
    }

    /// `(layer, position, argmax_id, argmax_prob, entropy)` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "position", "argmax_id", "argmax_prob", "entropy"])?;
        for j in 0..self.num_layers {
            for i in 0..self.seq_len {
                let id = self.argmax(j, i);
                w.write_record([
                    j.to_string(),
                    i.to_string(),
                    id.to_string(),
                    format!("{:.6}", self.dist(j, i).prob(id.index())),
                    format!("{:.6}", self.entropy(j, i)),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn logit_lens(trace: &ResidualTrace, ckpt: &Checkpoint) -> Result<LensGrid> {
    check_trace(trace, ckpt)?;
    let (num_layers, seq_len) = (trace.num_states(), trace.seq_len());
    let cells: Vec<(Distribution, f64, TokenId)> = (0..num_layers * seq_len)
        .into_par_iter()
        .map(|c| {
            let dist = decode_state(ckpt, trace.state(c / seq_len, c % seq_len))?;
            let h = entropy(&dist);
            let top = TokenId(dist.argmax() as u32);
            Ok((dist, h, top))
        })
        .collect::<Result<_>>()?;
    let mut grid = LensGrid {
        num_layers,
        seq_len,
        dists: Vec::with_capacity(cells.len()),
        entropies: Vec::with_capacity(cells.len()),
        argmax: Vec::with_capacity(cells.len()),
    };
    for (d, h, a) in cells {
        grid.dists.push(d);
        grid.entropies.push(h);
        grid.argmax.push(a);
    }
    Ok(grid)
}

/// Linear blue -> red ramp over `entropy / ln V`, clamped to `[0, 1]`.
pub fn entropy_color(entropy: f64, vocab_size: usize) -> (u8, u8, u8) {
    let max = (vocab_size as f64).ln();
    let t = if max > 0.0 { (entropy / max).clamp(0.0, 1.0) } else { 0.0 };
    ((255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8)
}

fn cell_label(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= CELL_TEXT_CHARS {
        text.to_string()
    } else {
        chars[..CELL_TEXT_CHARS - 1].iter().collect::<String>() + "…"
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' && c != '\r' => out.push('\u{fffd}'),
            c => out.push(c),
        }
    }
    out
}

/// SVG heatmap for layers `lo..=hi`, top row is the highest layer.
pub fn render_heatmap(grid: &LensGrid, lo: usize, hi: usize, vocab: &Vocabulary) -> Result<String> {
    if lo > hi || hi >= grid.num_layers {
        return Err(Error::Argument(format!(
            "layer window [{lo}, {hi}] outside [0, {}]",
            grid.num_layers - 1
        )));
    }
    const CELL_W: usize = 72;
    const CELL_H: usize = 24;
    const LEFT: usize = 48;
    const TOP: usize = 24;
    let rows = hi - lo + 1;
    let width = LEFT + CELL_W * grid.seq_len;
    let height = TOP + CELL_H * rows;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    for i in 0..grid.seq_len {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{i}</text>"#,
            LEFT + CELL_W * i + CELL_W / 2,
            TOP - 8
        );
    }
    for (row, layer) in (lo..=hi).rev().enumerate() {
        let y = TOP + CELL_H * row;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{layer}</text>"#,
            LEFT - 6,
            y + CELL_H / 2 + 4
        );
        for i in 0..grid.seq_len {
            let x = LEFT + CELL_W * i;
            let h = grid.entropy(layer, i);
            let (r, g, b) = entropy_color(h, grid.vocab_size());
            let label = xml_escape(&cell_label(&vocab.decode(&[grid.argmax(layer, i)])?));
            let _ = writeln!(
                svg,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="rgb({r},{g},{b})" data-layer="{layer}" data-position="{i}" data-entropy="{h:.6}"/>"#
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="white" xml:space="preserve">{label}</text>"#,
                x + CELL_W / 2,
                y + CELL_H / 2 + 4
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_heatmap(
    grid: &LensGrid,
    lo: usize,
    hi: usize,
    vocab: &Vocabulary,
    out: impl AsRef<Path>,
) -> Result<()> {
    let svg = render_heatmap(grid, lo, hi, vocab)?;
    let out = out.as_ref();
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
