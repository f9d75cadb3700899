//! Training-free architecture score: per-layer Hamming kernels summed over
//! layers, scored by the log of the absolute determinant.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::NetworkArch;
use crate::snn::{
    forward_collect_codes, init_weights, BinaryCodes, BitMatrix, ForwardOptions, LifParams,
    SnnError, SpikeTensor,
};

/// Pivots smaller than this times the largest absolute row sum count as zero.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("need at least 2 samples to build a kernel, got {0}")]
    DegenerateBatch(usize),
    #[error("code layers disagree on sample count")]
    InconsistentCodes,
    #[error("no code layers to score")]
    NoLayers,
    #[error(transparent)]
    Snn(#[from] SnnError),
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub size: usize,
    pub entries: Vec<f64>,
    pub neurons: usize,
    pub alpha: f64,
}

impl KernelMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    /// Row-major, space-separated text, one matrix row per line.
    pub fn to_text(&self) -> String {
        matrix_text(self.size, &self.entries)
    }
}

pub(crate) fn matrix_text(size: usize, entries: &[f64]) -> String {
    let mut out = String::new();
    for row in entries.chunks(size.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// `F - alpha * H(f_i, f_j)` using packed popcounts.
pub fn hamming_kernel(codes: &BitMatrix, alpha: f64) -> Result<KernelMatrix, ScoreError> {
    let s = codes.rows();
    if s < 2 {
        return Err(ScoreError::DegenerateBatch(s));
    }
    let f = codes.cols() as f64;
    let mut entries = vec![0.0; s * s];
    for i in 0..s {
        entries[i * s + i] = f;
        let ri = codes.row_words(i);
        for j in i + 1..s {
            let h: u32 = ri
                .iter()
                .zip(codes.row_words(j))
                .map(|(a, b)| (a ^ b).count_ones())
                .sum();
            let v = f - alpha * h as f64;
            entries[i * s + j] = v;
            entries[j * s + i] = v;
        }
    }
    Ok(KernelMatrix {
        size: s,
        entries,
        neurons: codes.cols(),
        alpha,
    })
}

/// Bit-by-bit nested-loop kernel used to cross-check [`hamming_kernel`].
pub fn hamming_kernel_reference(codes: &BitMatrix, alpha: f64) -> Result<KernelMatrix, ScoreError> {
    let s = codes.rows();
    if s < 2 {
        return Err(ScoreError::DegenerateBatch(s));
    }
    let f = codes.cols();
    let mut entries = Vec::with_capacity(s * s);
    for i in 0..s {
        for j in 0..s {
            let mut h = 0usize;
            for k in 0..f {
                if codes.get(i, k) != codes.get(j, k) {
                    h += 1;
                }
            }
            entries.push(f as f64 - alpha * h as f64);
        }
    }
    Ok(KernelMatrix {
        size: s,
        entries,
        neurons: f,
        alpha,
    })
}

/// Result of `log |det M|`; `value` is `-inf` exactly when `singular`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub value: f64,
    pub singular: bool,
    pub diagnostics: Option<ScoreDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDiagnostics {
    pub summed: KernelMatrix,
    pub per_layer: Vec<(String, KernelMatrix)>,
}

impl ScoreResult {
    pub fn finite(value: f64) -> ScoreResult {
        ScoreResult {
            value,
            singular: false,
            diagnostics: None,
        }
    }

    pub fn sentinel() -> ScoreResult {
        ScoreResult {
            value: f64::NEG_INFINITY,
            singular: true,
            diagnostics: None,
        }
    }

    /// Total order on scores with the sentinel below every finite value.
    pub fn cmp_value(&self, other: &ScoreResult) -> Ordering {
        self.value.total_cmp(&other.value)
    }

    /// Finite score, or `None` for the sentinel.
    pub fn as_option(&self) -> Option<f64> {
        (!self.singular).then_some(self.value)
    }
}

/// `ln |det m|` via LU with partial pivoting; `None` if numerically singular.
pub fn log_abs_det(size: usize, m: &[f64]) -> Option<f64> {
    assert_eq!(m.len(), size * size);
    let scale = m
        .chunks(size.max(1))
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if size == 0 {
        return Some(0.0);
    }
    if scale.is_nan() || scale <= 0.0 || !scale.is_finite() {
        return None;
    }
    let tol = SINGULAR_TOLERANCE * scale;
    let mut a = m.to_vec();
    let mut log_det = 0.0;
    for k in 0..size {
        let (pivot_row, pivot_abs) =
            (k..size)
                .map(|r| (r, a[r * size + k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot_abs < tol {
            return None;
        }
        if pivot_row != k {
            for c in 0..size {
                a.swap(k * size + c, pivot_row * size + c);
            }
        }
        let pivot = a[k * size + k];
        log_det += pivot.abs().ln();
        for r in k + 1..size {
            let factor = a[r * size + k] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in k + 1..size {
                a[r * size + c] -= factor * a[k * size + c];
            }
            a[r * size + k] = 0.0;
        }
    }
    Some(log_det)
}

/// Sums the kernels of every code layer and scores the sum.
pub fn network_score(codes: &BinaryCodes, alpha: f64) -> Result<ScoreResult, ScoreError> {
    score_codes(codes, alpha, false)
}

/// Like [`network_score`], retaining the summed and per-layer kernels.
pub fn network_score_diagnostic(
    codes: &BinaryCodes,
    alpha: f64,
) -> Result<ScoreResult, ScoreError> {
    score_codes(codes, alpha, true)
}

fn score_codes(codes: &BinaryCodes, alpha: f64, keep: bool) -> Result<ScoreResult, ScoreError> {
    if codes.layers.is_empty() {
        return Err(ScoreError::NoLayers);
    }
    if !codes.is_consistent() {
        return Err(ScoreError::InconsistentCodes);
    }
    let s = codes.samples();
    let mut sum = vec![0.0; s * s];
    let mut neurons = 0;
    let mut per_layer = Vec::new();
    for layer in &codes.layers {
        let k = hamming_kernel(&layer.bits, alpha)?;
        sum.iter_mut().zip(&k.entries).for_each(|(a, b)| *a += b);
        neurons += k.neurons;
        if keep {
            per_layer.push((layer.name.clone(), k));
        }
    }
    let mut result = match log_abs_det(s, &sum) {
        Some(v) => ScoreResult::finite(v),
        None => ScoreResult::sentinel(),
    };
    if keep {
        result.diagnostics = Some(ScoreDiagnostics {
            summed: KernelMatrix {
                size: s,
                entries: sum,
                neurons,
                alpha,
            },
            per_layer,
        });
    }
    Ok(result)
}

/// Everything besides the network and seed that determines a score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSettings {
    pub lif: LifParams,
    pub alpha: f64,
    pub forward: ForwardOptions,
    pub diagnostics: bool,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        ScoreSettings {
            lif: LifParams::default(),
            alpha: 1.0,
            forward: ForwardOptions::default(),
            diagnostics: false,
        }
    }
}

/// init_weights -> forward_collect_codes -> network_score.
pub fn score_candidate(
    net: &NetworkArch,
    batch: &SpikeTensor,
    settings: &ScoreSettings,
    seed: u64,
) -> Result<ScoreResult, ScoreError> {
    let weights = init_weights(net, seed);
    let codes = forward_collect_codes(net, &weights, batch, &settings.lif, &settings.forward)?;
    score_codes(&codes, settings.alpha, settings.diagnostics)
}
