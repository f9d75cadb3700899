//! Independent oracles for integration and acceptance tests. Nothing here
//! calls the library code it is used to check.
#![allow(dead_code)]

use spikenas::arch::{MacroConfig, NetworkArch, OpSet, Operation};

/// Channel width of cell stage `i`, traced from the width rule directly.
pub fn stage_width(cfg: &MacroConfig, i: usize) -> usize {
    let mut c = cfg.stem_channels;
    for _ in 0..i {
        c *= cfg.width_multiplier;
    }
    c
}

fn kernel_of(op: Operation) -> Option<usize> {
    match op {
        Operation::Conv1x1 => Some(1),
        Operation::Conv3x3 => Some(3),
        Operation::Zeroize | Operation::SkipCon | Operation::AvgPool3x3 => None,
    }
}

/// Materializes every weight and bias tensor as a zeroed buffer and counts
/// its elements one by one.
pub fn element_walk_params(net: &NetworkArch) -> u64 {
    let cfg = net.config();
    let mut tensors: Vec<Vec<f32>> = Vec::new();
    let c0 = stage_width(cfg, 0);
    tensors.push(vec![0.0; 3 * 3 * cfg.input_shape.channels * c0]);
    if cfg.bias.stem {
        tensors.push(vec![0.0; c0]);
    }
    for (i, cell) in net.cells().iter().enumerate() {
        let c = stage_width(cfg, i);
        for &op in cell.edges() {
            if let Some(k) = kernel_of(op) {
                tensors.push(vec![0.0; k * k * c * c]);
                if cfg.bias.cell {
                    tensors.push(vec![0.0; c]);
                }
            }
        }
        if i + 1 < net.cells().len() {
            let next = stage_width(cfg, i + 1);
            tensors.push(vec![0.0; c * next]);
            if cfg.bias.downsample {
                tensors.push(vec![0.0; next]);
            }
        }
    }
    let last = stage_width(cfg, net.cells().len() - 1);
    tensors.push(vec![0.0; last * cfg.num_classes]);
    if cfg.bias.classifier {
        tensors.push(vec![0.0; cfg.num_classes]);
    }
    let mut n = 0u64;
    for t in &tensors {
        for _ in t.iter() {
            n += 1;
        }
    }
    n
}

/// Smallest parameter count over every network with `cells` cells drawn
/// from `ops`, by brute force over each stage's per-edge costs.
pub fn min_network_params(ops: &OpSet, cfg: &MacroConfig) -> u64 {
    let edge_cost = |op: Operation, c: u64| -> u64 {
        kernel_of(op).map_or(0, |k| {
            let k = k as u64;
            k * k * c * c + if cfg.bias.cell { c } else { 0 }
        })
    };
    let c0 = stage_width(cfg, 0) as u64;
    let mut n = 9 * cfg.input_shape.channels as u64 * c0 + if cfg.bias.stem { c0 } else { 0 };
    for i in 0..cfg.num_cells {
        let c = stage_width(cfg, i) as u64;
        let cheapest = ops.ops().iter().map(|&op| edge_cost(op, c)).min().unwrap();
        n += 6 * cheapest;
        if i + 1 < cfg.num_cells {
            let next = stage_width(cfg, i + 1) as u64;
            n += c * next + if cfg.bias.downsample { next } else { 0 };
        }
    }
    let last = stage_width(cfg, cfg.num_cells - 1) as u64;
    let k = cfg.num_classes as u64;
    n + last * k + if cfg.bias.classifier { k } else { 0 }
}

/// Determinant by Laplace expansion along the first row.
pub fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    match n {
        0 => 1.0,
        1 => m[0][0],
        _ => {
            let mut det = 0.0;
            for col in 0..n {
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|&(j, _)| j != col)
                            .map(|(_, &v)| v)
                            .collect()
                    })
                    .collect();
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                det += sign * m[0][col] * cofactor_det(&minor);
            }
            det
        }
    }
}

/// `F - alpha * H(f_i, f_j)` computed bit by bit on boolean rows.
pub fn naive_kernel(rows: &[Vec<bool>], alpha: f64) -> Vec<Vec<f64>> {
    let f = rows[0].len() as f64;
    rows.iter()
        .map(|a| {
            rows.iter()
                .map(|b| {
                    let h = a.iter().zip(b).filter(|(x, y)| x != y).count();
                    f - alpha * h as f64
                })
                .collect()
        })
        .collect()
}

/// `ln |det sum_l K_l|` for per-layer boolean code rows, or `None` when the
/// determinant is exactly zero.
pub fn oracle_score(layers: &[Vec<Vec<bool>>], alpha: f64) -> Option<f64> {
    let s = layers[0].len();
    let mut m = vec![vec![0.0; s]; s];
    for layer in layers {
        let k = naive_kernel(layer, alpha);
        for i in 0..s {
            for j in 0..s {
                m[i][j] += k[i][j];
            }
        }
    }
    let det = cofactor_det(&m);
    (det != 0.0).then(|| det.abs().ln())
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}
