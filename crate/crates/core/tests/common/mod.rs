//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use kstar_core::nn;
use kstar_core::prune::pruned_count;
use kstar_core::{Model, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Primitive polynomial degree, coefficient bits and initial direction
/// numbers for dimensions 2..=4 of the Joe-Kuo table.
const JOE_KUO: [(u32, u32, &[u32]); 3] = [(1, 0, &[1]), (2, 1, &[1, 3]), (3, 1, &[1, 3, 1])];

/// Direction integers `v_1..v_32` of dimension `dim` (0-based), scaled to 32 bits.
pub fn sobol_directions(dim: usize) -> Vec<u64> {
    if dim == 0 {
        return (1..=32).map(|k| 1u64 << (32 - k)).collect();
    }
    let (s, a, m_init) = JOE_KUO[dim - 1];
    let s = s as usize;
    let mut m: Vec<u64> = m_init.iter().map(|&x| x as u64).collect();
    for k in s..32 {
        let mut next = m[k - s] ^ (m[k - s] << s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                next ^= m[k - j] << j;
            }
        }
        m.push(next);
    }
    m.iter().enumerate().map(|(k, &mk)| mk << (32 - (k + 1))).collect()
}

/// Non-incremental point `i`: XOR of the directions selected by the bits of gray(i).
pub fn sobol_point(i: u64, dims: usize) -> Vec<f64> {
    let gray = i ^ (i >> 1);
    (0..dims)
        .map(|d| {
            let mut x = 0u64;
            for (bit, vk) in sobol_directions(d).iter().enumerate() {
                if (gray >> bit) & 1 == 1 {
                    x ^= vk;
                }
            }
            x as f64 / 4294967296.0
        })
        .collect()
}

/// Whether the first `2^m` points (index 0 included) put exactly one point in
/// each dyadic interval of every axis.
pub fn dyadic_stratified(points: &[Vec<f64>], m: u32) -> bool {
    let n = 1usize << m;
    let dims = points[0].len();
    (0..dims).all(|d| {
        let mut cells = vec![0; n];
        for p in &points[..n] {
            cells[(p[d] * n as f64).floor() as usize] += 1;
        }
        cells.iter().all(|&c| c == 1)
    })
}

/// Brute force: rank by (score desc, index asc) with a plain sort of pairs.
pub fn topk_oracle(scores: &[f64], sparsity: f64) -> Vec<bool> {
    let keep = scores.len() - pruned_count(sparsity, scores.len());
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut bits = vec![false; scores.len()];
    for (_, i) in pairs.into_iter().take(keep) {
        bits[i] = true;
    }
    bits
}

pub fn random_batch(shape: &[usize], n: usize, classes: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    let data = (0..n * len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (Tensor::new(full, data).unwrap(), y)
}

/// Adds small noise to every parameter so biases have nontrivial derivatives.
pub fn perturb_params(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in model.params_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
}

/// Max relative error of backprop against central differences, and the
/// number of entries compared. Entries whose two-sided estimate is dominated
/// by a ReLU kink are skipped.
pub fn gradient_check(model: &mut Model, x: &Tensor, y: &[usize]) -> (f64, usize) {
    let (_, _, g) = nn::loss_and_gradient(model, x, y).unwrap();
    let g = g.into_flat();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for j in 0..model.param_count() {
        let orig = model.params()[j];
        let loss_at = |m: &mut Model, v: f64| {
            m.params_mut()[j] = v;
            let (logits, _) = nn::forward(m, x).unwrap();
            nn::loss_and_error(&logits, y).unwrap().0
        };
        let plus = loss_at(model, orig + h);
        let minus = loss_at(model, orig - h);
        let plus2 = loss_at(model, orig + 2.0 * h);
        let minus2 = loss_at(model, orig - 2.0 * h);
        model.params_mut()[j] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let fd2 = (plus2 - minus2) / (4.0 * h);
        if (fd - fd2).abs() > 1e-6 * fd.abs().max(1e-3) {
            continue;
        }
        let denom = g[j].abs().max(fd.abs()).max(1e-4);
        worst = worst.max((g[j] - fd).abs() / denom);
        checked += 1;
    }
    (worst, checked)
}
