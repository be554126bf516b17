#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` along the coordinates in `which`.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], which: &[usize], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    which
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Compares an analytic gradient with central differences on `which`
/// (every coordinate when `None`); returns the relative error.
pub fn grad_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    which: Option<&[usize]>,
    step: f64,
) -> f64 {
    let all: Vec<usize> = (0..x.len()).collect();
    let which = which.unwrap_or(&all);
    let numeric = numeric_grad(f, x, which, step);
    let picked: Vec<f64> = which.iter().map(|&i| analytic[i]).collect();
    rel_err(&picked, &numeric)
}

/// Up to `n` distinct coordinates of a length-`len` vector.
pub fn sample_coords(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    rand::seq::index::sample(&mut rng(seed), len, n).into_vec()
}

/// Spearman rank correlation of `values` against their index, with average
/// ranks for ties.
pub fn spearman_vs_index(values: &[f64]) -> f64 {
    let n = values.len();
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite"));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    let rv = ranks(values);
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mv, mt) = (mean(&rv), mean(&t));
    let cov: f64 = rv.iter().zip(&t).map(|(a, b)| (a - mv) * (b - mt)).sum();
    let var_v: f64 = rv.iter().map(|a| (a - mv).powi(2)).sum();
    let var_t: f64 = t.iter().map(|b| (b - mt).powi(2)).sum();
    if var_v == 0.0 {
        0.0
    } else {
        cov / (var_v * var_t).sqrt()
    }
}
