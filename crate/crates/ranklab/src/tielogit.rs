//! Two-tier rank-ordered logit with ties.
//!
//! Observed behavior reveals only that every chosen item's utility exceeds
//! every unchosen item's, under iid standard Gumbel shocks. The probability
//! of that event,
//!
//! P(min over chosen of v + eps > max over unchosen of v + eps),
//!
//! has a closed form by inclusion-exclusion over subsets T of the chosen
//! block:
//!
//! P = sum_T (-1)^{|T|} S_D / (S_D + S_T),  S_X = sum_{x in X} exp(v_x),
//!
//! with the empty-subset term equal to 1. The alternating sum is evaluated
//! with max-shifted exponentials; a non-positive result after cancellation is
//! an error, never a silent degrade.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rngutil;

/// Exact-method cap on the chosen-block size (2^|C| subsets are enumerated).
pub const DEFAULT_EXACT_CAP: usize = 20;

/// Fixed chunk size for parallel likelihood sums. Chunk results are reduced
/// in index order, so totals are bit-stable at any worker count.
const CHUNK: usize = 1024;

/// One two-tier choice event: covariate rows for the chosen block (e.g.
/// requested slots) and the unchosen block (clicked-but-not-requested).
#[derive(Debug, Clone, Default)]
pub struct ChoiceInstance {
    pub chosen: Vec<Vec<f64>>,
    pub unchosen: Vec<Vec<f64>>,
}

impl ChoiceInstance {
    /// Degenerate instances (either block empty) have probability 1.
    pub fn is_degenerate(&self) -> bool {
        self.chosen.is_empty() || self.unchosen.is_empty()
    }
}

/// P(min chosen > max unchosen) for deterministic utility values with iid
/// standard Gumbel shocks.
pub fn tie_prob(chosen_values: &[f64], unchosen_values: &[f64]) -> Result<f64> {
    if chosen_values.is_empty() || unchosen_values.is_empty() {
        return Ok(1.0);
    }
    if chosen_values.len() > DEFAULT_EXACT_CAP {
        return Err(Error::Numerical(format!(
            "chosen block of size {} exceeds exact-method cap {}",
            chosen_values.len(),
            DEFAULT_EXACT_CAP
        )));
    }
    for v in chosen_values.iter().chain(unchosen_values) {
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite utility value".into()));
        }
    }

    let shift = chosen_values
        .iter()
        .chain(unchosen_values)
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let ec: Vec<f64> = chosen_values.iter().map(|v| (v - shift).exp()).collect();
    let s_d: f64 = unchosen_values.iter().map(|v| (v - shift).exp()).sum();

    let n = ec.len();
    let mut p = 0.0;
    for mask in 0u32..(1u32 << n) {
        let mut s_t = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            s_t += ec[i];
            bits &= bits - 1;
        }
        let term = s_d / (s_d + s_t);
        if mask.count_ones() % 2 == 0 {
            p += term;
        } else {
            p -= term;
        }
    }

    if p <= 0.0 {
        return Err(Error::Numerical(format!(
            "tie probability non-positive after cancellation ({p:e})"
        )));
    }
    Ok(p.min(1.0))
}

/// Monte Carlo estimate of the same event by direct Gumbel sampling.
/// Returns (estimate, standard error).
pub fn mc_tie_prob(
    chosen_values: &[f64],
    unchosen_values: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_draws == 0 {
        return Err(Error::Usage("mc_tie_prob needs n_draws >= 1".into()));
    }
    if chosen_values.is_empty() || unchosen_values.is_empty() {
        return Ok((1.0, 0.0));
    }
    let mut rng = rngutil::stream(seed, &[0x4d43]);
    let mut hits = 0usize;
    for _ in 0..n_draws {
        let min_c = chosen_values
            .iter()
            .map(|v| v + rngutil::gumbel_from_uniform(rng.gen::<f64>()))
            .fold(f64::INFINITY, f64::min);
        let max_d = unchosen_values
            .iter()
            .map(|v| v + rngutil::gumbel_from_uniform(rng.gen::<f64>()))
            .fold(f64::NEG_INFINITY, f64::max);
        if min_c > max_d {
            hits += 1;
        }
    }
    let p = hits as f64 / n_draws as f64;
    let se = (p * (1.0 - p) / n_draws as f64).sqrt();
    Ok((p, se))
}

fn values(rows: &[Vec<f64>], params: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.iter().zip(params).map(|(a, b)| a * b).sum())
        .collect()
}

/// log P and its gradient in the parameters for one instance.
///
/// dS_X/db_j = sum_{x in X} exp(v_x) x_j; each inclusion-exclusion term is
/// differentiated through S_T and S_D. Degenerate instances contribute
/// (0, zero vector).
pub fn instance_log_prob_grad(instance: &ChoiceInstance, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let dim = params.len();
    if instance.is_degenerate() {
        return Ok((0.0, vec![0.0; dim]));
    }
    let vc = values(&instance.chosen, params);
    let vd = values(&instance.unchosen, params);
    if vc.len() > DEFAULT_EXACT_CAP {
        return Err(Error::Numerical(format!(
            "chosen block of size {} exceeds exact-method cap {}",
            vc.len(),
            DEFAULT_EXACT_CAP
        )));
    }
    for v in vc.iter().chain(&vd) {
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite utility index".into()));
        }
    }

    let shift = vc.iter().chain(&vd).fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let ec: Vec<f64> = vc.iter().map(|v| (v - shift).exp()).collect();
    let ed: Vec<f64> = vd.iter().map(|v| (v - shift).exp()).collect();
    let s_d: f64 = ed.iter().sum();
    // dS_D/db
    let mut gd = vec![0.0; dim];
    for (e, row) in ed.iter().zip(&instance.unchosen) {
        for (g, x) in gd.iter_mut().zip(row) {
            *g += e * x;
        }
    }
    // per-chosen-item exp(v) * x
    let gc: Vec<Vec<f64>> = ec
        .iter()
        .zip(&instance.chosen)
        .map(|(e, row)| row.iter().map(|x| e * x).collect())
        .collect();

    let n = ec.len();
    let mut p = 0.0;
    let mut dp = vec![0.0; dim];
    let mut gt = vec![0.0; dim];
    for mask in 0u32..(1u32 << n) {
        let mut s_t = 0.0;
        gt.iter_mut().for_each(|g| *g = 0.0);
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            s_t += ec[i];
            for (g, x) in gt.iter_mut().zip(&gc[i]) {
                *g += x;
            }
            bits &= bits - 1;
        }
        let denom = s_d + s_t;
        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        p += sign * s_d / denom;
        // d(S_D/(S_D+S_T)) = (S_D' S_T - S_D S_T') / (S_D+S_T)^2
        let d2 = denom * denom;
        for j in 0..dim {
            dp[j] += sign * (gd[j] * s_t - s_d * gt[j]) / d2;
        }
    }

    if p <= 0.0 {
        return Err(Error::Numerical(format!(
            "tie probability non-positive after cancellation ({p:e})"
        )));
    }
    let p = p.min(1.0);
    for g in dp.iter_mut() {
        *g /= p;
    }
    Ok((p.ln(), dp))
}

/// Sum of per-instance log tie probabilities.
pub fn log_likelihood(instances: &[ChoiceInstance], params: &[f64]) -> Result<f64> {
    let parts: Vec<Result<f64>> = instances
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = 0.0;
            for inst in chunk {
                s += instance_log_prob_grad(inst, params)?.0;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Log-likelihood and analytic gradient, reduced in fixed chunk order.
pub fn log_likelihood_grad(instances: &[ChoiceInstance], params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let dim = params.len();
    let parts: Vec<Result<(f64, Vec<f64>)>> = instances
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = 0.0;
            let mut g = vec![0.0; dim];
            for inst in chunk {
                let (lp, gp) = instance_log_prob_grad(inst, params)?;
                s += lp;
                for (a, b) in g.iter_mut().zip(&gp) {
                    *a += b;
                }
            }
            Ok((s, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; dim];
    for p in parts {
        let (s, g) = p?;
        total += s;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Per-instance log probabilities, for oracle comparison dumps.
pub fn per_instance_log_probs(instances: &[ChoiceInstance], params: &[f64]) -> Result<Vec<f64>> {
    instances
        .iter()
        .map(|inst| instance_log_prob_grad(inst, params).map(|(lp, _)| lp))
        .collect()
}
