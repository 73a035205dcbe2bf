//! Outer minimization of `h(w) = max_r φ(w, r)`.
//!
//! The Bernstein inner problem is concave, so `h` is smooth away from
//! `w = 0` once the max-term is smoothed; descent uses Barzilai–Borwein trial
//! steps with Armijo backtracking.
//!
//! The MSE inner problem can have several local maxima (typically one per
//! sign of the bias), which makes `h` a maximum of a few smooth branches. The
//! descent keeps a small set of tracked branches, evaluates `h` as the largest
//! locally refined branch value and steps along the minimum-norm element of
//! the convex hull of the near-active branch gradients. A full slice sweep
//! every few iterations adds branches the tracking missed.

use serde::{Deserialize, Serialize};

use super::gradient::danskin_gradient;
use super::inner::WorstCaseSolver;
use super::{Objective, WorstCaseResult};
use crate::estimator::{Weights, max_term, smoothed_max_term};

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
/// Accepted MSE steps between full slice sweeps.
const SWEEP_EVERY: usize = 8;
const MAX_BRANCHES: usize = 6;
/// Branches within this relative gap of the maximum count as active.
const ACTIVE_GAP: f64 = 5e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSolution {
    pub weights: Weights,
    pub worst_case: WorstCaseResult,
    /// Start that descent began from: 0 is zero weights, `k` is `starts[k - 1]`.
    pub start_index: usize,
    pub outer_iterations: usize,
    /// `h` along accepted iterates (smoothed for the Bernstein objective).
    pub history: Vec<f64>,
    /// Positions in `history` where a full MSE sweep found a higher
    /// worst-case branch than the tracked ones. Between corrections
    /// `history` is non-increasing.
    pub corrections: Vec<usize>,
    pub converged: bool,
}

/// `h` at one point together with the worst case of every tracked branch.
struct Probe {
    h: f64,
    branches: Vec<WorstCaseResult>,
}

fn weights(w: &[f64]) -> Weights {
    Weights::new(w.to_vec()).expect("finite weights")
}

/// Minimum-norm point of the convex hull of `vectors` by projected gradient
/// on the simplex.
pub(crate) fn min_norm_combination(vectors: &[Vec<f64>]) -> Vec<f64> {
    let k = vectors.len();
    if k == 1 {
        return vectors[0].clone();
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gram: Vec<Vec<f64>> = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| dot(a, b)).collect())
        .collect();
    let trace: f64 = (0..k).map(|i| gram[i][i]).sum();
    if trace == 0.0 {
        return vec![0.0; vectors[0].len()];
    }
    let mut lambda = vec![1.0 / k as f64; k];
    for _ in 0..2000 {
        let step: Vec<f64> = (0..k)
            .map(|i| lambda[i] - (0..k).map(|j| gram[i][j] * lambda[j]).sum::<f64>() / trace)
            .collect();
        let next = project_simplex(&step);
        let change = next.iter().zip(&lambda).map(|(a, b)| (a - b).abs()).sum::<f64>();
        lambda = next;
        if change < 1e-14 {
            break;
        }
    }
    let dim = vectors[0].len();
    (0..dim)
        .map(|d| (0..k).map(|i| lambda[i] * vectors[i][d]).sum())
        .collect()
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn merge_branches(branches: &mut Vec<Vec<f64>>, found: Vec<Vec<f64>>) {
    for r in found {
        let scale = 1.0 + r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let known = branches.iter().any(|b| {
            b.iter().zip(&r).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() <= 1e-6 * scale
        });
        if !known {
            branches.push(r);
        }
    }
}

impl WorstCaseSolver<'_> {
    /// `h(w)` from a cold inner solve. Deterministic for fixed inputs.
    pub fn evaluate(&self, kind: Objective, w: &Weights) -> WorstCaseResult {
        self.solve(kind, w, None)
    }

    /// Value the line search works on: exact for MSE, smoothed max-term for
    /// the Bernstein objective (the worst-case `r` does not depend on it).
    fn surrogate(&self, kind: Objective, w: &Weights, res: &WorstCaseResult) -> f64 {
        match kind {
            Objective::Mse => res.objective,
            Objective::Bern => {
                let p = self.instance().price_vector();
                let scale = self.bound().log_inv_eps() / (3.0 * w.len() as f64);
                res.objective
                    + scale
                        * (smoothed_max_term(w, p, self.config().smoothing_p) - max_term(w, p))
            }
        }
    }

    fn probe(&self, kind: Objective, w: &Weights, tracked: &[Vec<f64>]) -> Probe {
        let branches: Vec<WorstCaseResult> = match kind {
            Objective::Mse => tracked.iter().map(|r| self.mse_local(w, r)).collect(),
            Objective::Bern => vec![self.solve(kind, w, None)],
        };
        let h = branches
            .iter()
            .map(|b| self.surrogate(kind, w, b))
            .fold(f64::NEG_INFINITY, f64::max);
        Probe { h, branches }
    }

    /// Negative minimum-norm combination of the active branch gradients.
    fn descent_direction(&self, kind: Objective, w: &[f64], probe: &Probe) -> Vec<f64> {
        let ww = weights(w);
        let cut = probe.h - ACTIVE_GAP * probe.h.abs().max(f64::MIN_POSITIVE);
        let grads: Vec<Vec<f64>> = probe
            .branches
            .iter()
            .filter(|b| self.surrogate(kind, &ww, b) >= cut)
            .map(|b| {
                danskin_gradient(
                    &ww,
                    &b.r_wc,
                    kind,
                    self.instance(),
                    self.ball(),
                    self.bound(),
                    self.config().smoothing_p,
                )
            })
            .collect();
        min_norm_combination(&grads).into_iter().map(|g| -g).collect()
    }

    fn best_branch(probe: &Probe) -> WorstCaseResult {
        probe
            .branches
            .iter()
            .max_by(|a, b| a.objective.total_cmp(&b.objective))
            .cloned()
            .expect("at least one branch")
    }

    /// Minimizes `h` from the best of `starts` (zero weights are always
    /// tried). The returned weights never have a larger cold-evaluated `h`
    /// than any start.
    pub fn solve_weights(&self, kind: Objective, starts: &[Weights]) -> WeightSolution {
        let n = self.instance().n();
        let cfg = self.config().clone();
        let mut candidates = vec![Weights::zeros(n)];
        candidates.extend(starts.iter().filter(|w| w.len() == n).cloned());

        let evaluated: Vec<(WorstCaseResult, Vec<Vec<f64>>)> = candidates
            .iter()
            .map(|w| match kind {
                Objective::Mse => self.mse_sweep(w, None),
                Objective::Bern => {
                    let res = self.evaluate(kind, w);
                    let r = res.r_wc.clone();
                    (res, vec![r])
                }
            })
            .collect();
        let (start_index, _) = evaluated
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.0.objective.total_cmp(&b.1.0.objective))
            .expect("at least one start");

        let mut w = candidates[start_index].as_slice().to_vec();
        let mut tracked = Vec::new();
        merge_branches(&mut tracked, evaluated[start_index].1.clone());
        let mut probe = self.probe(kind, &candidates[start_index], &tracked);
        let mut d = self.descent_direction(kind, &w, &probe);
        let mut history = vec![probe.h];
        let mut corrections = Vec::new();
        let mut step = {
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dn > 0.0 { 1.0 / dn } else { 1.0 }
        };
        let mut converged = false;
        let mut iterations = 0;

        while iterations < cfg.outer_max_iters {
            iterations += 1;
            let d_sq: f64 = d.iter().map(|v| v * v).sum();
            if d_sq == 0.0 {
                converged = true;
                break;
            }
            let mut accepted = None;
            let mut trial_step = step;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + trial_step * b).collect();
                let trial = self.probe(kind, &weights(&cand), &tracked);
                if trial.h <= probe.h - ARMIJO * trial_step * d_sq {
                    accepted = Some((cand, trial));
                    break;
                }
                trial_step *= 0.5;
            }
            let Some((w_new, mut probe_new)) = accepted else {
                if kind == Objective::Mse {
                    // a branch may be missing; re-sweep once before stopping
                    let best = Self::best_branch(&probe);
                    let (full, maxima) = self.mse_sweep(&weights(&w), Some(&best.r_wc));
                    merge_branches(&mut tracked, maxima);
                    if full.objective > probe.h + cfg.inner_tol * (1.0 + probe.h.abs()) {
                        probe = self.probe(kind, &weights(&w), &tracked);
                        d = self.descent_direction(kind, &w, &probe);
                        corrections.push(history.len());
                        history.push(probe.h);
                        continue;
                    }
                }
                converged = true;
                break;
            };

            let mut decrease = probe.h - probe_new.h;
            if kind == Objective::Mse {
                tracked = probe_new.branches.iter().map(|b| b.r_wc.clone()).collect();
                if iterations % SWEEP_EVERY == 0 {
                    let best = Self::best_branch(&probe_new);
                    let (full, maxima) = self.mse_sweep(&weights(&w_new), Some(&best.r_wc));
                    let previous = probe_new.h;
                    merge_branches(&mut tracked, maxima);
                    if full.objective > previous + cfg.inner_tol * (1.0 + previous.abs()) {
                        probe_new = self.probe(kind, &weights(&w_new), &tracked);
                        decrease = f64::INFINITY;
                        corrections.push(history.len());
                    }
                }
                // drop duplicates and the least relevant branches
                let mut ranked: Vec<(f64, Vec<f64>)> = probe_new
                    .branches
                    .iter()
                    .map(|b| (b.objective, b.r_wc.clone()))
                    .collect();
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
                tracked.clear();
                merge_branches(&mut tracked, ranked.into_iter().map(|x| x.1).collect());
                tracked.truncate(MAX_BRANCHES);
            }
            let d_new = self.descent_direction(kind, &w_new, &probe_new);

            // Barzilai–Borwein step for the next trial.
            let (mut sy, mut ss) = (0.0, 0.0);
            for k in 0..n {
                let s = w_new[k] - w[k];
                sy += s * (d[k] - d_new[k]);
                ss += s * s;
            }
            step = if sy > 0.0 { ss / sy } else { trial_step * 2.0 };

            w = w_new;
            probe = probe_new;
            d = d_new;
            history.push(probe.h);
            if decrease < cfg.outer_tol {
                converged = true;
                break;
            }
        }

        let final_w = weights(&w);
        let final_res = self.evaluate(kind, &final_w);
        let start = &evaluated[start_index].0;
        let (weights, worst_case) = if final_res.objective <= start.objective {
            (final_w, final_res)
        } else {
            (candidates[start_index].clone(), start.clone())
        };
        WeightSolution {
            weights,
            worst_case,
            start_index,
            outer_iterations: iterations,
            history,
            corrections,
            converged,
        }
    }
}
