use super::Objective;
use crate::data::EvaluationInstance;
use crate::estimator::{BoundConfig, RevenueBall, Weights, bias, smoothed_max_term, variance};

/// `∇_w φ(w, r)` at a fixed worst-case `r`.
///
/// For the Bernstein objective the max-term is replaced by its
/// `smoothing_p`-norm, and the square-root term is dropped where the
/// variance vanishes (zero is a subgradient there).
pub fn danskin_gradient(
    w: &Weights,
    r_wc: &[f64],
    kind: Objective,
    inst: &EvaluationInstance,
    ball: &RevenueBall,
    bound: &BoundConfig,
    smoothing_p: u32,
) -> Vec<f64> {
    let n = w.len();
    let nf = n as f64;
    let p = inst.price_vector();
    let r_hat = ball.r_hat();
    let ws = w.as_slice();
    match kind {
        Objective::Mse => {
            let beta = bias(w, r_wc, ball);
            (0..n)
                .map(|i| {
                    2.0 * beta * (r_wc[i] - r_hat[i]) / nf
                        + 2.0 * ws[i] * r_wc[i] * (p[i] - r_wc[i]) / (nf * nf)
                })
                .collect()
        }
        Objective::Bern => {
            let l = bound.log_inv_eps();
            let kappa = (2.0 * l).sqrt();
            let sd = variance(w, r_wc, inst).max(0.0).sqrt();
            let smax = smoothed_max_term(w, p, smoothing_p);
            (0..n)
                .map(|i| {
                    let mut g = (r_wc[i] - r_hat[i]) / nf;
                    if sd > 0.0 {
                        g += kappa * ws[i] * r_wc[i] * (p[i] - r_wc[i]) / (nf * nf * sd);
                    }
                    if smax > 0.0 {
                        let a = ws[i] * p[i];
                        let d = (a.abs() / smax).powi(smoothing_p as i32 - 1) * a.signum() * p[i];
                        g += l / (3.0 * nf) * d;
                    }
                    g
                })
                .collect()
        }
    }
}
