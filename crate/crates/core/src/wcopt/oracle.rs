//! Exhaustive grid oracle for the inner problems on tiny instances.
//!
//! Coordinates are gridded over the box intersected with the ellipsoid's
//! bounding box, `resolution` points each. Ellipsoid feasibility is checked
//! incrementally with a forward substitution in the Cholesky factor of
//! `G + jitter·I` (computed here from the dense matrix), which prunes whole
//! infeasible prefixes. The last coordinate is a target-price coordinate; the
//! objective is convex (MSE) or linear (Bernstein) along it, so only the two
//! ends of its exact feasible interval need evaluating.

use nalgebra::{Cholesky, DMatrix};

use super::{Objective, WcoptError};
use crate::data::EvaluationInstance;
use crate::estimator::{BoundConfig, RevenueBall, Weights, max_term};
use crate::kernel::GramFactorization;

pub const MAX_ORACLE_N: usize = 3;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub objective: f64,
    pub r: Vec<f64>,
    pub evaluated: u64,
}

struct Grid<'a> {
    dim: usize,
    n: usize,
    chol_l: DMatrix<f64>,
    radius_sq: f64,
    axes: Vec<Vec<f64>>,
    last_lo: f64,
    last_hi: f64,
    w: &'a [f64],
    prices: &'a [f64],
    r_hat: &'a [f64],
    kind: Objective,
    kappa: f64,
    constant: f64,
}

struct Search {
    delta: Vec<f64>,
    y: Vec<f64>,
    best: f64,
    best_delta: Vec<f64>,
    evaluated: u64,
}

impl Grid<'_> {
    fn objective(&self, delta: &[f64]) -> f64 {
        let n = self.n;
        let nf = n as f64;
        let mut beta = 0.0;
        let mut var = 0.0;
        for i in 0..n {
            beta += self.w[i] * delta[i];
            let r = self.r_hat[i] + delta[i];
            var += self.w[i] * self.w[i] * r * (self.prices[i] - r);
        }
        for d in &delta[n..] {
            beta -= d;
        }
        beta /= nf;
        var /= nf * nf;
        match self.kind {
            Objective::Mse => beta * beta + var,
            Objective::Bern => beta + self.kappa * var.max(0.0).sqrt() + self.constant,
        }
    }

    fn recurse(&self, k: usize, acc: f64, s: &mut Search) {
        let l = &self.chol_l;
        if k == self.dim - 1 {
            let shift: f64 = (0..k).map(|j| l[(k, j)] * s.y[j]).sum();
            let rem = self.radius_sq - acc;
            if rem < 0.0 {
                return;
            }
            let half = l[(k, k)] * rem.sqrt();
            let lo = (shift - half).max(self.last_lo);
            let hi = (shift + half).min(self.last_hi);
            if lo > hi {
                return;
            }
            for x in [lo, hi] {
                s.delta[k] = x;
                let v = self.objective(&s.delta);
                s.evaluated += 1;
                if v > s.best {
                    s.best = v;
                    s.best_delta.copy_from_slice(&s.delta);
                }
            }
            return;
        }
        let shift: f64 = (0..k).map(|j| l[(k, j)] * s.y[j]).sum();
        for &x in &self.axes[k] {
            let yk = (x - shift) / l[(k, k)];
            let next = acc + yk * yk;
            if next > self.radius_sq * (1.0 + 1e-12) {
                continue;
            }
            s.delta[k] = x;
            s.y[k] = yk;
            self.recurse(k + 1, next, s);
        }
    }
}

fn axis_range(r_hat: f64, price: f64, half_width: f64) -> (f64, f64) {
    ((-r_hat).max(-half_width), (price - r_hat).min(half_width))
}

/// Maximizes `φ(w, ·)` over the gridded feasible set. `n` must be at most
/// [`MAX_ORACLE_N`] and `resolution` at least 2.
pub fn brute_force_oracle(
    w: &Weights,
    inst: &EvaluationInstance,
    ball: &RevenueBall,
    gf: &GramFactorization,
    kind: Objective,
    bound: &BoundConfig,
    resolution: usize,
) -> Result<OracleResult, WcoptError> {
    let n = inst.n();
    if n > MAX_ORACLE_N {
        return Err(WcoptError::InstanceTooLarge { n, max: MAX_ORACLE_N });
    }
    if resolution < 2 {
        return Err(WcoptError::InvalidConfig("oracle resolution must be at least 2".into()));
    }
    let dim = 2 * n;
    let mut m = gf.gram().clone();
    for i in 0..dim {
        m[(i, i)] += gf.jitter();
    }
    let chol_l = Cholesky::new(m.clone())
        .ok_or(WcoptError::InvalidConfig("regularized Gram matrix is not positive definite".into()))?
        .unpack();
    let gamma = ball.gamma_hat();
    let r_hat = ball.r_hat();
    let prices = inst.price_vector();
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let (lo, hi) = axis_range(r_hat[i], prices[i], gamma * m[(i, i)].sqrt());
            if hi - lo <= 0.0 {
                vec![0.0f64.clamp(lo, hi.max(lo))]
            } else {
                (0..resolution)
                    .map(|k| lo + (hi - lo) * k as f64 / (resolution - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let (last_lo, last_hi) = axis_range(r_hat[dim - 1], prices[dim - 1], gamma * m[(dim - 1, dim - 1)].sqrt());
    let l = bound.log_inv_eps();
    let grid = Grid {
        dim,
        n,
        chol_l,
        radius_sq: gamma * gamma,
        axes,
        last_lo,
        last_hi,
        w: w.as_slice(),
        prices,
        r_hat,
        kind,
        kappa: (2.0 * l).sqrt(),
        constant: max_term(w, prices) * l / (3.0 * n as f64),
    };
    let mut search = Search {
        delta: vec![0.0; dim],
        y: vec![0.0; dim],
        best: f64::NEG_INFINITY,
        best_delta: vec![0.0; dim],
        evaluated: 0,
    };
    grid.recurse(0, 0.0, &mut search);
    if search.evaluated == 0 {
        // only possible through rounding at a zero radius
        search.best = grid.objective(&vec![0.0; dim]);
        search.evaluated = 1;
    }
    Ok(OracleResult {
        objective: search.best,
        r: search
            .best_delta
            .iter()
            .zip(r_hat)
            .map(|(d, c)| c + d)
            .collect(),
        evaluated: search.evaluated,
    })
}
