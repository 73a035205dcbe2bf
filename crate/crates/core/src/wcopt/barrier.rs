//! Log-barrier Newton method for concave maximization over the plausible set.
//!
//! The set is written in whitened coordinates `r = r̂ + B u` with
//! `B = V_k Λ_k^{1/2}` (eigen-directions of `G + jitter·I` whose ellipsoid
//! half-width is not negligible), so the ellipsoid becomes the ball
//! `‖u‖ ≤ Γ̂`. The box gets a relative slack of [`BOX_SLACK`] so that `u = 0`
//! is always strictly feasible; returned points are clipped back into the box.

use nalgebra::{DMatrix, DVector};

use super::feasible::FeasibleSet;

/// Relative widening of the box used by the barrier.
pub(crate) const BOX_SLACK: f64 = 1e-9;
/// The smallest eigen-directions are dropped while the ellipsoid's total
/// extent along them, `Γ̂ (Σ λ_dropped)^{1/2}`, stays below this fraction of
/// the largest price. Every point of the full set is then within that
/// distance of the reduced set, which is contained in the full set.
pub(crate) const DROP_WIDTH: f64 = 1e-4;
const SHRINK: f64 = 100.0;
/// Normalized Newton decrement `λ²/τ` at which a centering stage stops.
const CENTERED: f64 = 1e-3;
const CENTERING_STEPS: usize = 50;
const DUAL_SPREAD: f64 = 1e6;

/// A smooth concave objective in `r` with Hessian `diag(d) + ρ vvᵀ` (`ρ ≤ 0`).
pub(crate) trait SmoothConcave {
    fn value(&self, r: &[f64]) -> f64;
    fn gradient(&self, r: &[f64], out: &mut [f64]);
    /// Diagonal part of the Hessian (non-positive).
    fn hessian_diag(&self, r: &[f64], out: &mut [f64]);
    /// Optional rank-one part `(ρ, v)` of the Hessian.
    fn hessian_rank_one(&self, _r: &[f64]) -> Option<(f64, Vec<f64>)> {
        None
    }
}

struct Flat;

impl SmoothConcave for Flat {
    fn value(&self, _r: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, _r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }

    fn hessian_diag(&self, _r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub r: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Whitened description of the plausible set.
#[derive(Debug, Clone)]
pub(crate) struct Whitened {
    center: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    clip_upper: Vec<f64>,
    radius: f64,
    /// `m × k`
    basis: DMatrix<f64>,
    /// Analytic centre of the barrier, the starting point of every solve.
    start: DVector<f64>,
}

impl Whitened {
    pub(crate) fn new(set: &FeasibleSet) -> Self {
        let (vectors, values) = set.eigen();
        let pmax = set.upper().iter().fold(0.0f64, |m, p| m.max(*p)).max(f64::MIN_POSITIVE);
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
        let budget = (DROP_WIDTH * pmax / set.radius().max(f64::MIN_POSITIVE)).powi(2);
        let mut dropped = 0.0;
        let mut keep = Vec::new();
        for &k in &order {
            if keep.is_empty() && dropped + values[k] <= budget {
                dropped += values[k];
            } else {
                keep.push(k);
            }
        }
        keep.sort_unstable();
        let m = set.dim();
        let basis = DMatrix::from_fn(m, keep.len(), |i, j| vectors[(i, keep[j])] * values[keep[j]].sqrt());
        let slack: Vec<f64> = set.upper().iter().map(|p| BOX_SLACK * p.max(1e-12)).collect();
        let mut out = Self {
            center: set.center().to_vec(),
            lower: slack.iter().map(|s| -s).collect(),
            upper: set.upper().iter().zip(&slack).map(|(p, s)| p + s).collect(),
            clip_upper: set.upper().to_vec(),
            radius: set.radius(),
            start: DVector::zeros(keep.len()),
            basis,
        };
        if out.radius > 0.0 && out.reduced_dim() > 0 {
            let u = out.start.clone();
            let r = out.point(&u);
            let mut state = State {
                z: out.central_duals(1.0, &u, &r),
                u,
                r,
            };
            let mut budget = 200;
            out.center_stage(&Flat, 1.0, &mut state, 1e-6, &mut budget);
            out.start = state.u;
        }
        out
    }

    pub(crate) fn reduced_dim(&self) -> usize {
        self.basis.ncols()
    }

    fn point(&self, u: &DVector<f64>) -> Vec<f64> {
        let d = &self.basis * u;
        self.center.iter().zip(d.iter()).map(|(c, d)| c + d).collect()
    }

    fn strictly_inside(&self, r: &[f64], u: &DVector<f64>) -> bool {
        u.norm_squared() < self.radius * self.radius
            && r.iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, lo), hi)| v > lo && v < hi)
    }

    fn barrier(&self, r: &[f64], u: &DVector<f64>) -> f64 {
        let mut acc = (self.radius * self.radius - u.norm_squared()).ln();
        for ((v, lo), hi) in r.iter().zip(&self.lower).zip(&self.upper) {
            acc += (v - lo).ln() + (hi - v).ln();
        }
        acc
    }

    fn constraint_count(&self) -> f64 {
        (2 * self.center.len() + 1) as f64
    }

    fn clip(&self, r: &mut [f64]) {
        for (v, p) in r.iter_mut().zip(&self.clip_upper) {
            *v = v.clamp(0.0, *p);
        }
    }

    /// Multipliers on the central path for `τ` at `(u, r)`.
    fn central_duals(&self, tau: f64, u: &DVector<f64>, r: &[f64]) -> Duals {
        Duals {
            lower: r.iter().zip(&self.lower).map(|(v, lo)| tau / (v - lo)).collect(),
            upper: r.iter().zip(&self.upper).map(|(v, hi)| tau / (hi - v)).collect(),
            ball: tau / (self.radius * self.radius - u.norm_squared()),
        }
    }

    /// Primal-dual Newton on `f + τ·barrier` until `λ²/τ ≤ centered`. The
    /// step solves the barrier gradient against the primal-dual Hessian,
    /// where each `τ/s²` is replaced by `z/s`. Returns `false` if the step
    /// could not be computed or the budget ran out.
    fn center_stage<O: SmoothConcave>(
        &self,
        obj: &O,
        tau: f64,
        state: &mut State,
        centered: f64,
        budget: &mut usize,
    ) -> bool {
        let m = self.center.len();
        let k = self.reduced_dim();
        let mut g_r = vec![0.0; m];
        let mut d_r = vec![0.0; m];
        let mut scaled = DMatrix::zeros(m, k);
        for _ in 0..CENTERING_STEPS {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            let State { u, r, z } = &mut *state;
            obj.gradient(r, &mut g_r);
            obj.hessian_diag(r, &mut d_r);
            let q = self.radius * self.radius - u.norm_squared();
            for i in 0..m {
                let a = r[i] - self.lower[i];
                let b = self.upper[i] - r[i];
                g_r[i] += tau * (1.0 / a - 1.0 / b);
                let w = (-d_r[i] + z.lower[i] / a + z.upper[i] / b).sqrt();
                for j in 0..k {
                    scaled[(i, j)] = w * self.basis[(i, j)];
                }
            }
            let mut grad = self.basis.tr_mul(&DVector::from_column_slice(&g_r));
            grad.axpy(-2.0 * tau / q, u, 1.0);

            // negative primal-dual Hessian in u
            let mut h = scaled.tr_mul(&scaled);
            h.ger(4.0 * z.ball / q, u, u, 1.0);
            for a in 0..k {
                h[(a, a)] += 2.0 * z.ball;
            }
            if let Some((rho, v)) = obj.hessian_rank_one(r) {
                let bv = self.basis.tr_mul(&DVector::from_vec(v));
                h.ger(-rho, &bv, &bv, 1.0);
            }
            let Some(step) = newton_step(h, &grad) else {
                return false;
            };
            let decrement = grad.dot(&step);
            if decrement <= centered * tau {
                return true;
            }

            // damped step keeping strict feasibility
            let f0 = obj.value(r) + tau * self.barrier(r, u);
            let mut t = 1.0;
            let mut moved = false;
            let radial = u.dot(&step);
            for _ in 0..60 {
                let mut cand = &*u + &step * t;
                // follow the sphere: keep the linearized ball slack
                let q_lin = q - 2.0 * t * radial;
                let norm_sq = cand.norm_squared();
                let target = self.radius * self.radius - q_lin;
                if q_lin > 0.0 && target > 0.0 && norm_sq > target {
                    cand *= (target / norm_sq).sqrt();
                }
                let rc = self.point(&cand);
                if self.strictly_inside(&rc, &cand) {
                    let fc = obj.value(&rc) + tau * self.barrier(&rc, &cand);
                    if fc >= f0 + 0.25 * t * decrement {
                        // multiplier steps from the linearized complementarity
                        let dr = (&self.basis * (&cand - &*u)) / t;
                        for i in 0..m {
                            let a = r[i] - self.lower[i];
                            let b = self.upper[i] - r[i];
                            let dza = tau / a - z.lower[i] - z.lower[i] / a * dr[i];
                            let dzb = tau / b - z.upper[i] + z.upper[i] / b * dr[i];
                            let (a1, b1) = (rc[i] - self.lower[i], self.upper[i] - rc[i]);
                            z.lower[i] = safeguard(z.lower[i] + t * dza, tau, a1);
                            z.upper[i] = safeguard(z.upper[i] + t * dzb, tau, b1);
                        }
                        let dzq = (tau - z.ball * q + 2.0 * z.ball * u.dot(&step)) / q;
                        let q1 = self.radius * self.radius - cand.norm_squared();
                        z.ball = safeguard(z.ball + t * dzq, tau, q1);
                        *u = cand;
                        *r = rc;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                // no representable progress left
                return true;
            }
        }
        true
    }

    /// Maximizes `obj` to within `tol·max(|f|, floor)` of the optimum.
    pub(crate) fn maximize<O: SmoothConcave>(&self, obj: &O, tol: f64, floor: f64, max_newton: usize) -> Solution {
        if self.radius == 0.0 || self.reduced_dim() == 0 {
            return Solution {
                r: self.center.clone(),
                iterations: 0,
                converged: true,
            };
        }
        let u = self.start.clone();
        let r = self.point(&u);

        // Start where the objective and barrier gradients are comparable.
        let mut g_r = vec![0.0; r.len()];
        obj.gradient(&r, &mut g_r);
        let gu = self.basis.tr_mul(&DVector::from_column_slice(&g_r));
        let mut tau = (gu.norm() * self.radius).max(floor);
        let ncons = self.constraint_count();
        let mut state = State {
            z: self.central_duals(tau, &u, &r),
            u,
            r,
        };

        let mut budget = max_newton;
        let mut converged = false;
        loop {
            let ok = self.center_stage(obj, tau, &mut state, CENTERED, &mut budget);
            let f = obj.value(&state.r);
            if !ok {
                break;
            }
            if ncons * tau <= tol * f.abs().max(floor) {
                converged = true;
                break;
            }
            tau /= SHRINK;
        }
        let mut r = state.r;
        self.clip(&mut r);
        Solution {
            r,
            iterations: max_newton - budget,
            converged,
        }
    }
}

/// Multipliers of the box faces and the ball.
#[derive(Debug, Clone)]
struct Duals {
    lower: Vec<f64>,
    upper: Vec<f64>,
    ball: f64,
}

struct State {
    u: DVector<f64>,
    r: Vec<f64>,
    z: Duals,
}

/// Keeps a multiplier within a factor [`DUAL_SPREAD`] of its central value `τ/s`.
fn safeguard(z: f64, tau: f64, slack: f64) -> f64 {
    let central = tau / slack;
    z.clamp(central / DUAL_SPREAD, central * DUAL_SPREAD)
}

/// Solves `H d = g` for positive definite `H` after Jacobi scaling; falls back
/// to a growing diagonal shift when the factorization breaks down.
fn newton_step(mut h: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let k = grad.len();
    let scale: Vec<f64> = (0..k).map(|a| 1.0 / h[(a, a)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for a in 0..k {
        for b in 0..k {
            h[(a, b)] *= scale[a] * scale[b];
        }
    }
    let g = DVector::from_fn(k, |a, _| grad[a] * scale[a]);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut hs = h.clone();
        for a in 0..k {
            hs[(a, a)] += shift;
        }
        if let Some(chol) = hs.cholesky() {
            let y = chol.solve(&g);
            return Some(DVector::from_fn(k, |a, _| y[a] * scale[a]));
        }
        shift = if shift == 0.0 { 1e-14 } else { shift * 100.0 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::RevenueBall;
    use crate::kernel::{GramFactorization, KernelConfig};

    struct Quadratic {
        target: Vec<f64>,
    }

    impl SmoothConcave for Quadratic {
        fn value(&self, r: &[f64]) -> f64 {
            -r.iter().zip(&self.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        }

        fn gradient(&self, r: &[f64], out: &mut [f64]) {
            for k in 0..r.len() {
                out[k] = -2.0 * (r[k] - self.target[k]);
            }
        }

        fn hessian_diag(&self, _r: &[f64], out: &mut [f64]) {
            out.iter_mut().for_each(|v| *v = -2.0);
        }
    }

    struct Linear {
        c: Vec<f64>,
    }

    impl SmoothConcave for Linear {
        fn value(&self, r: &[f64]) -> f64 {
            r.iter().zip(&self.c).map(|(a, b)| a * b).sum()
        }

        fn gradient(&self, _r: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&self.c);
        }

        fn hessian_diag(&self, _r: &[f64], out: &mut [f64]) {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Well separated points give `G ≈ I`, so the set is a ball cut by the box.
    fn identity_set(center: Vec<f64>, radius: f64, upper: f64) -> Whitened {
        let dim = center.len();
        let ball = RevenueBall::new(center, radius, vec![upper; dim]).unwrap();
        let points: Vec<Vec<f64>> = (0..dim).map(|i| vec![1e3 * i as f64]).collect();
        let gf = GramFactorization::from_points(&points, &KernelConfig::isotropic(1)).unwrap();
        Whitened::new(&FeasibleSet::new(&ball, &gf))
    }

    #[test]
    fn interior_maximizer_is_found() {
        let set = identity_set(vec![5.0, 5.0, 5.0], 2.0, 10.0);
        let obj = Quadratic { target: vec![5.5, 4.0, 6.0] };
        let s = set.maximize(&obj, 1e-10, 1e-8, 500);
        assert!(s.converged);
        let value = obj.value(&s.r);
        assert!(value > -1e-7, "{value}");
    }

    #[test]
    fn ball_boundary_maximizer_is_the_projection() {
        let set = identity_set(vec![5.0, 5.0], 1.0, 10.0);
        let obj = Quadratic { target: vec![8.0, 5.0] };
        let s = set.maximize(&obj, 1e-10, 1e-8, 500);
        assert!((s.r[0] - 6.0).abs() < 1e-5 && (s.r[1] - 5.0).abs() < 1e-5, "{:?}", s.r);
    }

    #[test]
    fn linear_objective_reaches_box_corner() {
        // centre on the upper face: only decreases are possible there
        let set = identity_set(vec![10.0, 3.0], 1.0, 10.0);
        let s = set.maximize(&Linear { c: vec![1.0, 1.0] }, 1e-10, 1e-8, 500);
        assert!((s.r[0] - 10.0).abs() < 1e-6 && (s.r[1] - 4.0).abs() < 1e-5, "{:?}", s.r);
        assert!(s.r[0] <= 10.0);
    }
}
