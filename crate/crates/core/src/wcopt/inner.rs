//! Inner worst-case revenue maximization for both objectives.
//!
//! The Bernstein inner problem is concave once the epigraph variable is
//! eliminated: `max b(w)ᵀ(r−r̂) + √(2 log(1/ε)) √Var(w, r)`, solved directly
//! by a log-barrier Newton method.
//!
//! The MSE inner problem `max Bias² + Var` is an indefinite QP. It is swept
//! over the bias level with the identity `β² = max_t (2tβ − t²)`: for every
//! tilt `t` the problem `max 2t·Bias(r) + Var(r)` is concave, and a grid of
//! tilts spaced `h` apart over `[β_min, β_max]` is within `(h/2)²` of the
//! global optimum. The best slice (and a few extra starts) is then refined by
//! alternating `t ← Bias(r)` with the concave solve, which never decreases
//! the objective.

use rand::Rng;

use super::barrier::{SmoothConcave, Solution, Whitened};
use super::feasible::FeasibleSet;
use super::{Objective, SolverConfig, WcoptError, WorstCaseResult};
use crate::data::EvaluationInstance;
use crate::estimator::{BoundConfig, RevenueBall, Weights, max_term};
use crate::kernel::GramFactorization;
use crate::rng;

/// The pieces of `Bias` and `Var` that depend on `w`.
pub(crate) struct Moments<'a> {
    n: usize,
    /// `b(w)`
    b: Vec<f64>,
    /// `wᵢ²/n²` on the logged half.
    c: Vec<f64>,
    prices: &'a [f64],
    r_hat: &'a [f64],
}

impl<'a> Moments<'a> {
    pub(crate) fn new(w: &Weights, prices: &'a [f64], r_hat: &'a [f64]) -> Self {
        let n = w.len();
        let n2 = (n * n) as f64;
        Self {
            n,
            b: w.bias_vector(),
            c: w.as_slice().iter().map(|v| v * v / n2).collect(),
            prices,
            r_hat,
        }
    }

    pub(crate) fn bias(&self, r: &[f64]) -> f64 {
        self.b
            .iter()
            .zip(r)
            .zip(self.r_hat)
            .map(|((b, r), rh)| b * (r - rh))
            .sum()
    }

    pub(crate) fn variance(&self, r: &[f64]) -> f64 {
        self.c
            .iter()
            .zip(r)
            .zip(self.prices)
            .map(|((c, r), p)| c * r * (p - r))
            .sum()
    }

    fn variance_gradient(&self, r: &[f64], scale: f64, out: &mut [f64]) {
        for i in 0..self.n {
            out[i] += scale * self.c[i] * (self.prices[i] - 2.0 * r[i]);
        }
    }

    fn variance_curvature(&self, scale: f64, out: &mut [f64]) {
        for i in 0..self.n {
            out[i] -= 2.0 * scale * self.c[i];
        }
    }
}

struct Tilted<'m, 'a> {
    m: &'m Moments<'a>,
    tilt: f64,
}

impl SmoothConcave for Tilted<'_, '_> {
    fn value(&self, r: &[f64]) -> f64 {
        2.0 * self.tilt * self.m.bias(r) + self.m.variance(r)
    }

    fn gradient(&self, r: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(&self.m.b) {
            *o = 2.0 * self.tilt * b;
        }
        self.m.variance_gradient(r, 1.0, out);
    }

    fn hessian_diag(&self, _r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.m.variance_curvature(1.0, out);
    }
}

struct SignedBias<'m, 'a> {
    m: &'m Moments<'a>,
    sign: f64,
}

impl SmoothConcave for SignedBias<'_, '_> {
    fn value(&self, r: &[f64]) -> f64 {
        self.sign * self.m.bias(r)
    }

    fn gradient(&self, _r: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(&self.m.b) {
            *o = self.sign * b;
        }
    }

    fn hessian_diag(&self, _r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `bᵀ(r−r̂) + κ√Var`. Strictly inside the box `Var > 0` unless `w = 0`, in
/// which case the square-root term is absent.
struct BernSurface<'m, 'a> {
    m: &'m Moments<'a>,
    kappa: f64,
}

impl SmoothConcave for BernSurface<'_, '_> {
    fn value(&self, r: &[f64]) -> f64 {
        self.m.bias(r) + self.kappa * self.m.variance(r).max(0.0).sqrt()
    }

    fn gradient(&self, r: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.m.b);
        let v = self.m.variance(r);
        if v > 0.0 {
            self.m.variance_gradient(r, self.kappa / (2.0 * v.sqrt()), out);
        }
    }

    fn hessian_diag(&self, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let v = self.m.variance(r);
        if v > 0.0 {
            self.m.variance_curvature(self.kappa / (2.0 * v.sqrt()), out);
        }
    }

    fn hessian_rank_one(&self, r: &[f64]) -> Option<(f64, Vec<f64>)> {
        let v = self.m.variance(r);
        if v <= 0.0 {
            return None;
        }
        let mut grad = vec![0.0; r.len()];
        self.m.variance_gradient(r, 1.0, &mut grad);
        Some((-self.kappa / (4.0 * v * v.sqrt()), grad))
    }
}

/// Inner solver bound to one instance, ball and Gram factorization. Holds the
/// eigendecomposition used by the projections so repeated solves are cheap.
#[derive(Debug, Clone)]
pub struct WorstCaseSolver<'a> {
    inst: &'a EvaluationInstance,
    ball: &'a RevenueBall,
    set: FeasibleSet,
    whitened: Whitened,
    cfg: SolverConfig,
    bound: BoundConfig,
}

impl<'a> WorstCaseSolver<'a> {
    pub fn new(
        inst: &'a EvaluationInstance,
        ball: &'a RevenueBall,
        gf: &GramFactorization,
        cfg: &SolverConfig,
        bound: &BoundConfig,
    ) -> Result<Self, WcoptError> {
        cfg.validate()?;
        let dim = 2 * inst.n();
        for (what, got) in [("ball", ball.dim()), ("Gram matrix", gf.dim())] {
            if got != dim {
                return Err(WcoptError::Dimension {
                    what,
                    got,
                    expected: dim,
                });
            }
        }
        let set = FeasibleSet::new(ball, gf);
        Ok(Self {
            inst,
            ball,
            whitened: Whitened::new(&set),
            set,
            cfg: cfg.clone(),
            bound: *bound,
        })
    }

    pub fn instance(&self) -> &EvaluationInstance {
        self.inst
    }

    pub fn ball(&self) -> &RevenueBall {
        self.ball
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn bound(&self) -> &BoundConfig {
        &self.bound
    }

    pub fn feasible_set(&self) -> &FeasibleSet {
        &self.set
    }

    /// Objective scale below which relative accuracy is not pursued.
    fn value_floor(&self, power: i32) -> f64 {
        let p = self.inst.price_vector();
        let mean = p.iter().sum::<f64>() / p.len().max(1) as f64;
        1e-10 * mean.max(1e-6).powi(power)
    }

    fn run<O: SmoothConcave>(&self, obj: &O, power: i32) -> Solution {
        self.whitened
            .maximize(obj, self.cfg.inner_tol, self.value_floor(power), self.cfg.inner_max_iters)
    }

    fn moments(&self, w: &Weights) -> Moments<'_> {
        assert_eq!(w.len(), self.inst.n(), "weight length");
        Moments::new(w, self.inst.price_vector(), self.ball.r_hat())
    }

    /// Exact `φ(w, r)` (true max for the Bernstein term).
    pub fn objective_value(&self, kind: Objective, w: &Weights, r: &[f64]) -> f64 {
        let m = self.moments(w);
        match kind {
            Objective::Mse => {
                let b = m.bias(r);
                b * b + m.variance(r)
            }
            Objective::Bern => {
                let l = self.bound.log_inv_eps();
                m.bias(r)
                    + (2.0 * l * m.variance(r).max(0.0)).sqrt()
                    + max_term(w, self.inst.price_vector()) * l / (3.0 * w.len() as f64)
            }
        }
    }

    pub fn solve(&self, kind: Objective, w: &Weights, warm: Option<&[f64]>) -> WorstCaseResult {
        match kind {
            Objective::Mse => self.mse(w, warm),
            Objective::Bern => self.bern(w, warm),
        }
    }

    fn degenerate(&self, kind: Objective, w: &Weights) -> WorstCaseResult {
        let r = self.ball.r_hat().to_vec();
        WorstCaseResult {
            objective: self.objective_value(kind, w, &r),
            r_wc: r,
            active_jitter: self.set.jitter(),
            iterations: 0,
            converged: true,
        }
    }

    /// Worst-case MSE by tilt slicing; see the module docs.
    pub fn mse(&self, w: &Weights, warm: Option<&[f64]>) -> WorstCaseResult {
        self.mse_sweep(w, warm).0
    }

    /// The slice sweep, also returning every refined local maximizer (the
    /// candidates for distinct worst-case branches).
    pub(crate) fn mse_sweep(&self, w: &Weights, warm: Option<&[f64]>) -> (WorstCaseResult, Vec<Vec<f64>>) {
        if self.ball.gamma_hat() == 0.0 {
            let d = self.degenerate(Objective::Mse, w);
            let r = d.r_wc.clone();
            return (d, vec![r]);
        }
        let m = self.moments(w);
        let cfg = &self.cfg;
        let tol = cfg.inner_tol;
        let value = |r: &[f64]| {
            let b = m.bias(r);
            b * b + m.variance(r)
        };
        let center = self.ball.r_hat();
        let mut iterations = 0;
        let mut converged = true;
        let mut solve = |tilt: f64| {
            let a = self.run(&Tilted { m: &m, tilt }, 2);
            iterations += a.iterations;
            converged &= a.converged;
            a.r
        };

        let range = |sign: f64| {
            let a = self.run(&SignedBias { m: &m, sign }, 1);
            (a.r, a.iterations, a.converged)
        };
        let (r_lo, it_lo, ok_lo) = range(-1.0);
        let (r_hi, it_hi, ok_hi) = range(1.0);
        let beta_lo = m.bias(&r_lo);
        let beta_hi = m.bias(&r_hi);

        let mut best_r = center.to_vec();
        let mut best_val = value(&best_r);
        let better = |val: f64, r: &[f64], best_val: f64, best_r: &[f64]| {
            let slack = tol * (1.0 + best_val.abs());
            val > best_val + slack || (val >= best_val - slack && m.bias(r).abs() < m.bias(best_r).abs())
        };

        let slices = cfg.bias_slices;
        for k in 0..slices {
            let tilt = beta_lo + (beta_hi - beta_lo) * k as f64 / (slices - 1) as f64;
            let r = solve(tilt);
            let val = value(&r);
            if better(val, &r, best_val, &best_r) {
                best_val = val;
                best_r = r.clone();
            }
        }
        for r in [&r_lo, &r_hi] {
            let val = value(r);
            if better(val, r, best_val, &best_r) {
                best_val = val;
                best_r = r.clone();
            }
        }

        // Local refinement: the winner, both bias extremes, random tilts and
        // the warm start.
        let mut starts: Vec<Vec<f64>> = vec![best_r.clone(), r_lo.clone(), r_hi.clone()];
        let mut draw = rng::stream(cfg.seed, "mse-refine", 0);
        for _ in 1..cfg.multistarts {
            let tilt = if beta_hi > beta_lo {
                draw.random_range(beta_lo..=beta_hi)
            } else {
                beta_lo
            };
            starts.push(solve(tilt));
        }
        if let Some(w0) = warm {
            let mut r = w0.to_vec();
            self.set.repair(&mut r);
            starts.push(r);
        }
        let mut maxima = Vec::with_capacity(starts.len());
        for start in starts {
            let mut r = start;
            let mut val = value(&r);
            for _ in 0..100 {
                let cand = solve(m.bias(&r));
                let cval = value(&cand);
                if cval <= val + tol * (1.0 + val.abs()) {
                    if cval > val {
                        r = cand;
                        val = cval;
                    }
                    break;
                }
                r = cand;
                val = cval;
            }
            if better(val, &r, best_val, &best_r) {
                best_val = val;
                best_r = r.clone();
            }
            maxima.push(r);
        }

        let result = WorstCaseResult {
            r_wc: best_r,
            objective: best_val,
            active_jitter: self.set.jitter(),
            iterations: iterations + it_lo + it_hi,
            converged: converged && ok_lo && ok_hi,
        };
        (result, maxima)
    }

    /// Local worst-case MSE: alternates `t ← Bias(r)` with the concave tilted
    /// solve starting from `warm`. A lower bound on the global value that is
    /// exact whenever the global maximizer's branch is kept.
    pub(crate) fn mse_local(&self, w: &Weights, warm: &[f64]) -> WorstCaseResult {
        if self.ball.gamma_hat() == 0.0 {
            return self.degenerate(Objective::Mse, w);
        }
        let m = self.moments(w);
        let tol = self.cfg.inner_tol;
        let value = |r: &[f64]| {
            let b = m.bias(r);
            b * b + m.variance(r)
        };
        let mut iterations = 0;
        let mut converged = true;
        let mut r = warm.to_vec();
        let mut val = value(&r);
        for _ in 0..100 {
            let a = self.run(&Tilted { m: &m, tilt: m.bias(&r) }, 2);
            iterations += a.iterations;
            converged &= a.converged;
            let cval = value(&a.r);
            let done = cval <= val + tol * (1.0 + val.abs());
            if cval > val {
                r = a.r;
                val = cval;
            }
            if done {
                break;
            }
        }
        WorstCaseResult {
            r_wc: r,
            objective: val,
            active_jitter: self.set.jitter(),
            iterations,
            converged,
        }
    }

    /// Worst-case Bernstein penalty with the epigraph variable eliminated.
    pub fn bern(&self, w: &Weights, _warm: Option<&[f64]>) -> WorstCaseResult {
        if self.ball.gamma_hat() == 0.0 {
            return self.degenerate(Objective::Bern, w);
        }
        let m = self.moments(w);
        let kappa = (2.0 * self.bound.log_inv_eps()).sqrt();
        let a = self.run(&BernSurface { m: &m, kappa }, 1);
        WorstCaseResult {
            objective: self.objective_value(Objective::Bern, w, &a.r),
            r_wc: a.r,
            active_jitter: self.set.jitter(),
            iterations: a.iterations,
            converged: a.converged,
        }
    }
}
