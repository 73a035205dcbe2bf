//! End-to-end evaluation of one instance: reference revenue, hyperparameters,
//! weights for every method, and their estimates and worst-case figures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    BaselineError, BopeConfig, LassoModel, bope_weights, fit_lasso, fit_lasso_cv, reference_revenue,
};
use crate::data::{DataError, EvaluationInstance};
use crate::estimator::{BoundConfig, EstimatorError, RevenueBall, Weights, lower_bound, point_estimate};
use crate::hyperfit::{EvidenceProblem, FitOptions, HyperParams, HyperfitError, LikelihoodVariant, fit_hyperparams};
use crate::kernel::{DEFAULT_JITTER, GramFactorization, KernelConfig, KernelError, gram_matrix};
use crate::synth::SynthError;
use crate::wcopt::{Objective, SolverConfig, WcoptError, WorstCaseSolver};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Hyperfit(#[from] HyperfitError),
    #[error(transparent)]
    Solver(#[from] WcoptError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Direct regression estimate, `w = 0`.
    #[serde(rename = "LASSO")]
    Lasso,
    /// Closed-form homoscedastic balancing with Gaussian-evidence hyperparameters.
    #[serde(rename = "BOPE")]
    Bope,
    /// Worst-case MSE weights with Bernoulli-evidence hyperparameters.
    #[serde(rename = "BOPE-B")]
    BopeB,
    /// Worst-case Bernstein weights with Bernoulli-evidence hyperparameters.
    #[serde(rename = "BOPE-Bern")]
    BopeBern,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::BopeBern, Method::BopeB, Method::Bope, Method::Lasso];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lasso => "LASSO",
            Self::Bope => "BOPE",
            Self::BopeB => "BOPE-B",
            Self::BopeBern => "BOPE-Bern",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method `{s}` (expected LASSO, BOPE, BOPE-B or BOPE-Bern)"))
    }
}

/// Where kernel and radius hyperparameters come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum HyperSource {
    /// Maximize the evidence on the logged data. The resulting radius is
    /// read off the data, so bounds built from it are not honest.
    Fit { budget: usize },
    /// User-supplied values, shared by every method.
    Explicit {
        lengthscale_sq: Vec<f64>,
        gamma_hat_sq: f64,
        sigma_sq: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub bound: BoundConfig,
    pub jitter: f64,
    pub hyper: HyperSource,
    /// Fixed LASSO penalty; cross-validated when absent.
    pub lasso_penalty: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            bound: BoundConfig::default(),
            jitter: DEFAULT_JITTER,
            hyper: HyperSource::Fit { budget: crate::hyperfit::DEFAULT_BUDGET },
            lasso_penalty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub outer_iterations: usize,
    pub converged: bool,
    pub start_index: usize,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub method: Method,
    pub weights: Weights,
    pub diagnostics: Option<SolveDiagnostics>,
}

/// Everything fitted on one design: reference model, hyperparameters and
/// per-method weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub lasso: LassoModel,
    pub r_hat: Vec<f64>,
    /// Defines the evaluation ball shared by all methods and the BOPE-B /
    /// BOPE-Bern weights.
    pub bernoulli: HyperParams,
    /// Used for the BOPE weights.
    pub gaussian: Option<HyperParams>,
    /// Jitter actually used for the evaluation Gram matrix.
    pub jitter: f64,
    /// The radius was fitted to the same data it is used on.
    pub dishonest: bool,
    pub fits: Vec<MethodFit>,
}

impl Design {
    pub fn weights(&self, method: Method) -> Option<&Weights> {
        self.fits.iter().find(|f| f.method == method).map(|f| &f.weights)
    }

    pub fn kernel(&self, jitter: f64) -> Result<KernelConfig, KernelError> {
        self.bernoulli.kernel_config(jitter)
    }

    pub fn ball(&self, inst: &EvaluationInstance) -> Result<RevenueBall, EstimatorError> {
        RevenueBall::for_instance(inst, self.r_hat.clone(), self.bernoulli.gamma_hat())
    }
}

fn explicit_params(
    variant: LikelihoodVariant,
    inst: &EvaluationInstance,
    r_hat: &[f64],
    lengthscale_sq: &[f64],
    gamma_hat_sq: f64,
    sigma_sq: f64,
) -> Result<HyperParams, PipelineError> {
    let mut hp = HyperParams {
        lengthscale_sq: lengthscale_sq.to_vec(),
        gamma_hat_sq,
        sigma_sq: (variant == LikelihoodVariant::Gaussian).then_some(sigma_sq),
        evidence: f64::NAN,
    };
    hp.evidence = EvidenceProblem::new(inst, &r_hat[..inst.n()])?.evidence(variant, &hp)?;
    Ok(hp)
}

fn hyperparams(
    variant: LikelihoodVariant,
    inst: &EvaluationInstance,
    r_hat: &[f64],
    source: &HyperSource,
) -> Result<HyperParams, PipelineError> {
    match source {
        HyperSource::Fit { budget } => Ok(fit_hyperparams(
            variant,
            inst,
            &r_hat[..inst.n()],
            &FitOptions {
                budget: *budget,
                extra_starts: Vec::new(),
            },
        )?),
        HyperSource::Explicit {
            lengthscale_sq,
            gamma_hat_sq,
            sigma_sq,
        } => explicit_params(variant, inst, r_hat, lengthscale_sq, *gamma_hat_sq, *sigma_sq),
    }
}

/// Fits the LASSO reference model (cross-validated unless a penalty is given).
pub fn fit_reference(inst: &EvaluationInstance, penalty: Option<f64>) -> Result<LassoModel, PipelineError> {
    Ok(match penalty {
        Some(l1) => fit_lasso(inst.dataset(), l1)?,
        None => fit_lasso_cv(inst.dataset())?.model,
    })
}

/// Fits every requested method on `inst`. `extra_starts` are offered to the
/// worst-case weight optimizer alongside zero and BOPE weights.
pub fn fit_design(
    inst: &EvaluationInstance,
    methods: &[Method],
    cfg: &PipelineConfig,
    extra_starts: &[Weights],
) -> Result<Design, PipelineError> {
    cfg.solver.validate()?;
    let lasso = fit_reference(inst, cfg.lasso_penalty)?;
    fit_design_with_reference(inst, lasso, methods, cfg, extra_starts)
}

pub fn fit_design_with_reference(
    inst: &EvaluationInstance,
    lasso: LassoModel,
    methods: &[Method],
    cfg: &PipelineConfig,
    extra_starts: &[Weights],
) -> Result<Design, PipelineError> {
    let r_hat = reference_revenue(&lasso, inst);
    let bernoulli = hyperparams(LikelihoodVariant::Bernoulli, inst, &r_hat, &cfg.hyper)?;
    let gaussian = if methods.contains(&Method::Bope) {
        Some(hyperparams(LikelihoodVariant::Gaussian, inst, &r_hat, &cfg.hyper)?)
    } else {
        None
    };

    let bope = match &gaussian {
        Some(hp) => {
            let gf = gram_matrix(inst, &hp.kernel_config(cfg.jitter)?)?;
            let sigma_sq = hp.sigma_sq.ok_or(PipelineError::Invalid("Gaussian fit without σ²".into()))?;
            Some(bope_weights(inst, &gf, hp.gamma_hat(), &BopeConfig::new(sigma_sq)?)?)
        }
        None => None,
    };

    let gf = gram_matrix(inst, &bernoulli.kernel_config(cfg.jitter)?)?;
    let ball = RevenueBall::for_instance(inst, r_hat.clone(), bernoulli.gamma_hat())?;
    let solver = WorstCaseSolver::new(inst, &ball, &gf, &cfg.solver, &cfg.bound)?;
    let mut starts: Vec<Weights> = bope.iter().cloned().collect();
    starts.extend(extra_starts.iter().cloned());

    let mut fits = Vec::with_capacity(methods.len());
    for &method in methods {
        let fit = match method {
            Method::Lasso => MethodFit {
                method,
                weights: Weights::zeros(inst.n()),
                diagnostics: None,
            },
            Method::Bope => MethodFit {
                method,
                weights: bope.clone().expect("fitted when requested"),
                diagnostics: None,
            },
            Method::BopeB | Method::BopeBern => {
                let kind = if method == Method::BopeB { Objective::Mse } else { Objective::Bern };
                let sol = solver.solve_weights(kind, &starts);
                MethodFit {
                    method,
                    weights: sol.weights,
                    diagnostics: Some(SolveDiagnostics {
                        outer_iterations: sol.outer_iterations,
                        converged: sol.converged,
                        start_index: sol.start_index,
                        inner_iterations: sol.worst_case.iterations,
                        inner_converged: sol.worst_case.converged,
                    }),
                }
            }
        };
        fits.push(fit);
    }
    Ok(Design {
        lasso,
        r_hat,
        dishonest: matches!(cfg.hyper, HyperSource::Fit { .. }),
        bernoulli,
        gaussian,
        jitter: gf.jitter(),
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEvaluation {
    pub method: Method,
    pub estimate: f64,
    pub wc_mse: f64,
    pub wc_bern: f64,
    pub lower_bound: f64,
}

/// Estimates and worst-case figures of every fitted method over the shared
/// evaluation ball.
pub fn evaluate_design(
    inst: &EvaluationInstance,
    design: &Design,
    cfg: &PipelineConfig,
) -> Result<Vec<MethodEvaluation>, PipelineError> {
    let gf = GramFactorization::from_points(inst.kernel_points(), &design.kernel(cfg.jitter)?)?;
    let ball = design.ball(inst)?;
    let solver = WorstCaseSolver::new(inst, &ball, &gf, &cfg.solver, &cfg.bound)?;
    Ok(design
        .fits
        .iter()
        .map(|fit| {
            let estimate = point_estimate(&fit.weights, inst, &design.r_hat);
            let wc_mse = solver.evaluate(Objective::Mse, &fit.weights).objective;
            let wc_bern = solver.evaluate(Objective::Bern, &fit.weights).objective;
            MethodEvaluation {
                method: fit.method,
                estimate,
                wc_mse,
                wc_bern,
                lower_bound: lower_bound(estimate, wc_bern),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{draw_instance, make_setting_a};

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            hyper: HyperSource::Fit { budget: 120 },
            solver: SolverConfig {
                bias_slices: 15,
                multistarts: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("IPW".parse::<Method>().is_err());
    }

    #[test]
    fn design_fits_every_method() {
        let draw = draw_instance(&make_setting_a(2.0, 1), 15).unwrap();
        let cfg = small_config();
        let design = fit_design(&draw.instance, &Method::ALL, &cfg, &[]).unwrap();
        assert!(design.dishonest);
        assert_eq!(design.fits.len(), 4);
        assert!(design.weights(Method::Lasso).unwrap().as_slice().iter().all(|v| *v == 0.0));
        assert!(design.gaussian.as_ref().unwrap().sigma_sq.is_some());
        assert!(design.r_hat.iter().zip(draw.instance.price_vector()).all(|(r, p)| (0.0..=*p).contains(r)));

        let evals = evaluate_design(&draw.instance, &design, &cfg).unwrap();
        let get = |m| evals.iter().find(|e| e.method == m).unwrap();
        // each worst-case method is at least as good as the others on its own metric
        for m in Method::ALL {
            assert!(get(Method::BopeB).wc_mse <= get(m).wc_mse + 1e-6);
            assert!(get(Method::BopeBern).wc_bern <= get(m).wc_bern + 1e-6);
        }
        for e in &evals {
            assert!(e.lower_bound >= 0.0 && e.lower_bound <= e.estimate.max(0.0));
        }
    }

    #[test]
    fn explicit_hyperparameters_are_honest() {
        let draw = draw_instance(&make_setting_a(2.0, 2), 12).unwrap();
        let cfg = PipelineConfig {
            hyper: HyperSource::Explicit {
                lengthscale_sq: vec![1.0; 3],
                gamma_hat_sq: 0.5,
                sigma_sq: 1.0,
            },
            ..small_config()
        };
        let design = fit_design(&draw.instance, &[Method::Bope, Method::Lasso], &cfg, &[]).unwrap();
        assert!(!design.dishonest);
        assert_eq!(design.bernoulli.gamma_hat_sq, 0.5);
        assert!(design.bernoulli.evidence.is_finite());
        assert_eq!(design.gaussian.as_ref().unwrap().sigma_sq, Some(1.0));
    }
}
