//! The primal-dual splitting loop, in exact-prox and mask-substituted forms.
//!
//! One iteration, with step sizes mu1, mu2 and relaxation alpha:
//!
//! ```text
//! w~ = prox_logdet(w - mu1*mu2*X^H y, mu1)
//! z  = y + X(2 w~ - w)
//! y~ = z - S(z)
//! (w, y) <- alpha (w~, y~) + (1 - alpha)(w, y)
//! ```
//!
//! In prox mode `S` is the proximity operator of the penalty scaled by
//! 1/mu2, so thresholds are divided by mu2. In mask mode `S(z) = M(z) (.) z`
//! and the mask parameters are used unscaled; the dual step is always
//! written as `z - S(z)` (the conjugate prox is never coded explicitly).

use std::time::Instant;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{BssError, Result};
use crate::linops::{DataOperator, DemixingStack};
use crate::masks::{self, HvaConfig, MaskTensor};
use crate::prox;
use crate::signal::SpectrogramTensor;
use crate::trace::{MaskStats, TraceRecord};

/// Exact proximity operators available to the prox-mode solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ShrinkOperator {
    L1 { lambda: f64 },
    L21 { lambda: f64 },
    PShrinkage { lambda: f64, p: f64 },
    Social { lambda: f64, kernel: ndarray::Array2<f64> },
    WeightedL2 { lambda: f64, variance: Array3<f64> },
}

/// Mask generators available to the masking-mode solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum MaskFunction {
    L1 { lambda: f64 },
    L21 { lambda: f64 },
    ModelIva { lambda: f64, variance: Array3<f64> },
    Hva(HvaConfig),
}

/// The shrinkage step plugged into the dual update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ShrinkStep {
    Prox(ShrinkOperator),
    Mask(MaskFunction),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub shrink_step: ShrinkStep,
}

impl SolverConfig {
    pub fn new(shrink_step: ShrinkStep) -> Self {
        Self { mu1: 1.0, mu2: 1.0, alpha: 1.0, iterations: 200, shrink_step }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu1 > 0.0 && self.mu1.is_finite()) || !(self.mu2 > 0.0 && self.mu2.is_finite()) {
            return Err(BssError::InvalidConfig("step sizes must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(BssError::InvalidConfig(
                "relaxation parameter must lie in (0, 2)".into(),
            ));
        }
        let lambda = match &self.shrink_step {
            ShrinkStep::Prox(op) => match op {
                ShrinkOperator::L1 { lambda }
                | ShrinkOperator::L21 { lambda }
                | ShrinkOperator::Social { lambda, .. }
                | ShrinkOperator::WeightedL2 { lambda, .. } => *lambda,
                ShrinkOperator::PShrinkage { lambda, p } => {
                    if *p > 1.0 {
                        return Err(BssError::InvalidConfig("p must be <= 1".into()));
                    }
                    *lambda
                }
            },
            ShrinkStep::Mask(m) => match m {
                MaskFunction::L1 { lambda }
                | MaskFunction::L21 { lambda }
                | MaskFunction::ModelIva { lambda, .. } => *lambda,
                MaskFunction::Hva(cfg) => {
                    if cfg.kappa < 1 {
                        return Err(BssError::InvalidConfig("kappa must be >= 1".into()));
                    }
                    cfg.lambda
                }
            },
        };
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(BssError::InvalidConfig("lambda must be >= 0".into()));
        }
        Ok(())
    }

    /// Objective penalty when the configuration has one in closed form.
    fn objective_penalty(&self) -> Option<ObjectivePenalty> {
        match &self.shrink_step {
            ShrinkStep::Prox(ShrinkOperator::L1 { lambda }) => {
                Some(ObjectivePenalty::L1 { lambda: *lambda })
            }
            ShrinkStep::Prox(ShrinkOperator::L21 { lambda }) => {
                Some(ObjectivePenalty::L21 { lambda: *lambda })
            }
            _ => None,
        }
    }
}

/// Solver state: primal demixing stack, dual spectrogram, and the
/// accumulated per-iteration trace.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub demix: DemixingStack,
    pub dual: SpectrogramTensor,
    pub iteration: usize,
    pub trace: Vec<TraceRecord>,
}

impl SolverState {
    /// Identity demixing stack and zero dual, the standard initialization.
    pub fn initialize(x: &DataOperator) -> Self {
        let sources = x.channels();
        let demix = DemixingStack::identity(x.bins(), sources, x.channels());
        let dual = SpectrogramTensor::new(
            Array3::zeros((sources, x.frames(), x.bins())),
            x.observations().frame_hop,
            x.observations().fft_length,
        );
        Self { demix, dual, iteration: 0, trace: Vec::new() }
    }
}

fn shrink(z: &SpectrogramTensor, step: &ShrinkStep, mu2: f64) -> Result<(SpectrogramTensor, Option<MaskStats>)> {
    match step {
        // prox mode evaluates prox_{(1/mu2) P}: thresholds divide by mu2
        ShrinkStep::Prox(op) => {
            let out = match op {
                ShrinkOperator::L1 { lambda } => prox::prox_l1(z, lambda / mu2),
                ShrinkOperator::L21 { lambda } => prox::prox_l21(z, lambda / mu2),
                ShrinkOperator::PShrinkage { lambda, p } => {
                    prox::p_shrinkage(z, lambda / mu2, *p)
                }
                ShrinkOperator::Social { lambda, kernel } => {
                    prox::social_shrinkage(z, lambda / mu2, kernel)
                }
                ShrinkOperator::WeightedL2 { lambda, variance } => {
                    prox::prox_weighted_l2(z, variance, lambda / mu2)
                }
            };
            Ok((out, None))
        }
        // mask mode applies M(z) (.) z with unscaled parameters
        ShrinkStep::Mask(mf) => {
            let mask: MaskTensor = match mf {
                MaskFunction::L1 { lambda } => masks::mask_l1(z, *lambda),
                MaskFunction::L21 { lambda } => masks::mask_l21(z, *lambda),
                MaskFunction::ModelIva { lambda, variance } => {
                    masks::mask_model_iva(variance, *lambda)?
                }
                MaskFunction::Hva(cfg) => masks::hva_mask(z, cfg)?,
            };
            let (mean, min, max) = mask.stats();
            Ok((mask.apply(z), Some(MaskStats { mean, min, max })))
        }
    }
}

/// One iteration of the splitting loop. Consumes and returns the state; a
/// non-finite iterate aborts with the partial trace attached.
pub fn pds_step(mut state: SolverState, x: &DataOperator, cfg: &SolverConfig) -> Result<SolverState> {
    let started = Instant::now();
    let k = state.iteration + 1;

    let grad = x.adjoint_apply(&state.dual)?;
    let w_arg = state.demix.combine(1.0, &grad, -(cfg.mu1 * cfg.mu2));
    if !w_arg.is_finite() {
        return Err(BssError::Diverged {
            iteration: k,
            partial_trace: std::mem::take(&mut state.trace),
        });
    }
    let w_tilde = prox::prox_logdet(&w_arg, cfg.mu1);

    let reflected = w_tilde.combine(2.0, &state.demix, -1.0);
    let mut z = x.apply(&reflected)?;
    ndarray::Zip::from(&mut z.data)
        .and(&state.dual.data)
        .for_each(|a, &b| *a += b);
    if !z.is_finite() {
        return Err(BssError::Diverged {
            iteration: k,
            partial_trace: std::mem::take(&mut state.trace),
        });
    }

    let (shrunk, mask_stats) = shrink(&z, &cfg.shrink_step, cfg.mu2)?;
    // y~ = z - S(z)
    let mut y_tilde = z;
    ndarray::Zip::from(&mut y_tilde.data)
        .and(&shrunk.data)
        .for_each(|a, &b| *a -= b);

    let alpha = cfg.alpha;
    state.demix = w_tilde.combine(alpha, &state.demix, 1.0 - alpha);
    ndarray::Zip::from(&mut state.dual.data)
        .and(&y_tilde.data)
        .for_each(|y, &yt| *y = yt * alpha + *y * (1.0 - alpha));
    state.iteration = k;

    if !state.demix.is_finite() || !state.dual.is_finite() {
        return Err(BssError::Diverged {
            iteration: k,
            partial_trace: std::mem::take(&mut state.trace),
        });
    }

    let objective_value = cfg
        .objective_penalty()
        .map(|penalty| objective(&state.demix, x, penalty));
    state.trace.push(TraceRecord {
        iteration: k,
        objective: objective_value,
        demix_norm: state.demix.norm(),
        mask: mask_stats,
        wall_seconds: started.elapsed().as_secs_f64(),
    });
    Ok(state)
}

/// Output of a full solve.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub demix: DemixingStack,
    pub trace: Vec<TraceRecord>,
    /// Normalization divisor applied to the observations before iterating.
    pub operator_scale: f64,
}

/// Run the full loop on whitened observations: normalizes the data
/// operator, starts from the identity stack and zero dual, and iterates
/// exactly `cfg.iterations` times.
pub fn solve(x_whitened: SpectrogramTensor, cfg: &SolverConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    let product = cfg.mu1 * cfg.mu2;
    if product > 1.0 + 1e-9 {
        log::warn!("step-size product mu1*mu2 = {product} exceeds 1; convergence not guaranteed");
    }
    let x = DataOperator::new(x_whitened)?.normalize()?;
    let mut state = SolverState::initialize(&x);
    for _ in 0..cfg.iterations {
        state = pds_step(state, &x, cfg)?;
    }
    Ok(SolveOutput {
        demix: state.demix,
        trace: state.trace,
        operator_scale: x.scale(),
    })
}

/// Penalty selector for the explicit objective.
#[derive(Debug, Clone, Copy)]
pub enum ObjectivePenalty {
    L1 { lambda: f64 },
    L21 { lambda: f64 },
}

/// The separation objective `P(Xw) - sum_f log|det W[f]|`, with the
/// log determinant computed from singular values. Returns +inf when any
/// demixing matrix is singular.
pub fn objective(w: &DemixingStack, x: &DataOperator, penalty: ObjectivePenalty) -> f64 {
    let shat = match x.apply(w) {
        Ok(s) => s,
        Err(_) => return f64::INFINITY,
    };
    let (sources, frames, bins) = shat.shape();
    let pen = match penalty {
        ObjectivePenalty::L1 { lambda } => {
            lambda * shat.data.iter().map(|v| v.norm()).sum::<f64>()
        }
        ObjectivePenalty::L21 { lambda } => {
            let mut acc = 0.0;
            for n in 0..sources {
                for t in 0..frames {
                    acc += (0..bins)
                        .map(|f| shat.data[(n, t, f)].norm_sqr())
                        .sum::<f64>()
                        .sqrt();
                }
            }
            lambda * acc
        }
    };
    let (wb, wn, wm) = w.shape();
    let mut logdet = 0.0;
    for f in 0..wb {
        let wf = w.matricize(f);
        let mat = nalgebra::DMatrix::from_fn(wn, wm, |r, c| wf[(r, c)]);
        for s in mat.svd(false, false).singular_values.iter() {
            if *s <= 0.0 {
                return f64::INFINITY;
            }
            logdet += s.ln();
        }
    }
    pen - logdet
}
