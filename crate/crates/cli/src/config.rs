//! Run configuration: file format, defaults, and method-parameter
//! compatibility checks.

use serde::{Deserialize, Serialize};

use bss_core::error::{BssError, Result};
use bss_core::masks::HvaConfig;
use bss_core::signal::StftConfig;
use bss_core::solver::{MaskFunction, ShrinkOperator, ShrinkStep, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Bin-wise soft threshold (frequency-domain ICA), prox mode.
    Fdica,
    /// Frequency-group threshold (Laplace IVA), prox mode.
    Iva,
    /// Fixed variance mask v/(v + lambda), mask mode.
    ModelIva,
    /// Harmonic mask (cepstrum thresholding + Wiener-like), mask mode.
    Hva,
    /// Harmonic mask without cepstrum thresholding (lambda = 0).
    WienerOnly,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Fdica => "fdica",
            Method::Iva => "iva",
            Method::ModelIva => "model_iva",
            Method::Hva => "hva",
            Method::WienerOnly => "wiener_only",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftSection {
    pub window_length: Option<usize>,
    pub hop: Option<usize>,
    pub fft_length: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub lambda: Option<f64>,
    pub kappa: Option<u32>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub p: Option<f64>,
    pub quefrency_length: Option<usize>,
}

/// On-disk run configuration; every field is optional and falls back to the
/// documented defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub method: Option<Method>,
    #[serde(default)]
    pub stft: StftSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub params: ParamsSection,
    pub ref_channel: Option<usize>,
    pub report_format: Option<ReportFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

/// Fully resolved configuration. Serialized into every run report so the
/// effective defaults are recorded alongside the results.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub method: Method,
    pub window_length: usize,
    pub hop: usize,
    pub fft_length: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub kappa: u32,
    pub gamma: Option<f64>,
    pub epsilon: f64,
    pub p: Option<f64>,
    pub quefrency_length: Option<usize>,
    pub ref_channel: usize,
    pub report_format: ReportFormat,
}

pub const DEFAULT_LAMBDA: f64 = 0.08;
pub const DEFAULT_KAPPA: u32 = 3;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_WINDOW: usize = 2048;
pub const DEFAULT_HOP: usize = 1024;
pub const DEFAULT_ITERATIONS: usize = 200;

impl RunConfig {
    /// Merge an optional file config; unset fields take the defaults.
    pub fn resolve(file: &RunConfigFile) -> Result<Self> {
        let method = file.method.unwrap_or(Method::Hva);
        let window_length = file.stft.window_length.unwrap_or(DEFAULT_WINDOW);
        let cfg = Self {
            method,
            window_length,
            hop: file.stft.hop.unwrap_or(window_length / 2),
            fft_length: file.stft.fft_length.unwrap_or(window_length),
            mu1: file.solver.mu1.unwrap_or(1.0),
            mu2: file.solver.mu2.unwrap_or(1.0),
            alpha: file.solver.alpha.unwrap_or(1.0),
            iterations: file.solver.iterations.unwrap_or(DEFAULT_ITERATIONS),
            lambda: file.params.lambda.unwrap_or(match method {
                Method::WienerOnly => 0.0,
                _ => DEFAULT_LAMBDA,
            }),
            kappa: file.params.kappa.unwrap_or(DEFAULT_KAPPA),
            gamma: file.params.gamma,
            epsilon: file.params.epsilon.unwrap_or(DEFAULT_EPSILON),
            p: file.params.p,
            quefrency_length: file.params.quefrency_length,
            ref_channel: file.ref_channel.unwrap_or(0),
            report_format: file.report_format.unwrap_or_default(),
        };
        cfg.check_compatibility(file)?;
        cfg.stft()?;
        cfg.solver_config()?.validate()?;
        Ok(cfg)
    }

    /// Parameters that have no effect on the chosen method are rejected
    /// rather than silently ignored.
    fn check_compatibility(&self, file: &RunConfigFile) -> Result<()> {
        let reject = |name: &str| -> Result<()> {
            Err(BssError::InvalidConfig(format!(
                "parameter `{name}` does not apply to method `{}`",
                self.method.as_str()
            )))
        };
        let p = &file.params;
        match self.method {
            Method::Fdica => {
                // optional p generalizes the soft threshold to p-shrinkage
                if p.kappa.is_some() { return reject("kappa"); }
                if p.gamma.is_some() { return reject("gamma"); }
                if p.epsilon.is_some() { return reject("epsilon"); }
                if p.quefrency_length.is_some() { return reject("quefrency_length"); }
                if let Some(pv) = p.p {
                    if pv > 1.0 {
                        return Err(BssError::InvalidConfig("p must be <= 1".into()));
                    }
                }
            }
            Method::Iva | Method::ModelIva => {
                if p.kappa.is_some() { return reject("kappa"); }
                if p.gamma.is_some() { return reject("gamma"); }
                if p.epsilon.is_some() { return reject("epsilon"); }
                if p.quefrency_length.is_some() { return reject("quefrency_length"); }
                if p.p.is_some() { return reject("p"); }
            }
            Method::Hva => {
                if p.p.is_some() { return reject("p"); }
            }
            Method::WienerOnly => {
                // lambda is pinned to zero and kappa has no effect
                if p.p.is_some() { return reject("p"); }
                if p.kappa.is_some() { return reject("kappa"); }
                if let Some(l) = p.lambda {
                    if l != 0.0 {
                        return Err(BssError::InvalidConfig(
                            "wiener_only runs with lambda = 0; use method `hva` to threshold"
                                .into(),
                        ));
                    }
                }
            }
        }
        if self.lambda < 0.0 {
            return Err(BssError::InvalidConfig("lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub fn stft(&self) -> Result<StftConfig> {
        StftConfig::new(self.window_length, self.hop)?.with_fft_length(self.fft_length)
    }

    fn hva_config(&self) -> HvaConfig {
        HvaConfig {
            lambda: if self.method == Method::WienerOnly { 0.0 } else { self.lambda },
            kappa: self.kappa,
            gamma: self.gamma,
            epsilon: self.epsilon,
            quefrency_length: self.quefrency_length,
        }
    }

    /// The shrinkage step for this method. `model_iva` needs the variance
    /// tensor computed from the whitened observations.
    pub fn shrink_step(&self, variance: Option<ndarray::Array3<f64>>) -> Result<ShrinkStep> {
        Ok(match self.method {
            Method::Fdica => match self.p {
                Some(p) => ShrinkStep::Prox(ShrinkOperator::PShrinkage { lambda: self.lambda, p }),
                None => ShrinkStep::Prox(ShrinkOperator::L1 { lambda: self.lambda }),
            },
            Method::Iva => ShrinkStep::Prox(ShrinkOperator::L21 { lambda: self.lambda }),
            Method::ModelIva => {
                let variance = variance.ok_or_else(|| {
                    BssError::InvalidConfig("model_iva needs a variance tensor".into())
                })?;
                ShrinkStep::Mask(MaskFunction::ModelIva { lambda: self.lambda, variance })
            }
            Method::Hva | Method::WienerOnly => {
                ShrinkStep::Mask(MaskFunction::Hva(self.hva_config()))
            }
        })
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        // validate with a placeholder variance; the real one is data derived
        let step = match self.method {
            Method::ModelIva => ShrinkStep::Mask(MaskFunction::ModelIva {
                lambda: self.lambda,
                variance: ndarray::Array3::zeros((1, 1, 1)),
            }),
            _ => self.shrink_step(None)?,
        };
        Ok(SolverConfig {
            mu1: self.mu1,
            mu2: self.mu2,
            alpha: self.alpha,
            iterations: self.iterations,
            shrink_step: step,
        })
    }
}

pub fn load_run_config_file(path: &std::path::Path) -> Result<RunConfigFile> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| BssError::InvalidConfig(format!("{}: {e}", path.display())))
}
