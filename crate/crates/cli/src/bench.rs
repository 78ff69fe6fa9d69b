//! Benchmark harness: runs a method/lambda/kappa/seed grid over the seeded
//! synthetic scenario bank and emits one long-form CSV. Cells execute in a
//! worker pool, each result lands in its own fragment file (written
//! atomically), completed cells are recorded in an index file so an
//! interrupted run resumes without recomputation, and the final CSV is
//! assembled in deterministic grid order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bss_core::error::{BssError, Result};
use bss_core::metrics::evaluate;
use bss_core::mixgen::{self, MixSpec};

use crate::config::{Method, ReportFormat, RunConfig, RunConfigFile};
use crate::pipeline::run_with_checkpoints;
use crate::report::{write_atomic, BENCH_SCHEMA};

pub const WORKERS_ENV: &str = "BSS_BENCH_WORKERS";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `det2-harmonic`, `det2-harmonic-convolutive`, or a path to a mix
    /// spec TOML file.
    pub scenario: String,
    pub methods: Vec<Method>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<u32>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_at")]
    pub eval_at: Vec<usize>,
    #[serde(default)]
    pub stft: crate::config::StftSection,
    #[serde(default)]
    pub solver: crate::config::SolverSection,
    pub ref_channel: Option<usize>,
}

fn default_lambdas() -> Vec<f64> {
    vec![crate::config::DEFAULT_LAMBDA]
}

fn default_kappas() -> Vec<u32> {
    vec![crate::config::DEFAULT_KAPPA]
}

fn default_eval_at() -> Vec<usize> {
    vec![crate::config::DEFAULT_ITERATIONS]
}

/// One grid cell. `kappa` is `None` when the method does not use it, which
/// also deduplicates the kappa axis for those methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scenario: String,
    pub method: Method,
    pub lambda: f64,
    pub kappa: Option<u32>,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> String {
        let mut s = format!(
            "{}__{}__l{}",
            self.scenario.replace(['/', '\\', ' '], "-"),
            self.method.as_str(),
            self.lambda
        );
        if let Some(k) = self.kappa {
            let _ = write!(s, "__k{k}");
        }
        let _ = write!(s, "__s{}", self.seed);
        s
    }
}

pub fn grid_cells(grid: &GridConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for method in &grid.methods {
        for &lambda in &grid.lambdas {
            let kappas: Vec<Option<u32>> = if *method == Method::Hva && lambda > 0.0 {
                grid.kappas.iter().map(|&k| Some(k)).collect()
            } else {
                vec![None]
            };
            for kappa in kappas {
                for &seed in &grid.seeds {
                    cells.push(Cell {
                        scenario: grid.scenario.clone(),
                        method: *method,
                        lambda,
                        kappa,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

pub fn scenario_spec(name: &str, seed: u64) -> Result<MixSpec> {
    match name {
        "det2-harmonic" => Ok(mixgen::det2_harmonic(seed)),
        "det2-harmonic-convolutive" => Ok(mixgen::det2_harmonic_convolutive(seed)),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                BssError::InvalidConfig(format!("scenario `{path}` is not built in and not readable: {e}"))
            })?;
            let mut spec: MixSpec = toml::from_str(&text)
                .map_err(|e| BssError::InvalidConfig(format!("{path}: {e}")))?;
            spec.seed = seed;
            Ok(spec)
        }
    }
}

fn cell_run_config(grid: &GridConfig, cell: &Cell) -> Result<RunConfig> {
    let mut file = RunConfigFile {
        method: Some(cell.method),
        stft: grid.stft.clone(),
        solver: grid.solver.clone(),
        ..Default::default()
    };
    if cell.method == Method::WienerOnly {
        if cell.lambda != 0.0 {
            return Err(BssError::InvalidConfig(
                "wiener_only cells must have lambda = 0".into(),
            ));
        }
    } else {
        file.params.lambda = Some(cell.lambda);
    }
    if let Some(k) = cell.kappa {
        file.params.kappa = Some(k);
    }
    file.ref_channel = grid.ref_channel;
    file.report_format = Some(ReportFormat::Csv);
    RunConfig::resolve(&file)
}

/// Long-form result rows for one cell.
pub fn run_cell(grid: &GridConfig, cell: &Cell) -> Result<String> {
    let spec = scenario_spec(&cell.scenario, cell.seed)?;
    let cfg = cell_run_config(grid, cell)?;
    for w in spec.warnings(Some(cfg.window_length)) {
        log::warn!("{}: {w}", cell.key());
    }
    let out = mixgen::synthesize(&spec)?;
    let checkpoints = run_with_checkpoints(&out.mixture, &cfg, &grid.eval_at)?;
    let mixture_ref = out.mixture.channel(cfg.ref_channel)?;
    let mut rows = String::new();
    for cp in checkpoints {
        let report = evaluate(&cp.estimates, &out.references, Some(&mixture_ref))?;
        for r in &report.per_source {
            for (metric, value) in [
                ("sdr", Some(r.sdr)),
                ("sir", Some(r.sir)),
                ("sar", Some(r.sar)),
                ("sdr_improvement", r.sdr_improvement),
            ] {
                if let Some(v) = value {
                    let _ = writeln!(
                        rows,
                        "{},{},{},{},{},{},{},{},{}",
                        cell.scenario,
                        cell.method.as_str(),
                        cell.lambda,
                        cell.kappa.map(|k| k.to_string()).unwrap_or_default(),
                        cell.seed,
                        cp.iteration,
                        r.source,
                        metric,
                        if v.is_finite() { format!("{v:.6}") } else { format!("{v}") },
                    );
                }
            }
        }
    }
    Ok(rows)
}

pub const BENCH_HEADER: &str = "scenario,method,lambda,kappa,seed,iteration,source,metric,value";

#[derive(Debug, Default)]
pub struct BenchSummary {
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

struct IndexFile {
    path: PathBuf,
    done: HashMap<String, bool>,
}

impl IndexFile {
    fn load(path: &Path) -> Result<Self> {
        let mut done = HashMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(path)?.lines() {
                if let Some(key) = line.strip_prefix("ok ") {
                    done.insert(key.trim().to_string(), true);
                } else if let Some(rest) = line.strip_prefix("failed ") {
                    let key = rest.split_whitespace().next().unwrap_or_default();
                    done.entry(key.to_string()).or_insert(false);
                }
            }
        }
        Ok(Self { path: path.to_path_buf(), done })
    }

    fn is_ok(&self, key: &str) -> bool {
        self.done.get(key).copied().unwrap_or(false)
    }

    fn record(&self, key: &str, outcome: &str) -> Result<()> {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(f, "{outcome} {key}")?;
        f.flush()?;
        Ok(())
    }
}

/// Run the grid with a worker pool; cell count and worker count come from
/// the grid config and the `BSS_BENCH_WORKERS` environment variable.
pub fn run_bench(grid: &GridConfig, out_csv: &Path, index_path: Option<&Path>) -> Result<BenchSummary> {
    let cells = grid_cells(grid);
    if cells.is_empty() {
        return Err(BssError::InvalidConfig("empty grid".into()));
    }
    let default_index = out_csv.with_extension("index");
    let index = IndexFile::load(index_path.unwrap_or(&default_index))?;
    let fragments_dir = out_csv.with_extension("cells");
    std::fs::create_dir_all(&fragments_dir)?;

    let pending: Vec<&Cell> = cells
        .iter()
        .filter(|c| {
            let done = index.is_ok(&c.key()) && fragments_dir.join(format!("{}.csv", c.key())).exists();
            !done
        })
        .collect();
    let skipped = cells.len() - pending.len();

    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n);
        }
        builder.build().map_err(|e| BssError::InvalidConfig(e.to_string()))?
    };

    let results: Vec<(String, Result<String>)> = pool.install(|| {
        use rayon::prelude::*;
        pending
            .par_iter()
            .map(|cell| (cell.key(), run_cell(grid, cell)))
            .collect()
    });

    let mut summary = BenchSummary { skipped, ..Default::default() };
    for (key, result) in results {
        match result {
            Ok(rows) => {
                write_atomic(&fragments_dir.join(format!("{key}.csv")), rows.as_bytes())?;
                index.record(&key, "ok")?;
                summary.completed += 1;
            }
            Err(e) => {
                log::error!("cell {key} failed: {e}");
                index.record(&key, "failed")?;
                summary.failed += 1;
            }
        }
    }

    // deterministic assembly in grid order
    let mut out = String::new();
    let _ = writeln!(out, "# schema: {BENCH_SCHEMA}");
    let _ = writeln!(out, "{BENCH_HEADER}");
    for cell in &cells {
        let frag = fragments_dir.join(format!("{}.csv", cell.key()));
        if frag.exists() {
            out.push_str(&std::fs::read_to_string(&frag)?);
        }
    }
    write_atomic(out_csv, out.as_bytes())?;
    Ok(summary)
}

pub fn load_grid(path: &Path) -> Result<GridConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| BssError::InvalidConfig(format!("{}: {e}", path.display())))
}
