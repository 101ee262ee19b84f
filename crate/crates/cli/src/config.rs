//! Run configuration: one JSON file holding the model and the parameters of
//! every command.

use std::fs;
use std::path::{Path, PathBuf};

use fixtail::certificate::{Budgets, DEFAULT_C0_GRID, DEFAULT_DELTA_GRID, MIN_LEVEL};
use fixtail::spectral::SpectralConfig;
use fixtail::tails::FlatnessConfig;
use fixtail::wbp::PoolConfig;
use fixtail::ModelSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path to a model file (relative to the config file) or an inline model.
    pub model: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub solve_index: SolveSection,
    #[serde(default)]
    pub simulate: PoolConfig,
    #[serde(default)]
    pub tails: TailsSection,
    #[serde(default)]
    pub certificate: CertificateSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    /// Tail index used by the moment checks; taken from `solve_index.json`
    /// in the output directory, or solved for, when absent.
    pub beta_hat: Option<f64>,
    pub eps: f64,
    pub reps: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            beta_hat: None,
            eps: 0.1,
            reps: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub s_grid: Vec<f64>,
    /// Values of `s` whose full spectral data go to the JSON output; empty
    /// means every finite grid point.
    pub detail: Vec<f64>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            s_grid: (0..=16).map(|i| 0.25 * i as f64).collect(),
            detail: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub s_max: f64,
    pub tol: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            s_max: 8.0,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailsSection {
    /// Pool file; defaults to `pool.bin` in the output directory.
    pub pool: Option<PathBuf>,
    /// Defaults to `beta` from `solve_index.json` in the output directory.
    pub beta: Option<f64>,
    /// Defaults to the first coordinate vector.
    pub u: Option<Vec<f64>>,
    /// Explicit window; overrides the quantile window when both are set.
    pub t_lo: Option<f64>,
    pub t_hi: Option<f64>,
    /// Window as quantiles of `<u, X>`.
    pub q_lo: f64,
    pub q_hi: f64,
    pub flatness: FlatnessConfig,
}

impl Default for TailsSection {
    fn default() -> Self {
        TailsSection {
            pool: None,
            beta: None,
            u: None,
            t_lo: None,
            t_hi: None,
            q_lo: 0.99,
            q_hi: 0.9999,
            flatness: FlatnessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSection {
    pub pool: Option<PathBuf>,
    pub u: Option<Vec<f64>>,
    /// Threshold; when absent, the `t_quantile` quantile of `<u, X>`.
    pub t: Option<f64>,
    pub t_quantile: f64,
    /// Fixing both `c0` and `delta` skips the grid search.
    pub c0: Option<f64>,
    pub delta: Option<f64>,
    pub c0_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub c1: Vec<usize>,
    /// Caps per cone family (arcs for `d = 2`, grid size for `d >= 3`).
    pub cones: usize,
    pub budgets: Budgets,
    pub constants_reps: usize,
    /// Replaces the cone estimate of `kappa`.
    pub kappa: Option<f64>,
    /// Smallest admissible `n_t`.
    pub min_level: usize,
}

impl Default for CertificateSection {
    fn default() -> Self {
        CertificateSection {
            pool: None,
            u: None,
            t: None,
            t_quantile: 0.999,
            c0: None,
            delta: None,
            c0_grid: DEFAULT_C0_GRID.to_vec(),
            delta_grid: DEFAULT_DELTA_GRID.to_vec(),
            c1: vec![2, 4, 6],
            cones: 8,
            budgets: Budgets::default(),
            constants_reps: 4000,
            kappa: None,
            min_level: MIN_LEVEL,
        }
    }
}

/// A parsed configuration with its model resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub spec: ModelSpec,
    /// Directory that relative paths in the config are resolved against.
    pub base: PathBuf,
    /// SHA-256 of the canonical configuration, excluding `threads` and `out`.
    pub sha256: String,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out)
    }
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{what}: field `{path}`: {}", e.into_inner()))
    })
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: RunConfig = parse(&text, &path.display().to_string())?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let spec: ModelSpec = match &config.model {
        serde_json::Value::String(p) => {
            let mp = if Path::new(p).is_absolute() {
                PathBuf::from(p)
            } else {
                base.join(p)
            };
            let text = fs::read_to_string(&mp)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", mp.display())))?;
            parse(&text, &mp.display().to_string())?
        }
        v => parse(&v.to_string(), "model")?,
    };
    spec.check()
        .map_err(|e| CliError::Config(format!("model: {e}")))?;
    config.model = serde_json::to_value(&spec).expect("model spec serializes");
    let sha256 = fingerprint(&config);
    Ok(Loaded {
        config,
        spec,
        base,
        sha256,
    })
}

/// Hash of everything that can change results. Call again after overriding
/// the seed.
pub fn fingerprint(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.threads = 0;
    c.out = PathBuf::new();
    let text = serde_json::to_string(&c).expect("config serializes");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}
