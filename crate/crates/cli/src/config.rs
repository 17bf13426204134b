//! Experiment configuration: strict JSON, unknown keys rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sns_core::coupling::LowModeDrift;
use sns_core::spectral::ModeAmplitude;
use sns_core::{FourierField, NoiseOperator, PhysicsParams, SpectralGrid, TestFunction};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub noise: NoiseSpec,
    pub integrator: IntegratorConfig,
    pub initial: InitialConfig,
    pub estimators: EstimatorConfig,
    pub test_functions: Vec<TestFunctionSpec>,
    pub gradient: GradientConfig,
    pub identities: IdentityConfig,
    pub experiments: ExperimentFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub nu: f64,
    pub n0: u32,
    #[serde(default = "yes")]
    pub nonlinear: bool,
}

/// Noise amplitudes `q_k` on the modes `|k| <= N0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Uniform { q: f64 },
    /// One amplitude per stored low mode, in grid order.
    PerMode { q: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Horizon for `simulate` and the exponential-moment check.
    pub t_end: f64,
    #[serde(default)]
    pub drift: LowModeDrift,
}

/// A field given by preset name, explicit modes, or a coefficient CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Preset(String),
    Modes(ModesSpec),
    File(FileSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSpec {
    pub modes: Vec<ModeAmplitude>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x0: FieldSpec,
    pub y0: FieldSpec,
    /// Direction of `y0 - x0` for the scans over `|x - y|`; normalised on use.
    pub z_direction: FieldSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub n_paths: usize,
    /// Decay grid for the high-mode moments, all `> 1`.
    pub t_grid: Vec<f64>,
    /// Times of the log-Harnack and distance matrices.
    pub times: Vec<f64>,
    /// Values of `|x - y|` scanned by `verify-mlh` and `asf-probe`.
    pub z_norms: Vec<f64>,
    pub gammas: Vec<f64>,
    pub p_list: Vec<u32>,
    pub dictionary_size: usize,
    /// Evaluate the log-Harnack pass flags with the constants divided by 1e6.
    #[serde(default)]
    pub forced_failure: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKindSpec {
    GaussBump,
    CoordinateSigmoid,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionSpec {
    pub kind: TestFunctionKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<FieldSpec>,
    /// Projection radius of the bump; defaults to `N0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<u32>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientConfig {
    pub enabled: bool,
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub directions: Vec<FieldSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    pub n_triples: usize,
    pub oracle_n: u32,
    pub oracle_pairs: usize,
    /// Fault injection: replaces the Leray projection by a broken one.
    #[serde(default)]
    pub corrupt_projection: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFlags {
    pub exp_moment: bool,
    pub zh_decay: bool,
    pub entropy: bool,
    pub mlh: bool,
    pub simulate_coupled: bool,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn preset(name: &str) -> FieldSpec {
    FieldSpec::Preset(name.into())
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            grid: GridConfig { n: 8 },
            physics: PhysicsConfig {
                nu: 1.2,
                n0: 2,
                nonlinear: true,
            },
            noise: NoiseSpec::Uniform { q: 0.2 },
            integrator: IntegratorConfig {
                dt: 1e-3,
                t_end: 1.0,
                drift: LowModeDrift::Exact,
            },
            initial: InitialConfig {
                x0: preset("low_mode"),
                y0: preset("low_mode_shifted"),
                z_direction: preset("mixed"),
            },
            estimators: EstimatorConfig::default(),
            test_functions: vec![
                TestFunctionSpec {
                    kind: TestFunctionKindSpec::GaussBump,
                    center: Some(preset("low_mode")),
                    direction: None,
                    cutoff: None,
                    scale: 0.5,
                    amplitude: 2.0,
                },
                TestFunctionSpec {
                    kind: TestFunctionKindSpec::CoordinateSigmoid,
                    center: Some(preset("low_mode")),
                    direction: Some(preset("mixed")),
                    cutoff: None,
                    scale: 0.3,
                    amplitude: 2.0,
                },
            ],
            gradient: GradientConfig::default(),
            identities: IdentityConfig::default(),
            experiments: ExperimentFlags::default(),
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 8 }
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n_paths: 2000,
            t_grid: (1..=10).map(|i| 1.0 + 0.2 * i as f64).collect(),
            times: vec![1.0, 2.0, 4.0],
            z_norms: vec![0.01, 0.1, 0.5],
            gammas: vec![0.05, 0.2],
            p_list: vec![1, 2],
            dictionary_size: 32,
            forced_failure: false,
        }
    }
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_paths: 500,
            times: vec![0.0, 1.0, 2.0],
            eps_list: vec![1e-2, 1e-3],
            directions: vec![preset("mixed")],
        }
    }
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self {
            n_triples: 10_000,
            oracle_n: 4,
            oracle_pairs: 100,
            corrupt_projection: false,
        }
    }
}

impl Default for ExperimentFlags {
    fn default() -> Self {
        Self {
            exp_moment: true,
            zh_decay: true,
            entropy: true,
            mlh: true,
            simulate_coupled: true,
        }
    }
}

/// Named fields available in configs.
pub const PRESETS: [&str; 4] = ["zero", "low_mode", "low_mode_shifted", "mixed"];

fn preset_field(grid: &Arc<SpectralGrid>, name: &str) -> Result<FourierField> {
    let entries: &[([i32; 2], f64, f64)] = match name {
        "zero" => &[],
        "low_mode" => &[([1, 0], 0.15, 0.1), ([1, 1], -0.05, 0.05)],
        // low_mode shifted by 0.1 along `mixed`
        "low_mode_shifted" => {
            let x = preset_field(grid, "low_mode")?;
            let d = preset_field(grid, "mixed")?;
            return Ok(&x + &(&d * 0.1));
        }
        "mixed" => {
            let mut u = FourierField::zeros(grid);
            for (k, re, im) in [([0, 1], 0.6, 0.0), ([1, 0], 0.0, 0.3), ([2, 1], 0.1, 0.05)] {
                if grid.full_index(k).is_some() {
                    u.set_mode(k, Complex64::new(re, im))?;
                }
            }
            let n = u.norm();
            return Ok(&u * (1.0 / n));
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown field preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    let mut u = FourierField::zeros(grid);
    for (k, re, im) in entries {
        u.set_mode(*k, Complex64::new(*re, *im))?;
    }
    Ok(u)
}

impl FieldSpec {
    /// Relative file paths resolve against `base`.
    pub fn resolve(&self, grid: &Arc<SpectralGrid>, base: &Path) -> Result<FourierField> {
        match self {
            FieldSpec::Preset(name) => preset_field(grid, name),
            FieldSpec::Modes(m) => Ok(FourierField::from_rows(grid, &m.modes)?),
            FieldSpec::File(f) => {
                let path = base.join(&f.file);
                let file = std::fs::File::open(&path)
                    .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
                Ok(FourierField::read_csv(grid, file)?)
            }
        }
    }
}

/// Fully resolved objects for one config.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub grid: Arc<SpectralGrid>,
    pub params: PhysicsParams,
    pub noise: NoiseOperator,
    pub x0: FourierField,
    pub y0: FourierField,
    pub z_direction: FourierField,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn grid(&self) -> Result<Arc<SpectralGrid>> {
        Ok(SpectralGrid::new(self.grid.n)?)
    }

    pub fn resolve(&self, base: &Path) -> Result<Resolved> {
        let grid = self.grid()?;
        let mut params = PhysicsParams::new(&grid, self.physics.nu, self.physics.n0)?;
        params.nonlinear = self.physics.nonlinear;
        let noise = match &self.noise {
            NoiseSpec::Uniform { q } => NoiseOperator::uniform(&grid, params.n0, *q)?,
            NoiseSpec::PerMode { q } => NoiseOperator::new(&grid, params.n0, q.clone())?,
        };
        let x0 = self.initial.x0.resolve(&grid, base)?;
        let y0 = self.initial.y0.resolve(&grid, base)?;
        let z_direction = self.initial.z_direction.resolve(&grid, base)?;
        if !(z_direction.norm() > 0.0) {
            return Err(CliError::Config("z_direction must be nonzero".into()));
        }
        let z_direction = &z_direction * (1.0 / z_direction.norm());
        if !(self.integrator.dt > 0.0) {
            return Err(CliError::Config(format!("dt must be positive, got {}", self.integrator.dt)));
        }
        Ok(Resolved {
            grid,
            params,
            noise,
            x0,
            y0,
            z_direction,
        })
    }

    pub fn test_functions(&self, r: &Resolved, base: &Path) -> Result<Vec<TestFunction>> {
        self.test_functions
            .iter()
            .map(|s| s.build(r, base))
            .collect()
    }
}

impl TestFunctionSpec {
    pub fn build(&self, r: &Resolved, base: &Path) -> Result<TestFunction> {
        let center = match &self.center {
            Some(c) => c.resolve(&r.grid, base)?,
            None => FourierField::zeros(&r.grid),
        };
        Ok(match self.kind {
            TestFunctionKindSpec::GaussBump => {
                TestFunction::gauss_bump(&center, self.cutoff.unwrap_or(r.params.n0), self.scale, self.amplitude)?
            }
            TestFunctionKindSpec::CoordinateSigmoid => {
                let d = match &self.direction {
                    Some(d) => d.resolve(&r.grid, base)?,
                    None => return Err(CliError::Config("coordinate_sigmoid needs a direction".into())),
                };
                TestFunction::coordinate_sigmoid(&center, &d, self.scale, self.amplitude)?
            }
            TestFunctionKindSpec::Constant => TestFunction::constant(&center, self.amplitude)?,
        })
    }
}
