use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use odegrad::grad::MethodConfig;
use odegrad::interp::InterpKind;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    TolGridSweep,
    CollapseNfe,
    TrajFit,
    InterpCompare,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::TolGridSweep,
        ExperimentId::CollapseNfe,
        ExperimentId::TrajFit,
        ExperimentId::InterpCompare,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::TolGridSweep => "tol_grid_sweep",
            ExperimentId::CollapseNfe => "collapse_nfe",
            ExperimentId::TrajFit => "traj_fit",
            ExperimentId::InterpCompare => "interp_compare",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s.trim())
            .ok_or_else(|| format!("unknown experiment `{}`", s.trim()))
    }
}

/// Which vector field an experiment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    /// `dz/dt = A z^3` with a weakly contracting rotation `A`.
    Cubic,
    /// `dz/dt = -z^3`.
    Collapse,
    /// Seeded `tanh` MLP.
    Mlp,
    /// `dz/dt = 0`.
    Zero,
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Cubic => "cubic",
            System::Collapse => "collapse",
            System::Mlp => "mlp",
            System::Zero => "zero",
        })
    }
}

impl FromStr for System {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cubic" => Ok(System::Cubic),
            "collapse" => Ok(System::Collapse),
            "mlp" => Ok(System::Mlp),
            "zero" => Ok(System::Zero),
            other => Err(format!("unknown system `{other}`")),
        }
    }
}

/// Settings of one experiment run. See the README for the file format.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub system: System,
    pub methods: Vec<MethodConfig>,
    pub tolerances: Vec<f64>,
    pub grid_sizes: Vec<usize>,
    pub checkpoints: Vec<usize>,
    pub interpolants: Vec<InterpKind>,
    pub reference_tol: f64,
    pub z0_jitter: f64,
    pub fd_step: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub samples: usize,
    pub out_dir: PathBuf,
    pub repeat: usize,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentId) -> Self {
        let base = Self {
            experiment,
            seed: 0,
            system: System::Cubic,
            methods: Vec::new(),
            tolerances: vec![1e-3, 1e-5, 1e-7],
            grid_sizes: vec![4, 8, 16, 32, 64],
            checkpoints: vec![MethodConfig::DEFAULT_CHECKPOINTS],
            interpolants: vec![InterpKind::Bli],
            reference_tol: 1e-7,
            z0_jitter: 0.0,
            fd_step: 1e-5,
            epochs: 300,
            learning_rate: 0.01,
            hidden: 16,
            samples: 20,
            out_dir: PathBuf::from("out"),
            repeat: 1,
        };
        match experiment {
            ExperimentId::TolGridSweep => base,
            ExperimentId::CollapseNfe => Self {
                system: System::Collapse,
                methods: vec![MethodConfig::rdm(), MethodConfig::irdm(32)],
                tolerances: vec![1e-5, 1e-7],
                grid_sizes: vec![32],
                z0_jitter: 0.1,
                repeat: 3,
                ..base
            },
            ExperimentId::TrajFit => Self {
                methods: vec![
                    MethodConfig::direct(),
                    MethodConfig::rdm(),
                    MethodConfig::irdm(8),
                    MethodConfig::checkpoint(MethodConfig::DEFAULT_CHECKPOINTS),
                ],
                tolerances: vec![1e-6],
                grid_sizes: vec![8],
                ..base
            },
            ExperimentId::InterpCompare => Self {
                interpolants: vec![InterpKind::Bli, InterpKind::Linear, InterpKind::Cubic],
                tolerances: vec![1e-8],
                grid_sizes: vec![8, 32],
                reference_tol: 1e-10,
                z0_jitter: 0.1,
                repeat: 3,
                ..base
            },
        }
    }

    /// Reads `key = value` lines over the defaults for `experiment`. An
    /// `experiment` key in the file must agree with the argument. In
    /// `methods`, a bare `irdm` expands over `grid_sizes` and a bare
    /// `checkpoint` over `checkpoints`.
    pub fn parse(experiment: ExperimentId, text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(experiment);
        let mut methods = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Parse { line: idx + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            if key.trim() == "methods" {
                methods = Some((idx + 1, value.trim().to_string()));
            } else {
                cfg.set(key.trim(), value.trim()).map_err(err)?;
            }
        }
        if let Some((line, value)) = methods {
            cfg.methods = cfg
                .expand_methods(&value)
                .map_err(|msg| ConfigError::Parse { line, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn expand_methods(&self, value: &str) -> Result<Vec<MethodConfig>, String> {
        let mut out = Vec::new();
        for token in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match token {
                "irdm" => out.extend(self.grid_sizes.iter().map(|&n| MethodConfig::irdm(n))),
                "checkpoint" => out.extend(self.checkpoints.iter().map(|&k| MethodConfig::checkpoint(k))),
                _ => out.push(token.parse()?),
            }
        }
        Ok(out)
    }

    pub fn load(experiment: ExperimentId, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(experiment, &text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn one<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, String> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| one(key, s))
                .collect()
        }
        match key {
            "experiment" => {
                let id: ExperimentId = value.parse()?;
                if id != self.experiment {
                    return Err(format!("config is for `{id}`, not `{}`", self.experiment));
                }
            }
            "seed" => self.seed = one(key, value)?,
            "system" => self.system = value.parse()?,
            "tolerances" => self.tolerances = list(key, value)?,
            "grid_sizes" => self.grid_sizes = list(key, value)?,
            "checkpoints" => self.checkpoints = list(key, value)?,
            "interpolants" => {
                self.interpolants = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_, _>>()?
            }
            "reference_tol" => self.reference_tol = one(key, value)?,
            "z0_jitter" => self.z0_jitter = one(key, value)?,
            "fd_step" => self.fd_step = one(key, value)?,
            "epochs" => self.epochs = one(key, value)?,
            "learning_rate" => self.learning_rate = one(key, value)?,
            "hidden" => self.hidden = one(key, value)?,
            "samples" => self.samples = one(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "repeat" => self.repeat = one(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.into()));
        if self.checkpoints.contains(&0) || self.grid_sizes.contains(&0) {
            return bad("grid_sizes and checkpoints must be positive");
        }
        if self.repeat < 1 {
            return bad("repeat must be at least 1");
        }
        if self.tolerances.is_empty() || self.tolerances.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("tolerances must be a non-empty list of positive numbers");
        }
        if !(self.reference_tol > 0.0 && self.reference_tol.is_finite()) {
            return bad("reference_tol must be positive");
        }
        if !(self.z0_jitter >= 0.0 && self.z0_jitter.is_finite()) {
            return bad("z0_jitter must be non-negative");
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return bad("fd_step must be positive");
        }
        match self.experiment {
            ExperimentId::TolGridSweep | ExperimentId::InterpCompare => {
                if self.grid_sizes.is_empty() || self.grid_sizes.contains(&0) {
                    return bad("grid_sizes must be a non-empty list of positive integers");
                }
            }
            ExperimentId::CollapseNfe | ExperimentId::TrajFit => {
                if self.methods.is_empty() {
                    return bad("methods must not be empty");
                }
            }
        }
        if self.experiment == ExperimentId::InterpCompare && self.interpolants.is_empty() {
            return bad("interpolants must not be empty");
        }
        if self.experiment == ExperimentId::TrajFit {
            if self.samples < 1 || self.hidden < 1 {
                return bad("samples and hidden must be positive");
            }
            if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                return bad("learning_rate must be positive");
            }
        }
        Ok(())
    }
}
