//! Config file schema. A TOML file may hold one table per subcommand:
//!
//! ```toml
//! [gen_data]
//! trials = 50
//! seed = 3
//! protocol = { slip_jitter = 0.35, init_jitter = 0.7 }
//!
//! [train]
//! data = "data"
//! epochs = 100
//! mpc = { horizon = 15 }
//! ```
//!
//! Keys inside a table mirror the library configs. A `.json` file is read
//! as a `run.json` record: its `config` is taken verbatim, so a run can be
//! replayed from its own metadata. Flags win over both.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tactile_mpc::bench::BenchConfig;
use tactile_mpc::mpc::MpcConfig;
use tactile_mpc::sim::SuiteConfig;
use tactile_mpc::tactile::DatasetConfig;
use tactile_mpc::train::TrainConfig;

/// A config file that failed to parse, located as precisely as the format
/// allows.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    /// Checkpoint to start from; otherwise a seeded random draw.
    pub init: Option<PathBuf>,
    pub init_seed: u64,
    #[serde(flatten)]
    pub train: TrainConfig,
    pub mpc: MpcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckSection {
    /// Dataset to draw samples from; a small one is generated when absent.
    pub data: Option<PathBuf>,
    pub generated_trials: usize,
    /// Checkpoint to check at; otherwise a seeded random draw.
    pub params: Option<PathBuf>,
    pub samples: usize,
    pub seed: u64,
    pub step: f64,
    pub terminal_scale: f64,
    pub frame_stride: usize,
    pub mpc: MpcConfig,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            data: None,
            generated_trials: 10,
            params: None,
            samples: 50,
            seed: 0,
            step: 1e-5,
            terminal_scale: TrainConfig::default().terminal_scale,
            frame_stride: 1,
            mpc: MpcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    /// Trained checkpoint; required by the MPC controllers.
    pub params: Option<PathBuf>,
    /// With both `controller` and `object` set a single episode is run,
    /// otherwise a suite restricted to whichever is given.
    pub controller: Option<String>,
    pub object: Option<String>,
    #[serde(flatten)]
    pub suite: SuiteConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub params: Option<PathBuf>,
    pub init_seed: u64,
    #[serde(flatten)]
    pub bench: BenchConfig,
    pub mpc: MpcConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    /// Every frame of a dataset as one CSV row per agent.
    #[default]
    Frames,
    /// The assembled tactile penalty matrix of a checkpoint.
    Penalty,
    /// The QP built for one dataset sample, in the text dump format.
    Qp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportSection {
    pub what: ExportKind,
    pub data: Option<PathBuf>,
    pub params: Option<PathBuf>,
    /// Sample index for `qp`.
    pub sample: usize,
    pub frame_stride: usize,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            what: ExportKind::Frames,
            data: None,
            params: None,
            sample: 0,
            frame_stride: 1,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    gen_data: Option<DatasetConfig>,
    train: Option<TrainSection>,
    gradcheck: Option<GradcheckSection>,
    simulate: Option<SimulateSection>,
    bench: Option<BenchSection>,
    export: Option<ExportSection>,
}

/// Ties a section type to its subcommand.
pub trait Section: DeserializeOwned + Default {
    const COMMAND: &'static str;

    fn pick(file: ConfigFile) -> Option<Self>;
}

macro_rules! section {
    ($ty:ty, $cmd:literal, $field:ident) => {
        impl Section for $ty {
            const COMMAND: &'static str = $cmd;

            fn pick(file: ConfigFile) -> Option<Self> {
                file.$field
            }
        }
    };
}

section!(DatasetConfig, "gen-data", gen_data);
section!(TrainSection, "train", train);
section!(GradcheckSection, "gradcheck", gradcheck);
section!(SimulateSection, "simulate", simulate);
section!(BenchSection, "bench", bench);
section!(ExportSection, "export", export);

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

#[derive(Deserialize)]
struct RecordedRun<T> {
    command: String,
    config: T,
}

/// The resolved section for `T`'s subcommand: defaults when no file is
/// given or the file lacks the table.
pub fn load<T: Section>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        let run: RecordedRun<T> = serde_json::from_str(&text).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        if run.command != T::COMMAND {
            return Err(ConfigError {
                path: path.to_path_buf(),
                line: None,
                column: None,
                message: format!("record is for `{}`, not `{}`", run.command, T::COMMAND),
            }
            .into());
        }
        return Ok(run.config);
    }
    let file: ConfigFile = toml::from_str(&text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(&text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        ConfigError {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    Ok(T::pick(file).unwrap_or_default())
}
