use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use liahr::engine::{QueryLabelSource, RunConfig};
use liahr::gateway::{BackendConfig, BackendKind, MockSpec, PriorBiased};
use serde::{Deserialize, Serialize};

use crate::exit::ConfigError;

/// A run file: the run itself plus where its inputs and outputs live.
/// Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub corpus: PathBuf,
    pub space: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub run: RunConfig,
    pub backend: BackendConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut spec: RunSpec =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.corpus = resolve(base, &spec.corpus);
        spec.space = resolve(base, &spec.space);
        spec.output = resolve(base, &spec.output);
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run specs serialize to toml")
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}", self.run.mode))
    }
}

/// Absolute, so a snapshot of the spec works from any directory.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    };
    let abs = std::path::absolute(&joined).unwrap_or(joined);
    // Drop `..` segments where the target exists.
    abs.canonicalize().unwrap_or(abs)
}

/// Command-line overrides applied on top of a run file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Replace the backend: mock:echo, mock:oracle or mock:prior:<mix>.
    #[arg(long)]
    pub backend: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub shots: Option<usize>,
    /// Query label source: gold, random, flipped, annotator:<id>, alt:<name>.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub position: Option<usize>,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut RunSpec) -> Result<()> {
        if let Some(b) = &self.backend {
            spec.backend.backend = parse_backend(b)?;
        }
        if let Some(s) = &self.seeds {
            spec.run.seeds = s.clone();
        }
        if let Some(q) = self.queries {
            spec.run.queries_per_seed = q;
        }
        if let Some(n) = self.shots {
            spec.run.n_shots = n;
        }
        if let Some(s) = &self.source {
            spec.run.source =
                QueryLabelSource::try_from(s.clone()).map_err(|e| ConfigError(e.to_string()))?;
        }
        if let Some(p) = self.position {
            spec.run.query_position = p;
        }
        if let Some(c) = self.concurrency {
            spec.backend.concurrency = c;
        }
        Ok(())
    }
}

pub fn parse_backend(s: &str) -> Result<BackendKind> {
    let mock = match s.split(':').collect::<Vec<_>>().as_slice() {
        ["mock", "echo"] => MockSpec::EchoQueryLabel,
        ["mock", "oracle"] => MockSpec::GoldOracle {
            truth: Default::default(),
        },
        ["mock", "prior", mix] => {
            let mix: f64 = mix
                .parse()
                .map_err(|_| ConfigError(format!("bad mix `{mix}` in backend `{s}`")))?;
            MockSpec::PriorBiased(PriorBiased {
                prior: Vec::new(),
                gold_affinity: 1.0,
                mix,
                threshold: 0.5,
                seed: 0,
            })
        }
        _ => bail!(ConfigError(format!(
            "unknown backend `{s}`; expected mock:echo, mock:oracle or mock:prior:<mix> (HTTP backends go in the run file)"
        ))),
    };
    Ok(BackendKind::Mock { mock })
}

/// Reads a run file and applies overrides.
pub fn load_with(path: &Path, overrides: &Overrides) -> Result<RunSpec> {
    let mut spec =
        RunSpec::load(path).with_context(|| format!("loading run file {}", path.display()))?;
    overrides.apply(&mut spec)?;
    Ok(spec)
}
