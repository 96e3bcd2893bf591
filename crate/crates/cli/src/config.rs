//! JSON configuration files. Relative paths inside a file resolve against
//! the file's own directory; the echoed copy carries absolute paths.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spin_core::evalstats::{CellConfig, CvSettings, GridSpace, PipelineSettings};
use spin_core::integrate::{HeadSettings, PrimaryMetric};
use spin_core::probe::SolverSettings;
use spin_core::repstore::{read_dump, RepKind, RepresentationDump, SyntheticConfig};

use crate::error::{CliError, CliResult};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    #[serde(default = "default_random_k")]
    pub random_k: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            random_k: default_random_k(),
            seeds: default_seeds(),
        }
    }
}

fn default_random_k() -> Vec<usize> {
    vec![1, 5, 10, 50, 100]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_head_l2() -> f64 {
    HeadSettings::default().head_l2
}

fn default_fractions() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8, 1.0]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dumps: BTreeMap<RepKind, SplitPaths>,
    #[serde(default)]
    pub grid: GridSpace,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_head_l2")]
    pub head_l2: f64,
    #[serde(default = "default_fractions")]
    pub early_exit_fractions: Vec<f64>,
    #[serde(default)]
    pub cv: CvSettings,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub primary_metric: PrimaryMetric,
    #[serde(default)]
    pub fail_on_nonconverged: bool,
    /// Fixed cell for `ablate`, `early-exit` and `cv`; chosen by grid search when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellConfig>,
    #[serde(default)]
    pub ablation: AblationSettings,
    /// Emit the what-which-where table during `run`.
    #[serde(default = "default_true")]
    pub www: bool,
}

impl RunConfig {
    pub fn load(path: &Path, out_override: Option<&Path>) -> CliResult<Self> {
        let mut cfg: RunConfig = load_json(path)?;
        let base = config_dir(path);
        for paths in cfg.dumps.values_mut() {
            for p in [&mut paths.train, &mut paths.val, &mut paths.test] {
                *p = absolute(&base, p);
            }
        }
        cfg.out_dir = match out_override {
            Some(o) => absolute(Path::new("."), o),
            None => absolute(&base, &cfg.out_dir),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        self.grid.validate()?;
        self.pipeline().validate()?;
        for kind in &self.grid.rep_kinds {
            if !self.dumps.contains_key(kind) {
                return Err(CliError::Config(format!(
                    "grid requests {kind} but no {kind} dumps are configured"
                )));
            }
        }
        if let Some(cell) = &self.cell {
            if !self.dumps.contains_key(&cell.rep_kind) {
                return Err(CliError::Config(format!("cell requests {} but no such dumps are configured", cell.rep_kind)));
            }
        }
        for paths in self.dumps.values() {
            for p in [&paths.train, &paths.val, &paths.test] {
                if !p.is_file() {
                    return Err(CliError::Config(format!("dump file {} does not exist", p.display())));
                }
            }
        }
        if let Some(f) = self.early_exit_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(CliError::Config(format!("early-exit fraction {f} outside (0, 1]")));
        }
        if self.cv.k < 2 {
            return Err(CliError::Config(format!("cv.k must be at least 2, got {}", self.cv.k)));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineSettings {
        PipelineSettings {
            probe_solver: self.solver.clone(),
            head: HeadSettings {
                solver: self.solver.clone(),
                head_l2: self.head_l2,
            },
            metric: self.primary_metric,
        }
    }

    /// Pretty JSON in declaration order, absolute paths.
    pub fn echo(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Loads every configured dump and checks that they agree on shape and classes.
    pub fn load_dumps(&self) -> CliResult<Dumps> {
        let mut out = Dumps::default();
        let mut n_classes = None;
        for (&kind, paths) in &self.dumps {
            let mut split = Vec::new();
            for p in [&paths.train, &paths.val, &paths.test] {
                let d = read_dump(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                if d.rep_kind != kind {
                    return Err(CliError::Config(format!(
                        "{} holds {} but is configured as {kind}",
                        p.display(),
                        d.rep_kind
                    )));
                }
                match n_classes {
                    None => n_classes = Some(d.n_classes()),
                    Some(n) if n != d.n_classes() => {
                        return Err(CliError::Config(format!(
                            "{} declares {} classes, other dumps declare {n}",
                            p.display(),
                            d.n_classes()
                        )))
                    }
                    Some(_) => {}
                }
                split.push(d);
            }
            let (test, val, train) = (split.pop().unwrap(), split.pop().unwrap(), split.pop().unwrap());
            for (name, d) in [("val", &val), ("test", &test)] {
                if d.n_layers != train.n_layers || d.dim != train.dim {
                    return Err(CliError::Config(format!(
                        "{kind} {name} dump is {}x{}, train is {}x{}",
                        d.n_layers, d.dim, train.n_layers, train.dim
                    )));
                }
            }
            out.train.insert(kind, train);
            out.val.insert(kind, val);
            out.test.insert(kind, test);
        }
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct Dumps {
    pub train: BTreeMap<RepKind, RepresentationDump>,
    pub val: BTreeMap<RepKind, RepresentationDump>,
    pub test: BTreeMap<RepKind, RepresentationDump>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSeeds {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

impl Default for SynthSeeds {
    fn default() -> Self {
        Self {
            train: 1,
            val: 2,
            test: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// `n_sentences` here sizes the train split.
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub val_sentences: Option<usize>,
    #[serde(default)]
    pub test_sentences: Option<usize>,
    #[serde(default)]
    pub seeds: SynthSeeds,
    /// Kinds to write; each gets identical values under its own tag.
    #[serde(default)]
    pub rep_kinds: Vec<RepKind>,
    pub out_dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_prefix() -> String {
    "synthetic".into()
}

impl SynthConfig {
    pub fn load(path: &Path, out_override: Option<&Path>) -> CliResult<Self> {
        let mut cfg: SynthConfig = load_json(path)?;
        cfg.out_dir = match out_override {
            Some(o) => absolute(Path::new("."), o),
            None => absolute(&config_dir(path), &cfg.out_dir),
        };
        if cfg.rep_kinds.is_empty() {
            cfg.rep_kinds = vec![cfg.synthetic.rep_kind];
        }
        let s = &cfg.seeds;
        if s.train == s.val || s.train == s.test || s.val == s.test {
            return Err(CliError::Config("train, val and test seeds must differ".into()));
        }
        Ok(cfg)
    }
}
