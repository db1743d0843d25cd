//! Experiment configuration: TOML files composed by `include`, then read into
//! typed sections.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use tsfl::datagen::{self, Dataset, PartitionSpec};
use tsfl::estimate::{BoundParams, OverheadSplit, TimingFit};
use tsfl::fedsim::{Mode, RunConfig, StopCriteria};
use tsfl::learner::LrSchedule;
use tsfl::profiles::{self, DeviceProfile, ForwardPair, Staleness, SystemProfile, TrainPlan};

use crate::error::CliError;

/// Keys under `[dataset]` holding file paths. These and the top-level `out`
/// are resolved against the directory of the file that sets them.
const PATH_KEYS: [&str; 3] = ["images", "labels", "path"];

/// Reads `path` and its includes into one table. Later files override
/// earlier ones and the including file overrides everything it includes.
pub fn load_merged(path: &Path) -> Result<Table, CliError> {
    let mut stack = Vec::new();
    load_rec(path, &mut stack)
}

fn load_rec(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Table, CliError> {
    let canonical = path
        .canonicalize()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if stack.contains(&canonical) {
        return Err(CliError::Config(format!(
            "include cycle through {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&canonical)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut table: Table = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let dir = canonical.parent().unwrap_or(Path::new("/")).to_path_buf();
    resolve_paths(&mut table, &dir);

    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(dir.join(s)),
                other => Err(CliError::Config(format!(
                    "{}: include entries must be strings, got {other}",
                    path.display()
                ))),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => {
            return Err(CliError::Config(format!(
                "{}: include must be an array of paths, got {other}",
                path.display()
            )))
        }
    };
    stack.push(canonical);
    let mut merged = Table::new();
    for inc in includes {
        let part = load_rec(&inc, stack)?;
        merge(&mut merged, part);
    }
    stack.pop();
    merge(&mut merged, table);
    Ok(merged)
}

fn resolve_paths(table: &mut Table, dir: &Path) {
    if let Some(Value::String(p)) = table.get_mut("out") {
        *p = dir.join(&*p).to_string_lossy().into_owned();
    }
    if let Some(Value::Table(ds)) = table.get_mut("dataset") {
        for key in PATH_KEYS {
            if let Some(Value::String(p)) = ds.get_mut(key) {
                *p = dir.join(&*p).to_string_lossy().into_owned();
            }
        }
    }
}

/// Deep merge: tables merge key by key, anything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Hex SHA-256 of the canonical serialisation of `table`, ignoring `out`.
pub fn config_hash(table: &Table) -> String {
    let mut t = table.clone();
    t.remove("out");
    let text = toml::to_string(&t).expect("tables always serialise");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Fully merged experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub partition: PartitionSection,
    pub system: SystemSection,
    pub run: RunSection,
    #[serde(default)]
    pub estimate: Option<EstimateSection>,
    #[serde(default)]
    pub fitted: Option<Fitted>,
    #[serde(default)]
    pub plan: Option<PlanSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl Experiment {
    pub fn from_table(table: &Table) -> Result<Self, CliError> {
        let exp: Self = Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().trim().to_string()))?;
        exp.dataset.check_files()?;
        Ok(exp)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_margin")]
        margin: f64,
        /// Defaults to the experiment seed.
        seed: Option<u64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Ftds {
        path: PathBuf,
    },
}

fn default_margin() -> f64 {
    2.0
}

impl DatasetSource {
    fn check_files(&self) -> Result<(), CliError> {
        let paths: Vec<&Path> = match self {
            Self::Synthetic { .. } => vec![],
            Self::Idx { images, labels } => vec![images, labels],
            Self::Ftds { path } => vec![path],
        };
        for p in paths {
            if !p.is_file() {
                return Err(CliError::Config(format!(
                    "dataset file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn load(&self, seed: u64) -> Result<Dataset, CliError> {
        let data = match self {
            Self::Synthetic {
                classes,
                dim,
                per_class,
                margin,
                seed: s,
            } => datagen::synth_classification(*classes, *dim, *per_class, *margin, s.unwrap_or(seed)),
            Self::Idx { images, labels } => datagen::load_idx(images, labels)?,
            Self::Ftds { path } => {
                let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
                Dataset::read_ftds(std::io::BufReader::new(file))?
            }
        };
        Ok(data)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// Defaults to every label on every server.
    pub labels_per_server: Option<usize>,
    #[serde(default)]
    pub unique_on_slow: bool,
    #[serde(default)]
    pub slow_servers: Vec<usize>,
    pub seed: Option<u64>,
}

impl PartitionSection {
    pub fn spec(&self, num_servers: usize, classes: usize, seed: u64) -> PartitionSpec {
        PartitionSpec {
            num_servers,
            labels_per_server: self.labels_per_server.unwrap_or(classes),
            unique_on_slow: self.unique_on_slow,
            slow_servers: self.slow_servers.clone(),
            seed: self.seed.unwrap_or(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    /// Proportional to partition sizes.
    #[default]
    Proportional,
    Uniform,
    /// Use the `p` given on each device.
    Given,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    /// Seconds per uploaded sample; derived from `rate` when absent.
    pub a: Option<f64>,
    /// Upload link in bytes per second.
    pub rate: Option<f64>,
    #[serde(default = "default_sample_bytes")]
    pub sample_bytes: f64,
    pub b: f64,
    pub beta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub p: f64,
    /// Identical servers described by this entry.
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub dataset_kind: String,
}

fn one() -> usize {
    1
}

fn default_sample_bytes() -> f64 {
    784.0
}

impl DeviceEntry {
    fn upload(&self) -> Result<f64, CliError> {
        match (self.a, self.rate) {
            (Some(a), None) => Ok(a),
            (None, Some(rate)) => Ok(profiles::upload_coefficient(self.sample_bytes, rate)),
            (Some(_), Some(_)) => Err(CliError::Config("set either `a` or `rate` on a device, not both".into())),
            (None, None) => Err(CliError::Config("every device needs `a` or `rate`".into())),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub zeta: f64,
    pub u: f64,
    #[serde(default)]
    pub weights: Weights,
    pub devices: Vec<DeviceEntry>,
}

impl SystemSection {
    pub fn num_servers(&self) -> usize {
        self.devices.iter().map(|d| d.count).sum()
    }

    /// Expands the device list and assigns weights.
    pub fn build(&self, partition_sizes: &[usize]) -> Result<SystemProfile, CliError> {
        let mut devices = Vec::new();
        for entry in &self.devices {
            let a = entry.upload()?;
            for _ in 0..entry.count {
                let mut dev = DeviceProfile::new(
                    devices.len(),
                    a,
                    entry.b,
                    entry.beta,
                    entry.lambda,
                    entry.p,
                );
                dev.dataset_kind = entry.dataset_kind.clone();
                devices.push(dev);
            }
        }
        let mut system = SystemProfile {
            zeta: self.zeta,
            u: self.u,
            devices,
        };
        match self.weights {
            Weights::Proportional => system.set_weights_proportional(partition_sizes)?,
            Weights::Uniform => system.set_weights_uniform(),
            Weights::Given => {}
        }
        system.validate()?;
        Ok(system)
    }
}

/// Staleness written as a non-negative integer or `"unbounded"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tau(pub Staleness);

impl Default for Tau {
    fn default() -> Self {
        Tau(Staleness::Unbounded)
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(t) => Ok(Tau(Staleness::Bounded(t))),
            Raw::Word(w) if w == "unbounded" => Ok(Tau(Staleness::Unbounded)),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "tau must be an integer or \"unbounded\", got \"{w}\""
            ))),
        }
    }
}

impl Serialize for Tau {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Staleness::Bounded(t) => s.serialize_u64(t),
            Staleness::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    pub epochs: usize,
    pub batch: usize,
    #[serde(default)]
    pub tau: Tau,
    /// Defaults to every server.
    pub selected: Option<Vec<usize>>,
    #[serde(default)]
    pub pairs: Vec<ForwardPair>,
    #[serde(default)]
    pub schedule: LrSchedule,
    pub target_loss: Option<f64>,
    pub max_rounds: Option<u64>,
    pub max_wallclock: Option<f64>,
    #[serde(default = "one_u64")]
    pub eval_every: u64,
    pub eval_interval: Option<f64>,
}

fn one_u64() -> u64 {
    1
}

impl RunSection {
    pub fn to_run_config(&self, num_servers: usize, seed: u64) -> RunConfig {
        let mut plan = TrainPlan::uniform(num_servers, self.epochs, self.batch);
        if let Some(sel) = &self.selected {
            let set: BTreeSet<usize> = sel.iter().copied().collect();
            plan.selected = set.into_iter().collect();
        }
        plan.pairs = self.pairs.clone();
        plan.tau = self.tau.0;
        let mut cfg = RunConfig::new(
            self.mode,
            plan,
            self.schedule,
            StopCriteria {
                target_loss: self.target_loss,
                max_rounds: self.max_rounds,
                max_wallclock: self.max_wallclock,
            },
        );
        cfg.seed = seed;
        cfg.eval_every = self.eval_every;
        cfg.eval_interval = self.eval_interval;
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub probes: Vec<(usize, usize)>,
    pub f_a: f64,
    pub f_b: f64,
    /// Reference optimum; defaults to the smallest observed loss minus
    /// `f_star_slack`.
    pub f_star: Option<f64>,
    #[serde(default = "default_slack")]
    pub f_star_slack: f64,
    /// Subsets probed: the full set and each of the first `max_drops`
    /// slowest-first drops.
    #[serde(default)]
    pub max_drops: usize,
    /// `(e, n)` at which servers are ranked by speed; defaults to the run's.
    pub reference: Option<(usize, usize)>,
    #[serde(default)]
    pub split: OverheadSplit,
}

fn default_slack() -> f64 {
    0.01
}

/// Fragment written by `estimate` and read by `plan`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fitted {
    pub f_star: f64,
    pub reference: (usize, usize),
    pub timing: TimingFit,
    /// Bound constants of the subset with `i` slowest servers dropped.
    pub bounds: Vec<BoundParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    /// Target gap above the reference optimum.
    pub epsilon: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_e_range")]
    pub e: (usize, usize),
    #[serde(default = "default_n_range")]
    pub n: (usize, usize),
    #[serde(default)]
    pub tau: Tau,
    /// Plan with the configured system profile instead of the fitted
    /// timing.
    #[serde(default)]
    pub use_system_timing: bool,
}

fn default_theta() -> f64 {
    1e-9
}

fn default_e_range() -> (usize, usize) {
    (1, 200)
}

fn default_n_range() -> (usize, usize) {
    (1, 2000)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    E,
    N,
    Drops,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::E => "e",
            Axis::N => "n",
            Axis::Drops => "drops",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Axis,
    pub values: Vec<usize>,
}
