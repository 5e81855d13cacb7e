//! Run configuration: one human-editable TOML tree per experiment, with
//! optional includes for measured latency profiles and explicit surrogate
//! targets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::GaConfig;
use crate::error::{Error, Result};
use crate::latency::LatencyModel;
use crate::relaxation::{GroupKey, SurrogateModel};
use crate::search::{LossConfig, OptimizerConfig, OuterConfig};
use crate::supernet::{InitPolicy, SkeletonConfig, SupernetTopology};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Generator seed; defaults to the global seed's surrogate substream.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Explicit target profiles, overriding the generator.
    #[serde(default)]
    pub file: Option<String>,
}

fn default_sharpness() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.25
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection {
            sharpness: default_sharpness(),
            noise: default_noise(),
            seed: None,
            file: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    #[serde(default = "default_overlap")]
    pub pipeline_overlap: f64,
    /// Measured kernel timings overriding the op table
    /// (`op scale latency_ms` rows).
    #[serde(default)]
    pub profile_file: Option<String>,
}

fn default_overlap() -> f64 {
    1.0
}

impl Default for LatencySection {
    fn default() -> Self {
        LatencySection {
            pipeline_overlap: default_overlap(),
            profile_file: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_penalty_temp")]
    pub penalty_temp_ms: f64,
}

fn default_lambda() -> f64 {
    100.0
}

fn default_penalty_temp() -> f64 {
    1.0
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            lambda: default_lambda(),
            penalty_temp_ms: default_penalty_temp(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaSection {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default = "default_crossover")]
    pub crossover_rate: f64,
    #[serde(default = "default_mutation")]
    pub mutation_rate: f64,
    #[serde(default = "default_elitism")]
    pub elitism: bool,
}

fn default_population() -> usize {
    20
}
fn default_pool() -> usize {
    10
}
fn default_generations() -> usize {
    100
}
fn default_crossover() -> f64 {
    0.8
}
fn default_mutation() -> f64 {
    0.2
}
fn default_elitism() -> bool {
    true
}

impl Default for GaSection {
    fn default() -> Self {
        GaSection {
            population: default_population(),
            pool: default_pool(),
            generations: default_generations(),
            crossover_rate: default_crossover(),
            mutation_rate: default_mutation(),
            elitism: default_elitism(),
        }
    }
}

impl GaSection {
    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            population: self.population,
            generations: self.generations,
            crossover_rate: self.crossover_rate,
            mutation_rate: self.mutation_rate,
            elitism: self.elitism,
        }
    }
}

/// The real-time constraint pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    #[serde(default = "default_latency_ub")]
    pub latency_ub_ms: f64,
    #[serde(default = "default_throughput_min")]
    pub throughput_min_fps: f64,
}

fn default_latency_ub() -> f64 {
    50.0
}

fn default_throughput_min() -> f64 {
    22.0
}

impl Default for ConstraintsSection {
    fn default() -> Self {
        ConstraintsSection {
            latency_ub_ms: default_latency_ub(),
            throughput_min_fps: default_throughput_min(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default = "default_shrink")]
    pub outer_shrink: f64,
    #[serde(default = "default_outer_cap")]
    pub outer_cap: usize,
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default = "default_init_eps")]
    pub init_eps: f64,
}

fn default_shrink() -> f64 {
    0.9
}
fn default_outer_cap() -> usize {
    10
}
fn default_init() -> String {
    "uniform_noise".into()
}
fn default_init_eps() -> f64 {
    1e-3
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            outer_shrink: default_shrink(),
            outer_cap: default_outer_cap(),
            init: default_init(),
            init_eps: default_init_eps(),
        }
    }
}

impl SearchSection {
    pub fn init_policy(&self) -> Result<InitPolicy> {
        match self.init.as_str() {
            "zeros" => Ok(InitPolicy::Zeros),
            "uniform_noise" => Ok(InitPolicy::UniformNoise { eps: self.init_eps }),
            other => Err(Error::Config(format!(
                "unknown init policy `{other}` (expected `zeros` or `uniform_noise`)"
            ))),
        }
    }

    pub fn outer_config(&self) -> OuterConfig {
        OuterConfig {
            shrink: self.outer_shrink,
            cap: self.outer_cap,
        }
    }
}

/// Whole-experiment configuration, one file per run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    pub skeleton: SkeletonConfig,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub latency: LatencySection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub constraints: ConstraintsSection,
    #[serde(default)]
    pub search: SearchSection,

    /// Directory of the config file, for resolving included files.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Explicit surrogate target file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateFile {
    groups: Vec<SurrogateGroupRow>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateGroupRow {
    cell: String,
    tensor: usize,
    targets: Vec<f64>,
}

/// Topology, latency model and surrogate built from one config.
pub struct Instance {
    pub topo: SupernetTopology,
    pub lat_model: LatencyModel,
    pub surrogate: SurrogateModel,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.loss_config().validate()?;
        self.ga.ga_config().validate()?;
        if self.ga.pool == 0 {
            return Err(Error::Config("ga.pool must be >= 1".into()));
        }
        if self.constraints.throughput_min_fps.is_nan() || self.constraints.throughput_min_fps <= 0.0 {
            return Err(Error::Config("constraints.throughput_min_fps must be > 0".into()));
        }
        if self.latency.pipeline_overlap.is_nan() || self.latency.pipeline_overlap < 1.0 {
            return Err(Error::Config("latency.pipeline_overlap must be >= 1".into()));
        }
        self.search.init_policy()?;
        if self.search.outer_shrink.is_nan() || self.search.outer_shrink <= 0.0 || self.search.outer_shrink >= 1.0 {
            return Err(Error::Config("search.outer_shrink must be in (0, 1)".into()));
        }
        if self.search.outer_cap == 0 {
            return Err(Error::Config("search.outer_cap must be >= 1".into()));
        }
        if self.surrogate.sharpness.is_nan() || self.surrogate.sharpness <= 0.0 {
            return Err(Error::Config("surrogate.sharpness must be > 0".into()));
        }
        if self.surrogate.noise.is_nan() || self.surrogate.noise < 0.0 {
            return Err(Error::Config("surrogate.noise must be >= 0".into()));
        }
        Ok(())
    }

    /// The loss configuration: the penalty shape from `[loss]` and the
    /// budget from `[constraints]`.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.loss.lambda,
            latency_ub_ms: self.constraints.latency_ub_ms,
            penalty_temp_ms: self.loss.penalty_temp_ms,
        }
    }

    /// Build topology, latency model and surrogate. Included files resolve
    /// relative to the config file's directory.
    pub fn instantiate(&self) -> Result<Instance> {
        let topo = SupernetTopology::build(&self.skeleton)?;
        let mut lat_model = LatencyModel::from_topology(&topo, self.latency.pipeline_overlap)?;
        if let Some(profile) = &self.latency.profile_file {
            let path = self.base_dir.join(profile);
            let text = std::fs::read_to_string(&path)?;
            lat_model.apply_profile_table(&topo, &text, &path.display().to_string())?;
        }
        let surrogate = match &self.surrogate.file {
            Some(file) => {
                let path = self.base_dir.join(file);
                let text = std::fs::read_to_string(&path)?;
                let parsed: SurrogateFile = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let mut groups = BTreeMap::new();
                for row in parsed.groups {
                    let cell = topo
                        .cells
                        .iter()
                        .position(|c| c.name == row.cell)
                        .ok_or_else(|| {
                            Error::Config(format!("surrogate file names unknown cell `{}`", row.cell))
                        })?;
                    groups.insert(
                        GroupKey {
                            cell: crate::supernet::CellId(cell),
                            tensor: row.tensor,
                        },
                        row.targets,
                    );
                }
                SurrogateModel::from_groups(&topo, self.surrogate.sharpness, groups)?
            }
            None => {
                let seed = self.surrogate.seed.unwrap_or(self.seed);
                SurrogateModel::generate(&topo, self.surrogate.sharpness, self.surrogate.noise, seed)
            }
        };
        Ok(Instance {
            topo,
            lat_model,
            surrogate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
seed = 42

[skeleton]
layers = 2
scales = 2
tensors_per_cell = 2

[[skeleton.ops]]
id = "fast"
quality = 1.0
latency_ms = [1.0, 0.5]

[[skeleton.ops]]
id = "slow"
quality = 0.5
latency_ms = [4.0, 2.0]

[constraints]
latency_ub_ms = 30.0
throughput_min_fps = 10.0
"#;

    #[test]
    fn parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, TINY).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.optimizer.epochs, 40);
        assert_eq!(cfg.ga.population, 20);
        assert_eq!(cfg.ga.pool, 10);
        assert_eq!(cfg.ga.generations, 100);
        assert!((cfg.loss.lambda - 100.0).abs() < 1e-12);
        assert!((cfg.constraints.latency_ub_ms - 30.0).abs() < 1e-12);
        let inst = cfg.instantiate().unwrap();
        assert_eq!(inst.topo.n_layers, 2);
    }

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, format!("{TINY}\n[loss]\nlambada = 1.0\n")).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lambada"), "diagnostic should name the key: {msg}");
    }

    #[test]
    fn profile_include_resolves_relative() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            format!("{TINY}\n[latency]\nprofile_file = \"profile.tsv\"\n"),
        )
        .unwrap();
        std::fs::write(dir.path().join("profile.tsv"), "fast 0 0.75\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let inst = cfg.instantiate().unwrap();
        assert_eq!(inst.lat_model.op_latency(crate::supernet::OpId(0), 0), 0.75);
    }

    #[test]
    fn surrogate_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            format!(
                "{}\n[surrogate]\nfile = \"targets.toml\"\n",
                TINY.replace("tensors_per_cell = 2", "tensors_per_cell = 1")
            ),
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let topo = SupernetTopology::build(&cfg.skeleton).unwrap();
        let mut rows = String::new();
        for cell in &topo.cells {
            rows.push_str(&format!(
                "[[groups]]\ncell = \"{}\"\ntensor = 1\ntargets = [0.75, 0.25]\n\n",
                cell.name
            ));
        }
        std::fs::write(dir.path().join("targets.toml"), rows).unwrap();
        let inst = cfg.instantiate().unwrap();
        let row = &inst.surrogate.targets[&GroupKey {
            cell: crate::supernet::CellId(0),
            tensor: 1,
        }];
        assert_eq!(row, &vec![0.75, 0.25]);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            format!("{TINY}\n[optimizer]\nmomentum = 1.5\nlr_start = 0.01\nlr_end = 0.001\nweight_decay = 0.0\nepochs = 5\nlr_schedule = \"cosine\"\n"),
        )
        .unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }
}
