//! Experiment runner: scenario configs, batch episodes, the `n` sweep and
//! report files.

mod report;
mod run;
mod validate;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use report::{
    emit_proximity_trace, emit_report, emit_sweep, read_csv_report, ReportFormat, REPORT_COLUMNS,
};
pub use run::{compare, episode_seed, n_sweep, run_experiment, summarize, Comparison, ExperimentSummary, SweepRow};
pub use validate::{validate, Check, ValidationReport};

use crate::arm::{ArmModel, JointVector};
use crate::error::{check_dim, Error, Result};
use crate::executor::{ExecutorParams, FailsafeBank};
use crate::geometry::{Primitive, Scene, SceneDescription};
use crate::ikinqp::CorrectorParams;
use crate::policy::{load_trace, make_greedy, make_random, make_replay, Policy, ZeroPolicy};
use crate::sim::EnvParams;

/// Which scripted policy drives the episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Pursues the experiment's `q_goal`.
    Greedy {
        #[serde(default = "unit")]
        saturation: f64,
    },
    Zero,
    /// Seeded per episode from the experiment seed.
    Random { magnitude: f64 },
    /// Trace path, relative to the config file.
    Replay { trace: PathBuf },
}

fn unit() -> f64 {
    1.0
}

fn enabled() -> bool {
    true
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Greedy { saturation: 1.0 }
    }
}

/// The `experiment` section of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub start_pose: Vec<f64>,
    pub q_goal: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
    #[serde(default = "enabled")]
    pub corrector_enabled: bool,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub env: EnvParams,
    #[serde(default)]
    pub failsafe: FailsafeBank,
}

/// On-disk config. `arm` and `scene` are paths relative to the config file;
/// without `arm` the bundled desk arm is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<PathBuf>,
    pub scene: PathBuf,
    #[serde(default)]
    pub corrector: CorrectorParams,
    #[serde(default)]
    pub executor: ExecutorParams,
    pub experiment: ExperimentSection,
}

/// A fully resolved, validated experiment.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: Arc<ArmModel>,
    pub scene: Arc<Scene>,
    pub start_pose: JointVector,
    pub q_goal: JointVector,
    pub corrector: CorrectorParams,
    pub executor: ExecutorParams,
    pub env: EnvParams,
    pub failsafe: FailsafeBank,
    pub policy: PolicySpec,
    /// Loaded replay actions when `policy` is a replay.
    pub trace: Option<Vec<JointVector>>,
    pub episodes: usize,
    pub seed: u64,
    pub corrector_enabled: bool,
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ConfigFile = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_file(&file, dir)
    }

    /// Resolves `file`, reading referenced paths relative to `dir`.
    pub fn from_file(file: &ConfigFile, dir: &Path) -> Result<Self> {
        let model = match &file.arm {
            Some(p) => ArmModel::load(dir.join(p))?,
            None => ArmModel::desk_arm(),
        };
        let scene = Scene::load(dir.join(&file.scene))?;
        let x = &file.experiment;
        let trace = match &x.policy {
            PolicySpec::Replay { trace } => Some(load_trace(dir.join(trace))?),
            _ => None,
        };
        let config = Self {
            name: x.name.clone(),
            model: Arc::new(model),
            scene: Arc::new(scene),
            start_pose: JointVector::from_column_slice(&x.start_pose),
            q_goal: JointVector::from_column_slice(&x.q_goal),
            corrector: file.corrector.clone(),
            executor: file.executor.clone(),
            env: x.env.clone(),
            failsafe: x.failsafe.clone(),
            policy: x.policy.clone(),
            trace,
            episodes: x.episodes,
            seed: x.seed,
            corrector_enabled: x.corrector_enabled,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.dof();
        if self.episodes == 0 {
            return Err(Error::load("experiment.episodes", "must be at least 1"));
        }
        check_dim(n, self.start_pose.len()).map_err(|e| Error::load("experiment.start_pose", e.to_string()))?;
        check_dim(n, self.q_goal.len()).map_err(|e| Error::load("experiment.q_goal", e.to_string()))?;
        if !self.model.within_position_limits(&self.q_goal) {
            return Err(Error::load("experiment.q_goal", "outside joint position limits"));
        }
        if !self.model.within_position_limits(&self.start_pose) {
            return Err(Error::load("experiment.start_pose", "outside joint position limits"));
        }
        self.scene.check_compatible(&self.model)?;
        self.corrector.validate()?;
        self.executor.validate(self.corrector.num_points())?;
        self.env.validate()?;
        self.failsafe.verify(&self.model, &self.scene, self.corrector.d_coll_buff)?;
        match &self.policy {
            PolicySpec::Greedy { saturation } if saturation.is_nan() || *saturation <= 0.0 => {
                Err(Error::load("experiment.policy.saturation", "must be positive"))
            }
            PolicySpec::Random { magnitude } if magnitude.is_nan() || *magnitude <= 0.0 => {
                Err(Error::load("experiment.policy.magnitude", "must be positive"))
            }
            PolicySpec::Replay { .. } => match &self.trace {
                Some(t) if t.first().is_some_and(|a| a.len() == n) => Ok(()),
                _ => Err(Error::load("experiment.policy.trace", format!("needs {n}-joint actions"))),
            },
            _ => Ok(()),
        }
    }

    /// A fresh policy for one episode.
    pub fn make_policy(&self, seed: u64) -> Result<Box<dyn Policy>> {
        Ok(match &self.policy {
            PolicySpec::Greedy { saturation } => Box::new(make_greedy(self.q_goal.clone(), *saturation)?),
            PolicySpec::Zero => Box::new(ZeroPolicy),
            PolicySpec::Random { magnitude } => Box::new(make_random(seed, *magnitude)?),
            PolicySpec::Replay { .. } => {
                let trace = self.trace.clone().ok_or_else(|| Error::load("experiment.policy.trace", "not loaded"))?;
                Box::new(make_replay(trace)?)
            }
        })
    }
}

/// The three obstacle layouts. In all of them the arm starts to the left of
/// the goal at goal height, so greedy pursuit sweeps the tool sideways
/// through the workspace in front of the base.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Obstacle centred on the tool's path to the goal.
    Middle,
    /// Obstacle pushed sideways off the path by one radius.
    Partial,
    /// Obstacle well away (more than 0.15 m) from the path.
    Far,
}

pub const OBSTACLE_RADIUS: f64 = 0.04;
pub const START_POSE: [f64; 3] = [0.9, 1.6, 1.2];
/// Tool point at the centre of the bundled goal region.
pub const GOAL_POSE: [f64; 3] = [0.0, 1.5995420315963567, 1.201337197156338];

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Middle, Scenario::Partial, Scenario::Far];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Middle => "middle",
            Scenario::Partial => "partial",
            Scenario::Far => "far",
        }
    }

    pub fn obstacle_center(self) -> [f64; 3] {
        match self {
            Scenario::Middle => [0.315, 0.152, 0.15],
            Scenario::Partial => [0.351, 0.169, 0.15],
            Scenario::Far => [0.30, -0.25, 0.15],
        }
    }

    pub fn scene_description(self) -> SceneDescription {
        let mut d = Scene::open_table(0.0).to_description();
        d.obstacles.push(crate::geometry::ObstacleSpec {
            shape: Primitive::Sphere { radius: OBSTACLE_RADIUS },
            pose: crate::arm::PoseSpec::at(self.obstacle_center()),
            label: "obstacle".into(),
        });
        d
    }

    /// The config file shipped under `configs/`, pointing at
    /// `scenes/<name>.json`.
    pub fn config_file(self) -> ConfigFile {
        ConfigFile {
            arm: None,
            scene: PathBuf::from(format!("scenes/{}.json", self.name())),
            corrector: CorrectorParams::default(),
            executor: ExecutorParams::default(),
            experiment: ExperimentSection {
                name: self.name().into(),
                start_pose: START_POSE.to_vec(),
                q_goal: GOAL_POSE.to_vec(),
                episodes: 100,
                seed: 42,
                corrector_enabled: true,
                policy: PolicySpec::default(),
                env: EnvParams::default(),
                failsafe: FailsafeBank::default(),
            },
        }
    }

    /// The preset resolved in memory, without touching the filesystem.
    pub fn config(self) -> Result<ScenarioConfig> {
        let file = self.config_file();
        let x = &file.experiment;
        let config = ScenarioConfig {
            name: x.name.clone(),
            model: Arc::new(ArmModel::desk_arm()),
            scene: Arc::new(Scene::from_description(&self.scene_description())?),
            start_pose: JointVector::from_column_slice(&x.start_pose),
            q_goal: JointVector::from_column_slice(&x.q_goal),
            corrector: file.corrector.clone(),
            executor: file.executor.clone(),
            env: x.env.clone(),
            failsafe: x.failsafe.clone(),
            policy: x.policy.clone(),
            trace: None,
            episodes: x.episodes,
            seed: x.seed,
            corrector_enabled: true,
        };
        config.validate()?;
        Ok(config)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown scenario `{s}` (middle, partial, far)")))
    }
}

/// Writes the preset configs and scenes under `dir`.
pub fn write_presets(dir: &Path) -> Result<Vec<PathBuf>> {
    let scenes = dir.join("scenes");
    std::fs::create_dir_all(&scenes).map_err(|e| Error::io(&scenes, e))?;
    let mut written = Vec::new();
    for s in Scenario::ALL {
        let scene = scenes.join(format!("{}.json", s.name()));
        write_json(&scene, &s.scene_description())?;
        let config = dir.join(format!("{}.json", s.name()));
        write_json(&config, &s.config_file())?;
        written.push(config);
    }
    Ok(written)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
