use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{initialize, Channel, Engine, EngineSetup, Fault, PowerSchedule, Schedules};
use crate::error::{Error, Result};
use crate::geometry::{BregmanGeometry, FeasibleSet, GeometryKind};
use crate::harness::metrics::condition_check;
use crate::network::{GeneratorSpec, GraphSchedule, ScheduleFile};
use crate::problems::{make_estimation_problem, make_l1_problem, DistributedProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Estimation {
        n_agents: usize,
        #[serde(default = "default_coeff_range")]
        coeff_range: (f64, f64),
        seed: u64,
    },
    L1 {
        n_agents: usize,
        seed: u64,
    },
}

fn default_coeff_range() -> (f64, f64) {
    (0.5, 1.5)
}

impl ProblemSpec {
    pub fn n_agents(&self) -> usize {
        match self {
            ProblemSpec::Estimation { n_agents, .. } | ProblemSpec::L1 { n_agents, .. } => {
                *n_agents
            }
        }
    }

    pub fn build(&self, set: &FeasibleSet) -> Result<DistributedProblem> {
        match *self {
            ProblemSpec::Estimation {
                n_agents,
                coeff_range,
                seed,
            } => make_estimation_problem(n_agents, set, coeff_range, seed),
            ProblemSpec::L1 { n_agents, seed } => make_l1_problem(n_agents, set, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetSpec {
    /// `[-half_width, half_width]^dim`.
    Cube {
        dim: usize,
        half_width: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Simplex {
        dim: usize,
        floor: f64,
    },
    /// Simplex with the floor used by the entropy geometry.
    EntropySimplex {
        dim: usize,
    },
}

impl SetSpec {
    pub fn build(&self) -> Result<FeasibleSet> {
        match self {
            SetSpec::Cube { dim, half_width } => FeasibleSet::cube(*dim, *half_width),
            SetSpec::Box { lower, upper } => FeasibleSet::new_box(lower.clone(), upper.clone()),
            SetSpec::Simplex { dim, floor } => FeasibleSet::simplex(*dim, *floor),
            SetSpec::EntropySimplex { dim } => FeasibleSet::entropy_simplex(*dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    /// A schedule file written by [`ScheduleFile::write`], relative to the config.
    File { path: PathBuf },
    #[serde(untagged)]
    Generator(GeneratorSpec),
}

/// Initial states; the delay buffer is filled with copies of `x_i(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Independent uniform draws from the feasible set, seeded by the run seed.
    #[default]
    Uniform,
    /// Every agent starts at `point`.
    Point { point: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub alpha: PowerSchedule,
    pub beta: PowerSchedule,
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub horizon: usize,
    #[serde(default)]
    pub tau: usize,
    pub geometry: GeometryKind,
    pub problem: ProblemSpec,
    pub set: SetSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub channel: Channel,
    pub network: NetworkSpec,
    #[serde(default)]
    pub init: InitSpec,
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Write the SVG plot next to the CSV.
    #[serde(default = "default_true")]
    pub plot: bool,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedules(&self) -> Schedules {
        Schedules::new(self.schedule.alpha, self.schedule.beta, self.tau)
    }

    /// Parameter ranges, and the convergence conditions for the schedules.
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("alpha", self.schedule.alpha), ("beta", self.schedule.beta)] {
            PowerSchedule::new(s.a0, s.rho)?;
            if !(s.rho > 0.0 && s.rho < 1.0) {
                return Err(Error::Config(format!(
                    "{name} exponent {} must lie in (0, 1)",
                    s.rho
                )));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if let Channel::Quantized { k } = self.channel {
            if k < 2 {
                return Err(Error::Config(format!(
                    "level parameter K = {k} must be >= 2"
                )));
            }
        }
        if self.problem.n_agents() == 0 {
            return Err(Error::Config("need at least one agent".into()));
        }
        let report = condition_check(&self.schedules());
        if !report.passed() {
            return Err(Error::Config(format!(
                "schedules fail the convergence conditions: {}",
                report.failures().join(", ")
            )));
        }
        Ok(())
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn build_network(&self) -> Result<GraphSchedule> {
        let n = self.problem.n_agents();
        match &self.network {
            NetworkSpec::File { path } => {
                let file = ScheduleFile::read(&self.resolve(path))?;
                if file.n_agents != n {
                    return Err(Error::Config(format!(
                        "schedule file has {} agents, problem has {n}",
                        file.n_agents
                    )));
                }
                file.build()
            }
            NetworkSpec::Generator(g) => g.build(n),
        }
    }

    /// Builds problem, geometry, network and initial states.
    pub fn build_engine(&self, fault: Fault) -> Result<Engine> {
        let set = self.set.build()?;
        let problem = self.problem.build(&set)?;
        let geometry = BregmanGeometry::for_set(self.geometry, &set)?;
        let network = self.build_network()?;
        let n = problem.n_agents();
        let init: Vec<Vec<f64>> = match &self.init {
            InitSpec::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..n).map(|_| set.sample(&mut rng)).collect()
            }
            InitSpec::Point { point } => vec![point.clone(); n],
        };
        let history = init.iter().map(|x| vec![x.clone(); self.tau]).collect();
        let setup = EngineSetup {
            problem,
            geometry,
            network,
            schedules: self.schedules(),
            channel: self.channel,
            fault,
        };
        initialize(setup, init, history)
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    pub fn sample() -> super::RunConfig {
        super::RunConfig::from_toml(super::tests::SAMPLE).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(super) const SAMPLE: &str = r#"
name = "sample"
seed = 3
horizon = 50
tau = 2
geometry = "euclidean"

[problem]
kind = "estimation"
n_agents = 4
seed = 1

[set]
kind = "cube"
dim = 2
half_width = 10.0

[schedule]
alpha = { a0 = 1.0, rho = 0.5 }
beta = { a0 = 1.0, rho = 0.5 }

[channel]
mode = "quantized"
k = 5

[network]
kind = "ring_gossip"
"#;

    #[test]
    fn parses_and_builds() {
        let config = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(
            config.network,
            NetworkSpec::Generator(GeneratorSpec::RingGossip)
        );
        assert_eq!(config.init, InitSpec::Uniform);
        let engine = config.build_engine(Fault::None).unwrap();
        assert_eq!(engine.agents().len(), 4);
        assert_eq!(engine.agents()[0].history.len(), 2);
        let again = RunConfig::from_toml(&config.to_toml()).unwrap();
        assert_eq!(again, config);
    }

    #[test]
    fn rejects_bad_exponents() {
        let harmonic = SAMPLE.replace(
            "alpha = { a0 = 1.0, rho = 0.5 }",
            "alpha = { a0 = 1.0, rho = 1.0 }",
        );
        assert!(matches!(
            RunConfig::from_toml(&harmonic),
            Err(Error::Config(_))
        ));
        let k1 = SAMPLE.replace("k = 5", "k = 1");
        assert!(RunConfig::from_toml(&k1).is_err());
    }

    #[test]
    fn network_from_schedule_file() {
        let dir = tempfile::tempdir().unwrap();
        let schedule = crate::network::make_metropolis_sequence(4, 0.5, 3, 2).unwrap();
        schedule
            .to_file_format()
            .write(&dir.path().join("net.toml"))
            .unwrap();
        let text = SAMPLE.replace(
            "kind = \"ring_gossip\"",
            "kind = \"file\"\npath = \"net.toml\"",
        );
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let config = RunConfig::read(&path).unwrap();
        let built = config.build_network().unwrap();
        assert_eq!(built.period(), 3);
        assert_eq!(built.matrix(1), schedule.matrix(1));
    }
}
