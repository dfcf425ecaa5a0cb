use crate::RunError;
use serde::{Deserialize, Serialize};
use swipt_core::ee_solver::SolverOptions;
use swipt_core::system_model::SolverKnobs;
use swipt_core::{derive_stats, generate_topology, load_scenario, ChannelStats, Scenario, SystemParams};

/// One scenario plus the knobs a caller may override on top of it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Job {
    /// Scenario TOML; empty means the desk defaults.
    #[serde(default)]
    pub config: String,
    /// Overrides the `seed` key of the scenario.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub solver: SolverKnobs,
}

/// A loaded job: parameters, the seed in force and the solver settings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub params: SystemParams,
    pub seed: u64,
    pub options: SolverOptions,
}

impl Job {
    pub fn new(config: impl Into<String>) -> Self {
        Job { config: config.into(), ..Default::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn prepare(&self) -> Result<Prepared, RunError> {
        let Scenario { params, seed, solver } = load_scenario(&self.config)?;
        let mut options = SolverOptions::default();
        options.apply(&solver);
        options.apply(&self.solver);
        Ok(Prepared { params, seed: self.seed.unwrap_or(seed), options })
    }
}

impl Prepared {
    pub fn stats(&self) -> ChannelStats {
        self.stats_for(self.seed)
    }

    pub fn stats_for(&self, seed: u64) -> ChannelStats {
        derive_stats(&self.params, &generate_topology(&self.params, seed))
    }
}
