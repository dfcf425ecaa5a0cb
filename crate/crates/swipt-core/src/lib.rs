//! Energy-efficiency power control for multicast+unicast cell-free massive MIMO
//! with simultaneous wireless information and power transfer.
//!
//! Pipeline: [`system_model`] builds a scenario, [`channel`] turns it into
//! estimation statistics, [`performance`] evaluates rates and power,
//! [`surrogate`] convexifies around an operating point, [`feasibility`] finds a
//! starting allocation and [`ee_solver`] maximizes bits per joule from there.
//! [`oracle`] holds brute-force cross-checks for all of the above.

pub mod channel;
pub mod ee_solver;
pub mod error;
pub mod feasibility;
pub mod oracle;
pub mod performance;
pub mod surrogate;
pub mod system_model;
pub mod units;

pub use channel::{derive_stats, ChannelStats};
pub use error::{ConfigError, SolveError};
pub use performance::{evaluate, PerfReport, PowerAllocation};
pub use system_model::{generate_topology, load_params, load_scenario, Scenario, SystemParams, Topology};
