//! Experiment runner shared by the command line tool and the HTTP service:
//! loads a scenario, runs one of the four experiment kinds and writes the
//! artifacts.

mod error;
mod job;
pub mod output;
pub mod run;
pub mod sweep;
pub mod validate;

pub use error::{ErrorBody, RunError};
pub use job::{Job, Prepared};
pub use run::{run_feasible, run_solve, FeasibleRun, SolveRun};
pub use sweep::{run_sweep, SweepRequest, SweepRun};
pub use validate::{run_validate, ValidateOptions, ValidateRequest, ValidateRun};
