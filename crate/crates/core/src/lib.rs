//! Cut-in scenario simulator and safety-model benchmark.
//!
//! * [`sim`]: fixed-step kinematics, crash detection, TTC and traces.
//! * [`models`]: the safety-model interface and the baseline models.
//! * [`dbn`]: the dynamic Bayesian network model.
//! * [`calibration`]: least-squares fitting of the lane-change sigmoid.
//! * [`sweep`]: grid execution, metrics and exports.
//! * [`cli`]: the `cutin-bench` command line.

pub mod calibration;
pub mod cli;
pub mod dbn;
pub mod models;
pub mod sim;
pub mod sweep;

pub use models::{ModelDecision, ModelId, ModelSuite, Observation, SafetyModel, SafetyParams};
pub use sim::{run_scenario, AccelCommand, ScenarioConfig, Trace, VehicleState};
