//! Deterministic room simulator: scripted occupants, sensor models, the
//! fusion and controller loop, dose integration and the safety audit.

pub mod builtin;
pub mod engine;
pub mod random;
pub mod safety;
pub mod scenario;
pub mod sensors;

pub use builtin::{builtin_scenario, empty_room_scenario, paper_scenarios};
pub use engine::{
    replay_events, simulate, DoseCheckpoint, Probe, ProbeSample, Replay, SimError, SimulationOutput, Timeline,
};
pub use random::{random_walk_scenario, WalkParams};
pub use safety::{safety_check, safety_check_with_deadline, SafetyReport, SafetyViolation};
pub use scenario::{
    load_scenario, load_scenario_file, ModelParams, NoiseParams, OccupantScript, PathBuilder, Pose, Scenario,
    ScenarioError, ScriptedEvent, Waypoint,
};
