//! Occupancy-interlocked UVC disinfection: room model, dosimetry, sensor
//! fusion, the lamp controller and a deterministic room simulator.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dosimetry;
pub mod fusion;
pub mod geometry;
pub mod room;
pub mod sim;

pub use controller::{
    CommandReason, Controller, ControllerClock, ControllerError, ControllerState, CyclePolicy, LampAction, LampCommand,
    LampRun,
};
pub use dosimetry::{
    accumulate_dose, coverage_report, inactivation_fraction, irradiance_at_point, lamp_irradiance, log_reduction,
    time_to_dose, CoverageReport, DoseGrid, DosimetryError, LampOnIntervals, DEFAULT_D90_DOSE,
};
pub use fusion::{
    read_event_log, rssi_to_distance, write_event_log, FusionError, FusionParams, FusionState, OccupancySnapshot,
    SensorEvent, SensorPayload,
};
pub use geometry::Point3;
pub use room::{
    load_room, load_room_file, paper_default_room, validate, DeskZone, LampSpec, LampTier, RoomError, RoomModel,
    SensorKind, SensorSpec, Violation,
};
pub use sim::{
    paper_scenarios, safety_check, simulate, SafetyReport, SafetyViolation, Scenario, SimulationOutput, Timeline,
};
