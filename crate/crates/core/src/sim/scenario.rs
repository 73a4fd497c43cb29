//! Scenario definitions and the scenario file format.

use std::path::Path;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerClock, CyclePolicy};
use crate::fusion::{FusionParams, SensorPayload};
use crate::geometry::Point3;
use crate::room::{load_room_file, validate, RoomError, RoomModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    /// Seconds from scenario start.
    pub t: f64,
    pub position: Point3,
    pub inside_room: bool,
}

/// Where an occupant is at some instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point3,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupantScript {
    pub occupant_id: String,
    #[serde(default)]
    pub carries_beacon: bool,
    pub waypoints: Vec<Waypoint>,
}

impl OccupantScript {
    /// Linear interpolation between waypoints, clamped to the first and last.
    ///
    /// Between two waypoints that disagree on `inside_room`, the occupant is
    /// inside exactly when the interpolated position lies in the room box, so
    /// the door plane crossing happens where the path meets the wall.
    pub fn pose_at(&self, t: f64, room: &RoomModel) -> Pose {
        let w = &self.waypoints;
        let first = w.first().expect("validated scripts have waypoints");
        if t <= first.t {
            return Pose {
                position: first.position,
                inside: first.inside_room,
            };
        }
        let idx = w.partition_point(|p| p.t <= t);
        if idx >= w.len() {
            let last = w[w.len() - 1];
            return Pose {
                position: last.position,
                inside: last.inside_room,
            };
        }
        let (a, b) = (w[idx - 1], w[idx]);
        let s = (t - a.t) / (b.t - a.t);
        let position = a.position.lerp(b.position, s);
        let inside = if a.inside_room == b.inside_room {
            a.inside_room
        } else {
            room.contains(position)
        };
        Pose { position, inside }
    }

    fn validate(&self, index: usize, room: &RoomModel, out: &mut Vec<String>) {
        let f = format!("occupants[{index}]");
        if self.waypoints.is_empty() {
            out.push(format!("{f}.waypoints must not be empty"));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !w.t.is_finite() || !w.position.is_finite() {
                out.push(format!("{f}.waypoints[{i}] must be finite"));
            }
            if w.inside_room && !room.contains(w.position) {
                out.push(format!(
                    "{f}.waypoints[{i}] is marked inside_room but lies outside the room"
                ));
            }
            if i > 0 && !(w.t > self.waypoints[i - 1].t) {
                out.push(format!("{f}.waypoints[{i}].t must be strictly increasing"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    /// Standard deviation of RSSI noise, dB.
    pub rssi_sigma_db: f64,
    pub pir_miss_probability: f64,
    /// Spurious PIR detections per sensor per hour.
    pub false_positive_rate_per_hour: f64,
}

impl NoiseParams {
    pub fn zero() -> Self {
        NoiseParams {
            rssi_sigma_db: 0.0,
            pir_miss_probability: 0.0,
            false_positive_rate_per_hour: 0.0,
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            rssi_sigma_db: 2.0,
            pir_miss_probability: 0.0,
            false_positive_rate_per_hour: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// m/s; slower occupants are invisible to PIR.
    pub pir_speed_threshold: f64,
    /// Seconds between beacon adverts.
    pub ble_advert_period: f64,
    /// Height at which occupant exposure is evaluated, m.
    pub exposure_height: f64,
    /// Height of the virtual irradiance probes, m.
    pub probe_height: f64,
    /// Seconds between dose-grid checkpoints.
    pub checkpoint_interval: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            pir_speed_threshold: 0.1,
            ble_advert_period: 1.0,
            exposure_height: 1.1,
            probe_height: 0.7,
            checkpoint_interval: 600.0,
        }
    }
}

/// A sensor event injected at a fixed time, e.g. a scripted false positive
/// or a manual switch press.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub t: f64,
    pub source: String,
    pub payload: SensorPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub room: RoomModel,
    pub policy: CyclePolicy,
    pub fusion: FusionParams,
    pub occupants: Vec<OccupantScript>,
    /// Wall-clock instant of simulation time zero; its offset is the local
    /// time zone used for midnight.
    pub start: DateTime<FixedOffset>,
    pub duration: f64,
    pub tick: f64,
    pub rng_seed: u64,
    pub noise: NoiseParams,
    pub models: ModelParams,
    pub scripted_events: Vec<ScriptedEvent>,
}

impl Scenario {
    pub fn clock(&self) -> ControllerClock {
        ControllerClock {
            epoch_s: self.start.timestamp(),
            tz_offset_s: self.start.offset().local_minus_utc(),
        }
    }

    /// Number of simulation steps; step `k` runs at `k * tick`.
    pub fn steps(&self) -> usize {
        (self.duration / self.tick).round() as usize
    }

    pub fn end_time(&self) -> f64 {
        self.steps() as f64 * self.tick
    }

    pub fn with_tz_offset(mut self, seconds: i32) -> Option<Self> {
        let offset = FixedOffset::east_opt(seconds)?;
        self.start = self.start.with_timezone(&offset);
        Some(self)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out: Vec<String> = validate(&self.room).iter().map(|v| format!("room.{v}")).collect();
        out.extend(self.policy.validate());
        out.extend(self.fusion.validate());
        if !(self.duration.is_finite() && self.duration > 0.0) {
            out.push("duration_s must be > 0".into());
        }
        if !(self.tick > 0.0 && self.tick <= 1.0) {
            out.push("tick_s must lie in (0, 1]".into());
        }
        let n = &self.noise;
        if !(n.rssi_sigma_db.is_finite() && n.rssi_sigma_db >= 0.0) {
            out.push("noise.rssi_sigma_db must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&n.pir_miss_probability) {
            out.push("noise.pir_miss_probability must lie in [0, 1]".into());
        }
        if !(n.false_positive_rate_per_hour.is_finite() && n.false_positive_rate_per_hour >= 0.0) {
            out.push("noise.false_positive_rate_per_hour must be >= 0".into());
        }
        let m = &self.models;
        for (name, v) in [
            ("models.ble_advert_period", m.ble_advert_period),
            ("models.checkpoint_interval", m.checkpoint_interval),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be > 0"));
            }
        }
        if !(m.pir_speed_threshold.is_finite() && m.pir_speed_threshold >= 0.0) {
            out.push("models.pir_speed_threshold must be >= 0".into());
        }
        for (i, o) in self.occupants.iter().enumerate() {
            o.validate(i, &self.room, &mut out);
        }
        let mut ids: Vec<_> = self.occupants.iter().map(|o| &o.occupant_id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            out.push("occupants: duplicate occupant_id".into());
        }
        for (i, e) in self.scripted_events.iter().enumerate() {
            if !e.t.is_finite() {
                out.push(format!("scripted_events[{i}].t must be finite"));
            }
        }
        out
    }

    /// Serializes to the scenario file format with the room inlined.
    pub fn to_file_string(&self) -> String {
        let file = ScenarioFile {
            name: self.name.clone(),
            room: RoomSource::Inline(Box::new(self.room.clone())),
            policy: self.policy.clone(),
            fusion: self.fusion.clone(),
            occupants: self.occupants.clone(),
            start_iso8601: self.start.to_rfc3339(),
            duration_s: self.duration,
            tick_s: self.tick,
            seed: self.rng_seed,
            noise: self.noise.clone(),
            models: self.models.clone(),
            scripted_events: self.scripted_events.clone(),
        };
        serde_json::to_string_pretty(&file).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RoomSource {
    Path(String),
    Inline(Box<RoomModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: String,
    room: RoomSource,
    #[serde(default)]
    policy: CyclePolicy,
    #[serde(default)]
    fusion: FusionParams,
    #[serde(default)]
    occupants: Vec<OccupantScript>,
    start_iso8601: String,
    duration_s: f64,
    #[serde(default = "default_tick")]
    tick_s: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    noise: NoiseParams,
    #[serde(default)]
    models: ModelParams,
    #[serde(default)]
    scripted_events: Vec<ScriptedEvent>,
}

fn default_tick() -> f64 {
    0.1
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario start_iso8601 `{0}` is not an RFC 3339 timestamp")]
    BadStart(String),
    #[error(transparent)]
    Room(#[from] RoomError),
    #[error("scenario is invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parses and validates a scenario document. A `room` given as a string is
/// a path resolved against `base_dir`.
pub fn load_scenario(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    let room = match file.room {
        RoomSource::Inline(room) => *room,
        RoomSource::Path(p) => load_room_file(&base_dir.join(p))?,
    };
    let start = DateTime::parse_from_rfc3339(&file.start_iso8601)
        .map_err(|_| ScenarioError::BadStart(file.start_iso8601.clone()))?;
    let scenario = Scenario {
        name: file.name,
        room,
        policy: file.policy,
        fusion: file.fusion,
        occupants: file.occupants,
        start,
        duration: file.duration_s,
        tick: file.tick_s,
        rng_seed: file.seed,
        noise: file.noise,
        models: file.models,
        scripted_events: file.scripted_events,
    };
    let problems = scenario.validate();
    if problems.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(problems))
    }
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Builds occupant paths as a sequence of walks and pauses.
#[derive(Debug, Clone)]
pub struct PathBuilder {
    t: f64,
    position: Point3,
    inside: bool,
    waypoints: Vec<Waypoint>,
}

impl PathBuilder {
    pub fn new(t: f64, position: Point3, inside: bool) -> Self {
        PathBuilder {
            t,
            position,
            inside,
            waypoints: vec![Waypoint {
                t,
                position,
                inside_room: inside,
            }],
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn position(&self) -> Point3 {
        self.position
    }

    /// Straight walk at `speed` m/s.
    pub fn walk_to(mut self, to: Point3, speed: f64, inside: bool) -> Self {
        let d = self.position.distance(to);
        if d == 0.0 {
            return self;
        }
        self.t += d / speed;
        self.position = to;
        self.inside = inside;
        self.push();
        self
    }

    pub fn walk_through(self, points: &[Point3], speed: f64, inside: bool) -> Self {
        points.iter().fold(self, |b, &p| b.walk_to(p, speed, inside))
    }

    pub fn pause(mut self, seconds: f64) -> Self {
        if seconds > 0.0 {
            self.t += seconds;
            self.push();
        }
        self
    }

    /// Stays put until `t` (no-op if already later).
    pub fn wait_until(self, t: f64) -> Self {
        let dt = t - self.t;
        self.pause(dt)
    }

    fn push(&mut self) {
        self.waypoints.push(Waypoint {
            t: self.t,
            position: self.position,
            inside_room: self.inside,
        });
    }

    pub fn build(self, occupant_id: &str, carries_beacon: bool) -> OccupantScript {
        OccupantScript {
            occupant_id: occupant_id.to_string(),
            carries_beacon,
            waypoints: self.waypoints,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::paper_default_room;

    #[test]
    fn interpolation_and_door_crossing() {
        let room = paper_default_room();
        let script = PathBuilder::new(0.0, Point3::new(2.15, -1.0, 1.1), false)
            .walk_to(Point3::new(2.15, 1.0, 1.1), 1.0, true)
            .build("o", false);
        let p = script.pose_at(0.5, &room);
        assert!((p.position.y + 0.5).abs() < 1e-12);
        assert!(!p.inside);
        assert!(!script.pose_at(0.999, &room).inside);
        assert!(script.pose_at(1.001, &room).inside);
        assert!(script.pose_at(5.0, &room).inside);
        assert_eq!(script.pose_at(-3.0, &room).position.y, -1.0);
    }

    #[test]
    fn non_increasing_waypoints_rejected() {
        let room = paper_default_room();
        let mut script = PathBuilder::new(0.0, Point3::new(1.0, 1.0, 1.1), true)
            .pause(5.0)
            .build("o", false);
        script.waypoints[1].t = 0.0;
        let mut out = Vec::new();
        script.validate(0, &room, &mut out);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn inside_waypoint_outside_box_rejected() {
        let room = paper_default_room();
        let script = PathBuilder::new(0.0, Point3::new(-1.0, 1.0, 1.1), true).build("o", false);
        let mut out = Vec::new();
        script.validate(0, &room, &mut out);
        assert_eq!(out.len(), 1);
    }
    #[test]
    fn file_round_trip_is_exact() {
        for s in crate::sim::builtin::paper_scenarios() {
            let back = load_scenario(&s.to_file_string(), Path::new(".")).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn room_path_is_resolved_against_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("room.json"), paper_default_room().to_config_string()).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&crate::sim::builtin::scenario_a().to_file_string()).unwrap();
        v["room"] = serde_json::Value::from("room.json");
        let path = dir.path().join("s.json");
        std::fs::write(&path, v.to_string()).unwrap();
        let s = load_scenario_file(&path).unwrap();
        assert_eq!(s.room, paper_default_room());
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = "{\n  \"name\": \"x\",\n  \"duration_s\": \"long\"\n}";
        match load_scenario(text, Path::new(".")) {
            Err(ScenarioError::Parse { path, line, .. }) => {
                assert_eq!(path, "duration_s");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_problem_is_reported() {
        let mut v: serde_json::Value =
            serde_json::from_str(&crate::sim::builtin::scenario_a().to_file_string()).unwrap();
        v["duration_s"] = serde_json::Value::from(-1.0);
        v["tick_s"] = serde_json::Value::from(0.0);
        match load_scenario(&v.to_string(), Path::new(".")) {
            Err(ScenarioError::Invalid(p)) => assert!(p.len() >= 2, "{p:?}"),
            other => panic!("{other:?}"),
        }
        v["start_iso8601"] = serde_json::Value::from("yesterday");
        assert!(matches!(
            load_scenario(&v.to_string(), Path::new(".")),
            Err(ScenarioError::BadStart(_))
        ));
    }
}
