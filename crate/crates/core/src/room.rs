//! Physical configuration of a disinfected room: geometry, UVC lamps,
//! occupancy sensors and desk zones.
//!
//! A [`RoomModel`] is plain data. [`validate`] reports every broken invariant
//! as a [`Violation`] instead of failing on the first one, and [`load_room`]
//! parses the JSON config document and rejects unknown keys.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;

/// Default fraction of electrical power emitted at 253.7 nm by a
/// low-pressure mercury lamp.
pub const DEFAULT_UVC_EFFICIENCY: f64 = 0.33;
pub const DEFAULT_PIR_FOV_HALF_ANGLE_DEG: f64 = 60.0;
pub const DEFAULT_US_FOV_HALF_ANGLE_DEG: f64 = 30.0;
pub const DEFAULT_US_MAX_RANGE_M: f64 = 2.0;
pub const DEFAULT_EXCLUSION_RADIUS_M: f64 = 2.0;
/// Beam cutoff of the shielded desk luminaire, measured from straight down.
pub const DEFAULT_DESK_BEAM_HALF_ANGLE_DEG: f64 = 55.0;

const POSITION_TOLERANCE_M: f64 = 1e-9;
const AIM_UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LampTier {
    UpperRoom,
    Ceiling,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LampSpec {
    pub id: String,
    pub tier: LampTier,
    pub position: Point3,
    #[serde(rename = "electrical_power_w")]
    pub electrical_power: f64,
    #[serde(default = "default_uvc_efficiency")]
    pub uvc_efficiency: f64,
    #[serde(default = "default_true")]
    pub emits_downward: bool,
    /// Optional luminaire cutoff; points further than this from the nadir
    /// receive nothing. `None` means an open hemisphere.
    #[serde(rename = "beam_half_angle_deg", default, skip_serializing_if = "Option::is_none")]
    pub beam_half_angle: Option<f64>,
}

impl LampSpec {
    /// UVC radiant power in watts.
    pub fn uvc_power(&self) -> f64 {
        self.electrical_power * self.uvc_efficiency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Pir,
    Ultrasonic,
    BleReceiver,
    ManualSwitch,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::Pir => "pir",
            SensorKind::Ultrasonic => "ultrasonic",
            SensorKind::BleReceiver => "ble_receiver",
            SensorKind::ManualSwitch => "manual_switch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
    pub position: Point3,
    #[serde(default = "default_aim")]
    pub aim: Point3,
    #[serde(rename = "fov_half_angle_deg", default, skip_serializing_if = "Option::is_none")]
    pub fov_half_angle: Option<f64>,
    #[serde(rename = "max_range_m", default, skip_serializing_if = "Option::is_none")]
    pub max_range: Option<f64>,
    /// Hardware latch of the sensor itself; fusion uses the longer of this
    /// and its own hold for the sensor kind.
    #[serde(rename = "hold_time_s", default)]
    pub hold_time: f64,
}

impl SensorSpec {
    pub fn fov_half_angle_deg(&self) -> f64 {
        self.fov_half_angle.unwrap_or(match self.kind {
            SensorKind::Pir => DEFAULT_PIR_FOV_HALF_ANGLE_DEG,
            SensorKind::Ultrasonic => DEFAULT_US_FOV_HALF_ANGLE_DEG,
            SensorKind::BleReceiver | SensorKind::ManualSwitch => 180.0,
        })
    }

    pub fn max_range_m(&self) -> f64 {
        self.max_range.unwrap_or(match self.kind {
            SensorKind::Ultrasonic => DEFAULT_US_MAX_RANGE_M,
            _ => f64::INFINITY,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskZone {
    pub desk_id: String,
    pub center: Point3,
    #[serde(rename = "exclusion_radius_m", default = "default_exclusion_radius")]
    pub exclusion_radius: f64,
    #[serde(default)]
    pub has_desk_lamp: bool,
}

impl DeskZone {
    /// Zones are vertical cylinders around the desk center.
    pub fn contains(&self, p: Point3) -> bool {
        self.center.horizontal_distance(p) <= self.exclusion_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub width: f64,
    pub length: f64,
    pub ceiling_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomFile {
    room: Dimensions,
    #[serde(default)]
    lamps: Vec<LampSpec>,
    #[serde(default)]
    sensors: Vec<SensorSpec>,
    #[serde(default)]
    desk_zones: Vec<DeskZone>,
    door: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RoomFile", into = "RoomFile")]
pub struct RoomModel {
    pub width: f64,
    pub length: f64,
    pub ceiling_height: f64,
    pub lamps: Vec<LampSpec>,
    pub sensors: Vec<SensorSpec>,
    pub desk_zones: Vec<DeskZone>,
    pub door_position: Point3,
}

impl From<RoomFile> for RoomModel {
    fn from(f: RoomFile) -> Self {
        RoomModel {
            width: f.room.width,
            length: f.room.length,
            ceiling_height: f.room.ceiling_height,
            lamps: f.lamps,
            sensors: f.sensors,
            desk_zones: f.desk_zones,
            door_position: f.door,
        }
    }
}

impl From<RoomModel> for RoomFile {
    fn from(m: RoomModel) -> Self {
        RoomFile {
            room: Dimensions {
                width: m.width,
                length: m.length,
                ceiling_height: m.ceiling_height,
            },
            lamps: m.lamps,
            sensors: m.sensors,
            desk_zones: m.desk_zones,
            door: m.door_position,
        }
    }
}

impl RoomModel {
    pub fn contains(&self, p: Point3) -> bool {
        let t = POSITION_TOLERANCE_M;
        p.is_finite()
            && (-t..=self.width + t).contains(&p.x)
            && (-t..=self.length + t).contains(&p.y)
            && (-t..=self.ceiling_height + t).contains(&p.z)
    }

    pub fn center(&self) -> Point3 {
        Point3::new(self.width / 2.0, self.length / 2.0, 0.0)
    }

    pub fn lamp(&self, id: &str) -> Option<&LampSpec> {
        self.lamps.iter().find(|l| l.id == id)
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.id == id)
    }

    pub fn sensors_of(&self, kind: SensorKind) -> impl Iterator<Item = &SensorSpec> {
        self.sensors.iter().filter(move |s| s.kind == kind)
    }

    pub fn desk_zone(&self, desk_id: &str) -> Option<&DeskZone> {
        self.desk_zones.iter().find(|z| z.desk_id == desk_id)
    }

    /// The lamp-equipped desk zone a desk lamp sits over (nearest by
    /// horizontal distance).
    pub fn zone_of_lamp(&self, lamp: &LampSpec) -> Option<&DeskZone> {
        self.desk_zones
            .iter()
            .filter(|z| z.has_desk_lamp && z.contains(lamp.position))
            .min_by(|a, b| {
                let da = a.center.horizontal_distance(lamp.position);
                let db = b.center.horizontal_distance(lamp.position);
                da.total_cmp(&db)
            })
    }

    /// The desk zone an ultrasonic sensor guards: the nearest zone whose
    /// center lies inside its cone in plan view.
    pub fn zone_guarded_by(&self, sensor: &SensorSpec) -> Option<&DeskZone> {
        if sensor.kind != SensorKind::Ultrasonic {
            return None;
        }
        let aim = Point3::new(sensor.aim.x, sensor.aim.y, 0.0);
        self.desk_zones
            .iter()
            .filter(|z| {
                let to = Point3::new(z.center.x - sensor.position.x, z.center.y - sensor.position.y, 0.0);
                aim.angle_deg(to) <= sensor.fov_half_angle_deg()
            })
            .min_by(|a, b| {
                let da = a.center.horizontal_distance(sensor.position);
                let db = b.center.horizontal_distance(sensor.position);
                da.total_cmp(&db)
            })
    }

    /// Serializes to the config document format (pretty JSON).
    pub fn to_config_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("room model serializes")
    }
}

/// One broken invariant, naming the offending field by its config path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum RoomError {
    #[error("room config parse error at `{path}` (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("room config is invalid: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("cannot read room config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Checks every room invariant. An empty result means the model is valid.
pub fn validate(model: &RoomModel) -> Vec<Violation> {
    let mut out = Vec::new();

    for (name, v) in [
        ("room.width", model.width),
        ("room.length", model.length),
        ("room.ceiling_height", model.ceiling_height),
    ] {
        if !(v.is_finite() && v > 0.0) {
            out.push(Violation::new(name, format!("must be a positive length, got {v}")));
        }
    }

    let check_inside = |field: String, p: Point3, out: &mut Vec<Violation>| {
        if !model.contains(p) {
            out.push(Violation::new(
                field,
                format!("({}, {}, {}) lies outside the room box", p.x, p.y, p.z),
            ));
        }
    };

    for (i, lamp) in model.lamps.iter().enumerate() {
        let f = |name: &str| format!("lamps[{i}].{name}");
        check_inside(f("position"), lamp.position, &mut out);
        if !(lamp.electrical_power.is_finite() && lamp.electrical_power > 0.0) {
            out.push(Violation::new(f("electrical_power_w"), "must be > 0"));
        }
        if !(lamp.uvc_efficiency > 0.0 && lamp.uvc_efficiency <= 1.0) {
            out.push(Violation::new(
                f("uvc_efficiency"),
                format!("must lie in (0, 1], got {}", lamp.uvc_efficiency),
            ));
        }
        let expect_down = lamp.tier != LampTier::UpperRoom;
        if lamp.emits_downward != expect_down {
            out.push(Violation::new(
                f("emits_downward"),
                format!("{:?} lamps must have emits_downward = {expect_down}", lamp.tier),
            ));
        }
        if let Some(a) = lamp.beam_half_angle {
            if !(a > 0.0 && a <= 90.0) {
                out.push(Violation::new(f("beam_half_angle_deg"), "must lie in (0, 90]"));
            }
        }
        if lamp.tier == LampTier::Desk && model.zone_of_lamp(lamp).is_none() {
            out.push(Violation::new(
                f("position"),
                "desk lamp is not inside any desk zone with has_desk_lamp = true",
            ));
        }
    }
    duplicate_ids(model.lamps.iter().map(|l| l.id.as_str()), "lamps", &mut out);

    for (i, s) in model.sensors.iter().enumerate() {
        let f = |name: &str| format!("sensors[{i}].{name}");
        check_inside(f("position"), s.position, &mut out);
        if (s.aim.norm() - 1.0).abs() > AIM_UNIT_TOLERANCE || !s.aim.is_finite() {
            out.push(Violation::new(f("aim"), "must be a unit direction vector"));
        }
        if let Some(a) = s.fov_half_angle {
            if !(a > 0.0 && a <= 180.0) {
                out.push(Violation::new(f("fov_half_angle_deg"), "must lie in (0, 180]"));
            }
        }
        if let Some(r) = s.max_range {
            if !(r > 0.0) {
                out.push(Violation::new(f("max_range_m"), "must be > 0"));
            }
        }
        if !(s.hold_time.is_finite() && s.hold_time >= 0.0) {
            out.push(Violation::new(f("hold_time_s"), "must be >= 0"));
        }
    }
    duplicate_ids(model.sensors.iter().map(|s| s.id.as_str()), "sensors", &mut out);

    let switches = model.sensors_of(SensorKind::ManualSwitch).count();
    if switches != 1 {
        out.push(Violation::new(
            "sensors",
            format!("exactly one manual_switch is required, found {switches}"),
        ));
    }
    if model.lamps.iter().any(|l| l.emits_downward) {
        for kind in [SensorKind::Pir, SensorKind::Ultrasonic] {
            if model.sensors_of(kind).next().is_none() {
                out.push(Violation::new(
                    "sensors",
                    format!("downward lamps require at least one {kind} sensor"),
                ));
            }
        }
    }

    for (i, z) in model.desk_zones.iter().enumerate() {
        check_inside(format!("desk_zones[{i}].center"), z.center, &mut out);
        if !(z.exclusion_radius.is_finite() && z.exclusion_radius > 0.0) {
            out.push(Violation::new(
                format!("desk_zones[{i}].exclusion_radius_m"),
                "must be > 0",
            ));
        }
    }
    for (i, a) in model.desk_zones.iter().enumerate() {
        for (j, b) in model.desk_zones.iter().enumerate() {
            if i < j && (a.contains(b.center) || b.contains(a.center)) {
                out.push(Violation::new(
                    format!("desk_zones[{j}].center"),
                    format!("zones `{}` and `{}` contain each other's centers", a.desk_id, b.desk_id),
                ));
            }
        }
    }
    duplicate_ids(
        model.desk_zones.iter().map(|z| z.desk_id.as_str()),
        "desk_zones",
        &mut out,
    );

    check_inside("door".to_string(), model.door_position, &mut out);
    out
}

fn duplicate_ids<'a>(ids: impl Iterator<Item = &'a str>, field: &str, out: &mut Vec<Violation>) {
    let mut seen = std::collections::BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            out.push(Violation::new(field, format!("duplicate id `{id}`")));
        }
    }
}

/// Parses a room config document and validates it.
pub fn load_room(config_text: &str) -> Result<RoomModel, RoomError> {
    let de = &mut serde_json::Deserializer::from_str(config_text);
    let model: RoomModel = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        RoomError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    let violations = validate(&model);
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(RoomError::Invalid(violations))
    }
}

pub fn load_room_file(path: &Path) -> Result<RoomModel, RoomError> {
    let text = std::fs::read_to_string(path).map_err(|source| RoomError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_room(&text)
}

/// The BEARS testbed: a 4.3 m x 5.6 m room with a 2.6 m ceiling, two
/// 36 W ceiling battens, a 24 W desk lamp over Desk 2 and a 25 W upper-room
/// fixture at 2.4 m.
///
/// Exact coordinates are not published; the ceiling lamps sit on the center
/// line at one and two thirds of the length, the desks are 4.4 m apart
/// along the length, and the door is mid-way along the wall by Desk 1.
pub fn paper_default_room() -> RoomModel {
    let (w, l, h) = (4.3, 5.6, 2.6);
    let desk_x = 3.0;
    let desk_1 = Point3::new(desk_x, 0.6, 0.7);
    let desk_2 = Point3::new(desk_x, 5.0, 0.7);
    let floor_center = Point3::new(w / 2.0, l / 2.0, 0.0);

    let lamp = |id: &str, tier, position, watts| LampSpec {
        id: id.to_string(),
        tier,
        position,
        electrical_power: watts,
        uvc_efficiency: DEFAULT_UVC_EFFICIENCY,
        emits_downward: tier != LampTier::UpperRoom,
        beam_half_angle: (tier == LampTier::Desk).then_some(DEFAULT_DESK_BEAM_HALF_ANGLE_DEG),
    };
    let sensor = |id: &str, kind, position: Point3, aim: Point3| SensorSpec {
        id: id.to_string(),
        kind,
        position,
        aim: aim.normalized().expect("nonzero aim"),
        fov_half_angle: match kind {
            SensorKind::Pir => Some(DEFAULT_PIR_FOV_HALF_ANGLE_DEG),
            SensorKind::Ultrasonic => Some(DEFAULT_US_FOV_HALF_ANGLE_DEG),
            _ => None,
        },
        max_range: (kind == SensorKind::Ultrasonic).then_some(DEFAULT_US_MAX_RANGE_M),
        hold_time: 0.0,
    };

    let pir_1 = Point3::new(0.0, l, h);
    let pir_2 = Point3::new(w, l, h);
    let us = Point3::new(desk_x, l, 1.1);

    RoomModel {
        width: w,
        length: l,
        ceiling_height: h,
        lamps: vec![
            lamp("ceiling-1", LampTier::Ceiling, Point3::new(w / 2.0, l / 3.0, h), 36.0),
            lamp(
                "ceiling-2",
                LampTier::Ceiling,
                Point3::new(w / 2.0, 2.0 * l / 3.0, h),
                36.0,
            ),
            lamp("desk-2", LampTier::Desk, Point3::new(desk_x, desk_2.y, 1.2), 24.0),
            lamp("upper-room", LampTier::UpperRoom, Point3::new(0.0, l / 2.0, 2.4), 25.0),
        ],
        sensors: vec![
            sensor("pir-1", SensorKind::Pir, pir_1, floor_center - pir_1),
            sensor("pir-2", SensorKind::Pir, pir_2, floor_center - pir_2),
            sensor("us-1", SensorKind::Ultrasonic, us, Point3::new(0.0, -1.0, 0.0)),
            sensor(
                "ble-1",
                SensorKind::BleReceiver,
                Point3::new(w / 2.0, 0.2, 2.2),
                default_aim(),
            ),
            sensor(
                "manual-1",
                SensorKind::ManualSwitch,
                Point3::new(w / 2.0 + 0.5, 0.0, 1.2),
                default_aim(),
            ),
        ],
        desk_zones: vec![
            DeskZone {
                desk_id: "desk-1".to_string(),
                center: desk_1,
                exclusion_radius: DEFAULT_EXCLUSION_RADIUS_M,
                has_desk_lamp: false,
            },
            DeskZone {
                desk_id: "desk-2".to_string(),
                center: desk_2,
                exclusion_radius: DEFAULT_EXCLUSION_RADIUS_M,
                has_desk_lamp: true,
            },
        ],
        door_position: Point3::new(w / 2.0, 0.0, 0.0),
    }
}

fn default_uvc_efficiency() -> f64 {
    DEFAULT_UVC_EFFICIENCY
}

fn default_true() -> bool {
    true
}

fn default_aim() -> Point3 {
    Point3::new(0.0, 0.0, -1.0)
}

fn default_exclusion_radius() -> f64 {
    DEFAULT_EXCLUSION_RADIUS_M
}
