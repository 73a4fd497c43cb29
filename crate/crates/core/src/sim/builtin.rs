//! The four built-in two-hour test scenarios on the default room, plus an
//! empty-room scenario for schedule checks.
//!
//! Movements are representative reconstructions. Waypoint times are chosen
//! so door crossings do not land on tick boundaries.

use chrono::{DateTime, FixedOffset};

use crate::controller::CyclePolicy;
use crate::fusion::{FusionParams, SensorPayload};
use crate::geometry::Point3;
use crate::room::paper_default_room;
use crate::sim::scenario::{ModelParams, NoiseParams, OccupantScript, PathBuilder, Scenario, ScriptedEvent};

pub const DEFAULT_START: &str = "2020-10-05T10:00:00+08:00";
pub const SCENARIO_DURATION_S: f64 = 7200.0;

pub const DESK_1_SEAT: Point3 = Point3 { x: 3.0, y: 1.2, z: 1.1 };
pub const DESK_2_SEAT: Point3 = Point3 { x: 3.0, y: 4.4, z: 1.1 };
/// Just inside and just outside the door, at chest height.
pub const DOOR_INSIDE: Point3 = Point3 {
    x: 2.15,
    y: 0.5,
    z: 1.1,
};
pub const DOOR_OUTSIDE: Point3 = Point3 {
    x: 2.15,
    y: -0.3,
    z: 1.1,
};
/// Corridor spot in front of the door and its far end.
pub const CORRIDOR_DOOR: Point3 = Point3 {
    x: 2.15,
    y: -1.2,
    z: 1.1,
};
pub const CORRIDOR_FAR: Point3 = Point3 {
    x: -12.0,
    y: -1.2,
    z: 1.1,
};

const WALK: f64 = 0.8;
const BRISK: f64 = 1.1;

fn start() -> DateTime<FixedOffset> {
    DateTime::parse_from_rfc3339(DEFAULT_START).expect("valid constant")
}

fn base(name: &str, seed: u64, occupants: Vec<OccupantScript>) -> Scenario {
    Scenario {
        name: name.to_string(),
        room: paper_default_room(),
        policy: CyclePolicy::default(),
        fusion: FusionParams::default(),
        occupants,
        start: start(),
        duration: SCENARIO_DURATION_S,
        tick: 0.1,
        rng_seed: seed,
        noise: NoiseParams {
            rssi_sigma_db: 2.0,
            pir_miss_probability: 0.0,
            false_positive_rate_per_hour: 0.0,
        },
        models: ModelParams::default(),
        scripted_events: Vec::new(),
    }
}

/// Shifts in the chair: 0.4 m back over 2 s, a short pause, and back.
fn fidget(b: PathBuilder, at: f64, seat: Point3) -> PathBuilder {
    let back = seat + Point3::new(0.0, 0.4, 0.0) * if seat.y > 2.8 { -1.0 } else { 1.0 };
    b.wait_until(at)
        .walk_to(back, 0.2, true)
        .pause(3.0)
        .walk_to(seat, 0.2, true)
}

fn leave(b: PathBuilder) -> PathBuilder {
    b.walk_to(DOOR_INSIDE, WALK, true)
        .walk_to(DOOR_OUTSIDE, WALK, false)
        .walk_to(CORRIDOR_DOOR, WALK, false)
        .walk_to(CORRIDOR_FAR, 1.2, false)
}

fn come_back(b: PathBuilder) -> PathBuilder {
    b.walk_to(CORRIDOR_DOOR, BRISK, false)
        .walk_to(DOOR_OUTSIDE, BRISK, false)
        .walk_to(DOOR_INSIDE, BRISK, true)
}

/// Seated at Desk 1 with a beacon, shifting in the chair now and then.
pub fn scenario_a() -> Scenario {
    let times = [
        150.0, 420.0, 560.0, 1000.0, 1450.0, 1530.0, 2100.0, 2700.0, 2950.0, 3500.0, 4200.0, 4500.0, 5100.0, 5800.0,
        6300.0, 6900.0,
    ];
    let path = times
        .iter()
        .fold(PathBuilder::new(0.0, DESK_1_SEAT, true), |b, &t| {
            fidget(b, t, DESK_1_SEAT)
        })
        .build("occupant-1", true);
    base("A", 1, vec![path])
}

/// Seated at Desk 2 with a beacon, facing the ultrasonic sensor.
pub fn scenario_b() -> Scenario {
    let times = [600.0, 1800.0, 3000.0, 4200.0, 5400.0, 6600.0];
    let path = times
        .iter()
        .fold(PathBuilder::new(0.0, DESK_2_SEAT, true), |b, &t| {
            fidget(b, t, DESK_2_SEAT)
        })
        .build("occupant-1", true);
    base("B", 2, vec![path])
}

/// Works at Desk 1, leaves, and approaches again with a beacon while the
/// post-departure cycle is still running.
pub fn scenario_c() -> Scenario {
    let mut b = PathBuilder::new(0.0, DESK_1_SEAT, true);
    for t in [200.0, 900.0, 2000.0, 3100.0, 4300.0, 5200.0] {
        b = fidget(b, t, DESK_1_SEAT);
    }
    b = leave(b.wait_until(5900.0));
    b = come_back(b.wait_until(6280.0)).walk_to(DESK_1_SEAT, WALK, true);
    for t in [6500.0, 6800.0, 7050.0] {
        b = fidget(b, t, DESK_1_SEAT);
    }
    base("C", 3, vec![b.build("occupant-1", true)])
}

const D_ROUTE: [Point3; 5] = [
    Point3 { x: 1.0, y: 1.5, z: 1.1 },
    Point3 { x: 3.3, y: 2.0, z: 1.1 },
    Point3 { x: 3.3, y: 4.2, z: 1.1 },
    Point3 { x: 1.0, y: 4.8, z: 1.1 },
    Point3 {
        x: 2.15,
        y: 2.8,
        z: 1.1,
    },
];

/// Walks the route with short stops until `until`, then heads to the door.
fn wander(mut b: PathBuilder, until: f64) -> PathBuilder {
    let mut i = 0;
    while b.time() < until {
        b = b.walk_to(D_ROUTE[i % D_ROUTE.len()], WALK, true).pause(5.0);
        i += 1;
    }
    b
}

/// No beacon. Moves around, leaves and re-enters several times; two
/// spurious PIR detections late in the run.
pub fn scenario_d() -> Scenario {
    let mut b = wander(PathBuilder::new(0.0, D_ROUTE[4], true), 600.0);
    for (back_at, leave_at) in [(1100.0, 2000.0), (2400.0, 3300.0), (4400.0, 5200.0)] {
        b = leave(b);
        b = wander(come_back(b.wait_until(back_at)), leave_at);
    }
    b = leave(b);
    let mut s = base("D", 4, vec![b.build("occupant-1", false)]);
    s.scripted_events = [6000.0, 6700.0]
        .iter()
        .map(|&t| ScriptedEvent {
            t,
            source: "pir-1".into(),
            payload: SensorPayload::PirMotion,
        })
        .collect();
    s
}

/// Scenarios A to D, in order.
pub fn paper_scenarios() -> Vec<Scenario> {
    vec![scenario_a(), scenario_b(), scenario_c(), scenario_d()]
}

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    match name.to_ascii_uppercase().as_str() {
        "A" => Some(scenario_a()),
        "B" => Some(scenario_b()),
        "C" => Some(scenario_c()),
        "D" => Some(scenario_d()),
        _ => None,
    }
}

/// Nobody around, no noise. Starts at `start` and runs `duration` seconds
/// with a coarser tick.
pub fn empty_room_scenario(start: DateTime<FixedOffset>, duration: f64) -> Scenario {
    let mut s = base("empty", 0, Vec::new());
    s.start = start;
    s.duration = duration;
    s.tick = 0.5;
    s.noise = NoiseParams::zero();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for s in paper_scenarios() {
            assert!(s.validate().is_empty(), "{}: {:?}", s.name, s.validate());
            let last = s.occupants[0].waypoints.last().unwrap().t;
            assert!(last < s.duration, "{} script overruns: {last}", s.name);
        }
    }

    #[test]
    fn door_crossings_avoid_tick_boundaries() {
        let s = scenario_d();
        let room = &s.room;
        let o = &s.occupants[0];
        let mut crossings = 0;
        for w in o.waypoints.windows(2) {
            if w[0].inside_room != w[1].inside_room {
                let (a, b) = (w[0], w[1]);
                let t = a.t + (b.t - a.t) * (0.0 - a.position.y) / (b.position.y - a.position.y);
                let frac = (t * 10.0).fract();
                assert!(frac > 1e-6 && frac < 1.0 - 1e-6, "crossing at {t}");
                assert!(room.contains(a.position) != room.contains(b.position));
                crossings += 1;
            }
        }
        assert_eq!(crossings, 7);
    }
}
