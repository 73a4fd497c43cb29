//! Continuous-time safety audit of a finished run.
//!
//! An occupant is exposed to a lamp while the lamp is on and the occupant is
//! in its hazard region: anywhere inside the room for ceiling lamps, the desk
//! zone or the lit beam for desk lamps. Upper-room lamps have no hazard
//! region. Region boundaries between ticks are located by bisection on the
//! scripted path, so exposures are measured from the true crossing time
//! rather than the next tick.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dosimetry::lamp_irradiance;
use crate::geometry::Point3;
use crate::room::{LampSpec, LampTier, RoomModel};
use crate::sim::engine::{step_time, Timeline};
use crate::sim::scenario::{OccupantScript, Scenario};

const BISECTION_STEPS: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyViolation {
    /// Start of the exposure.
    pub timestamp: f64,
    pub occupant_id: String,
    pub lamp_id: String,
    /// Seconds the occupant spent exposed before the lamp went off or the
    /// occupant left.
    pub exposure_seconds: f64,
    /// Irradiance from this lamp at the occupant's exposure point at the
    /// start of the exposure, W/m².
    pub received_irradiance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyReport {
    pub reaction_deadline: f64,
    pub violations: Vec<SafetyViolation>,
    /// Longest exposure of any occupant to any lamp, seconds; zero if none.
    pub max_exposure_seconds: f64,
    /// Number of exposure episodes, including ones within the deadline.
    pub exposure_count: usize,
    /// Dose received at exposure height while inside, J/m².
    pub occupant_dose: BTreeMap<String, f64>,
}

impl SafetyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits `timeline` against the scenario's paths with the policy's reaction
/// deadline.
pub fn safety_check(timeline: &Timeline, scenario: &Scenario) -> SafetyReport {
    safety_check_with_deadline(timeline, scenario, scenario.policy.reaction_deadline)
}

pub fn safety_check_with_deadline(timeline: &Timeline, scenario: &Scenario, deadline: f64) -> SafetyReport {
    let room = &scenario.room;
    let height = scenario.models.exposure_height;
    let intervals = timeline.lamp_on_intervals();
    let mut violations = Vec::new();
    let mut max_exposure: f64 = 0.0;
    let mut exposure_count = 0;

    for occupant in &scenario.occupants {
        for lamp in &room.lamps {
            let on = intervals.get(&lamp.id);
            if on.is_empty() || lamp.tier == LampTier::UpperRoom {
                continue;
            }
            let in_hazard = |t: f64| hazard(room, lamp, occupant, t, height);
            for (a, b) in region_intervals(&in_hazard, timeline) {
                for &(s, e) in on {
                    let start = a.max(s);
                    let end = b.min(e);
                    if end <= start {
                        continue;
                    }
                    let exposure = end - start;
                    exposure_count += 1;
                    max_exposure = max_exposure.max(exposure);
                    if exposure > deadline {
                        let p = occupant.pose_at(start, room).position;
                        violations.push(SafetyViolation {
                            timestamp: start,
                            occupant_id: occupant.occupant_id.clone(),
                            lamp_id: lamp.id.clone(),
                            exposure_seconds: exposure,
                            received_irradiance: lamp_irradiance(lamp, at_height(p, height)).unwrap_or(f64::INFINITY),
                        });
                    }
                }
            }
        }
    }
    violations.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    SafetyReport {
        reaction_deadline: deadline,
        violations,
        max_exposure_seconds: max_exposure,
        exposure_count,
        occupant_dose: occupant_doses(timeline, scenario),
    }
}

fn at_height(p: Point3, h: f64) -> Point3 {
    Point3::new(p.x, p.y, h)
}

fn hazard(room: &RoomModel, lamp: &LampSpec, occupant: &OccupantScript, t: f64, height: f64) -> bool {
    let pose = occupant.pose_at(t, room);
    if !pose.inside {
        return false;
    }
    match lamp.tier {
        LampTier::Ceiling => true,
        LampTier::Desk => {
            room.zone_of_lamp(lamp).is_some_and(|z| z.contains(pose.position))
                || lamp_irradiance(lamp, at_height(pose.position, height)).is_ok_and(|e| e > 0.0)
        }
        LampTier::UpperRoom => false,
    }
}

/// Half-open intervals where `pred` holds, sampled at every tick and refined
/// by bisection at each change. Visits shorter than a tick that start and
/// end between two samples are not seen.
fn region_intervals(pred: &impl Fn(f64) -> bool, timeline: &Timeline) -> Vec<(f64, f64)> {
    let steps = (timeline.end_time / timeline.tick).round() as usize;
    let mut out = Vec::new();
    let mut prev_t = 0.0;
    let mut prev = pred(0.0);
    let mut entered = prev.then_some(0.0);
    for k in 1..=steps {
        let t = step_time(k, timeline.tick);
        let cur = pred(t);
        if cur != prev {
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                if pred(mid) == prev {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if cur {
                entered = Some(hi);
            } else if let Some(a) = entered.take() {
                out.push((a, hi));
            }
        }
        prev = cur;
        prev_t = t;
    }
    if let Some(a) = entered {
        out.push((a, timeline.end_time));
    }
    out
}

/// Tick-sampled dose at exposure height with the post-step lamp state,
/// counted only while the occupant is inside.
fn occupant_doses(timeline: &Timeline, scenario: &Scenario) -> BTreeMap<String, f64> {
    let room = &scenario.room;
    let height = scenario.models.exposure_height;
    let intervals = timeline.lamp_on_intervals();
    let mut out: BTreeMap<String, f64> = scenario
        .occupants
        .iter()
        .map(|o| (o.occupant_id.clone(), 0.0))
        .collect();
    for lamp in &room.lamps {
        for &(s, e) in intervals.get(&lamp.id) {
            let first = (s / timeline.tick - 1e-9).ceil().max(0.0) as usize;
            let mut k = first;
            loop {
                let t = step_time(k, timeline.tick);
                if t >= e - 1e-9 || t >= timeline.end_time - 1e-9 {
                    break;
                }
                for o in &scenario.occupants {
                    let pose = o.pose_at(t, room);
                    if pose.inside {
                        let irr = lamp_irradiance(lamp, at_height(pose.position, height)).unwrap_or(0.0);
                        *out.get_mut(&o.occupant_id).expect("occupant listed") += irr * timeline.tick;
                    }
                }
                k += 1;
            }
        }
    }
    out
}
