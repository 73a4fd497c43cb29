//! Lamp interlock and cycle scheduler.
//!
//! [`Controller::step`] is a pure transition from the previous
//! [`ControllerState`], the latest occupancy snapshot and the clock to a new
//! state plus the lamp commands to actuate. The rules, in priority order:
//!
//! 1. A latched manual kill turns everything off and disarms.
//! 2. Room occupancy or an approaching beacon cuts the ceiling lamps; room
//!    motion or occupancy of a desk zone cuts that zone's desk lamp.
//! 3. After the room has been vacant for the grace period, one ceiling and
//!    desk cycle runs per vacancy episode.
//! 4. A desk lamp may also run one cycle while the rest of the room is in
//!    use, once its zone has been quiet long enough.
//! 5. At local midnight a vacant, armed room gets one full cycle and the
//!    controller then disarms until occupancy is detected again.
//! 6. Upper-room fixtures run on an hourly schedule while armed.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::OccupancySnapshot;
use crate::room::{LampTier, RoomModel};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CyclePolicy {
    pub ceiling_cycle: f64,
    pub desk_cycle: f64,
    pub upper_room_cycle: f64,
    pub upper_room_period: f64,
    pub vacancy_grace: f64,
    pub desk_quiet_gap: f64,
    pub reaction_deadline: f64,
    /// Ignores every occupancy input except the manual switch. Exists only
    /// so tests can prove the safety audit catches an unsafe controller.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub bypass_interlock: bool,
}

impl Default for CyclePolicy {
    fn default() -> Self {
        CyclePolicy {
            ceiling_cycle: 600.0,
            desk_cycle: 300.0,
            upper_room_cycle: 300.0,
            upper_room_period: 3600.0,
            vacancy_grace: 60.0,
            desk_quiet_gap: 60.0,
            reaction_deadline: 1.0,
            bypass_interlock: false,
        }
    }
}

impl CyclePolicy {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("ceiling_cycle", self.ceiling_cycle),
            ("desk_cycle", self.desk_cycle),
            ("upper_room_cycle", self.upper_room_cycle),
            ("upper_room_period", self.upper_room_period),
            ("vacancy_grace", self.vacancy_grace),
            ("desk_quiet_gap", self.desk_quiet_gap),
            ("reaction_deadline", self.reaction_deadline),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("policy.{name} must be > 0, got {v}"));
            }
        }
        if self.reaction_deadline > 1.0 {
            out.push("policy.reaction_deadline must be <= 1 s".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LampAction {
    TurnOn,
    TurnOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandReason {
    CycleStart,
    CycleComplete,
    OccupancyInterrupt,
    ApproachInterrupt,
    ManualKill,
    MidnightCycle,
    HourlySchedule,
}

impl fmt::Display for LampAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LampAction::TurnOn => "turn_on",
            LampAction::TurnOff => "turn_off",
        })
    }
}

impl fmt::Display for CommandReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandReason::CycleStart => "cycle_start",
            CommandReason::CycleComplete => "cycle_complete",
            CommandReason::OccupancyInterrupt => "occupancy_interrupt",
            CommandReason::ApproachInterrupt => "approach_interrupt",
            CommandReason::ManualKill => "manual_kill",
            CommandReason::MidnightCycle => "midnight_cycle",
            CommandReason::HourlySchedule => "hourly_schedule",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LampCommand {
    pub timestamp: f64,
    pub lamp_id: String,
    pub action: LampAction,
    pub reason: CommandReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LampRun {
    Off,
    Running { started_at: f64, ends_at: f64 },
}

impl LampRun {
    pub fn is_on(&self) -> bool {
        matches!(self, LampRun::Running { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerState {
    pub armed: bool,
    pub lamps: BTreeMap<String, LampRun>,
    /// Start of the current vacancy episode, if the room is vacant.
    pub last_room_vacated_at: Option<f64>,
    pub post_departure_cycle_done: bool,
    /// Local date whose midnight has been handled (the boot date initially).
    pub midnight_cycle_done_for_date: Option<NaiveDate>,
    pub manual_killed: bool,
    pub midnight_cycle_active: bool,
    /// Per desk zone: when the zone last became quiet (no motion, no
    /// presence).
    pub desk_quiet_since: BTreeMap<String, Option<f64>>,
    /// Per desk zone: the lamp already ran in the current quiet episode.
    pub desk_cycle_done: BTreeMap<String, bool>,
    pub upper_room_period: Option<i64>,
    pub last_step: Option<f64>,
}

impl ControllerState {
    pub fn is_on(&self, lamp_id: &str) -> bool {
        self.lamps.get(lamp_id).is_some_and(LampRun::is_on)
    }

    pub fn lamps_on(&self) -> impl Iterator<Item = &str> {
        self.lamps.iter().filter(|(_, r)| r.is_on()).map(|(id, _)| id.as_str())
    }
}

/// Wall-clock anchoring of the controller's time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControllerClock {
    /// Unix seconds at controller time zero.
    pub epoch_s: i64,
    /// Local time zone offset east of UTC, seconds.
    pub tz_offset_s: i32,
}

impl ControllerClock {
    fn local_seconds(&self, now: f64) -> f64 {
        self.epoch_s as f64 + self.tz_offset_s as f64 + now
    }

    pub fn local_date(&self, now: f64) -> NaiveDate {
        let offset = FixedOffset::east_opt(self.tz_offset_s).unwrap_or(FixedOffset::east_opt(0).unwrap());
        let secs = (self.epoch_s as f64 + now).floor() as i64;
        DateTime::from_timestamp(secs, 0)
            .unwrap_or_default()
            .with_timezone(&offset)
            .date_naive()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LampRole {
    id: String,
    tier: LampTier,
    zone: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("snapshot at {timestamp} precedes the previous one at {previous}")]
    OutOfOrder { timestamp: f64, previous: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    lamps: Vec<LampRole>,
    policy: CyclePolicy,
    clock: ControllerClock,
}

impl Controller {
    pub fn new(room: &RoomModel, policy: CyclePolicy, clock: ControllerClock) -> Self {
        let lamps = room
            .lamps
            .iter()
            .map(|l| LampRole {
                id: l.id.clone(),
                tier: l.tier,
                zone: match l.tier {
                    LampTier::Desk => room.zone_of_lamp(l).map(|z| z.desk_id.clone()),
                    _ => None,
                },
            })
            .collect();
        Controller { lamps, policy, clock }
    }

    pub fn policy(&self) -> &CyclePolicy {
        &self.policy
    }

    pub fn clock(&self) -> ControllerClock {
        self.clock
    }

    /// Power-on state: armed, every lamp off, no vacancy episode yet.
    pub fn initial_state(&self) -> ControllerState {
        let zones = || self.lamps.iter().filter_map(|l| l.zone.clone());
        ControllerState {
            armed: true,
            lamps: self.lamps.iter().map(|l| (l.id.clone(), LampRun::Off)).collect(),
            last_room_vacated_at: None,
            post_departure_cycle_done: false,
            midnight_cycle_done_for_date: None,
            manual_killed: false,
            midnight_cycle_active: false,
            desk_quiet_since: zones().map(|z| (z, None)).collect(),
            desk_cycle_done: zones().map(|z| (z, false)).collect(),
            upper_room_period: None,
            last_step: None,
        }
    }

    /// One transition. See the module docs for the rule order.
    pub fn step(
        &self,
        prev: &ControllerState,
        snapshot: &OccupancySnapshot,
        now: f64,
    ) -> (ControllerState, Vec<LampCommand>) {
        let mut s = prev.clone();
        let mut out = Commands { now, list: Vec::new() };
        let p = &self.policy;

        let time_ok = now.is_finite()
            && snapshot.timestamp.is_finite()
            && snapshot.timestamp <= now + TIME_EPS
            && prev.last_step.is_none_or(|last| now >= last);
        if !time_ok {
            // Unusable clock: fail to the safe side and keep everything else.
            for lamp in &self.lamps {
                out.off(&mut s, &lamp.id, CommandReason::OccupancyInterrupt);
            }
            return (s, out.list);
        }
        s.last_step = Some(now);
        let today = self.clock.local_date(now);
        let boot_date = *s.midnight_cycle_done_for_date.get_or_insert(today);

        for lamp in &self.lamps {
            if let Some(LampRun::Running { ends_at, .. }) = s.lamps.get(&lamp.id) {
                if *ends_at <= now + TIME_EPS {
                    out.off(&mut s, &lamp.id, CommandReason::CycleComplete);
                }
            }
        }

        if snapshot.manual_kill {
            for lamp in &self.lamps {
                out.off(&mut s, &lamp.id, CommandReason::ManualKill);
            }
            s.manual_killed = true;
            s.armed = false;
            s.midnight_cycle_active = false;
            return (s, out.list);
        }
        if s.manual_killed {
            // Re-armed by the switch: no cycle until the room has been
            // occupied and vacated again.
            s.manual_killed = false;
            s.armed = true;
            s.post_departure_cycle_done = true;
            s.last_room_vacated_at = None;
            for z in s.desk_quiet_since.values_mut() {
                *z = Some(now);
            }
        }

        let bypass = p.bypass_interlock;
        let occupied = snapshot.room_occupied && !bypass;
        let approach = snapshot.approach_detected && !bypass;
        let detection = occupied || approach;
        let desk_disturbed = |zone: &str| !bypass && (snapshot.room_motion || snapshot.zone_occupied(zone));

        if detection {
            let reason = if occupied {
                CommandReason::OccupancyInterrupt
            } else {
                CommandReason::ApproachInterrupt
            };
            for lamp in self.lamps.iter().filter(|l| l.tier == LampTier::Ceiling) {
                out.off(&mut s, &lamp.id, reason);
            }
            s.armed = true;
            s.post_departure_cycle_done = false;
            s.last_room_vacated_at = None;
            s.midnight_cycle_active = false;
        } else if s.last_room_vacated_at.is_none() && !s.post_departure_cycle_done {
            s.last_room_vacated_at = Some(now);
        }

        for lamp in &self.lamps {
            let Some(zone) = &lamp.zone else { continue };
            if desk_disturbed(zone) {
                out.off(&mut s, &lamp.id, CommandReason::OccupancyInterrupt);
                s.desk_quiet_since.insert(zone.clone(), None);
                s.desk_cycle_done.insert(zone.clone(), false);
            } else {
                s.desk_quiet_since
                    .entry(zone.clone())
                    .or_insert(None)
                    .get_or_insert(now);
            }
        }

        let vacant = !detection;

        // Post-departure cycle.
        if vacant && s.armed && !s.post_departure_cycle_done {
            if let Some(vacated) = s.last_room_vacated_at {
                if now - vacated >= p.vacancy_grace - TIME_EPS {
                    for lamp in &self.lamps {
                        match (&lamp.tier, &lamp.zone) {
                            (LampTier::Ceiling, _) => {
                                out.on(&mut s, &lamp.id, p.ceiling_cycle, CommandReason::CycleStart)
                            }
                            (LampTier::Desk, Some(zone)) if !desk_disturbed(zone) && !s.desk_cycle_done[zone] => {
                                out.on(&mut s, &lamp.id, p.desk_cycle, CommandReason::CycleStart);
                                s.desk_cycle_done.insert(zone.clone(), true);
                            }
                            _ => {}
                        }
                    }
                    s.post_departure_cycle_done = true;
                }
            }
        }

        // Desk lamp while the rest of the room is in use.
        if s.armed && !vacant {
            for lamp in &self.lamps {
                let Some(zone) = &lamp.zone else { continue };
                let quiet_long_enough =
                    s.desk_quiet_since[zone].is_some_and(|q| now - q >= p.desk_quiet_gap - TIME_EPS);
                if quiet_long_enough && !desk_disturbed(zone) && !s.desk_cycle_done[zone] {
                    out.on(&mut s, &lamp.id, p.desk_cycle, CommandReason::CycleStart);
                    s.desk_cycle_done.insert(zone.clone(), true);
                }
            }
        }

        // Midnight cycle, once per local date.
        if today > boot_date {
            s.midnight_cycle_done_for_date = Some(today);
            if s.armed && vacant {
                for lamp in &self.lamps {
                    let duration = match (&lamp.tier, &lamp.zone) {
                        (LampTier::Ceiling, _) => p.ceiling_cycle,
                        (LampTier::Desk, Some(zone)) if !desk_disturbed(zone) => {
                            s.desk_cycle_done.insert(zone.clone(), true);
                            p.desk_cycle
                        }
                        (LampTier::Desk, _) => continue,
                        (LampTier::UpperRoom, _) => p.upper_room_cycle,
                    };
                    out.on(&mut s, &lamp.id, duration, CommandReason::MidnightCycle);
                }
                s.midnight_cycle_active = true;
                s.post_departure_cycle_done = true;
            }
        }
        if s.midnight_cycle_active && s.lamps.values().all(|r| !r.is_on()) {
            s.midnight_cycle_active = false;
            s.armed = false;
        }

        // Hourly upper-room schedule.
        if s.armed {
            let local = self.clock.local_seconds(now);
            let period = (local / p.upper_room_period).floor() as i64;
            if s.upper_room_period != Some(period) {
                s.upper_room_period = Some(period);
                let ends_at = now - (local - period as f64 * p.upper_room_period) + p.upper_room_cycle;
                if now < ends_at - TIME_EPS {
                    for lamp in self.lamps.iter().filter(|l| l.tier == LampTier::UpperRoom) {
                        out.on_until(&mut s, &lamp.id, ends_at, CommandReason::HourlySchedule);
                    }
                }
            }
        }

        (s, out.list)
    }

    /// Steps through `snapshots` in order, stepping at each snapshot's own
    /// timestamp.
    pub fn replay<'a>(
        &self,
        initial: ControllerState,
        snapshots: impl IntoIterator<Item = &'a OccupancySnapshot>,
    ) -> Result<(ControllerState, Vec<LampCommand>), ControllerError> {
        let mut state = initial;
        let mut log = Vec::new();
        let mut previous = f64::NEG_INFINITY;
        for snap in snapshots {
            if snap.timestamp < previous {
                return Err(ControllerError::OutOfOrder {
                    timestamp: snap.timestamp,
                    previous,
                });
            }
            previous = snap.timestamp;
            let (next, cmds) = self.step(&state, snap, snap.timestamp);
            state = next;
            log.extend(cmds);
        }
        Ok((state, log))
    }
}

struct Commands {
    now: f64,
    list: Vec<LampCommand>,
}

impl Commands {
    fn off(&mut self, s: &mut ControllerState, lamp_id: &str, reason: CommandReason) {
        if let Some(run) = s.lamps.get_mut(lamp_id) {
            if run.is_on() {
                *run = LampRun::Off;
                self.push(lamp_id, LampAction::TurnOff, reason);
            }
        }
    }

    fn on(&mut self, s: &mut ControllerState, lamp_id: &str, duration: f64, reason: CommandReason) {
        self.on_until(s, lamp_id, self.now + duration, reason);
    }

    fn on_until(&mut self, s: &mut ControllerState, lamp_id: &str, ends_at: f64, reason: CommandReason) {
        if let Some(run) = s.lamps.get_mut(lamp_id) {
            if !run.is_on() {
                *run = LampRun::Running {
                    started_at: self.now,
                    ends_at,
                };
                self.push(lamp_id, LampAction::TurnOn, reason);
            }
        }
    }

    fn push(&mut self, lamp_id: &str, action: LampAction, reason: CommandReason) {
        self.list.push(LampCommand {
            timestamp: self.now,
            lamp_id: lamp_id.to_string(),
            action,
            reason,
        });
    }
}

/// Writes the command log CSV (`timestamp_s,lamp_id,action,reason`).
pub fn write_command_log<W: Write>(out: W, commands: &[LampCommand]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp_s", "lamp_id", "action", "reason"])?;
    for c in commands {
        w.write_record([
            c.timestamp.to_string(),
            c.lamp_id.clone(),
            c.action.to_string(),
            c.reason.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
