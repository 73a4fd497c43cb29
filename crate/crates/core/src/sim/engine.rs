//! Fixed-tick simulation loop.
//!
//! Each tick: occupant poses, sensor events, fusion, one controller step,
//! command application, then dose and probe integration with the post-step
//! lamp state.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{Controller, ControllerClock, CyclePolicy, LampAction, LampCommand};
use crate::dosimetry::{lamp_irradiance, DoseGrid, DosimetryError, LampOnIntervals};
use crate::fusion::{
    event_columns, order_events, FusionError, FusionParams, FusionState, OccupancySnapshot, SensorEvent, SensorPayload,
};
use crate::geometry::Point3;
use crate::room::{RoomModel, SensorKind};
use crate::sim::scenario::{Pose, Scenario};
use crate::sim::sensors::{ble_reading, pir_reading, ultrasonic_reading};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario is invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Dosimetry(#[from] DosimetryError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub name: String,
    pub point: Point3,
}

/// Irradiance at every probe, in probe order, with the post-step lamp state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSample {
    pub timestamp: f64,
    pub values: Vec<f64>,
}

/// Floor-grid dose accumulated over `[0, timestamp)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoseCheckpoint {
    pub timestamp: f64,
    pub min_dose: f64,
    pub mean_dose: f64,
    pub max_dose: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub tick: f64,
    pub end_time: f64,
    pub events: Vec<SensorEvent>,
    pub snapshots: Vec<OccupancySnapshot>,
    pub commands: Vec<LampCommand>,
    pub probes: Vec<Probe>,
    pub probe_samples: Vec<ProbeSample>,
    pub checkpoints: Vec<DoseCheckpoint>,
}

impl Timeline {
    /// On intervals reconstructed from the command log, closed at the end of
    /// the run.
    pub fn lamp_on_intervals(&self) -> LampOnIntervals {
        let mut open: BTreeMap<&str, f64> = BTreeMap::new();
        let mut out = LampOnIntervals::new();
        for c in &self.commands {
            match c.action {
                LampAction::TurnOn => {
                    open.entry(&c.lamp_id).or_insert(c.timestamp);
                }
                LampAction::TurnOff => {
                    if let Some(start) = open.remove(c.lamp_id.as_str()) {
                        out.push(&c.lamp_id, start, c.timestamp).expect("commands are ordered");
                    }
                }
            }
        }
        for (id, start) in open {
            out.push(id, start, self.end_time.max(start))
                .expect("commands are ordered");
        }
        out
    }

    /// Seconds of on-time per lamp.
    pub fn on_seconds(&self) -> BTreeMap<String, f64> {
        let iv = self.lamp_on_intervals();
        iv.iter().map(|(id, _)| (id.to_string(), iv.on_seconds(id))).collect()
    }

    pub fn write_events_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        crate::fusion::write_event_log(out, &self.events)
    }

    pub fn write_commands_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        crate::controller::write_command_log(out, &self.commands)
    }

    pub fn write_snapshots_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "timestamp_s",
            "room_occupied",
            "room_motion",
            "approach_detected",
            "manual_kill",
            "desk_zones_occupied",
            "contributing_sources",
        ])?;
        for s in &self.snapshots {
            w.write_record(snapshot_columns(s))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_probes_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp_s".to_string()];
        header.extend(self.probes.iter().map(|p| format!("{}_w_m2", p.name)));
        w.write_record(&header)?;
        for s in &self.probe_samples {
            let mut row = vec![s.timestamp.to_string()];
            row.extend(s.values.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_checkpoints_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp_s", "min_dose_j_m2", "mean_dose_j_m2", "max_dose_j_m2"])?;
        for c in &self.checkpoints {
            w.write_record([
                c.timestamp.to_string(),
                c.min_dose.to_string(),
                c.mean_dose.to_string(),
                c.max_dose.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Every record in one chronological stream. Within a timestamp the
    /// order is events, snapshot, commands, probes, checkpoint.
    pub fn write_merged_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut rows: Vec<(f64, u8, usize, [String; 3])> = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            let (kind, a1, a2) = event_columns(&e.payload);
            let detail = [kind.to_string(), a1, a2].join(" ").trim_end().to_string();
            rows.push((e.timestamp, 0, i, ["event".into(), e.source.clone(), detail]));
        }
        for (i, s) in self.snapshots.iter().enumerate() {
            let cols = snapshot_columns(s);
            rows.push((
                s.timestamp,
                1,
                i,
                ["snapshot".into(), String::new(), cols[1..].join(" ")],
            ));
        }
        for (i, c) in self.commands.iter().enumerate() {
            rows.push((
                c.timestamp,
                2,
                i,
                [
                    "command".into(),
                    c.lamp_id.clone(),
                    format!("{} {}", c.action, c.reason),
                ],
            ));
        }
        for (i, s) in self.probe_samples.iter().enumerate() {
            let detail = self
                .probes
                .iter()
                .zip(&s.values)
                .map(|(p, v)| format!("{}={v}", p.name))
                .collect::<Vec<_>>()
                .join(" ");
            rows.push((s.timestamp, 3, i, ["probe".into(), String::new(), detail]));
        }
        for (i, c) in self.checkpoints.iter().enumerate() {
            rows.push((
                c.timestamp,
                4,
                i,
                [
                    "checkpoint".into(),
                    String::new(),
                    format!("min={} mean={} max={}", c.min_dose, c.mean_dose, c.max_dose),
                ],
            ));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp_s", "record", "subject", "detail"])?;
        for (t, _, _, [record, subject, detail]) in rows {
            w.write_record([t.to_string(), record, subject, detail])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn snapshot_columns(s: &OccupancySnapshot) -> [String; 7] {
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    let zones = s
        .desk_zone_occupied
        .iter()
        .map(|(k, v)| format!("{k}={}", b(*v)))
        .collect::<Vec<_>>()
        .join(";");
    [
        s.timestamp.to_string(),
        b(s.room_occupied),
        b(s.room_motion),
        b(s.approach_detected),
        b(s.manual_kill),
        zones,
        s.contributing_sources.join(";"),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub timeline: Timeline,
    /// Floor dose integrated tick by tick.
    pub dose: DoseGrid,
}

/// Probe points: room centre and each lamp-equipped desk, at probe height.
pub fn default_probes(scenario: &Scenario) -> Vec<Probe> {
    let room = &scenario.room;
    let h = scenario.models.probe_height;
    let c = room.center();
    let mut out = vec![Probe {
        name: "room_center".into(),
        point: Point3::new(c.x, c.y, h),
    }];
    out.extend(room.desk_zones.iter().filter(|z| z.has_desk_lamp).map(|z| Probe {
        name: z.desk_id.clone(),
        point: Point3::new(z.center.x, z.center.y, h),
    }));
    out
}

/// Simulation time of step `k`. Exact decimal ticks avoid accumulated
/// rounding in timestamps.
pub fn step_time(k: usize, tick: f64) -> f64 {
    let per_second = (1.0 / tick).round();
    if per_second >= 1.0 && (per_second * tick - 1.0).abs() < 1e-12 {
        k as f64 / per_second
    } else {
        k as f64 * tick
    }
}

pub fn simulate(scenario: &Scenario) -> Result<SimulationOutput, SimError> {
    let problems = scenario.validate();
    if !problems.is_empty() {
        return Err(SimError::Invalid(problems));
    }
    let room = &scenario.room;
    let tick = scenario.tick;
    let models = &scenario.models;
    let noise = &scenario.noise;
    let steps = scenario.steps();
    let end_time = step_time(steps, tick);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);

    let controller = Controller::new(room, scenario.policy.clone(), scenario.clock());
    let mut state = controller.initial_state();
    let mut fusion = FusionState::new(room, scenario.fusion.clone());

    let mut grid = DoseGrid::floor(room);
    let lamp_index: BTreeMap<&str, usize> = room.lamps.iter().enumerate().map(|(i, l)| (l.id.as_str(), i)).collect();
    let cell_irradiance: Vec<Vec<f64>> = room
        .lamps
        .iter()
        .map(|l| grid.cell_centers.iter().map(|&p| lamp_irradiance(l, p)).collect())
        .collect::<Result<_, _>>()?;
    let probes = default_probes(scenario);
    let probe_irradiance: Vec<Vec<f64>> = room
        .lamps
        .iter()
        .map(|l| probes.iter().map(|p| lamp_irradiance(l, p.point)).collect())
        .collect::<Result<_, _>>()?;
    let mut lamp_on = vec![false; room.lamps.len()];

    let mut scripted = scenario.scripted_events.clone();
    scripted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut next_scripted = 0;
    let fp_probability = noise.false_positive_rate_per_hour / 3600.0 * tick;
    let mut next_advert = vec![0.0_f64; scenario.occupants.len()];

    let pose_all = |t: f64| -> Vec<Pose> { scenario.occupants.iter().map(|o| o.pose_at(t, room)).collect() };
    let mut previous = pose_all(0.0);

    let mut timeline = Timeline {
        tick,
        end_time,
        events: Vec::new(),
        snapshots: Vec::with_capacity(steps),
        commands: Vec::new(),
        probes: probes.clone(),
        probe_samples: Vec::with_capacity(steps),
        checkpoints: Vec::new(),
    };
    let mut next_checkpoint = 0.0;
    let checkpoint = |grid: &DoseGrid, t: f64| {
        let (min_dose, max_dose, mean_dose) = grid.min_max_mean_dose();
        DoseCheckpoint {
            timestamp: t,
            min_dose,
            mean_dose,
            max_dose,
        }
    };

    for k in 0..steps {
        let now = step_time(k, tick);
        if now >= next_checkpoint - 1e-9 {
            timeline.checkpoints.push(checkpoint(&grid, now));
            next_checkpoint += models.checkpoint_interval;
        }
        let current = pose_all(now);
        let mut events = Vec::new();
        for sensor in &room.sensors {
            match sensor.kind {
                SensorKind::Pir => {
                    let mut ev = pir_reading(
                        sensor,
                        &previous,
                        &current,
                        tick,
                        models.pir_speed_threshold,
                        noise.pir_miss_probability,
                        now,
                        &mut rng,
                    );
                    if fp_probability > 0.0 && rng.random::<f64>() < fp_probability && ev.is_none() {
                        ev = Some(SensorEvent::new(now, &sensor.id, SensorPayload::PirMotion));
                    }
                    events.extend(ev);
                }
                SensorKind::Ultrasonic => events.extend(ultrasonic_reading(sensor, &current, now)),
                SensorKind::BleReceiver => {}
                SensorKind::ManualSwitch => {}
            }
        }
        for (i, occupant) in scenario.occupants.iter().enumerate() {
            if !occupant.carries_beacon || now < next_advert[i] - 1e-9 {
                continue;
            }
            next_advert[i] += models.ble_advert_period;
            for rx in room.sensors_of(SensorKind::BleReceiver) {
                events.push(ble_reading(
                    rx,
                    &occupant.occupant_id,
                    &current[i],
                    &scenario.fusion,
                    noise.rssi_sigma_db,
                    now,
                    &mut rng,
                ));
            }
        }
        while next_scripted < scripted.len() && scripted[next_scripted].t <= now + 1e-9 {
            let s = &scripted[next_scripted];
            events.push(SensorEvent::new(now, &s.source, s.payload.clone()));
            next_scripted += 1;
        }
        order_events(&mut events);
        for e in &events {
            fusion.ingest(e)?;
        }
        let snapshot = fusion.snapshot(now);
        let (next, commands) = controller.step(&state, &snapshot, now);
        state = next;
        for c in &commands {
            if let Some(&i) = lamp_index.get(c.lamp_id.as_str()) {
                lamp_on[i] = c.action == LampAction::TurnOn;
            }
        }

        let mut values = vec![0.0; probes.len()];
        for (i, on) in lamp_on.iter().enumerate() {
            if !on {
                continue;
            }
            for (v, e) in values.iter_mut().zip(&probe_irradiance[i]) {
                *v += e;
            }
            for (d, e) in grid.accumulated_dose.iter_mut().zip(&cell_irradiance[i]) {
                *d += e * tick;
            }
        }
        timeline.probe_samples.push(ProbeSample { timestamp: now, values });
        timeline.events.extend(events);
        timeline.snapshots.push(snapshot);
        timeline.commands.extend(commands);
        previous = current;
    }
    timeline.checkpoints.push(checkpoint(&grid, end_time));
    Ok(SimulationOutput { timeline, dose: grid })
}

/// Snapshots and commands from replaying a recorded event log.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub snapshots: Vec<OccupancySnapshot>,
    pub commands: Vec<LampCommand>,
}

/// Feeds a recorded event log through fusion and the controller on a fixed
/// tick from time zero until `until` seconds. Events are put in ingest order
/// first; each tick ingests every event stamped at or before it.
pub fn replay_events(
    room: &RoomModel,
    policy: &CyclePolicy,
    fusion_params: &FusionParams,
    clock: ControllerClock,
    events: &[SensorEvent],
    tick: f64,
    until: f64,
) -> Result<Replay, SimError> {
    if !(tick > 0.0 && tick <= 1.0) || !until.is_finite() || until < 0.0 {
        return Err(SimError::Invalid(vec![
            "tick must lie in (0, 1] and until must be >= 0".into(),
        ]));
    }
    let mut events = events.to_vec();
    order_events(&mut events);
    let controller = Controller::new(room, policy.clone(), clock);
    let mut state = controller.initial_state();
    let mut fusion = FusionState::new(room, fusion_params.clone());
    let mut next = 0;
    let mut out = Replay {
        snapshots: Vec::new(),
        commands: Vec::new(),
    };
    let steps = (until / tick).ceil() as usize;
    for k in 0..=steps {
        let now = step_time(k, tick);
        while next < events.len() && events[next].timestamp <= now + 1e-9 {
            fusion.ingest(&events[next])?;
            next += 1;
        }
        let snapshot = fusion.snapshot(now);
        let (s, commands) = controller.step(&state, &snapshot, now);
        state = s;
        out.snapshots.push(snapshot);
        out.commands.extend(commands);
    }
    Ok(out)
}
