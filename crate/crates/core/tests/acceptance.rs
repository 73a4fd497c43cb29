//! Acceptance criteria 1 to 9. Each test prints one line
//! `ACCEPTANCE C<n> PASS|FAIL <name>: <detail>` and then asserts.
//!
//! Tolerances:
//! - C1 oracle agreement 1e-9 s; runtime < 1 s.
//! - C2 1e-12 absolute.
//! - C3, C4, C5 runtime < 5 s each (simulation plus audit).
//! - C6 runtime < 120 s.
//! - C8 quadrature 1e-6 relative; inverse-square ratio 1e-12.
//! - C9 budgets 1e-9 s.
//!
//! Timed sections hold a global lock so parallel test threads do not
//! inflate each other's wall clock.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use uvguard_core::sim::builtin::{
    empty_room_scenario, scenario_b, scenario_c, scenario_d, CORRIDOR_DOOR, DOOR_INSIDE, DOOR_OUTSIDE,
};
use uvguard_core::sim::{random_walk_scenario, PathBuilder, Scenario, WalkParams};
use uvguard_core::{
    accumulate_dose, coverage_report, inactivation_fraction, lamp_irradiance, paper_default_room, safety_check,
    simulate, CommandReason, DoseGrid, LampAction, LampOnIntervals, LampSpec, LampTier, Point3, RoomModel, Timeline,
};

static CLOCK: Mutex<()> = Mutex::new(());

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let _guard = CLOCK.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed())
}

/// Writes to the process stdout directly so the line survives libtest's
/// output capture.
fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stdout().lock(), "ACCEPTANCE C{id} {verdict} {name}: {detail}");
    assert!(pass, "criterion {id} failed: {detail}");
}

/// Point source with cosine incidence and optional nadir cutoff, written
/// out independently of the library.
fn oracle_irradiance(lamp: &LampSpec, p: Point3) -> f64 {
    if !lamp.emits_downward {
        return 0.0;
    }
    let (dx, dy, dz) = (lamp.position.x - p.x, lamp.position.y - p.y, lamp.position.z - p.z);
    let r2 = dx * dx + dy * dy + dz * dz;
    let cos = dz / r2.sqrt();
    if cos <= 0.0 {
        return 0.0;
    }
    if let Some(cut) = lamp.beam_half_angle {
        if cos < cut.to_radians().cos() {
            return 0.0;
        }
    }
    lamp.electrical_power * lamp.uvc_efficiency / (4.0 * std::f64::consts::PI * r2) * cos
}

// Worst floor cell (row 0, col 5) time-to-D90 with every downward lamp of
// the default room on, from a 30-digit evaluation of the point-source model.
const ORACLE_MAX_TIME_S: f64 = 329.324237753782;
const ORACLE_MIN_EFFICIENCY: f64 = 0.36225666152916;

fn with_efficiency(room: &RoomModel, eff: f64) -> RoomModel {
    let mut r = room.clone();
    for l in &mut r.lamps {
        l.uvc_efficiency = eff;
    }
    r
}

fn downward_lamps(room: &RoomModel) -> Vec<LampSpec> {
    room.lamps.iter().filter(|l| l.emits_downward).cloned().collect()
}

#[test]
fn c1_dose_map_bound() {
    let room = paper_default_room();
    let ((default_max, eff_min, scaled_max, below_max), elapsed) = timed(|| {
        let grid = DoseGrid::floor(&room);
        let rep = coverage_report(&grid, 300.0, &downward_lamps(&room)).unwrap();
        let default_max = rep.max_time.unwrap();
        // Time to target scales as 1 / efficiency.
        let eff_min = 0.33 * default_max / 300.0;
        let at = |eff: f64| {
            let r = with_efficiency(&room, eff);
            coverage_report(&DoseGrid::floor(&r), 300.0, &downward_lamps(&r))
                .unwrap()
                .max_time
                .unwrap()
        };
        (default_max, eff_min, at(eff_min), at(eff_min * (1.0 - 1e-6)))
    });
    let oracle_ok = (default_max - ORACLE_MAX_TIME_S).abs() < 1e-9 && (eff_min - ORACLE_MIN_EFFICIENCY).abs() < 1e-12;
    let envelope_ok = scaled_max <= 300.0 + 1e-9 && below_max > 300.0;
    let pass = oracle_ok && envelope_ok && elapsed < Duration::from_secs(1);
    let default_note = if default_max <= 300.0 {
        "default efficiency 0.33 meets the 300 s envelope".to_string()
    } else {
        format!("default efficiency 0.33 misses the 300 s envelope (max {default_max:.3} s)")
    };
    report(
        1,
        "dose-map bound",
        pass,
        format!(
            "{default_note}; minimal efficiency {eff_min:.6} gives max {scaled_max:.6} s; oracle max {ORACLE_MAX_TIME_S} s; {elapsed:?}"
        ),
    );
}

#[test]
fn c2_d99_identity() {
    let d99 = inactivation_fraction(54.0, 27.0);
    let d90 = inactivation_fraction(27.0, 27.0);
    let pass = (d99 - 0.99).abs() < 1e-12 && (d90 - 0.90).abs() < 1e-12;
    report(
        2,
        "D99 identity",
        pass,
        format!("f(54,27) = {d99:.15}, f(27,27) = {d90:.15}"),
    );
}

fn ceiling_ids(room: &RoomModel) -> Vec<String> {
    room.lamps
        .iter()
        .filter(|l| l.tier == LampTier::Ceiling)
        .map(|l| l.id.clone())
        .collect()
}

fn desk_ids(room: &RoomModel) -> Vec<String> {
    room.lamps
        .iter()
        .filter(|l| l.tier == LampTier::Desk)
        .map(|l| l.id.clone())
        .collect()
}

#[test]
fn c3_seated_at_desk_two_stays_dark() {
    let s = scenario_b();
    let ((out, rep), elapsed) = timed(|| {
        let out = simulate(&s).unwrap();
        let rep = safety_check(&out.timeline, &s);
        (out, rep)
    });
    let iv = out.timeline.lamp_on_intervals();
    let guarded_on: f64 = ceiling_ids(&s.room)
        .iter()
        .chain(&desk_ids(&s.room))
        .fold(0.0, |acc, id| acc + iv.on_seconds(id));
    let nonzero_probe = out
        .timeline
        .probe_samples
        .iter()
        .filter(|p| p.values.iter().any(|&v| v != 0.0))
        .count();
    let samples = out.timeline.probe_samples.len();
    let pass = guarded_on == 0.0
        && nonzero_probe == 0
        && samples == 72_000
        && out.timeline.probes.len() == 2
        && rep.passed()
        && elapsed < Duration::from_secs(5);
    report(
        3,
        "seated at Desk 2",
        pass,
        format!(
            "ceiling+desk on-time {guarded_on} s, {nonzero_probe} of {samples} probe samples nonzero, {} violations; {elapsed:?}",
            rep.violations.len()
        ),
    );
}

/// First instant after `from` at which the occupant is inside, by scan and
/// bisection on the scripted path.
fn entry_after(s: &Scenario, occupant: usize, from: f64, to: f64) -> Option<f64> {
    let o = &s.occupants[occupant];
    let inside = |t: f64| o.pose_at(t, &s.room).inside;
    let step = 0.01;
    let mut t = from;
    if inside(t) {
        return None;
    }
    while t < to {
        let next = t + step;
        if inside(next) {
            let (mut lo, mut hi) = (t, next);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        t = next;
    }
    None
}

fn vacancy_start_before(tl: &Timeline, t: f64) -> Option<f64> {
    let idx = tl.snapshots.iter().rposition(|s| s.timestamp <= t)?;
    let mut start = None;
    for s in tl.snapshots[..=idx].iter().rev() {
        if !s.is_vacant() {
            break;
        }
        start = Some(s.timestamp);
    }
    start
}

#[test]
fn c4_departure_cycle_aborts_before_entry() {
    let s = scenario_c();
    let ((out, rep), elapsed) = timed(|| {
        let out = simulate(&s).unwrap();
        let rep = safety_check(&out.timeline, &s);
        (out, rep)
    });
    let tl = &out.timeline;
    let ceilings = ceiling_ids(&s.room);
    let starts: Vec<f64> = tl
        .commands
        .iter()
        .filter(|c| c.lamp_id == ceilings[0] && c.action == LampAction::TurnOn)
        .map(|c| c.timestamp)
        .collect();
    let mut detail = format!("{} ceiling cycle start(s)", starts.len());
    let mut pass = starts.len() == 1 && rep.passed() && elapsed < Duration::from_secs(5);
    if let Some(&start) = starts.first() {
        let vacated = vacancy_start_before(tl, start).unwrap_or(f64::INFINITY);
        let grace_ok = start - vacated >= s.policy.vacancy_grace - 1e-9;
        let entry = entry_after(&s, 0, start, s.duration).unwrap_or(f64::INFINITY);
        let offs: Vec<f64> = ceilings
            .iter()
            .filter_map(|id| {
                tl.commands
                    .iter()
                    .find(|c| &c.lamp_id == id && c.action == LampAction::TurnOff && c.timestamp > start)
                    .map(|c| c.timestamp)
            })
            .collect();
        let last_off = offs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let reasons_ok = tl.commands.iter().any(|c| {
            c.action == LampAction::TurnOff
                && c.reason == CommandReason::ApproachInterrupt
                && ceilings.contains(&c.lamp_id)
        });
        pass &= grace_ok && offs.len() == ceilings.len() && last_off < entry && reasons_ok;
        detail = format!(
            "{detail} at {start:.1} s ({:.1} s after vacancy); all ceiling lamps off at {last_off:.1} s, door crossed at {entry:.3} s (lead {:.3} s)",
            start - vacated,
            entry - last_off
        );
    }
    report(
        4,
        "departure cycle and approach abort",
        pass,
        format!("{detail}; {elapsed:?}"),
    );
}

/// (entry, exit) intervals for one occupant at 10 ms resolution refined by
/// bisection.
fn presence(s: &Scenario, occupant: usize) -> Vec<(f64, f64)> {
    let o = &s.occupants[occupant];
    let inside = |t: f64| o.pose_at(t, &s.room).inside;
    let mut out = Vec::new();
    let step = 0.01;
    let mut prev = inside(0.0);
    let mut entered = prev.then_some(0.0);
    let n = (s.duration / step).round() as usize;
    for k in 1..=n {
        let t = k as f64 * step;
        let cur = inside(t);
        if cur != prev {
            let (mut lo, mut hi) = (t - step, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) == prev {
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
    }
    if let Some(a) = entered {
        out.push((a, s.duration));
    }
    out
}

#[test]
fn c5_reentry_reaction_bound() {
    let s = scenario_d();
    let ((out, rep), elapsed) = timed(|| {
        let out = simulate(&s).unwrap();
        let rep = safety_check(&out.timeline, &s);
        (out, rep)
    });
    let tl = &out.timeline;
    let iv = tl.lamp_on_intervals();
    let deadline = s.policy.reaction_deadline;
    let stays = presence(&s, 0);
    let mut interrupted = 0;
    let mut worst: f64 = 0.0;
    let mut pass = rep.passed() && elapsed < Duration::from_secs(5);
    for &(entry, _) in &stays {
        // First tick at or after the crossing.
        let first_tick = (entry / s.tick).ceil() * s.tick;
        for id in ceiling_ids(&s.room).iter().chain(&desk_ids(&s.room)) {
            if !iv.is_on(id, entry) {
                continue;
            }
            let off = tl
                .commands
                .iter()
                .find(|c| &c.lamp_id == id && c.action == LampAction::TurnOff && c.timestamp >= entry - 1e-9)
                .map_or(f64::INFINITY, |c| c.timestamp);
            let latency = off - first_tick;
            worst = worst.max(off - entry);
            pass &= latency <= deadline + 1e-9;
            interrupted += 1;
        }
    }
    // Every ceiling start happens while nobody is inside, at least the grace
    // period after the latest exit.
    let mut restarts_ok = true;
    for c in tl.commands.iter().filter(|c| c.action == LampAction::TurnOn) {
        if !ceiling_ids(&s.room).contains(&c.lamp_id) {
            continue;
        }
        let inside = stays.iter().any(|&(a, b)| a <= c.timestamp && c.timestamp < b);
        let last_exit = stays
            .iter()
            .map(|&(_, b)| b)
            .filter(|&b| b <= c.timestamp)
            .fold(f64::NEG_INFINITY, f64::max);
        restarts_ok &= !inside && c.timestamp - last_exit >= s.policy.vacancy_grace - 1e-9;
    }
    pass &= restarts_ok && interrupted >= 2;
    report(
        5,
        "re-entry reaction bound",
        pass,
        format!(
            "{} entries, {interrupted} lamp interruptions, worst entry-to-off {worst:.3} s (deadline {deadline} s), restarts only after exits: {restarts_ok}; {elapsed:?}",
            stays.len()
        ),
    );
}

#[test]
fn c6_fuzz_zero_violations() {
    let params = WalkParams::default();
    let ((violations, dose, occupants), elapsed) = timed(|| {
        (0..1000u64)
            .into_par_iter()
            .map(|i| {
                let s = random_walk_scenario(0x5eed_0000 + i, &params);
                assert_eq!(s.noise.pir_miss_probability, 0.0);
                let out = simulate(&s).unwrap();
                let rep = safety_check(&out.timeline, &s);
                let dose: f64 = rep.occupant_dose.values().sum();
                (rep.violations.len(), dose, s.occupants.len())
            })
            .reduce(|| (0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
    });
    let pass = violations == 0 && dose == 0.0 && elapsed < Duration::from_secs(120);
    report(
        6,
        "fuzz safety",
        pass,
        format!(
            "1000 walks of {} s, {occupants} occupants: {violations} violations, {dose} J/m2 occupant dose; {elapsed:?}",
            params.duration
        ),
    );
}

fn csv_bytes(tl: &Timeline) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new(); 6];
    tl.write_events_csv(&mut out[0]).unwrap();
    tl.write_snapshots_csv(&mut out[1]).unwrap();
    tl.write_commands_csv(&mut out[2]).unwrap();
    tl.write_probes_csv(&mut out[3]).unwrap();
    tl.write_checkpoints_csv(&mut out[4]).unwrap();
    tl.write_merged_csv(&mut out[5]).unwrap();
    out
}

#[test]
fn c7_determinism() {
    let mut noisy = scenario_d();
    noisy.noise.rssi_sigma_db = 3.0;
    noisy.noise.pir_miss_probability = 0.05;
    noisy.noise.false_positive_rate_per_hour = 2.0;
    let cases = [scenario_c(), noisy, random_walk_scenario(7, &WalkParams::default())];
    let mut identical = true;
    let mut bytes = 0;
    for s in &cases {
        let a = csv_bytes(&simulate(s).unwrap().timeline);
        let b = csv_bytes(&simulate(s).unwrap().timeline);
        identical &= a == b;
        bytes += a.iter().map(Vec::len).sum::<usize>();
    }
    report(
        7,
        "determinism",
        identical,
        format!(
            "{} scenarios run twice, {bytes} CSV bytes per pass, byte-identical: {identical}",
            cases.len()
        ),
    );
}

#[test]
fn c8_dosimetry_oracle() {
    let room = paper_default_room();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let n_lamps = rng.random_range(1..=3);
        let lamps: Vec<LampSpec> = (0..n_lamps)
            .map(|i| LampSpec {
                id: format!("l{i}"),
                tier: LampTier::Ceiling,
                position: Point3::new(
                    rng.random_range(0.0..room.width),
                    rng.random_range(0.0..room.length),
                    rng.random_range(1.0..room.ceiling_height),
                ),
                electrical_power: rng.random_range(5.0..60.0),
                uvc_efficiency: rng.random_range(0.2..0.5),
                emits_downward: true,
                beam_half_angle: rng.random_bool(0.5).then(|| rng.random_range(30.0..80.0)),
            })
            .collect();
        // Interval bounds on whole milliseconds, total span under 60 s.
        let mut iv = LampOnIntervals::new();
        let mut ms_on: Vec<Vec<(u64, u64)>> = Vec::new();
        for l in &lamps {
            let mut t = 0u64;
            let mut list = Vec::new();
            for _ in 0..rng.random_range(1..=3) {
                let start = t + rng.random_range(0..5_000);
                let end = start + rng.random_range(1..15_000);
                iv.push(&l.id, start as f64 / 1000.0, end as f64 / 1000.0).unwrap();
                list.push((start, end));
                t = end;
            }
            ms_on.push(list);
        }
        let grid = DoseGrid::floor(&room);
        let closed = accumulate_dose(&grid, &lamps, &iv).unwrap();
        let horizon = ms_on.iter().flatten().map(|&(_, e)| e).max().unwrap();
        let mut quad = vec![0.0; grid.len()];
        for ms in 0..horizon {
            for (l, list) in lamps.iter().zip(&ms_on) {
                if list.iter().any(|&(s, e)| s <= ms && ms < e) {
                    for (q, &p) in quad.iter_mut().zip(&grid.cell_centers) {
                        *q += oracle_irradiance(l, p) * 1e-3;
                    }
                }
            }
        }
        for (c, q) in closed.accumulated_dose.iter().zip(&quad) {
            let rel = if *q == 0.0 { c.abs() } else { ((c - q) / q).abs() };
            worst = worst.max(rel);
        }
    }
    let lamp = LampSpec {
        id: "axis".into(),
        tier: LampTier::Ceiling,
        position: Point3::new(1.0, 1.0, 2.6),
        electrical_power: 36.0,
        uvc_efficiency: 0.33,
        emits_downward: true,
        beam_half_angle: None,
    };
    let e1 = lamp_irradiance(&lamp, Point3::new(1.0, 1.0, 1.6)).unwrap();
    let e2 = lamp_irradiance(&lamp, Point3::new(1.0, 1.0, 0.6)).unwrap();
    let ratio = e1 / e2;
    let pass = worst < 1e-6 && (ratio - 4.0).abs() < 1e-12;
    report(
        8,
        "dosimetry oracle",
        pass,
        format!("10 configs, worst relative error vs 1 ms quadrature {worst:.3e}; E(r)/E(2r) = {ratio:.15}"),
    );
}

/// Sums, per vacancy episode (maximal run of vacant snapshots), the on-time
/// of each lamp inside the episode.
fn episode_budgets(tl: &Timeline, ids: &[String]) -> Vec<BTreeMap<String, f64>> {
    let iv = tl.lamp_on_intervals();
    let mut episodes = Vec::new();
    let mut start: Option<f64> = None;
    let mut close = |a: f64, b: f64| {
        let m: BTreeMap<String, f64> = ids
            .iter()
            .map(|id| {
                let on: f64 = iv.get(id).iter().map(|&(s, e)| (e.min(b) - s.max(a)).max(0.0)).sum();
                (id.clone(), on)
            })
            .collect();
        episodes.push(m);
    };
    for s in &tl.snapshots {
        match (s.is_vacant(), start) {
            (true, None) => start = Some(s.timestamp),
            (false, Some(a)) => {
                close(a, s.timestamp);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        close(a, tl.end_time);
    }
    episodes
}

#[test]
fn c9_cycle_budgets_and_midnight() {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [scenario_c(), scenario_d()] {
        let out = simulate(&s).unwrap();
        let ceil = ceiling_ids(&s.room);
        let desk = desk_ids(&s.room);
        let ids: Vec<String> = ceil.iter().chain(&desk).cloned().collect();
        let eps = episode_budgets(&out.timeline, &ids);
        let max_of = |group: &[String]| {
            eps.iter()
                .flat_map(|m| group.iter().map(move |id| m[id]))
                .fold(0.0, f64::max)
        };
        let (mc, md) = (max_of(&ceil), max_of(&desk));
        pass &= mc <= s.policy.ceiling_cycle + 1e-9 && md <= s.policy.desk_cycle + 1e-9;
        parts.push(format!(
            "{}: {} episodes, max ceiling {mc:.1} s, max desk {md:.1} s",
            s.name,
            eps.len()
        ));
    }

    // Empty room from 22:00 local over two midnights, with one visit at noon
    // on the second day.
    let start = chrono::DateTime::parse_from_rfc3339("2020-10-05T22:00:00+08:00").unwrap();
    let mut s = empty_room_scenario(start, 27.0 * 3600.0);
    let noon = 14.0 * 3600.0;
    let visit = PathBuilder::new(0.0, CORRIDOR_DOOR + Point3::new(-6.0, 0.0, 0.0), false)
        .wait_until(noon)
        .walk_to(CORRIDOR_DOOR, 1.0, false)
        .walk_to(DOOR_OUTSIDE, 1.0, false)
        .walk_to(DOOR_INSIDE, 1.0, true)
        .walk_to(Point3::new(2.0, 3.0, 1.1), 1.0, true)
        .walk_to(DOOR_INSIDE, 1.0, true)
        .walk_to(DOOR_OUTSIDE, 1.0, false)
        .walk_to(CORRIDOR_DOOR + Point3::new(-6.0, 0.0, 0.0), 1.0, false)
        .build("visitor", false);
    s.occupants.push(visit);
    let out = simulate(&s).unwrap();
    let tl = &out.timeline;
    let clock = s.clock();
    let mut midnight: BTreeMap<(String, chrono::NaiveDate), usize> = BTreeMap::new();
    for c in tl.commands.iter().filter(|c| c.reason == CommandReason::MidnightCycle) {
        *midnight
            .entry((c.lamp_id.clone(), clock.local_date(c.timestamp)))
            .or_default() += 1;
    }
    let dates: std::collections::BTreeSet<_> = midnight.keys().map(|(_, d)| *d).collect();
    let once_per_date =
        midnight.values().all(|&n| n == 1) && dates.len() == 2 && midnight.len() == 2 * s.room.lamps.len();
    // After each midnight cycle completes, nothing turns on until the snapshot
    // shows occupancy again.
    let mut dark_ok = true;
    let mut after_midnight = false;
    let mut all_off_at: Option<f64> = None;
    let mut on_lamps = std::collections::BTreeSet::new();
    let mut cmd = tl.commands.iter().peekable();
    for snap in &tl.snapshots {
        if !snap.is_vacant() {
            after_midnight = false;
            all_off_at = None;
        }
        while let Some(c) = cmd.next_if(|c| c.timestamp <= snap.timestamp) {
            match c.action {
                LampAction::TurnOn => {
                    if all_off_at.is_some() {
                        dark_ok = false;
                    }
                    if c.reason == CommandReason::MidnightCycle {
                        after_midnight = true;
                    }
                    on_lamps.insert(c.lamp_id.clone());
                }
                LampAction::TurnOff => {
                    on_lamps.remove(&c.lamp_id);
                    if after_midnight && on_lamps.is_empty() {
                        all_off_at = Some(c.timestamp);
                    }
                }
            }
        }
    }
    pass &= once_per_date && dark_ok;
    parts.push(format!(
        "midnight cycles on {} dates, once per lamp per date: {once_per_date}, dark until next occupancy: {dark_ok}",
        dates.len()
    ));
    report(9, "cycle budgets and midnight", pass, parts.join("; "));
}
