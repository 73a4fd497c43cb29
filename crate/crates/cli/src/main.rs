//! `uvguard`: run scenarios, dose maps, event-log replays and config checks.
//!
//! Exit status: 0 success, 1 input or I/O error, 2 safety violation,
//! 3 dose envelope missed (paper-suite only).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, FixedOffset, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use uvguard_core::dosimetry::{coverage_report, fmt_sig, CoverageReport, DoseGrid, DEFAULT_D90_DOSE};
use uvguard_core::sim::builtin::{builtin_scenario, paper_scenarios};
use uvguard_core::sim::{
    load_scenario_file, replay_events, safety_check_with_deadline, simulate, SafetyReport, Scenario,
};
use uvguard_core::{
    load_room_file, paper_default_room, read_event_log, validate, write_event_log, ControllerClock, CyclePolicy,
    FusionParams, RoomModel,
};

const EXIT_INPUT: u8 = 1;
const EXIT_SAFETY: u8 = 2;
const EXIT_DOSE: u8 = 3;
const DOSE_ENVELOPE_S: f64 = 300.0;

#[derive(Parser, Debug)]
#[command(
    name = "uvguard",
    version,
    about = "Occupancy-interlocked UVC disinfection simulator and tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "UVGUARD_OUT", default_value = "uvguard-out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its timeline, safety report and dose map.
    Simulate {
        /// Scenario file, or `builtin:A` .. `builtin:D`.
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        out: OutDir,
        /// Override the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Local time zone for the midnight cycle, e.g. `+08:00`.
        #[arg(long, value_parser = parse_tz_offset, allow_hyphen_values = true)]
        tz_offset: Option<i32>,
    },
    /// Time-to-target dose map of the floor grid with every downward lamp on.
    Dosemap {
        /// Room config; the built-in default room if omitted.
        #[arg(long)]
        room: Option<PathBuf>,
        /// Target dose, J/m2.
        #[arg(long, default_value_t = DEFAULT_D90_DOSE)]
        target_dose: f64,
        /// Cycle length used for the covered fraction, seconds.
        #[arg(long, default_value_t = DOSE_ENVELOPE_S)]
        cycle: f64,
        #[command(flatten)]
        out: OutDir,
        /// Override every lamp's UVC efficiency.
        #[arg(long)]
        uvc_efficiency: Option<f64>,
    },
    /// Run scenarios A to D and the dose map with default settings.
    PaperSuite {
        #[command(flatten)]
        out: OutDir,
        /// Seed variations per scenario.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Scenarios to run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Audit against this reaction deadline instead of the policy's, seconds.
        #[arg(long)]
        reaction_deadline: Option<f64>,
        /// Override every lamp's UVC efficiency.
        #[arg(long)]
        uvc_efficiency: Option<f64>,
    },
    /// Replay a recorded event log through fusion and the controller.
    Replay {
        /// Event log CSV (`timestamp_s,source,kind,arg1,arg2`).
        #[arg(long)]
        events: PathBuf,
        /// Room config; the built-in default room if omitted.
        #[arg(long)]
        room: Option<PathBuf>,
        /// Cycle policy JSON; defaults if omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Wall-clock instant of time zero (RFC 3339).
        #[arg(long, default_value = "2020-10-05T10:00:00+08:00")]
        start: String,
        /// Controller step, seconds.
        #[arg(long, default_value_t = 0.1)]
        tick: f64,
        /// Seconds to keep stepping after the last event.
        #[arg(long, default_value_t = 900.0)]
        tail: f64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Check a room or scenario file and list every problem.
    Validate {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        room: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Write the default room, policy, fusion parameters and scenarios.
    ExportDefaults {
        #[command(flatten)]
        out: OutDir,
    },
}

/// Accepts `Z`, `+HH:MM`, `-HH:MM` or a signed number of seconds.
fn parse_tz_offset(s: &str) -> Result<i32, String> {
    if s == "Z" {
        return Ok(0);
    }
    if let Ok(secs) = s.parse::<i32>() {
        return FixedOffset::east_opt(secs)
            .map(|_| secs)
            .ok_or_else(|| "offset out of range".into());
    }
    let (sign, rest) = match s.as_bytes().first() {
        Some(b'+') => (1, &s[1..]),
        Some(b'-') => (-1, &s[1..]),
        _ => return Err(format!("`{s}` is not an offset like +08:00")),
    };
    let (h, m) = rest
        .split_once(':')
        .ok_or_else(|| format!("`{s}` is not an offset like +08:00"))?;
    let h: i32 = h.parse().map_err(|_| format!("bad hours in `{s}`"))?;
    let m: i32 = m.parse().map_err(|_| format!("bad minutes in `{s}`"))?;
    if !(0..24).contains(&h) || !(0..60).contains(&m) {
        return Err(format!("`{s}` is out of range"));
    }
    Ok(sign * (h * 3600 + m * 60))
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    config_paths: Vec<String>,
    seed: Option<u64>,
    out_dir: String,
    tool_version: String,
    started_at: String,
    finished: bool,
    outputs: Vec<String>,
}

impl Manifest {
    fn begin(command: &str, config_paths: Vec<String>, seed: Option<u64>, out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
        let m = Manifest {
            command: command.to_string(),
            config_paths,
            seed,
            out_dir: out_dir.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: Utc::now().to_rfc3339(),
            finished: false,
            outputs: Vec::new(),
        };
        m.write(out_dir)?;
        Ok(m)
    }

    fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
    }

    fn finish(mut self, out_dir: &Path, outputs: Vec<PathBuf>) -> Result<()> {
        self.finished = true;
        self.outputs = outputs
            .iter()
            .map(|p| p.strip_prefix(out_dir).unwrap_or(p).display().to_string())
            .collect();
        self.write(out_dir)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn load_room_or_default(path: Option<&Path>) -> Result<RoomModel> {
    match path {
        Some(p) => load_room_file(p).map_err(|e| anyhow!("{e}")),
        None => Ok(paper_default_room()),
    }
}

fn resolve_scenario(source: &str) -> Result<Scenario> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return builtin_scenario(name).ok_or_else(|| anyhow!("unknown built-in scenario `{name}` (use A, B, C or D)"));
    }
    load_scenario_file(Path::new(source)).map_err(|e| anyhow!("{e}"))
}

#[derive(Debug, Serialize)]
struct SafetySummary<'a> {
    scenario: &'a str,
    seed: u64,
    verdict: &'static str,
    #[serde(flatten)]
    report: &'a SafetyReport,
    lamp_on_seconds: std::collections::BTreeMap<String, f64>,
}

fn write_dose_grid(path: &Path, grid: &DoseGrid) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "row,col,x_m,y_m,dose_j_m2,log_reduction")?;
    for (i, (p, d)) in grid.cell_centers.iter().zip(&grid.accumulated_dose).enumerate() {
        let (r, c) = grid.row_col(i);
        let lr = uvguard_core::log_reduction(*d, grid.target_dose);
        writeln!(
            w,
            "{r},{c},{},{},{},{}",
            fmt_sig(p.x),
            fmt_sig(p.y),
            fmt_sig(*d),
            fmt_sig(lr)
        )?;
    }
    w.flush()?;
    Ok(())
}

type RunResult = Result<(Vec<PathBuf>, SafetyReport)>;

/// Simulates and writes every artifact of one run into `dir`. Returns the
/// files written and the safety report.
fn run_scenario(s: &Scenario, dir: &Path, deadline: Option<f64>) -> RunResult {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let out = simulate(s).map_err(|e| anyhow!("scenario `{}`: {e}", s.name))?;
    let report = safety_check_with_deadline(&out.timeline, s, deadline.unwrap_or(s.policy.reaction_deadline));
    let tl = &out.timeline;
    let mut files = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w)?;
        w.flush()?;
        files.push(path);
        Ok(())
    };
    emit("events.csv", &|w| Ok(tl.write_events_csv(w)?))?;
    emit("snapshots.csv", &|w| Ok(tl.write_snapshots_csv(w)?))?;
    emit("commands.csv", &|w| Ok(tl.write_commands_csv(w)?))?;
    emit("probes.csv", &|w| Ok(tl.write_probes_csv(w)?))?;
    emit("checkpoints.csv", &|w| Ok(tl.write_checkpoints_csv(w)?))?;
    emit("timeline.csv", &|w| Ok(tl.write_merged_csv(w)?))?;
    emit("scenario.json", &|w| Ok(writeln!(w, "{}", s.to_file_string())?))?;
    let summary = SafetySummary {
        scenario: &s.name,
        seed: s.rng_seed,
        verdict: if report.passed() { "pass" } else { "fail" },
        report: &report,
        lamp_on_seconds: tl.on_seconds(),
    };
    emit("safety_report.json", &|w| {
        Ok(writeln!(w, "{}", serde_json::to_string_pretty(&summary)?)?)
    })?;
    let dose_path = dir.join("dose_map.csv");
    write_dose_grid(&dose_path, &out.dose)?;
    files.push(dose_path);
    Ok((files, report))
}

fn safety_line(name: &str, r: &SafetyReport) -> String {
    format!(
        "{name}: {} ({} violations, max exposure {:.3} s, deadline {} s)",
        if r.passed() { "PASS" } else { "FAIL" },
        r.violations.len(),
        r.max_exposure_seconds,
        r.reaction_deadline
    )
}

fn cmd_simulate(source: &str, out_dir: &Path, seed: Option<u64>, tz: Option<i32>) -> Result<u8> {
    let mut s = resolve_scenario(source)?;
    if let Some(seed) = seed {
        s.rng_seed = seed;
    }
    if let Some(tz) = tz {
        s = s
            .with_tz_offset(tz)
            .ok_or_else(|| anyhow!("time zone offset out of range"))?;
    }
    let manifest = Manifest::begin("simulate", vec![source.to_string()], Some(s.rng_seed), out_dir)?;
    let (files, report) = run_scenario(&s, out_dir, None)?;
    println!("{}", safety_line(&s.name, &report));
    for v in &report.violations {
        println!(
            "  violation at {:.3} s: {} exposed to {} for {:.3} s ({} W/m2)",
            v.timestamp,
            v.occupant_id,
            v.lamp_id,
            v.exposure_seconds,
            fmt_sig(v.received_irradiance)
        );
    }
    manifest.finish(out_dir, files)?;
    Ok(if report.passed() { 0 } else { EXIT_SAFETY })
}

fn with_efficiency(mut room: RoomModel, eff: Option<f64>) -> Result<RoomModel> {
    if let Some(eff) = eff {
        if !(eff > 0.0 && eff <= 1.0) {
            bail!("--uvc-efficiency must lie in (0, 1]");
        }
        for l in &mut room.lamps {
            l.uvc_efficiency = eff;
        }
    }
    Ok(room)
}

fn dose_map(room: &RoomModel, target: f64, cycle: f64) -> Result<CoverageReport> {
    let grid = DoseGrid::for_room(
        room,
        uvguard_core::dosimetry::DEFAULT_GRID_ROWS,
        uvguard_core::dosimetry::DEFAULT_GRID_COLS,
        0.0,
        target,
    )?;
    Ok(coverage_report(&grid, cycle, &room.lamps)?)
}

fn cmd_dosemap(room_path: Option<&Path>, target: f64, cycle: f64, out_dir: &Path, eff: Option<f64>) -> Result<u8> {
    let room = with_efficiency(load_room_or_default(room_path)?, eff)?;
    if !room.lamps.iter().any(|l| l.emits_downward) {
        eprintln!("warning: the room has no downward-emitting lamps; nothing is covered");
    }
    let report = dose_map(&room, target, cycle)?;
    let config = room_path.map(|p| p.display().to_string()).into_iter().collect();
    let manifest = Manifest::begin("dosemap", config, None, out_dir)?;
    let path = out_dir.join("dosemap.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!("{}", report.summary_line());
    manifest.finish(out_dir, vec![path])?;
    Ok(0)
}

fn cmd_paper_suite(out_dir: &Path, seeds: u64, jobs: usize, deadline: Option<f64>, eff: Option<f64>) -> Result<u8> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    if deadline.is_some_and(|d| !(d.is_finite() && d >= 0.0)) {
        bail!("--reaction-deadline must be a finite number >= 0");
    }
    let manifest = Manifest::begin("paper-suite", vec!["builtin:A-D".into()], None, out_dir)?;
    let mut runs = Vec::new();
    for base in paper_scenarios() {
        for k in 0..seeds {
            let mut s = base.clone();
            s.rng_seed = base.rng_seed.wrapping_add(1000 * k);
            s.room = with_efficiency(s.room, eff)?;
            let dir = if seeds == 1 {
                out_dir.join(&s.name)
            } else {
                out_dir.join(format!("{}-seed{}", s.name, s.rng_seed))
            };
            runs.push((s, dir));
        }
    }
    let jobs = jobs.max(1);
    let mut results: Vec<Option<RunResult>> = (0..runs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_runs, chunk_out) in runs
            .chunks(runs.len().div_ceil(jobs))
            .zip(results.chunks_mut(runs.len().div_ceil(jobs)))
        {
            scope.spawn(move || {
                for ((s, dir), slot) in chunk_runs.iter().zip(chunk_out) {
                    *slot = Some(run_scenario(s, dir, deadline));
                }
            });
        }
    });

    let mut files = Vec::new();
    let mut all_pass = true;
    let mut summary = Vec::new();
    for ((s, _), result) in runs.iter().zip(results) {
        let (f, report) = result.expect("every run finishes")?;
        println!("{}", safety_line(&format!("{} seed {}", s.name, s.rng_seed), &report));
        all_pass &= report.passed();
        summary.push(serde_json::json!({
            "scenario": s.name,
            "seed": s.rng_seed,
            "verdict": if report.passed() { "pass" } else { "fail" },
            "violations": report.violations.len(),
        }));
        files.extend(f);
    }

    let room = with_efficiency(paper_default_room(), eff)?;
    let coverage = dose_map(&room, DEFAULT_D90_DOSE, DOSE_ENVELOPE_S)?;
    let dose_path = out_dir.join("dosemap.csv");
    let mut w = create(&dose_path)?;
    coverage.write_csv(&mut w)?;
    w.flush()?;
    files.push(dose_path);
    println!("{}", coverage.summary_line());
    let max_time = coverage.max_time.unwrap_or(f64::INFINITY);
    let dose_ok = max_time <= DOSE_ENVELOPE_S;
    if !dose_ok {
        // Time to target scales as 1 / efficiency.
        let current = room.lamps.first().map_or(0.0, |l| l.uvc_efficiency);
        println!(
            "dose envelope missed: max time-to-target {} s > {DOSE_ENVELOPE_S} s; a uniform UVC efficiency of {} would meet it",
            fmt_sig(max_time),
            fmt_sig(current * max_time / DOSE_ENVELOPE_S)
        );
    }
    let suite_path = out_dir.join("suite_summary.json");
    let suite = serde_json::json!({
        "runs": summary,
        "dose_map": {
            "max_time_s": coverage.max_time,
            "min_time_s": coverage.min_time,
            "mean_time_s": coverage.mean_time,
            "covered_fraction": coverage.covered_fraction,
            "envelope_s": DOSE_ENVELOPE_S,
            "within_envelope": dose_ok,
        },
    });
    fs::write(&suite_path, serde_json::to_string_pretty(&suite)? + "\n")?;
    files.push(suite_path);
    manifest.finish(out_dir, files)?;
    Ok(if !all_pass {
        EXIT_SAFETY
    } else if !dose_ok {
        EXIT_DOSE
    } else {
        0
    })
}

fn cmd_replay(
    events: &Path,
    room: Option<&Path>,
    policy: Option<&Path>,
    start: &str,
    tick: f64,
    tail: f64,
    out_dir: &Path,
) -> Result<u8> {
    let room_path = room;
    let room = load_room_or_default(room)?;
    let problems = validate(&room);
    if !problems.is_empty() {
        bail!(
            "room is invalid: {}",
            problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        );
    }
    let policy_path = policy;
    let policy: CyclePolicy = match policy {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("bad policy {}", p.display()))?
        }
        None => CyclePolicy::default(),
    };
    let problems = policy.validate();
    if !problems.is_empty() {
        bail!("policy is invalid: {}", problems.join("; "));
    }
    let start = DateTime::parse_from_rfc3339(start).with_context(|| format!("bad --start `{start}`"))?;
    let clock = ControllerClock {
        epoch_s: start.timestamp(),
        tz_offset_s: start.offset().local_minus_utc(),
    };
    let file = File::open(events).with_context(|| format!("cannot read {}", events.display()))?;
    let log = read_event_log(file)?;
    let until = log.iter().map(|e| e.timestamp).fold(0.0, f64::max) + tail;
    let mut config = vec![events.display().to_string()];
    config.extend(room_path.map(|p| p.display().to_string()));
    config.extend(policy_path.map(|p| p.display().to_string()));
    let manifest = Manifest::begin("replay", config, None, out_dir)?;
    let replay = replay_events(&room, &policy, &FusionParams::default(), clock, &log, tick, until)?;
    let cmd_path = out_dir.join("commands.csv");
    let mut w = create(&cmd_path)?;
    uvguard_core::controller::write_command_log(&mut w, &replay.commands)?;
    w.flush()?;
    let ev_path = out_dir.join("events.csv");
    let mut w = create(&ev_path)?;
    write_event_log(&mut w, &log)?;
    w.flush()?;
    println!(
        "replayed {} events over {} s: {} lamp commands",
        log.len(),
        fmt_sig(until),
        replay.commands.len()
    );
    manifest.finish(out_dir, vec![cmd_path, ev_path])?;
    Ok(0)
}

fn cmd_validate(room: Option<&Path>, scenario: Option<&Path>) -> Result<u8> {
    if let Some(p) = scenario {
        let s = load_scenario_file(p).map_err(|e| anyhow!("{e}"))?;
        println!(
            "scenario `{}` is valid ({} occupants, {} s)",
            s.name,
            s.occupants.len(),
            s.duration
        );
        return Ok(0);
    }
    let p = room.expect("clap requires one of --room or --scenario");
    let room = load_room_file(p).map_err(|e| anyhow!("{e}"))?;
    println!(
        "room is valid: {} x {} x {} m, {} lamps, {} sensors, {} desk zones",
        room.width,
        room.length,
        room.ceiling_height,
        room.lamps.len(),
        room.sensors.len(),
        room.desk_zones.len()
    );
    Ok(0)
}

fn cmd_export_defaults(out_dir: &Path) -> Result<u8> {
    let manifest = Manifest::begin("export-defaults", Vec::new(), None, out_dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        files.push(path);
        Ok(())
    };
    put("room.json", paper_default_room().to_config_string())?;
    put("policy.json", serde_json::to_string_pretty(&CyclePolicy::default())?)?;
    put("fusion.json", serde_json::to_string_pretty(&FusionParams::default())?)?;
    for s in paper_scenarios() {
        put(&format!("scenario_{}.json", s.name), s.to_file_string())?;
    }
    manifest.finish(out_dir, files)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate {
            scenario,
            out,
            seed,
            tz_offset,
        } => cmd_simulate(scenario, &out.out, *seed, *tz_offset),
        Command::Dosemap {
            room,
            target_dose,
            cycle,
            out,
            uvc_efficiency,
        } => cmd_dosemap(room.as_deref(), *target_dose, *cycle, &out.out, *uvc_efficiency),
        Command::PaperSuite {
            out,
            seeds,
            jobs,
            reaction_deadline,
            uvc_efficiency,
        } => cmd_paper_suite(&out.out, *seeds, *jobs, *reaction_deadline, *uvc_efficiency),
        Command::Replay {
            events,
            room,
            policy,
            start,
            tick,
            tail,
            out,
        } => cmd_replay(
            events,
            room.as_deref(),
            policy.as_deref(),
            start,
            *tick,
            *tail,
            &out.out,
        ),
        Command::Validate { room, scenario } => cmd_validate(room.as_deref(), scenario.as_deref()),
        Command::ExportDefaults { out } => cmd_export_defaults(&out.out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
