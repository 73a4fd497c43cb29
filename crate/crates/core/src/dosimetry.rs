//! UVC irradiance, dose accumulation and inactivation.
//!
//! Lamps are treated as isotropic point sources of their UVC radiant power.
//! Irradiance lands on a horizontal, upward-facing surface, so each lamp
//! contributes `P / (4 pi r^2) * cos(theta)` with `theta` measured from the
//! surface normal. There are no reflections or shadows. Lamps that do not
//! emit downward (upper-room fixtures) contribute nothing to such surfaces.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::Point3;
use crate::room::{LampSpec, RoomModel};

/// Default D90 dose for SARS-CoV-2 in J/m^2 (upper end of 20-27 J/m^2).
pub const DEFAULT_D90_DOSE: f64 = 27.0;
pub const DEFAULT_GRID_ROWS: usize = 8;
pub const DEFAULT_GRID_COLS: usize = 6;
/// Points closer than this to a lamp are rejected.
pub const MIN_LAMP_DISTANCE_M: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum DosimetryError {
    #[error("point ({x}, {y}, {z}) is within 1 cm of lamp `{lamp}`")]
    DegenerateDistance { lamp: String, x: f64, y: f64, z: f64 },
    #[error("grid must have at least one cell (got {rows}x{cols})")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("interval [{start}, {end}] for lamp `{lamp}` is invalid: {reason}")]
    BadInterval {
        lamp: String,
        start: f64,
        end: f64,
        reason: &'static str,
    },
    #[error("intervals reference unknown lamp `{0}`")]
    UnknownLamp(String),
    #[error("{0} must be finite and positive")]
    NotPositive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrradianceSample {
    pub point: Point3,
    /// W/m^2 on a horizontal upward-facing surface.
    pub irradiance: f64,
}

/// Irradiance from one lamp at `point`, in W/m^2.
pub fn lamp_irradiance(lamp: &LampSpec, point: Point3) -> Result<f64, DosimetryError> {
    let to_lamp = lamp.position - point;
    let r = to_lamp.norm();
    if !(r > MIN_LAMP_DISTANCE_M) {
        return Err(DosimetryError::DegenerateDistance {
            lamp: lamp.id.clone(),
            x: point.x,
            y: point.y,
            z: point.z,
        });
    }
    if !lamp.emits_downward {
        return Ok(0.0);
    }
    let cos_incidence = to_lamp.z / r;
    if cos_incidence <= 0.0 {
        return Ok(0.0);
    }
    if let Some(cutoff) = lamp.beam_half_angle {
        // Angle from the lamp's nadir equals the incidence angle for a
        // horizontal surface.
        if cos_incidence.acos().to_degrees() > cutoff {
            return Ok(0.0);
        }
    }
    Ok(lamp.uvc_power() / (4.0 * std::f64::consts::PI * r * r) * cos_incidence)
}

/// Total irradiance at `point` from every lamp in `lamps_on`.
pub fn irradiance_at_point<'a>(
    lamps_on: impl IntoIterator<Item = &'a LampSpec>,
    point: Point3,
) -> Result<f64, DosimetryError> {
    lamps_on
        .into_iter()
        .try_fold(0.0, |acc, lamp| Ok(acc + lamp_irradiance(lamp, point)?))
}

/// Seconds of exposure at `irradiance` needed to deliver `target` J/m^2.
/// `None` means the target is never reached (zero irradiance) or the inputs
/// are not physical.
pub fn time_to_dose(irradiance: f64, target: f64) -> Option<f64> {
    if !(target >= 0.0) || !(irradiance >= 0.0) {
        return None;
    }
    if target == 0.0 {
        return Some(0.0);
    }
    if irradiance == 0.0 || !irradiance.is_finite() {
        return None;
    }
    Some(target / irradiance)
}

/// Log-linear inactivation: each D90 of dose removes 90% of what remains.
pub fn inactivation_fraction(dose: f64, d90_dose: f64) -> f64 {
    1.0 - 10f64.powf(-dose / d90_dose)
}

/// Achieved log10 reduction for `dose`.
pub fn log_reduction(dose: f64, d90_dose: f64) -> f64 {
    if d90_dose > 0.0 {
        dose / d90_dose
    } else {
        f64::INFINITY
    }
}

/// Per-cell dose over a horizontal plane, stored row-major. Rows run along
/// the room length (y), columns along the width (x).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoseGrid {
    pub rows: usize,
    pub cols: usize,
    pub plane_height: f64,
    pub cell_centers: Vec<Point3>,
    /// J/m^2 per cell.
    pub accumulated_dose: Vec<f64>,
    /// J/m^2; the D90 dose unless configured otherwise.
    pub target_dose: f64,
}

impl DoseGrid {
    pub fn for_room(
        room: &RoomModel,
        rows: usize,
        cols: usize,
        plane_height: f64,
        target_dose: f64,
    ) -> Result<Self, DosimetryError> {
        if rows == 0 || cols == 0 {
            return Err(DosimetryError::EmptyGrid { rows, cols });
        }
        let (dx, dy) = (room.width / cols as f64, room.length / rows as f64);
        let cell_centers = (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| Point3::new((c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy, plane_height))
            })
            .collect();
        Ok(DoseGrid {
            rows,
            cols,
            plane_height,
            cell_centers,
            accumulated_dose: vec![0.0; rows * cols],
            target_dose,
        })
    }

    /// 8 x 6 cells on the floor with the default D90 target.
    pub fn floor(room: &RoomModel) -> Self {
        Self::for_room(room, DEFAULT_GRID_ROWS, DEFAULT_GRID_COLS, 0.0, DEFAULT_D90_DOSE)
            .expect("default grid is non-empty")
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn dose(&self, row: usize, col: usize) -> f64 {
        self.accumulated_dose[row * self.cols + col]
    }

    /// Per-cell irradiance from `lamps`, in cell order.
    pub fn irradiance<'a>(
        &self,
        lamps: impl IntoIterator<Item = &'a LampSpec> + Clone,
    ) -> Result<Vec<f64>, DosimetryError> {
        self.cell_centers
            .iter()
            .map(|&p| irradiance_at_point(lamps.clone(), p))
            .collect()
    }

    pub fn min_max_mean_dose(&self) -> (f64, f64, f64) {
        let d = &self.accumulated_dose;
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, max, d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// On intervals per lamp id, in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LampOnIntervals {
    intervals: BTreeMap<String, Vec<(f64, f64)>>,
}

impl LampOnIntervals {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `[start, end)` for `lamp_id`. Zero-length intervals are
    /// accepted and contribute nothing.
    pub fn push(&mut self, lamp_id: &str, start: f64, end: f64) -> Result<(), DosimetryError> {
        let bad = |reason| DosimetryError::BadInterval {
            lamp: lamp_id.to_string(),
            start,
            end,
            reason,
        };
        if !(start.is_finite() && end.is_finite()) {
            return Err(bad("bounds must be finite"));
        }
        if end < start {
            return Err(bad("end precedes start"));
        }
        let list = self.intervals.entry(lamp_id.to_string()).or_default();
        if let Some(&(_, prev_end)) = list.last() {
            if start < prev_end {
                return Err(bad("overlaps the previous interval"));
            }
        }
        list.push((start, end));
        Ok(())
    }

    pub fn get(&self, lamp_id: &str) -> &[(f64, f64)] {
        self.intervals.get(lamp_id).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(f64, f64)])> {
        self.intervals.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn on_seconds(&self, lamp_id: &str) -> f64 {
        self.get(lamp_id).iter().fold(0.0, |acc, (s, e)| acc + (e - s))
    }

    /// True if `lamp_id` is on at `t` (half-open intervals).
    pub fn is_on(&self, lamp_id: &str, t: f64) -> bool {
        self.get(lamp_id).iter().any(|&(s, e)| s <= t && t < e)
    }
}

/// Adds the dose delivered by `lamps` over `intervals` to every cell.
pub fn accumulate_dose(
    grid: &DoseGrid,
    lamps: &[LampSpec],
    intervals: &LampOnIntervals,
) -> Result<DoseGrid, DosimetryError> {
    let mut out = grid.clone();
    for (lamp_id, list) in intervals.iter() {
        let lamp = lamps
            .iter()
            .find(|l| l.id == lamp_id)
            .ok_or_else(|| DosimetryError::UnknownLamp(lamp_id.to_string()))?;
        let on_seconds: f64 = list.iter().map(|(s, e)| e - s).sum();
        if on_seconds == 0.0 {
            continue;
        }
        for (dose, &p) in out.accumulated_dose.iter_mut().zip(&grid.cell_centers) {
            *dose += lamp_irradiance(lamp, p)? * on_seconds;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCoverage {
    pub row: usize,
    pub col: usize,
    pub center: Point3,
    pub irradiance: f64,
    /// `None` when the cell receives no UVC.
    pub time_to_target: Option<f64>,
    /// log10 reduction after one cycle with every lamp on.
    pub log_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub target_dose: f64,
    pub cycle_seconds: f64,
    pub cells: Vec<CellCoverage>,
    /// Statistics over cells that ever reach the target.
    pub max_time: Option<f64>,
    pub min_time: Option<f64>,
    pub mean_time: Option<f64>,
    pub covered_fraction: f64,
}

impl CoverageReport {
    pub fn summary_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "inf".to_string(), |v| format!("{v:.1}"));
        format!(
            "target={} J/m2 cycle={} s min={} s max={} s mean={} s covered={:.4}",
            self.target_dose,
            self.cycle_seconds,
            f(self.min_time),
            f(self.max_time),
            f(self.mean_time),
            self.covered_fraction
        )
    }

    /// Writes the dose-map CSV (one line per cell).
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "row",
            "col",
            "x_m",
            "y_m",
            "irradiance_w_m2",
            "time_to_target_s",
            "log_reduction",
        ])?;
        for c in &self.cells {
            w.write_record([
                c.row.to_string(),
                c.col.to_string(),
                fmt_sig(c.center.x),
                fmt_sig(c.center.y),
                fmt_sig(c.irradiance),
                c.time_to_target.map_or_else(|| "inf".to_string(), fmt_sig),
                fmt_sig(c.log_reduction),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Formats with at least nine significant digits; `inf` for infinities.
pub fn fmt_sig(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if v == 0.0 || v.is_nan() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Time-to-target per cell with every lamp in `lamps` on, plus summary
/// statistics and the fraction of cells reaching the target within
/// `cycle_seconds`.
pub fn coverage_report(
    grid: &DoseGrid,
    cycle_seconds: f64,
    lamps: &[LampSpec],
) -> Result<CoverageReport, DosimetryError> {
    if !(cycle_seconds.is_finite() && cycle_seconds > 0.0) {
        return Err(DosimetryError::NotPositive("cycle_seconds"));
    }
    let irradiance = grid.irradiance(lamps)?;
    let cells: Vec<CellCoverage> = irradiance
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let (row, col) = grid.row_col(i);
            CellCoverage {
                row,
                col,
                center: grid.cell_centers[i],
                irradiance: e,
                time_to_target: time_to_dose(e, grid.target_dose),
                log_reduction: log_reduction(e * cycle_seconds, grid.target_dose),
            }
        })
        .collect();
    let times: Vec<f64> = cells.iter().filter_map(|c| c.time_to_target).collect();
    let covered = times.iter().filter(|&&t| t <= cycle_seconds).count();
    let (max_time, min_time, mean_time) = if times.is_empty() {
        (None, None, None)
    } else {
        (
            Some(times.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Some(times.iter().copied().fold(f64::INFINITY, f64::min)),
            Some(times.iter().sum::<f64>() / times.len() as f64),
        )
    };
    Ok(CoverageReport {
        target_dose: grid.target_dose,
        cycle_seconds,
        covered_fraction: covered as f64 / cells.len() as f64,
        cells,
        max_time,
        min_time,
        mean_time,
    })
}
