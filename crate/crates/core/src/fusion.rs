//! Occupancy fusion: turns timestamped sensor events into a per-zone
//! occupancy verdict.
//!
//! Every detection latches for a hold window `[t, t + hold)`. Latches only
//! ever extend, so adding detections can never turn an occupied verdict
//! vacant. Anything the fusion does not understand (unknown source, payload
//! that does not match the sensor kind, out-of-range values) counts as room
//! motion and is recorded as an anomaly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::room::{RoomModel, SensorKind};

pub const RSSI_MIN_DBM: f64 = -120.0;
pub const RSSI_MAX_DBM: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensorPayload {
    PirMotion,
    UsPresence {
        distance: f64,
    },
    BleAdvert {
        beacon_id: String,
        rssi: f64,
    },
    ManualOff,
    ManualRearm,
    /// Payload that could not be decoded. Treated as a detection.
    Garbled {
        raw: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub timestamp: f64,
    pub source: String,
    pub payload: SensorPayload,
}

impl SensorEvent {
    pub fn new(timestamp: f64, source: impl Into<String>, payload: SensorPayload) -> Self {
        SensorEvent {
            timestamp,
            source: source.into(),
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionParams {
    /// Seconds a PIR detection keeps the room occupied.
    pub pir_hold: f64,
    /// Seconds an ultrasonic detection keeps its desk zone occupied.
    pub us_hold: f64,
    /// RSSI at 1 m, dBm.
    pub ble_ref_rssi_1m: f64,
    pub ble_path_loss_exponent: f64,
    /// Meters; a beacon estimated closer than this is approaching.
    pub approach_radius: f64,
    /// Seconds an approach detection persists after the last close advert.
    pub ble_stale_after: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            pir_hold: 15.0,
            us_hold: 10.0,
            ble_ref_rssi_1m: -59.0,
            ble_path_loss_exponent: 2.0,
            approach_radius: 5.0,
            ble_stale_after: 10.0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("pir_hold", self.pir_hold),
            ("us_hold", self.us_hold),
            ("approach_radius", self.approach_radius),
            ("ble_stale_after", self.ble_stale_after),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("fusion.{name} must be > 0"));
            }
        }
        if !(1.5..=4.0).contains(&self.ble_path_loss_exponent) {
            out.push("fusion.ble_path_loss_exponent must lie in [1.5, 4]".into());
        }
        if !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&self.ble_ref_rssi_1m) {
            out.push("fusion.ble_ref_rssi_1m must lie in [-120, 0] dBm".into());
        }
        out
    }
}

/// Inverts the log-distance path-loss model: distance in meters for an
/// observed RSSI.
pub fn rssi_to_distance(rssi: f64, params: &FusionParams) -> f64 {
    10f64.powf((params.ble_ref_rssi_1m - rssi) / (10.0 * params.ble_path_loss_exponent))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancySnapshot {
    pub timestamp: f64,
    pub room_occupied: bool,
    /// PIR-style motion anywhere in the room is latched.
    pub room_motion: bool,
    pub desk_zone_occupied: BTreeMap<String, bool>,
    pub approach_detected: bool,
    pub manual_kill: bool,
    pub last_motion_time: Option<f64>,
    pub contributing_sources: Vec<String>,
}

impl OccupancySnapshot {
    /// A snapshot with nothing detected.
    pub fn vacant(timestamp: f64) -> Self {
        OccupancySnapshot {
            timestamp,
            room_occupied: false,
            room_motion: false,
            desk_zone_occupied: BTreeMap::new(),
            approach_detected: false,
            manual_kill: false,
            last_motion_time: None,
            contributing_sources: Vec::new(),
        }
    }

    pub fn zone_occupied(&self, desk_id: &str) -> bool {
        self.desk_zone_occupied.get(desk_id).copied().unwrap_or(false)
    }

    /// Neither occupied nor approached.
    pub fn is_vacant(&self) -> bool {
        !self.room_occupied && !self.approach_detected
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("event from `{source_id}` at {timestamp} precedes its previous event at {last}")]
    OutOfOrder {
        source_id: String,
        timestamp: f64,
        last: f64,
    },
    #[error("event from `{0}` has a non-finite timestamp")]
    BadTimestamp(String),
}

#[derive(Debug, Clone, PartialEq)]
struct SourceInfo {
    kind: SensorKind,
    max_range: f64,
    hold: f64,
    guarded_zone: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anomaly {
    pub timestamp: f64,
    pub source: String,
    pub detail: String,
}

/// Running fusion state for one room.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    params: FusionParams,
    sources: BTreeMap<String, SourceInfo>,
    zone_ids: Vec<String>,
    last_timestamp: BTreeMap<String, f64>,
    motion_until: f64,
    last_motion_time: Option<f64>,
    presence_until: f64,
    zone_until: BTreeMap<String, f64>,
    approach_until: f64,
    manual_kill: Option<String>,
    source_until: BTreeMap<String, f64>,
    anomalies: Vec<Anomaly>,
}

impl FusionState {
    pub fn new(room: &RoomModel, params: FusionParams) -> Self {
        let sources = room
            .sensors
            .iter()
            .map(|s| {
                (
                    s.id.clone(),
                    SourceInfo {
                        kind: s.kind,
                        max_range: s.max_range_m(),
                        hold: s.hold_time,
                        guarded_zone: room.zone_guarded_by(s).map(|z| z.desk_id.clone()),
                    },
                )
            })
            .collect();
        FusionState {
            params,
            sources,
            zone_ids: room.desk_zones.iter().map(|z| z.desk_id.clone()).collect(),
            last_timestamp: BTreeMap::new(),
            motion_until: f64::NEG_INFINITY,
            last_motion_time: None,
            presence_until: f64::NEG_INFINITY,
            zone_until: BTreeMap::new(),
            approach_until: f64::NEG_INFINITY,
            manual_kill: None,
            source_until: BTreeMap::new(),
            anomalies: Vec::new(),
        }
    }

    pub fn params(&self) -> &FusionParams {
        &self.params
    }

    pub fn anomalies(&self) -> &[Anomaly] {
        &self.anomalies
    }

    /// Folds one event into the state. Events must be nondecreasing in time
    /// per source.
    pub fn ingest(&mut self, event: &SensorEvent) -> Result<(), FusionError> {
        let t = event.timestamp;
        if !t.is_finite() {
            return Err(FusionError::BadTimestamp(event.source.clone()));
        }
        if let Some(&last) = self.last_timestamp.get(&event.source) {
            if t < last {
                return Err(FusionError::OutOfOrder {
                    source_id: event.source.clone(),
                    timestamp: t,
                    last,
                });
            }
        }
        self.last_timestamp.insert(event.source.clone(), t);

        let info = self.sources.get(&event.source).cloned();
        let kind = info.as_ref().map(|i| i.kind);
        let extra_hold = info.as_ref().map_or(0.0, |i| i.hold);

        match (&event.payload, kind) {
            (SensorPayload::PirMotion, Some(SensorKind::Pir)) => {
                self.mark_motion(&event.source, t, self.params.pir_hold.max(extra_hold));
            }
            (SensorPayload::UsPresence { distance }, Some(SensorKind::Ultrasonic))
                if distance.is_finite() && *distance >= 0.0 =>
            {
                let info = info.expect("kind implies info");
                if *distance <= info.max_range {
                    let until = t + self.params.us_hold.max(extra_hold);
                    match info.guarded_zone {
                        Some(zone) => extend(self.zone_until.entry(zone).or_insert(f64::NEG_INFINITY), until),
                        None => extend(&mut self.presence_until, until),
                    }
                    self.mark_source(&event.source, until);
                }
            }
            (SensorPayload::BleAdvert { rssi, .. }, k)
                if (RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(rssi)
                    && matches!(k, Some(SensorKind::BleReceiver) | None) =>
            {
                if k.is_none() {
                    self.anomaly(t, &event.source, "advert from unknown receiver");
                }
                if rssi_to_distance(*rssi, &self.params) < self.params.approach_radius {
                    let until = t + self.params.ble_stale_after;
                    extend(&mut self.approach_until, until);
                    self.mark_source(&event.source, until);
                }
            }
            (SensorPayload::ManualOff, _) => {
                if kind != Some(SensorKind::ManualSwitch) {
                    self.anomaly(t, &event.source, "manual off from a non-switch source");
                }
                self.manual_kill = Some(event.source.clone());
            }
            (SensorPayload::ManualRearm, Some(SensorKind::ManualSwitch)) => {
                self.manual_kill = None;
            }
            (SensorPayload::ManualRearm, _) => {
                // Re-arming is the unsafe direction; only the switch may do it.
                self.anomaly(t, &event.source, "rearm ignored from a non-switch source");
            }
            (payload, _) => {
                self.anomaly(t, &event.source, &format!("treated as motion: {payload:?}"));
                self.mark_motion(&event.source, t, self.params.pir_hold.max(extra_hold));
            }
        }
        Ok(())
    }

    fn mark_motion(&mut self, source: &str, t: f64, hold: f64) {
        extend(&mut self.motion_until, t + hold);
        self.last_motion_time = Some(self.last_motion_time.map_or(t, |m| m.max(t)));
        self.mark_source(source, t + hold);
    }

    fn mark_source(&mut self, source: &str, until: f64) {
        extend(
            self.source_until.entry(source.to_string()).or_insert(f64::NEG_INFINITY),
            until,
        );
    }

    fn anomaly(&mut self, t: f64, source: &str, detail: &str) {
        self.anomalies.push(Anomaly {
            timestamp: t,
            source: source.to_string(),
            detail: detail.to_string(),
        });
    }

    /// Evaluates every hold window at `now`.
    pub fn snapshot(&self, now: f64) -> OccupancySnapshot {
        let room_motion = now < self.motion_until;
        let desk_zone_occupied: BTreeMap<String, bool> = self
            .zone_ids
            .iter()
            .map(|z| (z.clone(), self.zone_until.get(z).is_some_and(|&u| now < u)))
            .collect();
        let room_occupied = room_motion || now < self.presence_until || desk_zone_occupied.values().any(|&o| o);
        let mut contributing_sources: Vec<String> = self
            .source_until
            .iter()
            .filter(|(_, &u)| now < u)
            .map(|(s, _)| s.clone())
            .collect();
        if let Some(s) = &self.manual_kill {
            if !contributing_sources.contains(s) {
                contributing_sources.push(s.clone());
                contributing_sources.sort();
            }
        }
        OccupancySnapshot {
            timestamp: now,
            room_occupied,
            room_motion,
            desk_zone_occupied,
            approach_detected: now < self.approach_until,
            manual_kill: self.manual_kill.is_some(),
            last_motion_time: self.last_motion_time,
            contributing_sources,
        }
    }
}

fn extend(slot: &mut f64, until: f64) {
    if until > *slot {
        *slot = until;
    }
}

/// Sorts events into the single ingest order: by timestamp, ties broken by
/// source id. The sort is stable, so same-source ties keep their order.
pub fn order_events(events: &mut [SensorEvent]) {
    events.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| a.source.cmp(&b.source))
    });
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("event log line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

const EVENT_LOG_HEADER: [&str; 5] = ["timestamp_s", "source", "kind", "arg1", "arg2"];

/// Reads an event-log CSV (`timestamp_s,source,kind,arg1,arg2`). Rows with
/// an unknown kind or unparsable arguments become [`SensorPayload::Garbled`].
pub fn read_event_log<R: Read>(input: R) -> Result<Vec<SensorEvent>, EventLogError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().take(5).ne(EVENT_LOG_HEADER.iter().copied()) {
        return Err(EventLogError::Row {
            line: 1,
            message: format!("expected header {}", EVENT_LOG_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i| row.get(i).unwrap_or("").trim();
        let timestamp: f64 = field(0).parse().map_err(|_| EventLogError::Row {
            line,
            message: format!("bad timestamp `{}`", field(0)),
        })?;
        let source = field(1).to_string();
        if source.is_empty() {
            return Err(EventLogError::Row {
                line,
                message: "empty source".into(),
            });
        }
        let garbled = || SensorPayload::Garbled {
            raw: row.iter().skip(2).collect::<Vec<_>>().join(","),
        };
        let payload = match field(2) {
            "PIR" => SensorPayload::PirMotion,
            "US" => field(3)
                .parse()
                .map(|distance| SensorPayload::UsPresence { distance })
                .unwrap_or_else(|_| garbled()),
            "BLE" => match field(4).parse() {
                Ok(rssi) if !field(3).is_empty() => SensorPayload::BleAdvert {
                    beacon_id: field(3).to_string(),
                    rssi,
                },
                _ => garbled(),
            },
            "MANUAL_OFF" => SensorPayload::ManualOff,
            "MANUAL_REARM" => SensorPayload::ManualRearm,
            _ => garbled(),
        };
        out.push(SensorEvent {
            timestamp,
            source,
            payload,
        });
    }
    Ok(out)
}

pub fn write_event_log<W: Write>(out: W, events: &[SensorEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_LOG_HEADER)?;
    for e in events {
        let (kind, a1, a2) = event_columns(&e.payload);
        w.write_record([e.timestamp.to_string(), e.source.clone(), kind.to_string(), a1, a2])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn event_columns(p: &SensorPayload) -> (&'static str, String, String) {
    match p {
        SensorPayload::PirMotion => ("PIR", String::new(), String::new()),
        SensorPayload::UsPresence { distance } => ("US", distance.to_string(), String::new()),
        SensorPayload::BleAdvert { beacon_id, rssi } => ("BLE", beacon_id.clone(), rssi.to_string()),
        SensorPayload::ManualOff => ("MANUAL_OFF", String::new(), String::new()),
        SensorPayload::ManualRearm => ("MANUAL_REARM", String::new(), String::new()),
        SensorPayload::Garbled { raw } => ("GARBLED", raw.clone(), String::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::paper_default_room;

    fn state() -> FusionState {
        FusionState::new(&paper_default_room(), FusionParams::default())
    }

    fn pir(t: f64) -> SensorEvent {
        SensorEvent::new(t, "pir-1", SensorPayload::PirMotion)
    }

    #[test]
    fn rssi_distance_examples() {
        let p = FusionParams::default();
        assert!((rssi_to_distance(-59.0, &p) - 1.0).abs() < 1e-12);
        assert!((rssi_to_distance(-79.0, &p) - 10.0).abs() < 1e-12);
        assert!((rssi_to_distance(-49.0, &p) - 0.316_227_766).abs() < 1e-9);
    }

    #[test]
    fn pir_hold_is_half_open() {
        let mut s = state();
        s.ingest(&pir(100.0)).unwrap();
        assert!(s.snapshot(100.0).room_occupied);
        assert!(s.snapshot(114.999).room_occupied);
        assert!(!s.snapshot(115.0).room_occupied);
        assert!(!s.snapshot(116.0).room_occupied);
        assert_eq!(s.snapshot(116.0).last_motion_time, Some(100.0));
    }

    #[test]
    fn ultrasonic_beyond_range_is_ignored() {
        let mut s = state();
        s.ingest(&SensorEvent::new(
            5.0,
            "us-1",
            SensorPayload::UsPresence { distance: 2.5 },
        ))
        .unwrap();
        let snap = s.snapshot(5.0);
        assert!(!snap.zone_occupied("desk-2"));
        assert!(!snap.room_occupied);
    }

    #[test]
    fn ultrasonic_marks_guarded_zone_and_room() {
        let mut s = state();
        s.ingest(&SensorEvent::new(
            5.0,
            "us-1",
            SensorPayload::UsPresence { distance: 1.2 },
        ))
        .unwrap();
        let snap = s.snapshot(5.0);
        assert!(snap.zone_occupied("desk-2"));
        assert!(!snap.zone_occupied("desk-1"));
        assert!(snap.room_occupied);
        assert!(!snap.room_motion);
        assert!(!s.snapshot(15.0).room_occupied);
    }

    #[test]
    fn manual_off_latches_until_rearm() {
        let mut s = state();
        s.ingest(&SensorEvent::new(1.0, "manual-1", SensorPayload::ManualOff))
            .unwrap();
        s.ingest(&pir(2.0)).unwrap();
        assert!(s.snapshot(500.0).manual_kill);
        s.ingest(&SensorEvent::new(600.0, "manual-1", SensorPayload::ManualRearm))
            .unwrap();
        assert!(!s.snapshot(600.0).manual_kill);
    }

    #[test]
    fn rearm_from_other_source_is_ignored() {
        let mut s = state();
        s.ingest(&SensorEvent::new(1.0, "manual-1", SensorPayload::ManualOff))
            .unwrap();
        s.ingest(&SensorEvent::new(2.0, "pir-1", SensorPayload::ManualRearm))
            .unwrap();
        assert!(s.snapshot(3.0).manual_kill);
        assert_eq!(s.anomalies().len(), 1);
    }

    #[test]
    fn empty_state_is_vacant() {
        let snap = state().snapshot(0.0);
        assert!(!snap.room_occupied && !snap.approach_detected && !snap.manual_kill);
        assert!(snap.contributing_sources.is_empty());
    }

    #[test]
    fn ble_within_radius_flags_approach() {
        let mut s = state();
        let p = FusionParams::default();
        // 3 m at exponent 2: -59 - 20 log10(3).
        let rssi = p.ble_ref_rssi_1m - 20.0 * 3f64.log10();
        s.ingest(&SensorEvent::new(
            1.0,
            "ble-1",
            SensorPayload::BleAdvert {
                beacon_id: "b".into(),
                rssi,
            },
        ))
        .unwrap();
        let snap = s.snapshot(1.0);
        assert!(snap.approach_detected);
        assert!(!snap.room_occupied);
        assert!(!s.snapshot(11.0).approach_detected);
    }

    #[test]
    fn out_of_order_per_source_is_rejected() {
        let mut s = state();
        s.ingest(&pir(10.0)).unwrap();
        s.ingest(&SensorEvent::new(5.0, "pir-2", SensorPayload::PirMotion))
            .unwrap();
        assert!(matches!(s.ingest(&pir(9.0)), Err(FusionError::OutOfOrder { .. })));
    }

    #[test]
    fn garbled_and_unknown_sources_count_as_motion() {
        let mut s = state();
        s.ingest(&SensorEvent::new(1.0, "mystery", SensorPayload::PirMotion))
            .unwrap();
        assert!(s.snapshot(1.0).room_motion);
        let mut s = state();
        s.ingest(&SensorEvent::new(
            1.0,
            "us-1",
            SensorPayload::UsPresence { distance: -1.0 },
        ))
        .unwrap();
        assert!(s.snapshot(1.0).room_motion);
        let mut s = state();
        s.ingest(&SensorEvent::new(
            1.0,
            "ble-1",
            SensorPayload::BleAdvert {
                beacon_id: "b".into(),
                rssi: 7.0,
            },
        ))
        .unwrap();
        assert!(s.snapshot(1.0).room_motion);
        assert_eq!(s.anomalies().len(), 1);
    }

    #[test]
    fn event_log_round_trip_and_garbled_rows() {
        let events = vec![
            pir(1.5),
            SensorEvent::new(2.0, "us-1", SensorPayload::UsPresence { distance: 1.25 }),
            SensorEvent::new(
                2.0,
                "ble-1",
                SensorPayload::BleAdvert {
                    beacon_id: "occ-1".into(),
                    rssi: -63.5,
                },
            ),
            SensorEvent::new(3.0, "manual-1", SensorPayload::ManualOff),
            SensorEvent::new(4.0, "manual-1", SensorPayload::ManualRearm),
        ];
        let mut buf = Vec::new();
        write_event_log(&mut buf, &events).unwrap();
        assert_eq!(read_event_log(buf.as_slice()).unwrap(), events);

        let text = "timestamp_s,source,kind,arg1,arg2\n1,pir-1,SMOKE,,\n2,us-1,US,far,\n";
        let parsed = read_event_log(text.as_bytes()).unwrap();
        assert!(matches!(parsed[0].payload, SensorPayload::Garbled { .. }));
        assert!(matches!(parsed[1].payload, SensorPayload::Garbled { .. }));

        let bad = "timestamp_s,source,kind,arg1,arg2\nsoon,pir-1,PIR,,\n";
        assert!(matches!(
            read_event_log(bad.as_bytes()),
            Err(EventLogError::Row { line: 2, .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(FusionParams::default().validate().is_empty());
        let p = FusionParams {
            ble_path_loss_exponent: 5.0,
            pir_hold: 0.0,
            ..FusionParams::default()
        };
        assert_eq!(p.validate().len(), 2);
    }
}
