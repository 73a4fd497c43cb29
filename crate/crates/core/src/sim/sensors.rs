//! Sensor models: what each sensor reports given true occupant poses.
//!
//! Walls are opaque to PIR and ultrasonic sensors and transparent to BLE.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::fusion::{FusionParams, SensorEvent, SensorPayload, RSSI_MAX_DBM, RSSI_MIN_DBM};
use crate::geometry::in_cone;
use crate::room::SensorSpec;
use crate::sim::scenario::Pose;

/// Distances below this are clamped before the path-loss model.
pub const MIN_BLE_DISTANCE_M: f64 = 0.1;

/// A PIR fires when some occupant inside its cone moved faster than
/// `speed_threshold` over the last tick. With `miss_probability` > 0 one
/// uniform draw decides whether the detection is dropped.
#[allow(clippy::too_many_arguments)]
pub fn pir_reading<R: Rng>(
    sensor: &SensorSpec,
    previous: &[Pose],
    current: &[Pose],
    tick: f64,
    speed_threshold: f64,
    miss_probability: f64,
    now: f64,
    rng: &mut R,
) -> Option<SensorEvent> {
    let fov = sensor.fov_half_angle_deg();
    let seen = previous.iter().zip(current).any(|(a, b)| {
        b.inside
            && in_cone(sensor.position, sensor.aim, fov, b.position)
            && a.position.distance(b.position) > speed_threshold * tick
    });
    if !seen {
        return None;
    }
    if miss_probability > 0.0 && rng.random::<f64>() < miss_probability {
        return None;
    }
    Some(SensorEvent::new(now, &sensor.id, SensorPayload::PirMotion))
}

/// Nearest occupant inside the room, within the cone and range.
pub fn ultrasonic_reading(sensor: &SensorSpec, current: &[Pose], now: f64) -> Option<SensorEvent> {
    let fov = sensor.fov_half_angle_deg();
    let range = sensor.max_range_m();
    current
        .iter()
        .filter(|p| p.inside && in_cone(sensor.position, sensor.aim, fov, p.position))
        .map(|p| sensor.position.distance(p.position))
        .filter(|&d| d <= range)
        .min_by(f64::total_cmp)
        .map(|distance| SensorEvent::new(now, &sensor.id, SensorPayload::UsPresence { distance }))
}

/// Log-distance path loss plus Gaussian noise, clamped to the valid RSSI
/// range.
pub fn ble_reading<R: Rng>(
    receiver: &SensorSpec,
    beacon_id: &str,
    beacon: &Pose,
    params: &FusionParams,
    sigma_db: f64,
    now: f64,
    rng: &mut R,
) -> SensorEvent {
    let d = receiver.position.distance(beacon.position).max(MIN_BLE_DISTANCE_M);
    let mut rssi = params.ble_ref_rssi_1m - 10.0 * params.ble_path_loss_exponent * d.log10();
    if sigma_db > 0.0 {
        rssi += Normal::new(0.0, sigma_db).expect("sigma is finite").sample(rng);
    }
    SensorEvent::new(
        now,
        &receiver.id,
        SensorPayload::BleAdvert {
            beacon_id: beacon_id.to_string(),
            rssi: rssi.clamp(RSSI_MIN_DBM, RSSI_MAX_DBM),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::rssi_to_distance;
    use crate::geometry::Point3;
    use crate::room::{paper_default_room, SensorKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pose(x: f64, y: f64, inside: bool) -> Pose {
        Pose {
            position: Point3::new(x, y, 1.1),
            inside,
        }
    }

    #[test]
    fn pir_needs_motion_and_line_of_sight() {
        let room = paper_default_room();
        let pir = room.sensor("pir-1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = [pose(2.0, 2.0, true)];
        let b = [pose(2.1, 2.0, true)];
        assert!(pir_reading(pir, &a, &b, 0.1, 0.1, 0.0, 1.0, &mut rng).is_some());
        assert!(pir_reading(pir, &a, &a, 0.1, 0.1, 0.0, 1.0, &mut rng).is_none());
        let out = [pose(2.1, 2.0, false)];
        assert!(pir_reading(pir, &a, &out, 0.1, 0.1, 0.0, 1.0, &mut rng).is_none());
        assert!(pir_reading(pir, &a, &b, 0.1, 0.1, 1.0, 1.0, &mut rng).is_none());
    }

    #[test]
    fn pirs_cover_the_room_at_chest_height() {
        let room = paper_default_room();
        for i in 0..=20 {
            for j in 0..=20 {
                let p = Point3::new(room.width * i as f64 / 20.0, room.length * j as f64 / 20.0, 1.1);
                let seen = room
                    .sensors_of(SensorKind::Pir)
                    .any(|s| in_cone(s.position, s.aim, s.fov_half_angle_deg(), p));
                assert!(seen, "{p:?} is outside every PIR cone");
            }
        }
    }

    #[test]
    fn ultrasonic_reports_nearest_in_range() {
        let room = paper_default_room();
        let us = room.sensor("us-1").unwrap();
        let poses = [pose(3.0, 4.0, true), pose(3.0, 4.4, true), pose(3.0, 4.8, false)];
        match ultrasonic_reading(us, &poses, 0.0).unwrap().payload {
            SensorPayload::UsPresence { distance } => assert!((distance - 1.2).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(ultrasonic_reading(us, &[pose(3.0, 3.0, true)], 0.0).is_none());
    }

    #[test]
    fn noiseless_ble_inverts_exactly() {
        let room = paper_default_room();
        let rx = room.sensor("ble-1").unwrap();
        let params = FusionParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pose(5.0, -3.0, false);
        let ev = ble_reading(rx, "b", &p, &params, 0.0, 0.0, &mut rng);
        let SensorPayload::BleAdvert { rssi, .. } = ev.payload else {
            panic!()
        };
        let d = rx.position.distance(p.position);
        assert!((rssi_to_distance(rssi, &params) - d).abs() < 1e-9);
    }
}
