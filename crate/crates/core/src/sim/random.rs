//! Randomized but physically consistent occupant walks.
//!
//! Occupants enter and leave only through the door, keep moving while
//! inside (stops never exceed `max_pause`, shorter than the PIR hold), and
//! walk at least `min_speed`, so every occupant inside is always visible
//! to a motion sensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Point3;
use crate::sim::builtin::{empty_room_scenario, CORRIDOR_DOOR, DEFAULT_START, DOOR_INSIDE, DOOR_OUTSIDE};
use crate::sim::scenario::{NoiseParams, PathBuilder, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct WalkParams {
    pub duration: f64,
    pub max_occupants: usize,
    pub min_speed: f64,
    pub max_speed: f64,
    pub max_pause: f64,
    pub max_rssi_sigma_db: f64,
    pub max_false_positive_rate_per_hour: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            duration: 1200.0,
            max_occupants: 3,
            min_speed: 0.5,
            max_speed: 1.5,
            max_pause: 10.0,
            max_rssi_sigma_db: 4.0,
            max_false_positive_rate_per_hour: 2.0,
        }
    }
}

/// A scenario on the default room whose occupants come and go at random.
/// PIR misses are always zero; RSSI noise and false positives vary.
pub fn random_walk_scenario(seed: u64, params: &WalkParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = chrono::DateTime::parse_from_rfc3339(DEFAULT_START).expect("valid constant");
    let mut s = empty_room_scenario(start, params.duration);
    s.name = format!("walk-{seed}");
    s.tick = 0.1;
    s.rng_seed = rng.random();
    s.noise = NoiseParams {
        rssi_sigma_db: rng.random_range(0.0..=params.max_rssi_sigma_db),
        pir_miss_probability: 0.0,
        false_positive_rate_per_hour: rng.random_range(0.0..=params.max_false_positive_rate_per_hour),
    };
    let n = rng.random_range(1..=params.max_occupants.max(1));
    let (w, l) = (s.room.width, s.room.length);
    for i in 0..n {
        let inside_start = rng.random_bool(0.5);
        let mut b = if inside_start {
            let p = Point3::new(rng.random_range(0.3..w - 0.3), rng.random_range(0.5..l - 0.3), 1.1);
            PathBuilder::new(0.0, p, true)
        } else {
            let p = Point3::new(rng.random_range(-10.0..10.0), CORRIDOR_DOOR.y, 1.1);
            PathBuilder::new(0.0, p, false).pause(rng.random_range(1.0..300.0))
        };
        let mut inside = inside_start;
        while b.time() < params.duration {
            if inside {
                for _ in 0..rng.random_range(1..=6) {
                    // A hop of at least a meter spans several ticks of motion.
                    let p = loop {
                        let p = Point3::new(rng.random_range(0.3..w - 0.3), rng.random_range(0.5..l - 0.3), 1.1);
                        if p.distance(b.position()) >= 1.0 {
                            break p;
                        }
                    };
                    let v = rng.random_range(params.min_speed..=params.max_speed);
                    b = b.walk_to(p, v, true).pause(rng.random_range(0.0..params.max_pause));
                }
                let v = rng.random_range(params.min_speed..=params.max_speed);
                let away = Point3::new(rng.random_range(-10.0..10.0), CORRIDOR_DOOR.y, 1.1);
                b = b
                    .walk_to(DOOR_INSIDE, v, true)
                    .walk_to(DOOR_OUTSIDE, v, false)
                    .walk_to(CORRIDOR_DOOR, v, false)
                    .walk_to(away, v, false)
                    .pause(rng.random_range(1.0..400.0));
            } else {
                let v = rng.random_range(params.min_speed..=params.max_speed);
                b = b
                    .walk_to(CORRIDOR_DOOR, v, false)
                    .walk_to(DOOR_OUTSIDE, v, false)
                    .walk_to(DOOR_INSIDE, v, true);
            }
            inside = !inside;
        }
        s.occupants
            .push(b.build(&format!("occupant-{}", i + 1), rng.random_bool(0.5)));
    }
    s
}
