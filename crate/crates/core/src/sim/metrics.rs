//! Run scoring and the fixed-resolution series used for comparisons.

use serde::{Deserialize, Serialize};

use crate::sim::scenario::RewardSpec;
use crate::sim::trace::TickRecord;
use crate::sim::world::CLOSEST_DISTANCE_CAP;
use crate::types::ObjectTruth;

/// Sampling period of the summary series, seconds.
pub const SERIES_PERIOD: f64 = 10.0;

/// Rewards minus travel, time and stair-failure costs.
pub fn reward_cost(
    reward: f64,
    path_length: f64,
    elapsed: f64,
    stair_failures: u32,
    spec: &RewardSpec,
) -> f64 {
    reward
        - spec.distance_cost * path_length
        - spec.time_cost * elapsed
        - spec.stair_failure_penalty * stair_failures as f64
}

/// Closest-distance sum at every tick, recomputed from the logged true
/// poses: per object, the running minimum of the capped distance.
pub fn closest_distance_metric(ticks: &[TickRecord], objects: &[ObjectTruth<f64>]) -> Vec<f64> {
    let mut closest = vec![CLOSEST_DISTANCE_CAP; objects.len()];
    ticks
        .iter()
        .map(|t| {
            for (c, o) in closest.iter_mut().zip(objects) {
                if o.floor == t.robot.floor {
                    *c = c.min(
                        t.robot
                            .position
                            .distance(o.position)
                            .min(CLOSEST_DISTANCE_CAP),
                    );
                }
            }
            closest.iter().sum()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub time: f64,
    pub inspected: usize,
    pub completed: usize,
    pub closest_sum: f64,
    pub path_length: f64,
    pub reward_cost: f64,
}

impl SeriesPoint {
    fn from_tick(time: f64, t: &TickRecord) -> Self {
        Self {
            time,
            inspected: t.inspected,
            completed: t.completed,
            closest_sum: t.closest_sum,
            path_length: t.path_length,
            reward_cost: t.reward_cost,
        }
    }
}

/// Sample the tick records every [`SERIES_PERIOD`] seconds up to `budget`.
/// A run that ended early holds its last state.
pub fn sample_series(ticks: &[TickRecord], tick_rate: f64, budget: f64) -> Vec<SeriesPoint> {
    let Some(last) = ticks.last() else {
        return Vec::new();
    };
    let samples = (budget / SERIES_PERIOD + 1e-9).floor() as u64;
    (0..=samples)
        .map(|k| {
            let time = k as f64 * SERIES_PERIOD;
            let tick = (time * tick_rate).round() as u64;
            // ticks are dense from 0, so the index is the tick number
            let rec = ticks
                .get(tick as usize)
                .filter(|r| r.tick == tick)
                .unwrap_or(last);
            SeriesPoint::from_tick(time, rec)
        })
        .collect()
}
