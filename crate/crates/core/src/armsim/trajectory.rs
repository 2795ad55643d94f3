use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ArmModel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    /// Cap on distinct waypoints; after the last one the arm holds still.
    /// `0` draws waypoints until the requested duration is covered.
    pub n_waypoints: usize,
    /// Rest time at each waypoint, seconds.
    pub waypoint_hold: f64,
    /// Range of move durations between waypoints, seconds.
    pub segment_duration: [f64; 2],
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            n_waypoints: 0,
            waypoint_hold: 0.3,
            segment_duration: [1.0, 2.5],
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.segment_duration;
        if !(self.waypoint_hold >= 0.0 && lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("invalid trajectory spec {self:?}")));
        }
        Ok(())
    }
}

/// `10 s^3 - 15 s^4 + 6 s^5`: zero velocity and acceleration at both ends.
pub fn minimum_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

#[derive(Clone, Debug)]
struct Segment {
    t0: f64,
    t1: f64,
    from: Vec<f64>,
    to: Vec<f64>,
}

/// Piecewise minimum-jerk joint trajectory through random waypoints.
#[derive(Clone, Debug)]
pub struct Trajectory {
    segments: Vec<Segment>,
    /// Times at which the arm arrives at a waypoint.
    pub waypoint_times: Vec<f64>,
}

impl Trajectory {
    pub fn sample<R: Rng + ?Sized>(
        model: &ArmModel,
        spec: &TrajectorySpec,
        duration: f64,
        rng: &mut R,
    ) -> Self {
        let draw = |rng: &mut R| -> Vec<f64> {
            model
                .joint_limits
                .iter()
                .map(|&[lo, hi]| rng.random_range(lo..=hi))
                .collect()
        };
        let mut current = draw(rng);
        let mut t = 0.0;
        let mut segments = Vec::new();
        let mut waypoint_times = vec![0.0];
        let mut visited = 1;
        while t <= duration {
            if spec.waypoint_hold > 0.0 {
                segments.push(Segment {
                    t0: t,
                    t1: t + spec.waypoint_hold,
                    from: current.clone(),
                    to: current.clone(),
                });
                t += spec.waypoint_hold;
            }
            if spec.n_waypoints != 0 && visited >= spec.n_waypoints {
                break;
            }
            let [lo, hi] = spec.segment_duration;
            let d = if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            let next = draw(rng);
            segments.push(Segment {
                t0: t,
                t1: t + d,
                from: current,
                to: next.clone(),
            });
            t += d;
            waypoint_times.push(t);
            visited += 1;
            current = next;
        }
        if segments.is_empty() {
            segments.push(Segment {
                t0: 0.0,
                t1: f64::INFINITY,
                from: current.clone(),
                to: current,
            });
        }
        Self {
            segments,
            waypoint_times,
        }
    }

    pub fn angles_at(&self, t: f64) -> Vec<f64> {
        let seg = self
            .segments
            .iter()
            .find(|s| t < s.t1)
            .unwrap_or_else(|| self.segments.last().expect("non-empty"));
        let s = if seg.t1 > seg.t0 && seg.t1.is_finite() {
            minimum_jerk((t - seg.t0) / (seg.t1 - seg.t0))
        } else {
            1.0
        };
        seg.from
            .iter()
            .zip(&seg.to)
            .map(|(a, b)| a + (b - a) * s)
            .collect()
    }
}

/// `round(duration * rate)` joint-angle vectors sampled at `1 / rate` spacing.
pub fn sample_trajectory(
    model: &ArmModel,
    spec: &TrajectorySpec,
    duration: f64,
    rate: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = Trajectory::sample(model, spec, duration, &mut rng);
    let n = (duration * rate).round() as usize;
    (0..n).map(|i| traj.angles_at(i as f64 / rate)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    fn arm() -> ArmModel {
        ArmModel::desk_arm(
            vec![0.30, 0.25, 0.20, 0.15],
            0.04,
            RigidTransform::identity(),
        )
        .unwrap()
    }

    #[test]
    fn count_and_determinism() {
        let spec = TrajectorySpec::default();
        let a = sample_trajectory(&arm(), &spec, 2.0, 30.0, 5);
        assert_eq!(a.len(), 60);
        assert_eq!(a, sample_trajectory(&arm(), &spec, 2.0, 30.0, 5));
        assert_ne!(a, sample_trajectory(&arm(), &spec, 2.0, 30.0, 6));
    }

    #[test]
    fn stays_within_limits() {
        let model = arm();
        for seed in 0..10 {
            for q in sample_trajectory(&model, &TrajectorySpec::default(), 10.0, 30.0, seed) {
                assert!(model.within_limits(&q));
            }
        }
    }

    #[test]
    fn minimum_jerk_boundary_conditions() {
        assert_eq!(minimum_jerk(0.0), 0.0);
        assert_eq!(minimum_jerk(1.0), 1.0);
        let h = 1e-5;
        for s in [0.0, 1.0] {
            let v = (minimum_jerk(s + h) - minimum_jerk(s - h)) / (2.0 * h);
            assert!(v.abs() < 1e-8);
        }
    }

    #[test]
    fn velocity_vanishes_at_waypoints() {
        let dt = 1.0 / 30.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = Trajectory::sample(&arm(), &TrajectorySpec::default(), 8.0, &mut rng);
            for &t in traj.waypoint_times.iter().filter(|&&t| t > dt) {
                let a = traj.angles_at(t - dt);
                let b = traj.angles_at(t + dt);
                for (x, y) in a.iter().zip(&b) {
                    assert!(((y - x) / 2.0).abs() < 1e-3, "seed {seed} t {t}");
                }
            }
        }
    }

    #[test]
    fn capped_waypoints_hold_at_the_end() {
        let spec = TrajectorySpec {
            n_waypoints: 2,
            ..Default::default()
        };
        let q = sample_trajectory(&arm(), &spec, 10.0, 30.0, 1);
        assert_eq!(q[q.len() - 1], q[q.len() - 2]);
    }
}
