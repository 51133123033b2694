//! Recursive geo-semantic belief update.
//!
//! Robot and object beliefs are factorized. Objects are static, so prediction
//! only moves the robot pose; observations update the matching object track
//! with a Kalman step on pose and a categorical Bayes step on class, and
//! tracks that should have been seen but were not receive a negative
//! information update.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Cov2, Vec2};
use crate::scalar::Scalar;
use crate::sensing::{
    in_fov, pose_measurement_covariance, score_likelihood, Occlusion, ScoreDensity, SensorModel,
};
use crate::types::{
    normalize_label_distribution, uniform, AffordanceStatus, ControlInput, GeoSemanticBelief,
    LabelId, ObjectBelief, Observation, RobotState, TaskKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig<T> {
    /// Covariance inflation applied to a freshly spawned track.
    pub spawn_inflation: T,
    /// Smoothing of the one-hot spawn label toward uniform.
    pub label_smoothing: T,
    /// Minimum simulated time between negative updates of one object, s.
    pub miss_update_period: T,
    /// Robot process noise variances per second for (x, y, θ).
    pub process_noise: [T; 3],
}

impl<T: Scalar> Default for FilterConfig<T> {
    fn default() -> Self {
        Self {
            spawn_inflation: T::lit(4.0),
            label_smoothing: T::lit(0.1),
            miss_update_period: T::one(),
            process_noise: [T::zero(); 3],
        }
    }
}

/// Something noteworthy the filter did; appended to the run trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterEvent {
    Spawned { object_id: u32 },
    DegenerateReset { object_id: u32 },
}

/// Result of a single object update.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectUpdate<T> {
    pub belief: ObjectBelief<T>,
    /// All label weights vanished; the class distribution was reset to uniform.
    pub degenerate: bool,
}

/// Propagate the robot pose through the body-frame velocity model.
///
/// `x' = x + dt·R(θ)·(vx, vy)`, `θ' = θ + dt·ω`, covariance `F P Fᵀ + Q·dt`.
/// Object beliefs are untouched.
pub fn predict<T: Scalar>(
    belief: &GeoSemanticBelief<T>,
    u: &ControlInput<T>,
    dt: T,
    config: &FilterConfig<T>,
) -> GeoSemanticBelief<T> {
    let mut out = belief.clone();
    let [x, y, th] = belief.robot.mean;
    let (s, c) = th.sin_cos();
    let dx = dt * (c * u.vx - s * u.vy);
    let dy = dt * (s * u.vx + c * u.vy);
    out.robot.mean = [x + dx, y + dy, wrap_angle(th + dt * u.omega)];

    let f = [
        [T::one(), T::zero(), -dy],
        [T::zero(), T::one(), dx],
        [T::zero(), T::zero(), T::one()],
    ];
    let mut p = mat3_mul(&mat3_mul(&f, &belief.robot.cov), &transpose3(&f));
    for (i, q) in config.process_noise.iter().enumerate() {
        p[i][i] = p[i][i] + *q * dt;
    }
    out.robot.cov = symmetrize3(p);
    out.time = belief.time + dt;
    out
}

/// Fuse an absolute robot pose fix with diagonal noise variances (`H = I`).
pub fn update_robot_pose<T: Scalar>(belief: &mut GeoSemanticBelief<T>, fix: [T; 3], noise: [T; 3]) {
    let p = belief.robot.cov;
    let mut s = p;
    for i in 0..3 {
        s[i][i] = s[i][i] + noise[i];
    }
    let Some(s_inv) = invert3(&s) else {
        return;
    };
    let k = mat3_mul(&p, &s_inv);
    let mut innov = [
        fix[0] - belief.robot.mean[0],
        fix[1] - belief.robot.mean[1],
        wrap_angle(fix[2] - belief.robot.mean[2]),
    ];
    for v in innov.iter_mut() {
        if !v.is_finite() {
            *v = T::zero();
        }
    }
    for (m, row) in belief.robot.mean.iter_mut().zip(&k) {
        *m = *m + row[0] * innov[0] + row[1] * innov[1] + row[2] * innov[2];
    }
    belief.robot.mean[2] = wrap_angle(belief.robot.mean[2]);
    // P − K P
    let kp = mat3_mul(&k, &p);
    let mut out = p;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = p[i][j] - kp[i][j];
        }
    }
    belief.robot.cov = symmetrize3(out);
}

/// Kalman update of a 2-D Gaussian with identity measurement model.
pub fn kalman_position<T: Scalar>(
    mean: Vec2<T>,
    cov: &Cov2<T>,
    z: Vec2<T>,
    r: &Cov2<T>,
) -> (Vec2<T>, Cov2<T>) {
    let s = cov.add(r);
    match s.inverse() {
        Some(s_inv) => {
            // K = P S⁻¹
            let k = cov.mul_full(&s_inv);
            let innov = z - mean;
            let new_mean = mean
                + Vec2::new(
                    k[0] * innov.x + k[1] * innov.y,
                    k[2] * innov.x + k[3] * innov.y,
                );
            // P − P S⁻¹ P, symmetric by construction
            let ps = cov.mul_full(&s_inv);
            let xx = cov.xx - (ps[0] * cov.xx + ps[1] * cov.xy);
            let xy = cov.xy - (ps[0] * cov.xy + ps[1] * cov.yy);
            let yx = cov.xy - (ps[2] * cov.xx + ps[3] * cov.xy);
            let yy = cov.yy - (ps[2] * cov.xy + ps[3] * cov.yy);
            let half = T::lit(0.5);
            let mut post = Cov2::new(xx.max(T::zero()), (xy + yx) * half, yy.max(T::zero()));
            let lim = (post.xx * post.yy).sqrt();
            if post.xy.abs() > lim {
                post.xy = post.xy.signum() * lim;
            }
            (new_mean, post)
        }
        None if r.trace() == T::zero() && cov.trace() > T::zero() => (z, Cov2::zero()),
        None => (mean, *cov),
    }
}

/// Scalar Kalman update for a wrapped angle.
pub fn kalman_heading<T: Scalar>(mean: T, var: T, z: T, r: T) -> (T, T) {
    let s = var + r;
    if s <= T::zero() {
        return (mean, var);
    }
    let k = var / s;
    let innov = wrap_angle(z - mean);
    (wrap_angle(mean + k * innov), (T::one() - k) * var)
}

/// Label weights `prior(l)·C[l][z^l]·p_s(z^s | l, d)` before normalization.
pub fn label_evidence<T: Scalar>(
    prior: &[T],
    z: &Observation<T>,
    distance: T,
    model: &SensorModel<T>,
) -> Vec<T> {
    prior
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let id = LabelId(l as u16);
            *p * model.noise.confusion.get(id, z.label)
                * score_likelihood(z.score, model.label(id), distance, model.score_std)
        })
        .collect()
}

fn normalize_or_reset<T: Scalar>(weights: &[T]) -> (Vec<T>, bool) {
    match normalize_label_distribution(weights) {
        Ok(p) => (p, false),
        Err(_) => (uniform(weights.len()), true),
    }
}

/// Positive-detection update of one track.
pub fn update_object<T: Scalar>(
    belief: &ObjectBelief<T>,
    z: &Observation<T>,
    robot: &RobotState<T>,
    model: &SensorModel<T>,
) -> ObjectUpdate<T> {
    DetectionUpdate::new(belief, robot, model).apply(z)
}

/// Everything in a positive-detection update that depends only on the track
/// and the robot pose, so several hypothetical detections from one pose
/// share it.
#[derive(Debug, Clone)]
pub struct DetectionUpdate<'a, T> {
    belief: &'a ObjectBelief<T>,
    model: &'a SensorModel<T>,
    r: Cov2<T>,
    r_q: T,
    scores: Vec<ScoreDensity<T>>,
}

impl<'a, T: Scalar> DetectionUpdate<'a, T> {
    pub fn new(
        belief: &'a ObjectBelief<T>,
        robot: &RobotState<T>,
        model: &'a SensorModel<T>,
    ) -> Self {
        let gamma = model.label(belief.map_label()).gamma;
        let (r, r_q) = pose_measurement_covariance(robot, belief.mean, &model.noise, gamma);
        let d = robot.position.distance(belief.mean);
        let scores = (0..belief.labels.len())
            .map(|l| ScoreDensity::new(model.label(LabelId(l as u16)), d, model.score_std))
            .collect();
        Self {
            belief,
            model,
            r,
            r_q,
            scores,
        }
    }

    pub fn apply(&self, z: &Observation<T>) -> ObjectUpdate<T> {
        let b = self.belief;
        debug_assert_eq!(b.id, z.object_id);
        let (mean, cov) = kalman_position(b.mean, &b.cov, z.position, &self.r);
        let (heading_mean, heading_var) =
            kalman_heading(b.heading_mean, b.heading_var, z.orientation, self.r_q);
        let confusion = &self.model.noise.confusion;
        let weights: Vec<T> = b
            .labels
            .iter()
            .zip(&self.scores)
            .enumerate()
            .map(|(l, (p, s))| *p * confusion.get(LabelId(l as u16), z.label) * s.eval(z.score))
            .collect();
        let (labels, degenerate) = normalize_or_reset(&weights);
        ObjectUpdate {
            belief: ObjectBelief {
                mean,
                cov,
                heading_mean,
                heading_var,
                labels,
                ..b.clone()
            },
            degenerate,
        }
    }
}

/// Per-label detection probability at the track's believed position.
pub fn detection_profile_at_mean<T: Scalar, O: Occlusion<T> + ?Sized>(
    belief: &ObjectBelief<T>,
    robot: &RobotState<T>,
    model: &SensorModel<T>,
    occlusion: &O,
) -> Vec<T> {
    // the field of view is shared by every label: test visibility once
    if !in_fov(robot, belief.mean, belief.floor, &model.fov, occlusion) {
        return vec![T::zero(); belief.labels.len()];
    }
    let d = robot.position.distance(belief.mean);
    (0..belief.labels.len())
        .map(|l| model.label(LabelId(l as u16)).detection.eval(d))
        .collect()
}

/// Negative-information update: `posterior(l) ∝ prior(l)·(1 − p_d(l))`.
pub fn update_no_detection<T: Scalar, O: Occlusion<T> + ?Sized>(
    belief: &ObjectBelief<T>,
    robot: &RobotState<T>,
    model: &SensorModel<T>,
    occlusion: &O,
) -> ObjectUpdate<T> {
    let pd = detection_profile_at_mean(belief, robot, model, occlusion);
    update_no_detection_with(belief, &pd)
}

/// [`update_no_detection`] with the detection profile already computed.
pub fn update_no_detection_with<T: Scalar>(belief: &ObjectBelief<T>, pd: &[T]) -> ObjectUpdate<T> {
    let weights: Vec<T> = belief
        .labels
        .iter()
        .zip(pd)
        .map(|(p, d)| *p * (T::one() - *d))
        .collect();
    let (labels, degenerate) = normalize_or_reset(&weights);
    ObjectUpdate {
        belief: ObjectBelief {
            labels,
            ..belief.clone()
        },
        degenerate,
    }
}

/// Open-task status matching a label's task; classes without a task start
/// as to-be-inspected until the track resolves.
pub fn pending_status_for(task: Option<TaskKind>) -> AffordanceStatus {
    match task {
        Some(TaskKind::Ascend) => AffordanceStatus::ToBeAscended,
        _ => AffordanceStatus::ToBeInspected,
    }
}

/// New track from a first observation.
pub fn spawn_track<T: Scalar>(
    z: &Observation<T>,
    robot: &RobotState<T>,
    model: &SensorModel<T>,
    config: &FilterConfig<T>,
) -> ObjectBelief<T> {
    let gamma = model.label(z.label).gamma;
    let (r, r_q) = pose_measurement_covariance(robot, z.position, &model.noise, gamma);
    let n = model.labels.len();
    let eps = config.label_smoothing;
    let base = eps / T::from_usize(n).unwrap();
    let mut labels = vec![base; n];
    labels[z.label.index()] = labels[z.label.index()] + (T::one() - eps);
    ObjectBelief {
        id: z.object_id,
        mean: z.position,
        cov: r.scale(config.spawn_inflation),
        heading_mean: z.orientation,
        heading_var: r_q * config.spawn_inflation,
        labels,
        status: pending_status_for(model.label(z.label).task),
        floor: robot.floor,
        last_miss_update: None,
    }
}

/// Fold one sensor frame into the belief.
///
/// `robot` is the pose the robot believes it had when the frame was taken.
/// Returns the events worth recording.
pub fn ingest<T: Scalar, O: Occlusion<T> + ?Sized>(
    belief: &mut GeoSemanticBelief<T>,
    observations: &[Observation<T>],
    robot: &RobotState<T>,
    model: &SensorModel<T>,
    occlusion: &O,
    config: &FilterConfig<T>,
) -> Vec<FilterEvent> {
    let mut events = Vec::new();
    for z in observations {
        match belief.objects.get(&z.object_id) {
            None => {
                belief
                    .objects
                    .insert(z.object_id, spawn_track(z, robot, model, config));
                events.push(FilterEvent::Spawned {
                    object_id: z.object_id,
                });
            }
            Some(track) => {
                let upd = update_object(track, z, robot, model);
                if upd.degenerate {
                    events.push(FilterEvent::DegenerateReset {
                        object_id: z.object_id,
                    });
                }
                belief.objects.insert(z.object_id, upd.belief);
            }
        }
    }

    let now = belief.time;
    for (id, track) in belief.objects.iter_mut() {
        if observations.iter().any(|z| z.object_id == *id) {
            continue;
        }
        if !in_fov(robot, track.mean, track.floor, &model.fov, occlusion) {
            continue;
        }
        if let Some(last) = track.last_miss_update {
            if now - last < config.miss_update_period {
                continue;
            }
        }
        let upd = update_no_detection(track, robot, model, occlusion);
        if upd.degenerate {
            events.push(FilterEvent::DegenerateReset { object_id: *id });
        }
        *track = ObjectBelief {
            last_miss_update: Some(now),
            ..upd.belief
        };
    }
    events
}

fn mat3_mul<T: Scalar>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn transpose3<T: Scalar>(a: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn symmetrize3<T: Scalar>(a: [[T; 3]; 3]) -> [[T; 3]; 3] {
    let half = T::lit(0.5);
    let mut out = a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (a[i][j] + a[j][i]) * half;
        }
    }
    out
}

fn invert3<T: Scalar>(m: &[[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if det.abs() <= T::epsilon() || !det.is_finite() {
        return None;
    }
    let inv_det = T::one() / det;
    Some([
        [
            c00 * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            c01 * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            c02 * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ])
}
