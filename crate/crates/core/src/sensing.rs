//! Detection model, observation likelihood factors and observation sampling.
//!
//! Detection probability for an object inside the field of view decays with
//! the distance from an optimal detection distance:
//!
//! ```text
//! p_d = p0 · exp(−|m0 − d| / v0)      (0 outside FoV or behind an obstacle)
//! ```
//!
//! Pose measurement noise grows affinely with distance `d`, absolute bearing
//! `β` and a class factor `γ(l)`; each diagonal entry is
//! `(σ_d·d + σ_β·β + σ_l·γ)²`. The full observation likelihood is the product
//! of the pose density, the confusion-matrix entry and the score density.

use rand::distr::{Distribution, StandardUniform};
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{gaussian_density_1d, gaussian_density_2d, wrap_angle, Cov2, Vec2};
use crate::scalar::{normal_cdf, normal_pdf, Scalar};
use crate::types::{
    DecayProfile, LabelId, LabelRegistry, LabelSpec, ObjectTruth, Observation, RobotState,
};

/// Line-of-sight oracle used for occlusion.
pub trait Occlusion<T> {
    fn visible(&self, from: Vec2<T>, to: Vec2<T>, floor: usize) -> bool;
}

/// No obstacles anywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenSpace;

impl<T> Occlusion<T> for OpenSpace {
    fn visible(&self, _: Vec2<T>, _: Vec2<T>, _: usize) -> bool {
        true
    }
}

/// Angular and range extent of the semantic sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView<T> {
    /// Half-angle around the heading, radians, in (0, π].
    pub half_angle: T,
    pub max_range: T,
}

impl<T: Scalar> Default for FieldOfView<T> {
    fn default() -> Self {
        Self {
            half_angle: T::FRAC_PI_4(),
            max_range: T::lit(10.0),
        }
    }
}

impl<T: Scalar> FieldOfView<T> {
    pub fn is_valid(&self) -> bool {
        self.half_angle > T::zero() && self.half_angle <= T::PI() && self.max_range > T::zero()
    }
}

/// Detection profile plus the field of view it applies in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams<T> {
    pub profile: DecayProfile<T>,
    pub fov: FieldOfView<T>,
}

/// Affine noise coefficients: distance (per m), bearing (per rad), class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseCoefficients<T> {
    pub distance: T,
    pub bearing: T,
    pub label: T,
}

impl<T: Scalar> NoiseCoefficients<T> {
    #[inline]
    pub fn std(&self, distance: T, bearing: T, gamma: T) -> T {
        self.distance * distance + self.bearing * bearing + self.label * gamma
    }
}

/// Row-stochastic matrix with `rows[true][detected] = p(z^l | y^l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix<T> {
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> ConfusionMatrix<T> {
    pub fn identity(n: usize) -> Self {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { T::one() } else { T::zero() })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    #[inline]
    pub fn get(&self, truth: LabelId, detected: LabelId) -> T {
        self.rows[truth.index()][detected.index()]
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        if self.rows.len() != n {
            return Err(format!(
                "confusion matrix has {} rows, expected {n}",
                self.rows.len()
            ));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != n {
                return Err(format!(
                    "confusion row {i} has {} entries, expected {n}",
                    row.len()
                ));
            }
            if row.iter().any(|v| !(*v >= T::zero())) {
                return Err(format!("confusion row {i} has a negative entry"));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > T::lit(1e-9) {
                return Err(format!("confusion row {i} sums to {s}"));
            }
        }
        Ok(())
    }
}

/// Measurement noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams<T> {
    pub position: NoiseCoefficients<T>,
    pub orientation: NoiseCoefficients<T>,
    pub confusion: ConfusionMatrix<T>,
}

impl<T: Scalar> NoiseModelParams<T> {
    pub fn validate(&self, n_labels: usize) -> Result<(), String> {
        for (name, c) in [
            ("position", &self.position),
            ("orientation", &self.orientation),
        ] {
            if !(c.distance >= T::zero() && c.bearing >= T::zero() && c.label >= T::zero()) {
                return Err(format!("{name} noise coefficients must be >= 0"));
            }
        }
        self.confusion.validate(n_labels)
    }
}

/// Everything needed to simulate or evaluate semantic observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SensorModel<T> {
    pub labels: LabelRegistry<T>,
    pub fov: FieldOfView<T>,
    pub noise: NoiseModelParams<T>,
    /// Spread of the detector score around its distance-dependent mean.
    #[serde(default = "default_score_std")]
    pub score_std: T,
}

fn default_score_std<T: Scalar>() -> T {
    T::lit(0.1)
}

impl<T: Scalar> SensorModel<T> {
    pub fn validate(&self) -> Result<(), String> {
        self.labels.validate().map_err(|e| e.to_string())?;
        if !self.fov.is_valid() {
            return Err("field of view needs half-angle in (0, pi] and range > 0".into());
        }
        if !(self.score_std > T::zero()) {
            return Err("score_std must be > 0".into());
        }
        self.noise.validate(self.labels.len())
    }

    #[inline]
    pub fn label(&self, id: LabelId) -> &LabelSpec<T> {
        self.labels.get(id)
    }

    pub fn detection_params(&self, label: LabelId) -> DetectionParams<T> {
        DetectionParams {
            profile: self.labels.get(label).detection,
            fov: self.fov,
        }
    }

    /// Detection parameters for a concrete object (per-object override wins).
    pub fn detection_params_for(&self, object: &ObjectTruth<T>) -> DetectionParams<T> {
        DetectionParams {
            profile: object
                .detection
                .unwrap_or_else(|| self.labels.get(object.label).detection),
            fov: self.fov,
        }
    }
}

/// Absolute bearing of `target` relative to the robot heading, in [0, π].
#[inline]
pub fn bearing<T: Scalar>(robot: &RobotState<T>, target: Vec2<T>) -> T {
    let rel = target - robot.position;
    if rel.norm_sq() == T::zero() {
        return T::zero();
    }
    wrap_angle(rel.angle() - robot.heading).abs()
}

/// Whether `target` (on `floor`) lies in the robot's field of view with a
/// clear line of sight.
pub fn in_fov<T: Scalar, O: Occlusion<T> + ?Sized>(
    robot: &RobotState<T>,
    target: Vec2<T>,
    floor: usize,
    fov: &FieldOfView<T>,
    occlusion: &O,
) -> bool {
    if floor != robot.floor || !robot.sensor_active {
        return false;
    }
    let d = robot.position.distance(target);
    if d > fov.max_range {
        return false;
    }
    if d > T::zero() && bearing(robot, target) > fov.half_angle {
        return false;
    }
    occlusion.visible(robot.position, target, floor)
}

/// Detection probability of an object at `target` given its detection
/// parameters. Zero outside the field of view.
pub fn detection_probability_at<T: Scalar, O: Occlusion<T> + ?Sized>(
    robot: &RobotState<T>,
    target: Vec2<T>,
    floor: usize,
    params: &DetectionParams<T>,
    occlusion: &O,
) -> T {
    if !in_fov(robot, target, floor, &params.fov, occlusion) {
        return T::zero();
    }
    params.profile.eval(robot.position.distance(target))
}

pub fn detection_probability<T: Scalar, O: Occlusion<T> + ?Sized>(
    robot: &RobotState<T>,
    object: &ObjectTruth<T>,
    params: &DetectionParams<T>,
    occlusion: &O,
) -> T {
    detection_probability_at(robot, object.position, object.floor, params, occlusion)
}

/// Measurement covariance for an object at `target`: isotropic position
/// covariance (m²) and orientation variance (rad²).
pub fn pose_measurement_covariance<T: Scalar>(
    robot: &RobotState<T>,
    target: Vec2<T>,
    noise: &NoiseModelParams<T>,
    gamma: T,
) -> (Cov2<T>, T) {
    let d = robot.position.distance(target);
    let beta = bearing(robot, target);
    let sp = noise.position.std(d, beta, gamma);
    let sq = noise.orientation.std(d, beta, gamma);
    (Cov2::isotropic(sp * sp), sq * sq)
}

/// Expected detector score at distance `d` for a label.
#[inline]
pub fn expected_score<T: Scalar>(label: &LabelSpec<T>, distance: T) -> T {
    label.score.eval(distance)
}

/// Density of score `z_s` given label and distance: a Gaussian centered at
/// the expected score, truncated to [0, 1].
pub fn score_likelihood<T: Scalar>(z_s: T, label: &LabelSpec<T>, distance: T, score_std: T) -> T {
    ScoreDensity::new(label, distance, score_std).eval(z_s)
}

/// The truncated score density for one label at one distance, with its
/// normalizing mass computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreDensity<T> {
    mean: T,
    std: T,
    mass: T,
}

impl<T: Scalar> ScoreDensity<T> {
    pub fn new(label: &LabelSpec<T>, distance: T, score_std: T) -> Self {
        let mean = expected_score(label, distance);
        let mass = normal_cdf((T::one() - mean) / score_std) - normal_cdf(-mean / score_std);
        Self {
            mean,
            std: score_std,
            mass,
        }
    }

    #[inline]
    pub fn eval(&self, z_s: T) -> T {
        if z_s < T::zero() || z_s > T::one() {
            return T::zero();
        }
        normal_pdf((z_s - self.mean) / self.std) / (self.std * self.mass)
    }
}

/// The three factors of the observation likelihood, kept separate for
/// inspection and testing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodFactors<T> {
    pub pose: T,
    pub label: T,
    pub score: T,
}

impl<T: Scalar> LikelihoodFactors<T> {
    #[inline]
    pub fn product(&self) -> T {
        self.pose * self.label * self.score
    }
}

pub fn observation_likelihood_factors<T: Scalar>(
    z: &Observation<T>,
    hypothesis: &ObjectTruth<T>,
    robot: &RobotState<T>,
    model: &SensorModel<T>,
) -> LikelihoodFactors<T> {
    let spec = model.label(hypothesis.label);
    let (cov_p, var_q) =
        pose_measurement_covariance(robot, hypothesis.position, &model.noise, spec.gamma);
    let dq = wrap_angle(z.orientation - hypothesis.orientation);
    let pose = gaussian_density_2d(z.position, hypothesis.position, &cov_p)
        * gaussian_density_1d(dq, T::zero(), var_q);
    let label = model.noise.confusion.get(hypothesis.label, z.label);
    let d = robot.position.distance(hypothesis.position);
    let score = score_likelihood(z.score, spec, d, model.score_std);
    LikelihoodFactors { pose, label, score }
}

/// `p(z | y, x) = p_pq · p_l · p_s`.
pub fn observation_likelihood<T: Scalar>(
    z: &Observation<T>,
    hypothesis: &ObjectTruth<T>,
    robot: &RobotState<T>,
    model: &SensorModel<T>,
) -> T {
    observation_likelihood_factors(z, hypothesis, robot, model).product()
}

/// Draw an index from a discrete distribution with one uniform variate.
pub fn sample_categorical<T: Scalar>(weights: &[T], u: T) -> usize {
    let total: T = weights.iter().copied().sum();
    let target = u * total;
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > T::zero() {
            last_positive = i;
        }
        acc = acc + *w;
        if target < acc {
            return i;
        }
    }
    last_positive
}

/// Sample a measurement of `truth` as seen from `robot` (detection assumed).
pub fn sample_measurement<T, R>(
    robot: &RobotState<T>,
    truth: &ObjectTruth<T>,
    model: &SensorModel<T>,
    rng: &mut R,
) -> Observation<T>
where
    T: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    let spec = model.label(truth.label);
    let (cov_p, var_q) =
        pose_measurement_covariance(robot, truth.position, &model.noise, spec.gamma);
    let sp = cov_p.xx.sqrt();
    let sq = var_q.sqrt();
    let n: T = rng.sample(StandardNormal);
    let m: T = rng.sample(StandardNormal);
    let q: T = rng.sample(StandardNormal);
    let position = truth.position + Vec2::new(n * sp, m * sp);
    let orientation = wrap_angle(truth.orientation + q * sq);
    let u: T = rng.sample(StandardUniform);
    let label =
        LabelId(sample_categorical(&model.noise.confusion.rows[truth.label.index()], u) as u16);
    let d = robot.position.distance(truth.position);
    let mean = expected_score(spec, d);
    let score = Normal::new(mean, model.score_std)
        .map(|dist| dist.sample(rng))
        .unwrap_or(mean)
        .max(T::zero())
        .min(T::one());
    Observation {
        object_id: truth.id,
        position,
        orientation,
        label,
        score,
    }
}

/// Simulate one sensor frame.
///
/// One detection variate is drawn per object per call (whether or not it is
/// visible) so the detection stream stays aligned across geometries; the
/// measurement stream is consumed only on detection.
pub fn sample_observations<T, O, R1, R2>(
    robot: &RobotState<T>,
    truths: &[ObjectTruth<T>],
    model: &SensorModel<T>,
    occlusion: &O,
    detection_rng: &mut R1,
    measurement_rng: &mut R2,
) -> Vec<Observation<T>>
where
    T: Scalar,
    O: Occlusion<T> + ?Sized,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
    StandardNormal: Distribution<T>,
    StandardUniform: Distribution<T>,
{
    let mut out = Vec::new();
    for truth in truths {
        let u: T = detection_rng.sample(StandardUniform);
        let params = model.detection_params_for(truth);
        let pd = detection_probability(robot, truth, &params, occlusion);
        if u < pd {
            out.push(sample_measurement(robot, truth, model, measurement_rng));
        }
    }
    out
}
