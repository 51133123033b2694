//! Belief predicates gating behavior-graph transitions.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::geometry::{Cov2, Vec2};
use crate::scalar::Scalar;
use crate::types::{AffordanceStatus, Gait, GeoSemanticBelief, LabelId};

/// Thresholds for every predicate. Defaults are the published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// `B^search-l`: `p(l) >` this.
    pub search_probability: f64,
    /// `B^search-l`: max marginal std below this, meters.
    pub search_std: f64,
    /// `B^l`: `p(l) >` this.
    pub act_probability: f64,
    /// `B^l`: max marginal std below this, meters.
    pub act_std: f64,
    /// `B^l`: expected robot-object distance below this, meters.
    pub act_distance: f64,
    /// `B^a`: `p(l) <` this.
    pub absent_probability: f64,
    /// Inspection aborts once the std reaches this multiple of `act_std`.
    pub abort_std_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            search_probability: 0.7,
            search_std: 5.0,
            act_probability: 0.9,
            act_std: 1.0,
            act_distance: 2.5,
            absent_probability: 0.2,
            abort_std_factor: 2.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            ("search_probability", self.search_probability),
            ("act_probability", self.act_probability),
            ("absent_probability", self.absent_probability),
        ];
        for (name, p) in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(format!("thresholds.{name} must lie in (0, 1), got {p}"));
            }
        }
        let dists = [
            ("search_std", self.search_std),
            ("act_std", self.act_std),
            ("act_distance", self.act_distance),
            ("abort_std_factor", self.abort_std_factor),
        ];
        for (name, d) in dists {
            if !(d > 0.0 && d.is_finite()) {
                return Err(format!("thresholds.{name} must be > 0, got {d}"));
            }
        }
        Ok(())
    }
}

/// Which belief set a predicate tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredicateKind {
    /// `B^search-l`: uncertain enough to be worth searching.
    Search,
    /// `B^l`: confident and close enough to act.
    Actionable,
    /// `B^a`: confident the object is not of the expected class.
    Absent,
    /// The engaged task finished and the robot is walking again.
    TaskComplete,
    /// Confidence collapsed while inspecting.
    InspectAbort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefPredicate {
    pub kind: PredicateKind,
    pub label: LabelId,
}

/// The belief statistics a predicate looks at. Logged with each transition
/// so the decision can be re-checked offline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub label_probability: f64,
    pub position_std: f64,
    pub expected_distance: f64,
    pub status: AffordanceStatus,
    pub walking: bool,
}

impl Evidence {
    pub fn satisfies(&self, kind: PredicateKind, th: &Thresholds) -> bool {
        let p = self.label_probability;
        let std = self.position_std;
        match kind {
            PredicateKind::Search => p > th.search_probability && std < th.search_std,
            PredicateKind::Actionable => {
                p > th.act_probability
                    && std < th.act_std
                    && self.expected_distance < th.act_distance
            }
            PredicateKind::Absent => p < th.absent_probability,
            PredicateKind::TaskComplete => self.status.is_completed() && self.walking,
            PredicateKind::InspectAbort => {
                std >= th.abort_std_factor * th.act_std || p <= th.search_probability
            }
        }
    }
}

const QUADRATURE_POINTS: usize = 16;

/// Physicists' Gauss–Hermite nodes and weights (`∫ e^{−t²} f(t) dt`),
/// by Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2
                    - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn quadrature() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(QUADRATURE_POINTS))
}

/// `E[‖x − y‖]` for `y ~ N(mean, cov)`, by tensor-product Gauss–Hermite.
pub fn expected_distance<T: Scalar>(x: Vec2<T>, mean: Vec2<T>, cov: &Cov2<T>) -> T {
    let Some([l11, l21, l22]) = cov.cholesky() else {
        return x.distance(mean);
    };
    if l11 == T::zero() && l22 == T::zero() {
        return x.distance(mean);
    }
    let (nodes, weights) = quadrature();
    let s2 = T::SQRT_2();
    let mut acc = T::zero();
    for (ti, wi) in nodes.iter().zip(weights) {
        let a = T::lit(*ti) * s2;
        for (tj, wj) in nodes.iter().zip(weights) {
            let b = T::lit(*tj) * s2;
            let y = Vec2::new(mean.x + l11 * a, mean.y + l21 * a + l22 * b);
            acc = acc + T::lit(wi * wj) * x.distance(y);
        }
    }
    acc / T::PI()
}

/// Statistics of object `target` under label `label`; `None` if untracked.
pub fn evidence<T: Scalar>(
    belief: &GeoSemanticBelief<T>,
    target: u32,
    label: LabelId,
) -> Option<Evidence> {
    let obj = belief.object(target)?;
    Some(Evidence {
        label_probability: obj.label_probability(label).to_f64_lossy(),
        position_std: obj.position_std().to_f64_lossy(),
        expected_distance: expected_distance(belief.robot.position(), obj.mean, &obj.cov)
            .to_f64_lossy(),
        status: obj.status,
        walking: belief.gait == Gait::Walk,
    })
}

/// Evaluate `pred` for `target`. A missing track never satisfies anything.
pub fn evaluate_predicate<T: Scalar>(
    pred: &BeliefPredicate,
    th: &Thresholds,
    belief: &GeoSemanticBelief<T>,
    target: u32,
) -> bool {
    evidence(belief, target, pred.label).is_some_and(|e| e.satisfies(pred.kind, th))
}
