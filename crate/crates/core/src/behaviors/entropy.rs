//! Entropy of a single object's geo-semantic belief.

use crate::geometry::Cov2;
use crate::scalar::Scalar;
use crate::types::ObjectBelief;

/// Default weight of the pose term.
pub const DEFAULT_POSE_WEIGHT: f64 = 0.1;

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn categorical_entropy<T: Scalar>(p: &[T]) -> T {
    p.iter()
        .filter(|&&v| v > T::zero())
        .fold(T::zero(), |acc, &v| acc - v * v.ln())
}

/// Differential entropy `½·ln det(2πe·Σ)`; `-∞` for a singular covariance.
pub fn gaussian_entropy_2d<T: Scalar>(cov: &Cov2<T>) -> T {
    let two_pi_e = T::lit(2.0) * T::PI() * T::E();
    let det = cov.det() * two_pi_e * two_pi_e;
    if det <= T::zero() {
        return T::neg_infinity();
    }
    T::lit(0.5) * det.ln()
}

/// `H_cat + λ·max(0, ½·ln det(2πe·Σ))`. Never negative.
pub fn entropy_objective<T: Scalar>(belief: &ObjectBelief<T>, lambda: T) -> T {
    let pose = gaussian_entropy_2d(&belief.cov).max(T::zero());
    categorical_entropy(&belief.labels) + lambda * pose
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::types::AffordanceStatus;
    use proptest::prelude::*;

    fn belief(labels: Vec<f64>, cov: Cov2<f64>) -> ObjectBelief<f64> {
        ObjectBelief {
            id: 0,
            mean: Vec2::zero(),
            cov,
            heading_mean: 0.0,
            heading_var: 0.1,
            labels,
            status: AffordanceStatus::ToBeInspected,
            floor: 0,
            last_miss_update: None,
        }
    }

    #[test]
    fn certain_belief_is_zero() {
        let b = belief(vec![1.0, 0.0], Cov2::zero());
        assert_eq!(entropy_objective(&b, 0.1), 0.0);
    }

    #[test]
    fn uniform_pair_is_ln2() {
        let b = belief(vec![0.5, 0.5], Cov2::isotropic(1e-6));
        assert!((entropy_objective(&b, 0.1) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn mixed_example() {
        let b = belief(vec![0.7, 0.3], Cov2::isotropic(1.0));
        let h_cat = -(0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln());
        let h_pose = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((h_cat - 0.6109).abs() < 1e-4);
        assert!((0.1 * h_pose - 0.2838).abs() < 1e-4);
        let v = entropy_objective(&b, 0.1);
        assert!((v - (h_cat + 0.1 * h_pose)).abs() < 1e-14);
        assert!((v - 0.8947).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn objective_nonnegative(w in proptest::collection::vec(0.0f64..1.0, 2..6), var in 0.0f64..50.0) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-6);
            let p: Vec<f64> = w.iter().map(|v| v / s).collect();
            let b = belief(p.clone(), Cov2::isotropic(var));
            let v = entropy_objective(&b, 0.1);
            prop_assert!(v >= 0.0);
            let one_hot = p.iter().filter(|&&x| x > 0.0).count() == 1;
            let clamped = gaussian_entropy_2d(&b.cov) <= 0.0;
            prop_assert_eq!(v == 0.0, one_hot && clamped);
        }
    }
}
