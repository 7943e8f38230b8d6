//! Proximal and projection kernels shared by the distributed iterations and
//! the centralized reference solver.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[inline]
pub fn soft_threshold(v: f64, weight: f64) -> f64 {
    if v > weight {
        v - weight
    } else if v < -weight {
        v + weight
    } else {
        0.0
    }
}

/// `argmin_w weight*||w||_1 + 0.5*||w - v||^2` over the box `[-radius, radius]^n`.
///
/// The objective is separable, and for each coordinate the clamp of the
/// unconstrained soft-threshold solution is the constrained minimizer.
/// `radius` may be `f64::INFINITY`.
pub fn prox_l1_box(v: &DVector<f64>, weight: f64, radius: f64) -> Result<DVector<f64>> {
    if !(weight >= 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prox_l1_box needs weight >= 0 and radius > 0, got ({weight}, {radius})"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prox_l1_box"));
    }
    Ok(v.map(|x| soft_threshold(x, weight).clamp(-radius, radius)))
}

/// Euclidean projection onto `{theta >= 0} ∩ {||theta|| <= bound}`.
///
/// Clipping to the nonnegative orthant followed by radial scaling is exact
/// here: the ball is centered at the apex of the cone, so scaling a point of
/// the cone keeps it in the cone.
pub fn project_cone_ball(v: &DVector<f64>, bound: f64) -> Result<DVector<f64>> {
    if !(bound > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dual bound must be positive, got {bound}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("project_cone_ball"));
    }
    let mut out = v.map(|x| x.max(0.0));
    let norm = out.norm();
    if bound.is_finite() && norm > bound {
        out *= bound / norm;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// Brute-force scalar minimization of `w*|x| + 0.5(x-v)^2` on a grid.
    fn grid_prox(v: f64, weight: f64, radius: f64, step: f64) -> f64 {
        let n = (2.0 * radius / step).round() as i64;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=n {
            let x = -radius + k as f64 * step;
            let obj = weight * x.abs() + 0.5 * (x - v) * (x - v);
            if obj < best.0 {
                best = (obj, x);
            }
        }
        best.1
    }

    #[test]
    fn prox_examples() {
        let z = prox_l1_box(&dv(&[0.0, 0.0, 0.0]), 3.0, 10.0).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));

        let out = prox_l1_box(&dv(&[2.5, -0.3]), 0.5, 10.0).unwrap();
        assert_eq!(out, dv(&[2.0, 0.0]));
        assert!((grid_prox(2.5, 0.5, 10.0, 1e-4) - 2.0).abs() <= 1e-4);
        assert!(grid_prox(-0.3, 0.5, 10.0, 1e-4).abs() <= 1e-4);

        let out = prox_l1_box(&dv(&[15.0]), 0.5, 10.0).unwrap();
        assert_eq!(out[0], 10.0);
        assert!((grid_prox(15.0, 0.5, 10.0, 1e-4) - 10.0).abs() <= 1e-4);
    }

    #[test]
    fn prox_rejects_bad_input() {
        assert!(prox_l1_box(&dv(&[f64::NAN]), 1.0, 1.0).is_err());
        assert!(prox_l1_box(&dv(&[1.0]), -1.0, 1.0).is_err());
        assert!(prox_l1_box(&dv(&[1.0]), 1.0, 0.0).is_err());
        assert!(prox_l1_box(&dv(&[1.0]), 1.0, f64::INFINITY).is_ok());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_cone_ball(&dv(&[-1.0, -2.0]), 5.0).unwrap(), dv(&[0.0, 0.0]));
        assert_eq!(project_cone_ball(&dv(&[1.0, 1.0]), 10.0).unwrap(), dv(&[1.0, 1.0]));
        assert_eq!(project_cone_ball(&dv(&[3.0, -1.0]), 2.0).unwrap(), dv(&[2.0, 0.0]));
        assert_eq!(
            project_cone_ball(&dv(&[300.0, -1.0]), f64::INFINITY).unwrap(),
            dv(&[300.0, 0.0])
        );
        assert!(project_cone_ball(&dv(&[f64::INFINITY]), 1.0).is_err());
        assert!(project_cone_ball(&dv(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn projection_beats_sampled_feasible_points() {
        use rand::{Rng, SeedableRng};
        let v = dv(&[3.0, -1.0]);
        let p = project_cone_ball(&v, 2.0).unwrap();
        let d = (&v - &p).norm();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let r = 2.0 * rng.random::<f64>().sqrt();
            let a = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
            let q = dv(&[r * a.cos(), r * a.sin()]);
            assert!((&v - &q).norm() >= d - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prox_stays_in_box(v in proptest::collection::vec(-50.0..50.0f64, 1..8),
                             w in 0.0..5.0f64, r in 0.1..20.0f64) {
            let out = prox_l1_box(&DVector::from_vec(v), w, r).unwrap();
            prop_assert!(out.iter().all(|x| x.abs() <= r));
        }

        #[test]
        fn projection_is_idempotent(v in proptest::collection::vec(-50.0..50.0f64, 1..6),
                                    b in 0.1..30.0f64) {
            let p = project_cone_ball(&DVector::from_vec(v), b).unwrap();
            let q = project_cone_ball(&p, b).unwrap();
            prop_assert!((&p - &q).norm() <= 1e-12 * (1.0 + p.norm()));
        }
    }
}
