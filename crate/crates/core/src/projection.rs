//! Euclidean projections onto norm balls restricted to a coordinate support.

use nalgebra::DVector;

use crate::model::Norm;

/// Project `v` onto `{x : x_i = 0 for !support[i], ||x||_norm <= radius}`.
pub fn project_onto_ball(
    v: &DVector<f64>,
    norm: Norm,
    radius: f64,
    support: &[bool],
) -> DVector<f64> {
    debug_assert_eq!(v.len(), support.len());
    let mut x = v.clone();
    for (xi, &free) in x.iter_mut().zip(support) {
        if !free {
            *xi = 0.0;
        }
    }
    if radius <= 0.0 {
        x.fill(0.0);
        return x;
    }
    if radius.is_infinite() {
        return x;
    }
    match norm {
        Norm::L2 => {
            let n = x.norm();
            if n > radius {
                x *= radius / n;
            }
        }
        Norm::LInf => {
            for xi in x.iter_mut() {
                *xi = xi.clamp(-radius, radius);
            }
        }
        Norm::L1 => {
            if Norm::L1.of(&x) > radius {
                let shift = l1_threshold(&x, radius);
                for xi in x.iter_mut() {
                    *xi = xi.signum() * (xi.abs() - shift).max(0.0);
                }
            }
        }
    }
    x
}

/// Soft-threshold level that brings `||x||_1` down to `radius` (sort-based).
fn l1_threshold(x: &DVector<f64>, radius: f64) -> f64 {
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, &u) in mags.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - radius) / (k + 1) as f64;
        if u > candidate {
            shift = candidate;
        } else {
            break;
        }
    }
    shift.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn inside_points_are_fixed() {
        let all = [true; 3];
        let x = v(&[0.1, -0.2, 0.05]);
        for n in Norm::ALL {
            assert_eq!(project_onto_ball(&x, n, 1.0, &all), x);
        }
    }

    #[test]
    fn l1_example() {
        let p = project_onto_ball(&v(&[3.0, 1.0, -0.5]), Norm::L1, 2.0, &[true; 3]);
        // threshold 1: (2, 0, 0)
        assert_abs_diff_eq!(p[0], 2.0, epsilon = 1e-15);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.0);

        let p = project_onto_ball(&v(&[1.0, 1.0, -1.0]), Norm::L1, 1.5, &[true; 3]);
        for x in p.iter() {
            assert_abs_diff_eq!(x.abs(), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn support_is_enforced() {
        let p = project_onto_ball(&v(&[1.0, 5.0, -1.0]), Norm::L2, 10.0, &[true, false, true]);
        assert_eq!(p, v(&[1.0, 0.0, -1.0]));
        let z = project_onto_ball(&v(&[1.0, 5.0]), Norm::LInf, 0.0, &[true, true]);
        assert_eq!(z, v(&[0.0, 0.0]));
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_nearest(
            x in proptest::collection::vec(-5.0f64..5.0, 1..6),
            r in 0.01f64..4.0,
            probe in proptest::collection::vec(-1.0f64..1.0, 6),
            which in 0usize..3,
        ) {
            let norm = Norm::ALL[which];
            let support = vec![true; x.len()];
            let xv = v(&x);
            let p = project_onto_ball(&xv, norm, r, &support);
            prop_assert!(norm.of(&p) <= r * (1.0 + 1e-12));
            // any other feasible point is at least as far away
            let mut q = DVector::from_column_slice(&probe[..x.len()]);
            let qn = norm.of(&q);
            if qn > r {
                q *= r / qn;
            }
            prop_assert!((&xv - &p).norm() <= (&xv - &q).norm() + 1e-12);
        }
    }
}
