//! Property suite for the hyperbolic models.

use hypertopic_core::geometry::*;
use proptest::prelude::*;

fn curvature() -> impl Strategy<Value = Curvature> {
    prop_oneof![Just(-1.0), 0.2f64..3.0].prop_map(|c| Curvature::new(-c.abs()).unwrap())
}

/// Spatial coordinates of moderate size; `dim` in 2..=5.
fn coords(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, dim)
}

fn lorentz(c: Curvature, spatial: &[f64]) -> HyperPoint {
    let mut v = vec![0.0];
    v.extend_from_slice(spatial);
    project_into_domain(&v, Space::Lorentz(c)).unwrap()
}

/// A Poincaré point at hyperbolic radius below ~5 from the origin.
fn poincare(c: Curvature, raw: &[f64]) -> HyperPoint {
    to_poincare(&lorentz(c, raw)).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn pair() -> impl Strategy<Value = (Curvature, Vec<f64>, Vec<f64>)> {
    (curvature(), 2usize..=5).prop_flat_map(|(c, d)| (Just(c), coords(d), coords(d)))
}

fn triple() -> impl Strategy<Value = (Curvature, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (curvature(), 2usize..=5).prop_flat_map(|(c, d)| (Just(c), coords(d), coords(d), coords(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lorentz_and_poincare_distances_agree((c, a, b) in pair()) {
        let (x, y) = (lorentz(c, &a), lorentz(c, &b));
        let dl = distance(&x, &y).unwrap();
        let dp = distance(&to_poincare(&x).unwrap(), &to_poincare(&y).unwrap()).unwrap();
        prop_assert!((dl - dp).abs() < 1e-6, "{dl} vs {dp}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn metric_axioms((c, a, b, e) in triple()) {
        for space_is_lorentz in [false, true] {
            let pt = |v: &[f64]| if space_is_lorentz { lorentz(c, v) } else { poincare(c, v) };
            let (x, y, z) = (pt(&a), pt(&b), pt(&e));
            let dxy = distance(&x, &y).unwrap();
            prop_assert_eq!(dxy, distance(&y, &x).unwrap());
            prop_assert!(dxy >= 0.0);
            prop_assert!(distance(&x, &x).unwrap() < 1e-9);
            if a != b {
                prop_assert!(dxy > 1e-9 || max_abs_diff(&a, &b) < 1e-9);
            }
            let dxz = distance(&x, &z).unwrap();
            let dzy = distance(&z, &y).unwrap();
            prop_assert!(dxy <= dxz + dzy + 1e-7, "{dxy} > {dxz} + {dzy}");
        }
    }

    #[test]
    fn exp_inverts_log((c, a, b) in pair()) {
        for space_is_lorentz in [false, true] {
            let pt = |v: &[f64]| if space_is_lorentz { lorentz(c, v) } else { poincare(c, v) };
            let (x, y) = (pt(&a), pt(&b));
            let v = log_map(&x, &y).unwrap();
            let back = exp_map(&x, &v).unwrap();
            prop_assert!(max_abs_diff(back.coords(), y.coords()) < 1e-6);
        }
    }

    #[test]
    fn log_inverts_exp((c, a, b) in pair(), scale in 0.0f64..2.0) {
        for space_is_lorentz in [false, true] {
            let pt = |v: &[f64]| if space_is_lorentz { lorentz(c, v) } else { poincare(c, v) };
            let x = pt(&a);
            let dir: Vec<f64> = b.iter().map(|v| v * scale).collect();
            let v = parallel_transport(
                &HyperPoint::origin(x.space(), a.len()),
                &x,
                &origin_tangent(x.space(), &dir),
            ).unwrap();
            let back = log_map(&x, &exp_map(&x, &v).unwrap()).unwrap();
            let tol = 1e-6 * v.vec().iter().map(|a| a.abs()).fold(1.0, f64::max);
            prop_assert!(max_abs_diff(back.vec(), v.vec()) < tol);
        }
    }

    #[test]
    fn transport_preserves_norm((c, a, b) in pair(), e in coords(5)) {
        for space_is_lorentz in [false, true] {
            let pt = |v: &[f64]| if space_is_lorentz { lorentz(c, v) } else { poincare(c, v) };
            let (x, y) = (pt(&a), pt(&b));
            let v = parallel_transport(
                &HyperPoint::origin(x.space(), a.len()),
                &x,
                &origin_tangent(x.space(), &e[..a.len()]),
            ).unwrap();
            let w = parallel_transport(&x, &y, &v).unwrap();
            prop_assert!((v.riemannian_norm() - w.riemannian_norm()).abs() < 1e-6);
        }
    }

    #[test]
    fn conversions_round_trip((c, a, _b) in pair()) {
        let x = lorentz(c, &a);
        let back = to_lorentz(&to_poincare(&x).unwrap()).unwrap();
        let tol = 1e-9 * x.coords()[0].abs().max(1.0);
        prop_assert!(max_abs_diff(back.coords(), x.coords()) < tol);
    }
}

#[test]
fn origin_distance_is_ln_4() {
    let space = Space::Poincare(Curvature::UNIT);
    let d = distance(&HyperPoint::origin(space, 2), &HyperPoint::new(space, vec![0.6, 0.0]).unwrap()).unwrap();
    assert!((d - 4f64.ln()).abs() < 1e-9, "{d}");
    let l = to_lorentz(&HyperPoint::new(space, vec![0.6, 0.0]).unwrap()).unwrap();
    let dl = distance(&HyperPoint::origin(Space::Lorentz(Curvature::UNIT), 2), &l).unwrap();
    assert!((dl - 4f64.ln()).abs() < 1e-9, "{dl}");
}
