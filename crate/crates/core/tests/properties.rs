use std::sync::Arc;

use proptest::prelude::*;

use hs_lift::hermite::{enumerate_basis, Basis, BasisSpec};
use hs_lift::sobolev::{
    derivative_matrix, fourier_diagonal, multiplication_matrix, pairing, translate, translation_matrix,
    SobolevVector, TranslationMethod,
};
use hs_lift::spde::{apply_a_frozen, apply_l_frozen, monotonicity_gap_frozen};

fn vector(basis: &Arc<Basis>, coeffs: &[f64], p: f64) -> SobolevVector {
    let c: Vec<f64> = (0..basis.len()).map(|k| coeffs[k % coeffs.len()] / (1.0 + k as f64)).collect();
    SobolevVector::new(basis.clone(), c, p)
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norms_increase_with_index(c in coeffs(), q in -3.0f64..3.0, dq in 0.0f64..2.0) {
        let basis = Basis::one_dim(20);
        let v = vector(&basis, &c, 0.0);
        prop_assert!(v.norm(q) <= v.norm(q + dq) * (1.0 + 1e-12));
    }

    #[test]
    fn pairing_is_bounded_by_dual_norms(a in coeffs(), b in coeffs(), p in -2.0f64..2.0) {
        let basis = Basis::one_dim(20);
        let u = vector(&basis, &a, -p);
        let v = vector(&basis, &b, p);
        let lhs = pairing(&u, &v).unwrap().abs();
        prop_assert!(lhs <= u.norm(-p) * v.norm(p) * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn translation_is_linear(a in coeffs(), b in coeffs(), s in -2.0f64..2.0, t in -1.5f64..1.5, x in -1.5f64..1.5) {
        let basis = Basis::one_dim(20);
        let u = vector(&basis, &a, 1.0);
        let v = vector(&basis, &b, 1.0);
        let lhs = translate(&u.combine(s, &v, t).unwrap(), &[x]).unwrap();
        let rhs = translate(&u, &[x]).unwrap().combine(s, &translate(&v, &[x]).unwrap(), t).unwrap();
        let diff = lhs.sub(&rhs).unwrap().norm(0.0);
        prop_assert!(diff <= 1e-10 * (1.0 + lhs.norm(0.0)));
    }

    #[test]
    fn translation_preserves_the_l2_norm(a in coeffs(), x in -3.0f64..3.0) {
        let basis = Basis::one_dim(24);
        let u = vector(&basis, &a, 0.0);
        let t = translation_matrix(&[x], &basis, TranslationMethod::Exp).unwrap();
        let v = t.apply(&u, 0.0).unwrap();
        prop_assert!((v.norm(0.0) - u.norm(0.0)).abs() <= 1e-10 * u.norm(0.0));
    }

    #[test]
    fn opposite_translations_cancel(a in coeffs(), x in -3.0f64..3.0) {
        let basis = Basis::one_dim(24);
        let u = vector(&basis, &a, 0.0);
        let there = translation_matrix(&[x], &basis, TranslationMethod::Exp).unwrap();
        let back = translation_matrix(&[-x], &basis, TranslationMethod::Exp).unwrap();
        let w = back.apply(&there.apply(&u, 0.0).unwrap(), 0.0).unwrap();
        prop_assert!(w.sub(&u).unwrap().norm(0.0) <= 1e-10 * u.norm(0.0));
    }

    #[test]
    fn enumeration_round_trips(d in 1usize..4, n in 0u32..9) {
        let basis = Basis::new(BasisSpec::new(d, n));
        let listed = enumerate_basis(BasisSpec::new(d, n));
        prop_assert_eq!(listed.len(), basis.len());
        for (r, idx) in listed.iter().enumerate() {
            prop_assert_eq!(basis.rank_of(idx), Some(r));
            prop_assert!(idx.order() <= n);
        }
    }

    #[test]
    fn fourier_transform_is_an_isometry(a in coeffs(), p in -2.0f64..2.0) {
        let basis = Basis::one_dim(20);
        let v = vector(&basis, &a, 0.0);
        let f = fourier_diagonal(&basis);
        let image = f.norm_of_image(&v, p).unwrap();
        prop_assert!((image - v.norm(p)).abs() <= 1e-12 * (1.0 + v.norm(p)));
    }

    #[test]
    fn frozen_drift_operator_is_linear(a in coeffs(), b in coeffs(), s in -2.0f64..2.0, sig in -2.0f64..2.0, drift in -2.0f64..2.0) {
        let basis = Basis::one_dim(16);
        let u = vector(&basis, &a, 1.0);
        let v = vector(&basis, &b, 1.0);
        let lhs = apply_l_frozen(&u.combine(1.0, &v, s).unwrap(), &[sig], &[drift]);
        let rhs = apply_l_frozen(&u, &[sig], &[drift]).combine(1.0, &apply_l_frozen(&v, &[sig], &[drift]), s).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().norm(0.0) <= 1e-10 * (1.0 + lhs.norm(0.0)));
        let a1 = apply_a_frozen(&u, &[sig], 0);
        prop_assert!(a1.is_finite());
    }

    #[test]
    fn frozen_gap_is_finite_and_zero_at_unit_index(a in coeffs(), sig in -2.0f64..2.0, drift in -2.0f64..2.0) {
        let basis = Basis::one_dim(16);
        let u = vector(&basis, &a, 1.0);
        prop_assume!(u.norm(0.0) > 0.0);
        prop_assert_eq!(monotonicity_gap_frozen(&u, &[sig], &[drift], 1.0).unwrap(), 0.0);
        prop_assert!(monotonicity_gap_frozen(&u, &[sig], &[drift], 2.0).unwrap().is_finite());
    }
}

#[test]
fn derivative_is_skew_and_position_symmetric() {
    for (d, n) in [(1, 25), (2, 8)] {
        let basis = Basis::new(BasisSpec::new(d, n));
        for axis in 0..d {
            let dm = derivative_matrix(&basis, axis).unwrap().matrix;
            let mm = multiplication_matrix(&basis, axis).unwrap().matrix;
            assert!((&dm + dm.transpose()).amax() < 1e-14);
            assert!((&mm - mm.transpose()).amax() < 1e-14);
        }
    }
}

#[test]
fn canonical_commutation_on_the_interior() {
    // [∂, x] = I, exact away from the truncation edge
    let basis = Basis::new(BasisSpec::new(2, 10));
    for axis in 0..2 {
        let dm = derivative_matrix(&basis, axis).unwrap().matrix;
        let mm = multiplication_matrix(&basis, axis).unwrap().matrix;
        let c = &dm * &mm - &mm * &dm;
        for i in 0..basis.len() {
            if basis.order(i) >= 10 {
                continue;
            }
            for j in 0..basis.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c[(i, j)] - target).abs() < 1e-12, "entry ({i},{j}) on axis {axis}");
            }
        }
    }
}
