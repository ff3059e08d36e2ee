use cdskill_core::gmm::{em_fit, responsibilities, EmConfig};
use cdskill_core::spd::{decode, encode_matrix, DEFAULT_DELTA_MIN};
use cdskill_core::stiffness::{arm_geometry, cds_frame, endpoint_stiffness};
use cdskill_core::{ArmFrame, StiffnessParams};
use nalgebra::{DVector, Matrix3, Rotation3, SymmetricEigen, Vector3};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.0..1.0f64).prop_map(Vector3::from)
}

fn frame() -> impl Strategy<Value = ArmFrame> {
    (point(), point(), point())
        .prop_map(|(shoulder, elbow, wrist)| ArmFrame { t: 0.0, shoulder, elbow, wrist })
        .prop_filter("well-conditioned arm triangle", |f| {
            arm_geometry(f).is_ok_and(|g| g.n.norm() > 1e-3 * g.r.norm() * g.l.norm())
        })
}

fn params() -> impl Strategy<Value = StiffnessParams> {
    (0.05..2.0f64, 0.5..20.0f64, 0.1..1000.0f64).prop_map(|(alpha1, alpha2, a_cc)| StiffnessParams { alpha1, alpha2, a_cc })
}

fn spd(max_log_cond: f64) -> impl Strategy<Value = Matrix3<f64>> {
    (prop::array::uniform3(-3.2..3.2f64), -2.0..2.0f64, prop::array::uniform2(0.0..1.0f64)).prop_map(
        move |(angles, lo, mix)| {
            let q = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).into_inner();
            let ev = Vector3::new(lo, lo + max_log_cond * mix[0] * mix[1], lo + max_log_cond * mix[0]).map(|e| 10f64.powf(e));
            let k = q * Matrix3::from_diagonal(&ev) * q.transpose();
            (k + k.transpose()) * 0.5
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stiffness_is_spd_with_unit_shape_volume(f in frame(), p in params()) {
        let k = *endpoint_stiffness(&f, &p).unwrap().matrix();
        prop_assert!((k - k.transpose()).amax() <= 1e-10 * k.amax());
        prop_assert!(SymmetricEigen::new(k).eigenvalues.min() > 0.0);
        prop_assert!((k.determinant() / p.a_cc.powi(3) - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn frame_columns_follow_the_arm(f in frame()) {
        let g = arm_geometry(&f).unwrap();
        let v = cds_frame(&g);
        let (l, r) = (g.l.normalize(), g.r.normalize());
        prop_assert!((v.column(0).dot(&l) - 1.0).abs() <= 1e-10);
        prop_assert!(v.column(2).dot(&l).abs() <= 1e-10);
        prop_assert!(v.column(2).dot(&r).abs() <= 1e-10);
    }

    #[test]
    fn rotation_equivariance(f in frame(), angles in prop::array::uniform3(-3.2..3.2f64)) {
        let p = StiffnessParams::default();
        let r = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).into_inner();
        let k = *endpoint_stiffness(&f, &p).unwrap().matrix();
        let kr = *endpoint_stiffness(&f.map_points(|x| r * x), &p).unwrap().matrix();
        prop_assert!((kr - r * k * r.transpose()).amax() <= 1e-9);
    }

    #[test]
    fn translation_invariance(f in frame(), shift in point()) {
        let p = StiffnessParams::default();
        let k = *endpoint_stiffness(&f, &p).unwrap().matrix();
        let kt = *endpoint_stiffness(&f.map_points(|x| x + shift), &p).unwrap().matrix();
        prop_assert!((kt - k).amax() <= 1e-12);
    }

    #[test]
    fn a_cc_scales_eigenvalues_only(f in frame(), s in 0.1..50.0f64) {
        let p = StiffnessParams::default();
        let k1 = endpoint_stiffness(&f, &p).unwrap();
        let k2 = endpoint_stiffness(&f, &StiffnessParams { a_cc: p.a_cc * s, ..p }).unwrap();
        prop_assert!((k2.matrix() - k1.matrix() * s).amax() <= 1e-12 * s * k1.matrix().amax());
    }

    #[test]
    fn codec_round_trip(k in spd(8.0)) {
        let back = *decode(&encode_matrix(&k).unwrap().0, f64::MIN_POSITIVE).unwrap().matrix();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((back[(i, j)] - k[(i, j)]).abs() <= 1e-9 * (k[(i, i)] * k[(j, j)]).sqrt());
            }
        }
    }

    #[test]
    fn decode_is_always_spd(v in prop::array::uniform6(-5.0..5.0f64)) {
        let k = *decode(&v, DEFAULT_DELTA_MIN).unwrap().matrix();
        prop_assert_eq!(k, k.transpose());
        prop_assert!(nalgebra::Cholesky::new(k).is_some());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_is_monotone_and_responsibilities_normalized(
        pts in prop::collection::vec(prop::array::uniform2(-5.0..5.0f64), 40..120),
        k in 1usize..4,
        seed in 0u64..1000,
        q in prop::array::uniform2(-20.0..20.0f64),
    ) {
        let data: Vec<DVector<f64>> = pts.iter().map(|p| DVector::from_row_slice(p)).collect();
        let cfg = EmConfig { k, seed, ..EmConfig::default() };
        if let Ok((model, rep)) = em_fit(&data, &cfg) {
            for w in rep.loglik_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "objective dropped {} -> {}", w[0], w[1]);
            }
            let r = responsibilities(&model, &DVector::from_row_slice(&q)).unwrap();
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
