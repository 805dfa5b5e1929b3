use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use proptest::prelude::*;

use mvip_core::allocation::{allocate_minimax, allocate_qp, AllocatorState};
use mvip_core::harness::spectral::transmissibility;
use mvip_core::ident::{batch_least_squares, RlsEstimator};
use mvip_core::model::{
    build_mixing_matrix, euler_rate_map, euler_rate_map_inverse, required_stroke, rotation_matrix, PlatformGeometry,
    Vector8, Wrench,
};
use mvip_core::sensing::{PsdArray, Quantizer};

fn vec6(scale: f64) -> impl Strategy<Value = Vector6<f64>> {
    prop::array::uniform6(-scale..scale).prop_map(Vector6::from)
}

fn gains() -> impl Strategy<Value = Vector8> {
    prop::array::uniform8(8.0..16.0).prop_map(Vector8::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_meets_target_and_beats_null_moves(q in gains(), w in vec6(5.0), z in prop::array::uniform2(-1.0..1.0f64)) {
        let geom = PlatformGeometry::default();
        let st = AllocatorState::new(build_mixing_matrix(&geom), f64::INFINITY).with_gains(&q).unwrap();
        let r = allocate_qp(&st, &Wrench::from_vector(&w)).unwrap();
        let c = build_mixing_matrix(&geom);
        prop_assert!((c * r.forces - w).norm() <= 1e-9 * w.norm().max(1.0));
        let null = st.null_space_basis();
        let f = DVector::from_column_slice(r.forces.as_slice()) + &null * DVector::from_column_slice(&z);
        let cost = f.iter().zip(q.iter()).map(|(fi, qi)| (fi / qi).powi(2)).sum::<f64>();
        prop_assert!(cost >= r.cost * (1.0 - 1e-12));
        let m = allocate_minimax(&st, &Wrench::from_vector(&w)).unwrap();
        prop_assert!(r.cost <= m.cost * (1.0 + 1e-9));
        prop_assert!(m.currents.amax() <= r.currents.amax() * (1.0 + 1e-9));
        prop_assert!((c * m.forces - w).norm() <= 1e-8 * w.norm().max(1.0));
    }

    #[test]
    fn psd_round_trip(d in prop::array::uniform3(0.02..0.3f64), pose in vec6(5e-3)) {
        let psd = PsdArray::new(d).unwrap();
        prop_assert!((psd.inverse(&psd.forward(&pose)) - pose).amax() <= 1e-12);
    }

    #[test]
    fn quantizer_error_bounded(bits in 4u32..24, v in -0.999..0.999f64) {
        let q = Quantizer::new(bits, 1.0).unwrap();
        prop_assert!((q.quantize(v) - v).abs() <= q.lsb() / 2.0 + 1e-15);
        prop_assert_eq!(q.quantize(q.quantize(v)), q.quantize(v));
    }

    #[test]
    fn stroke_homogeneity(a in 0.01..10.0f64, f in 0.1..50.0f64, k in 0.1..10.0f64) {
        let s = required_stroke(a, f).unwrap();
        prop_assert!((required_stroke(k * a, f).unwrap() - k * s).abs() <= 1e-12 * k * s);
        prop_assert!((required_stroke(a, k * f).unwrap() - s / (k * k)).abs() <= 1e-12 * s / (k * k));
    }

    #[test]
    fn rotation_is_orthonormal(e in prop::array::uniform3(-1.2..1.2f64)) {
        let e = Vector3::from(e);
        let r = rotation_matrix(&e);
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() <= 1e-14);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-14);
        let t = euler_rate_map(&e).unwrap();
        prop_assert!((t * euler_rate_map_inverse(&e).unwrap() - Matrix3::identity()).amax() <= 1e-12);
    }

    #[test]
    fn wrench_vector_round_trip(v in vec6(100.0)) {
        prop_assert_eq!(Wrench::from_vector(&v).to_vector(), v);
    }

    #[test]
    fn rls_tracks_batch(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let truth = Matrix6::identity() + Matrix6::from_fn(|_, _| rng.random_range(-0.05..0.05));
        let mut est = RlsEstimator::default();
        let (mut ws, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..60 {
            let w = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let y = truth * w + Vector6::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
            est.update_target(&w, &y);
            ws.push(w);
            ys.push(y);
        }
        let batch = batch_least_squares(&ws, &ys, &Matrix6::identity(), est.initial_covariance()).unwrap();
        prop_assert!((est.estimate() - batch).norm() <= 1e-8 * batch.norm());
    }

    #[test]
    fn transmissibility_of_scaled_signal(k in 0.1..10.0f64, seed in 0u64..100) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..8192).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| k * v).collect();
        let est = transmissibility(&x, &y, 100.0, 1024).unwrap();
        let want = 20.0 * k.log10();
        for (db, f) in est.magnitude_db().iter().zip(&est.frequency_hz) {
            if *f > 0.0 {
                prop_assert!((db - want).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn mixing_has_two_dimensional_null_space() {
    let c = build_mixing_matrix(&PlatformGeometry::default());
    let svd = DMatrix::from_column_slice(6, 8, c.as_slice()).svd(false, false);
    assert!(svd.singular_values.iter().all(|s| *s > 1e-6));
    let st = AllocatorState::new(c, 2.0);
    let n = st.null_space_basis();
    assert_eq!(n.ncols(), 2);
    let cd = DMatrix::from_column_slice(6, 8, c.as_slice());
    assert!((cd * n).amax() < 1e-12);
}
