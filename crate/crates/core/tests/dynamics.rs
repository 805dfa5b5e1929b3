use nalgebra::{Vector3, Vector6};

use mvip_core::field::{FieldGroundTruth, FieldRegion};
use mvip_core::model::{rotation_matrix, PlatformGeometry, RigidState, Vector8};
use mvip_core::plant::{BaseProfile, CouplingMatrix, Plant, StepStatus};

fn free_geometry() -> PlatformGeometry {
    PlatformGeometry {
        cable_stiffness: Vector6::zeros(),
        cable_damping: Vector6::zeros(),
        gravity: 0.0,
        ..Default::default()
    }
}

fn fields() -> Vec<FieldGroundTruth> {
    vec![
        FieldGroundTruth {
            nominal_gain: 12.0,
            variation: 0.12,
            cubic_weight: 0.1,
            region: FieldRegion::symmetric(5e-3, 5e-3),
            scale: 1.0,
        };
        8
    ]
}

#[test]
fn free_translation_keeps_momentum() {
    let geom = free_geometry();
    let mut p = Plant::new(geom.clone(), CouplingMatrix::identity(), fields(), BaseProfile::Still, 4).unwrap();
    let v0 = Vector3::new(1e-4, -2e-4, 5e-5);
    p.set_relative_state(&RigidState { velocity: v0, ..Default::default() }).unwrap();
    for _ in 0..2000 {
        assert_eq!(p.step(&Vector8::zeros(), 5e-4).unwrap(), StepStatus::Running);
    }
    let s = p.relative_state().unwrap();
    assert!((s.velocity - v0).norm() < 1e-15);
    assert!((s.position - v0 * 1.0).norm() < 1e-15);
}

#[test]
fn torque_free_world_momentum_is_constant() {
    let geom = free_geometry();
    let mut p = Plant::new(geom.clone(), CouplingMatrix::identity(), fields(), BaseProfile::Still, 4).unwrap();
    p.set_relative_state(&RigidState { euler_rates: Vector3::new(0.04, 0.03, -0.05), ..Default::default() }).unwrap();
    let world_h = |p: &Plant| {
        let s = p.absolute_state().unwrap();
        rotation_matrix(&s.euler) * (geom.inertia * p.angular_velocity())
    };
    let h0 = world_h(&p);
    for _ in 0..20_000 {
        p.step(&Vector8::zeros(), 5e-4).unwrap();
    }
    assert!((world_h(&p) - h0).norm() < 1e-8 * h0.norm());
}

#[test]
fn leaving_the_stroke_stops_the_run() {
    let mut p = Plant::new(free_geometry(), CouplingMatrix::identity(), fields(), BaseProfile::Still, 4).unwrap();
    p.set_relative_state(&RigidState { velocity: Vector3::new(0.02, 0.0, 0.0), ..Default::default() }).unwrap();
    let mut stopped_at = None;
    for k in 0..1000 {
        if p.step(&Vector8::zeros(), 5e-4).unwrap() == StepStatus::ContactStop {
            stopped_at = Some(k);
            break;
        }
    }
    // 5 mm at 20 mm/s
    let k = stopped_at.expect("contact");
    assert!((k as f64 * 5e-4 - 0.25).abs() < 1e-3);
    assert!(p.in_contact());
}
