//! Platform geometry, the actuation mixing matrix and the rigid-body
//! kinematics shared by every other module.
//!
//! Pose vectors use the order `[x, y, z, alpha, beta, gamma]`, where the
//! Euler triple rotates about x, y and z respectively. All quantities are SI.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector6};
use thiserror::Error;

/// 6x8 map from actuator forces to the resultant wrench at the CoM.
pub type MixingMatrix = SMatrix<f64, 6, 8>;
/// One entry per actuator.
pub type Vector8 = SVector<f64, 8>;

/// Number of actuators on the platform.
pub const ACTUATOR_COUNT: usize = 8;

/// Minimum distance of the pitch angle from +-pi/2 before the Euler-rate map
/// is considered singular.
pub const GIMBAL_GUARD: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("pitch angle {beta} rad is within the gimbal guard of +-pi/2")]
    GimbalProximity { beta: f64 },
    #[error("vibration frequency must be positive, got {0} Hz")]
    NonPositiveFrequency(f64),
    #[error("invalid platform geometry: {0}")]
    InvalidGeometry(String),
}

/// Resultant force (N) and torque (N m) at the floater's CoM.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { force: v.fixed_rows::<3>(0).into_owned(), torque: v.fixed_rows::<3>(3).into_owned() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.force);
        v.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|x| x.is_finite())
    }
}

impl Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl Sub for Wrench {
    type Output = Wrench;
    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force - rhs.force, self.torque - rhs.torque)
    }
}

impl Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::new(-self.force, -self.torque)
    }
}

impl Mul<f64> for Wrench {
    type Output = Wrench;
    fn mul(self, k: f64) -> Wrench {
        Wrench::new(self.force * k, self.torque * k)
    }
}

/// Floater pose relative to the stator, and its rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidState {
    pub position: Vector3<f64>,
    /// Euler angles `(alpha, beta, gamma)`.
    pub euler: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub euler_rates: Vector3<f64>,
}

impl RigidState {
    pub fn at_rest() -> Self {
        Self::default()
    }

    pub fn pose(&self) -> Vector6<f64> {
        stack(&self.position, &self.euler)
    }

    pub fn pose_rates(&self) -> Vector6<f64> {
        stack(&self.velocity, &self.euler_rates)
    }

    pub fn from_pose(pose: &Vector6<f64>, rates: &Vector6<f64>) -> Self {
        Self {
            position: pose.fixed_rows::<3>(0).into_owned(),
            euler: pose.fixed_rows::<3>(3).into_owned(),
            velocity: rates.fixed_rows::<3>(0).into_owned(),
            euler_rates: rates.fixed_rows::<3>(3).into_owned(),
        }
    }

    /// Body angular velocity `T(q) q_dot`.
    pub fn angular_velocity(&self) -> Result<Vector3<f64>, ModelError> {
        Ok(euler_rate_map(&self.euler)? * self.euler_rates)
    }
}

pub(crate) fn stack(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

/// Mass properties, moment arms, sensor offsets and cable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformGeometry {
    /// Moment arm L1 of the mixing matrix (m).
    pub arm_l1: f64,
    /// Moment arm L2 of the mixing matrix (m).
    pub arm_l2: f64,
    /// PSD offsets d1, d2, d3 (m).
    pub sensor_offsets: [f64; 3],
    pub mass: f64,
    /// Full, symmetric positive definite inertia about the CoM.
    pub inertia: Matrix3<f64>,
    /// Diagonal cable stiffness (N/m for translation, N m/rad for rotation).
    pub cable_stiffness: Vector6<f64>,
    /// Diagonal cable damping (N s/m, N m s/rad).
    pub cable_damping: Vector6<f64>,
    /// Gravitational acceleration along +z (m/s^2); zero in orbit.
    pub gravity: f64,
    /// Half-ranges of the translational stroke box (m).
    pub stroke_half_range: Vector3<f64>,
}

impl Default for PlatformGeometry {
    fn default() -> Self {
        Self {
            arm_l1: 0.15,
            arm_l2: 0.08,
            sensor_offsets: [0.1, 0.1, 0.1],
            mass: 15.0,
            inertia: Matrix3::new(0.15, 0.004, 0.002, 0.004, 0.16, -0.003, 0.002, -0.003, 0.25),
            cable_stiffness: Vector6::new(60.0, 60.0, 60.0, 2.0, 2.0, 2.0),
            cable_damping: Vector6::new(1.2, 1.2, 1.2, 0.02, 0.02, 0.02),
            gravity: 0.0,
            stroke_half_range: Vector3::new(0.005, 0.005, 0.004),
        }
    }
}

impl PlatformGeometry {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidGeometry(msg.to_string()));
        if !(self.arm_l1 > 0.0 && self.arm_l2 > 0.0) {
            return bad("moment arms must be positive");
        }
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        let [d1, d2, d3] = self.sensor_offsets;
        if !(d1 + d3 > 0.0 && d2 > 0.0) {
            return bad("sensor offsets need d1 + d3 > 0 and d2 > 0");
        }
        if (self.inertia - self.inertia.transpose()).abs().max() > 1e-12 * self.inertia.abs().max() {
            return bad("inertia must be symmetric");
        }
        if self.inertia.cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        if self.cable_stiffness.iter().chain(self.cable_damping.iter()).any(|&k| !(k >= 0.0)) {
            return bad("cable stiffness and damping must be non-negative");
        }
        if self.stroke_half_range.iter().any(|&h| !(h > 0.0)) {
            return bad("stroke half-ranges must be positive");
        }
        if !self.gravity.is_finite() {
            return bad("gravity must be finite");
        }
        Ok(())
    }

    /// Block-diagonal `diag(m I, J_F)` used by the coupling model.
    pub fn spatial_inertia(&self) -> SMatrix<f64, 6, 6> {
        let mut m = SMatrix::<f64, 6, 6>::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.inertia);
        m
    }

    /// Scalar inertia seen by each decoupled axis loop: the mass for
    /// translations, the diagonal of `J_F` for rotations.
    pub fn axis_inertia(&self) -> [f64; 6] {
        [self.mass, self.mass, self.mass, self.inertia[(0, 0)], self.inertia[(1, 1)], self.inertia[(2, 2)]]
    }

    /// Gravity force `G = (0, 0, m g)`.
    pub fn gravity_force(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.mass * self.gravity)
    }

    /// True when the relative position lies inside the stroke box.
    pub fn within_stroke(&self, position: &Vector3<f64>) -> bool {
        position.iter().zip(self.stroke_half_range.iter()).all(|(p, h)| p.abs() <= *h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisClass {
    HorizontalX,
    HorizontalY,
    Vertical,
}

/// Mounting data of one actuator in the floater frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorMount {
    pub axis: AxisClass,
    pub position: Vector3<f64>,
    /// +1 or -1: sign of the force axis relative to the frame axis.
    pub sign: f64,
    /// Outward normal of the platform side carrying the actuator; this is
    /// the magnet gap direction and the coil's local y axis.
    pub gap_normal: Vector3<f64>,
}

impl ActuatorMount {
    /// Unit vector of the force produced by a positive actuator command.
    pub fn force_direction(&self) -> Vector3<f64> {
        let e = match self.axis {
            AxisClass::HorizontalX => Vector3::x(),
            AxisClass::HorizontalY => Vector3::y(),
            AxisClass::Vertical => Vector3::z(),
        };
        e * self.sign
    }
}

/// Placement of the eight actuators: odd numbers horizontal, even numbers
/// vertical, one of each on every side of the floater.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorLayout {
    pub mounts: [ActuatorMount; ACTUATOR_COUNT],
}

impl ActuatorLayout {
    pub fn from_geometry(geom: &PlatformGeometry) -> Self {
        let (l1, l2) = (geom.arm_l1, geom.arm_l2);
        let m = |axis, x, y, sign, nx, ny| ActuatorMount {
            axis,
            position: Vector3::new(x, y, 0.0),
            sign,
            gap_normal: Vector3::new(nx, ny, 0.0),
        };
        use AxisClass::*;
        Self {
            mounts: [
                m(HorizontalX, 0.0, l1, 1.0, 0.0, 1.0),
                m(Vertical, l2, l1, 1.0, 0.0, 1.0),
                m(HorizontalY, l1, 0.0, 1.0, 1.0, 0.0),
                m(Vertical, l1, -l2, 1.0, 1.0, 0.0),
                m(HorizontalX, 0.0, -l1, -1.0, 0.0, -1.0),
                m(Vertical, -l2, -l1, 1.0, 0.0, -1.0),
                m(HorizontalY, -l1, 0.0, -1.0, -1.0, 0.0),
                m(Vertical, -l1, l2, 1.0, -1.0, 0.0),
            ],
        }
    }

    /// Mixing matrix implied by the mounts, `[e_i; r_i x e_i]` per column.
    pub fn mixing_from_mounts(&self) -> MixingMatrix {
        let mut c = MixingMatrix::zeros();
        for (i, mount) in self.mounts.iter().enumerate() {
            let e = mount.force_direction();
            let tau = mount.position.cross(&e);
            c.set_column(i, &stack(&e, &tau));
        }
        c
    }
}

/// The actuation mixing matrix `C_K`.
pub fn build_mixing_matrix(geom: &PlatformGeometry) -> MixingMatrix {
    let (l1, l2) = (geom.arm_l1, geom.arm_l2);
    #[rustfmt::skip]
    let c = MixingMatrix::from_row_slice(&[
        1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0,
        0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0,
        0.0, l1, 0.0, -l2, 0.0, -l1, 0.0, l2,
        0.0, -l2, 0.0, -l1, 0.0, l2, 0.0, l1,
        -l1, 0.0, l1, 0.0, -l1, 0.0, l1, 0.0,
    ]);
    c
}

pub fn apply_mixing(mixing: &MixingMatrix, forces: &Vector8) -> Wrench {
    Wrench::from_vector(&(mixing * forces))
}

/// Numeric rank with singular values below `1e-9 * sigma_max` treated as zero.
pub fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-9 * smax).count()
}

/// Rotation block of the floater-to-stator transform, `Rx(alpha) Ry(beta) Rz(gamma)`.
pub fn rotation_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sa, ca) = euler.x.sin_cos();
    let (sb, cb) = euler.y.sin_cos();
    let (sg, cg) = euler.z.sin_cos();
    Matrix3::new(
        cb * cg,
        -cb * sg,
        sb,
        sa * sb * cg + ca * sg,
        -sa * sb * sg + ca * cg,
        -sa * cb,
        -ca * sb * cg + sa * sg,
        ca * sb * sg + sa * cg,
        ca * cb,
    )
}

/// Homogeneous transform from floater to stator coordinates.
pub fn homogeneous_transform(euler: &Vector3<f64>, position: &Vector3<f64>) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation_matrix(euler));
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(position);
    t
}

fn check_gimbal(euler: &Vector3<f64>) -> Result<(), ModelError> {
    let beta = euler.y;
    // distance to the nearest odd multiple of pi/2
    let wrapped = (beta - FRAC_PI_2).rem_euclid(PI);
    let dist = wrapped.min(PI - wrapped);
    if !beta.is_finite() || dist <= GIMBAL_GUARD {
        return Err(ModelError::GimbalProximity { beta });
    }
    Ok(())
}

/// Map `T(q)` with `omega = T q_dot` (body-frame angular velocity).
pub fn euler_rate_map(euler: &Vector3<f64>) -> Result<Matrix3<f64>, ModelError> {
    check_gimbal(euler)?;
    Ok(euler_rate_map_unchecked(euler))
}

pub(crate) fn euler_rate_map_unchecked(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sb, cb) = euler.y.sin_cos();
    let (sg, cg) = euler.z.sin_cos();
    Matrix3::new(cb * cg, sg, 0.0, -cb * sg, cg, 0.0, sb, 0.0, 1.0)
}

/// Closed-form inverse of [`euler_rate_map`].
pub fn euler_rate_map_inverse(euler: &Vector3<f64>) -> Result<Matrix3<f64>, ModelError> {
    check_gimbal(euler)?;
    let (sb, cb) = euler.y.sin_cos();
    let (sg, cg) = euler.z.sin_cos();
    Ok(Matrix3::new(cg / cb, -sg / cb, 0.0, sg, cg, 0.0, -sb * cg / cb, sb * sg / cb, 1.0))
}

/// RMS stroke needed to ride out a sinusoidal disturbance of acceleration
/// amplitude `accel` (m/s^2) at `frequency` (Hz).
pub fn required_stroke(accel: f64, frequency: f64) -> Result<f64, ModelError> {
    if !(frequency > 0.0) {
        return Err(ModelError::NonPositiveFrequency(frequency));
    }
    let w = 2.0 * PI * frequency;
    Ok(accel / (w * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(i: usize) -> Vector8 {
        let mut v = Vector8::zeros();
        v[i] = 1.0;
        v
    }

    #[test]
    fn mixing_columns_match_layout() {
        let g = PlatformGeometry::default();
        let c = build_mixing_matrix(&g);
        let from_layout = ActuatorLayout::from_geometry(&g).mixing_from_mounts();
        assert_relative_eq!(c, from_layout, epsilon = 1e-15);
    }

    #[test]
    fn single_actuator_wrenches() {
        let g = PlatformGeometry::default();
        let c = build_mixing_matrix(&g);
        let w1 = apply_mixing(&c, &unit(0));
        assert_eq!(w1.force, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(w1.torque, Vector3::new(0.0, 0.0, -g.arm_l1));
        let w2 = apply_mixing(&c, &unit(1));
        assert_eq!(w2.force, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(w2.torque, Vector3::new(g.arm_l1, -g.arm_l2, 0.0));
    }

    #[test]
    fn symmetric_vertical_and_opposed_horizontal() {
        let g = PlatformGeometry::default();
        let c = build_mixing_matrix(&g);
        let w = apply_mixing(&c, &Vector8::from_column_slice(&[0., 1., 0., 1., 0., 1., 0., 1.]));
        assert_relative_eq!(w.force, Vector3::new(0.0, 0.0, 4.0));
        assert_relative_eq!(w.torque, Vector3::zeros(), epsilon = 1e-15);
        let w = apply_mixing(&c, &Vector8::from_column_slice(&[1., 0., 0., 0., 1., 0., 0., 0.]));
        assert_relative_eq!(w.force, Vector3::zeros());
        assert_relative_eq!(w.torque, Vector3::new(0.0, 0.0, -2.0 * g.arm_l1));
        assert_eq!(apply_mixing(&c, &Vector8::zeros()), Wrench::zero());
    }

    #[test]
    fn mixing_has_full_row_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = PlatformGeometry {
                arm_l1: rng.random_range(0.01..1.0),
                arm_l2: rng.random_range(0.01..1.0),
                ..Default::default()
            };
            let c = build_mixing_matrix(&g);
            assert_eq!(numeric_rank(&DMatrix::from_column_slice(6, 8, c.as_slice())), 6);
        }
    }

    #[test]
    fn rotation_identity_and_orthonormal() {
        assert_eq!(rotation_matrix(&Vector3::zeros()), Matrix3::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let q = Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let r = rotation_matrix(&q);
            assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_is_x_then_y_then_z_composition() {
        let q = Vector3::new(0.3, -0.2, 0.7);
        let rx = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), q.x);
        let ry = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), q.y);
        let rz = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), q.z);
        let composed = (rx * ry * rz).into_inner();
        assert_relative_eq!(rotation_matrix(&q), composed, epsilon = 1e-14);
    }

    #[test]
    fn pure_pitch_entries() {
        let th = 0.4_f64;
        let r = rotation_matrix(&Vector3::new(0.0, th, 0.0));
        let expect = Matrix3::new(th.cos(), 0.0, th.sin(), 0.0, 1.0, 0.0, -th.sin(), 0.0, th.cos());
        assert_relative_eq!(r, expect, epsilon = 1e-15);
        let t = homogeneous_transform(&Vector3::new(0.0, th, 0.0), &Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t[(0, 3)], 1.0);
        assert_eq!(t[(3, 3)], 1.0);
    }

    #[test]
    fn euler_rate_map_identity_and_singularity() {
        assert_eq!(euler_rate_map(&Vector3::zeros()).unwrap(), Matrix3::identity());
        let err = euler_rate_map(&Vector3::new(0.0, FRAC_PI_2, 0.0)).unwrap_err();
        assert!(matches!(err, ModelError::GimbalProximity { .. }));
        assert!(euler_rate_map(&Vector3::new(0.0, -FRAC_PI_2 + 5e-4, 0.0)).is_err());
        // det T = cos(beta)
        let q = Vector3::new(0.1, 1.2, -0.4);
        assert_relative_eq!(euler_rate_map(&q).unwrap().determinant(), q.y.cos(), epsilon = 1e-14);
    }

    #[test]
    fn euler_rate_map_matches_finite_difference_kinematics() {
        // omega_body^ = R^T dR/dt
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let q = Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            let qd = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let h = 1e-6;
            let rdot = (rotation_matrix(&(q + qd * h)) - rotation_matrix(&(q - qd * h))) / (2.0 * h);
            let skew = rotation_matrix(&q).transpose() * rdot;
            let omega_fd = Vector3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)]);
            let omega = euler_rate_map(&q).unwrap() * qd;
            assert_relative_eq!(omega, omega_fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn euler_rate_inverse_is_inverse() {
        let q = Vector3::new(0.15, -0.18, 0.12);
        let t = euler_rate_map(&q).unwrap();
        let ti = euler_rate_map_inverse(&q).unwrap();
        assert_relative_eq!(t * ti, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn stroke_sizing() {
        let x = required_stroke(0.98, 3.0).unwrap();
        assert_relative_eq!(x, 2.758e-3, epsilon = 1e-6);
        assert_eq!(required_stroke(0.0, 5.0).unwrap(), 0.0);
        assert_relative_eq!(required_stroke(1.0, 1.0 / (2.0 * PI)).unwrap(), 1.0, epsilon = 1e-14);
        assert!(matches!(required_stroke(1.0, 0.0), Err(ModelError::NonPositiveFrequency(_))));
        // degree 1 in accel, degree -2 in frequency
        let base = required_stroke(0.3, 2.0).unwrap();
        assert_relative_eq!(required_stroke(0.6, 2.0).unwrap(), 2.0 * base, max_relative = 1e-14);
        assert_relative_eq!(required_stroke(0.3, 4.0).unwrap(), base / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn geometry_validation() {
        assert!(PlatformGeometry::default().validate().is_ok());
        let g = PlatformGeometry { mass: 0.0, ..Default::default() };
        assert!(g.validate().is_err());
        let mut g = PlatformGeometry::default();
        g.inertia[(0, 1)] = 1.0;
        assert!(g.validate().is_err());
        let mut g = PlatformGeometry::default();
        g.cable_damping[2] = -1.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn wrench_vector_roundtrip() {
        let v = Vector6::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        assert_eq!(Wrench::from_vector(&v).to_vector(), v);
    }
}
