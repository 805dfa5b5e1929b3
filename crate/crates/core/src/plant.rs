//! Simulated floater: cable wrench, coupling injection, Newton-Euler
//! equations of motion, base excitation and a fixed-step RK4 integrator.
//!
//! The integrated state is `[p, q, v, omega]`: absolute position, Euler
//! angles, absolute linear velocity and body angular velocity. Cable forces
//! and actuator gains depend on the pose relative to the moving base.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix6, SVector, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::field::{coil_offset, FieldGroundTruth};
use crate::model::{
    build_mixing_matrix, euler_rate_map_inverse, stack, ActuatorLayout, MixingMatrix, ModelError, PlatformGeometry,
    RigidState, Vector8, Wrench, ACTUATOR_COUNT,
};

/// Coupling matrices at or above this condition number are rejected.
pub const MAX_COUPLING_CONDITION: f64 = 1e6;

pub type PlantVector = SVector<f64, 12>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state became non-finite at t = {0} s")]
    NonFiniteState(f64),
    #[error("integration step must be positive, got {0}")]
    BadStep(f64),
    #[error("invalid base profile: {0}")]
    BadProfile(String),
    #[error("coupling matrix is singular or ill-conditioned (condition {0:.3e})")]
    SingularCoupling(f64),
    #[error("expected {ACTUATOR_COUNT} field surfaces, got {0}")]
    FieldCount(usize),
}

/// Cross-coupling `R_cp` between commanded and applied wrench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMatrix(Matrix6<f64>);

impl CouplingMatrix {
    pub fn identity() -> Self {
        Self(Matrix6::identity())
    }

    pub fn new(m: Matrix6<f64>) -> Result<Self, PlantError> {
        let cond = condition_number(&m);
        if !(cond < MAX_COUPLING_CONDITION) {
            return Err(PlantError::SingularCoupling(cond));
        }
        Ok(Self(m))
    }

    /// `I + magnitude * U`, `U` uniform in `[-1, 1]` entrywise, seeded.
    pub fn perturbed(magnitude: f64, seed: u64) -> Result<Self, PlantError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Matrix6::from_fn(|_, _| rng.random_range(-1.0..=1.0));
        Self::new(Matrix6::identity() + u * magnitude)
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &Matrix6<f64>) -> f64 {
    let sv = m.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Restoring cable wrench `-(K [p; q] + D [p_dot; q_dot])` for a state
/// relative to the base.
pub fn cable_wrench(geom: &PlatformGeometry, relative: &RigidState) -> Wrench {
    let k = &geom.cable_stiffness;
    let d = &geom.cable_damping;
    let f = -(k.component_mul(&relative.pose()) + d.component_mul(&relative.pose_rates()));
    Wrench::from_vector(&f)
}

/// Stator pose, velocity and acceleration at one instant (pose order).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaseSample {
    pub pose: Vector6<f64>,
    pub velocity: Vector6<f64>,
    pub acceleration: Vector6<f64>,
}

/// Stator motion along one pose axis (0..6).
#[derive(Debug, Clone, PartialEq)]
pub enum BaseProfile {
    Still,
    /// Acceleration `A sin(2 pi f t)`.
    Sine {
        axis: usize,
        accel_amplitude: f64,
        frequency: f64,
    },
    /// Exponential sweep from `f_start` to `f_end` over `duration` with
    /// constant acceleration amplitude.
    LogSweep {
        axis: usize,
        accel_amplitude: f64,
        f_start: f64,
        f_end: f64,
        duration: f64,
    },
}

impl BaseProfile {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::BadProfile(m.into()));
        match *self {
            BaseProfile::Still => Ok(()),
            BaseProfile::Sine { axis, accel_amplitude, frequency } => {
                if axis >= 6 {
                    return bad("axis must be 0..6");
                }
                if !(frequency > 0.0) || !accel_amplitude.is_finite() {
                    return bad("sine needs a positive frequency and finite amplitude");
                }
                Ok(())
            }
            BaseProfile::LogSweep { axis, accel_amplitude, f_start, f_end, duration } => {
                if axis >= 6 {
                    return bad("axis must be 0..6");
                }
                if !(f_start > 0.0 && f_end > 0.0 && f_end != f_start && duration > 0.0) || !accel_amplitude.is_finite()
                {
                    return bad("sweep needs distinct positive frequencies and a positive duration");
                }
                Ok(())
            }
        }
    }

    /// Instantaneous excitation frequency (Hz); zero when still.
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        match *self {
            BaseProfile::Still => 0.0,
            BaseProfile::Sine { frequency, .. } => frequency,
            BaseProfile::LogSweep { f_start, f_end, duration, .. } => {
                f_start * (t / sweep_rate_constant(f_start, f_end, duration)).exp()
            }
        }
    }

    fn axis_motion(&self, t: f64) -> (usize, f64, f64, f64) {
        match *self {
            BaseProfile::Still => (0, 0.0, 0.0, 0.0),
            BaseProfile::Sine { axis, accel_amplitude: a, frequency } => {
                let w = 2.0 * PI * frequency;
                let (s, c) = (w * t).sin_cos();
                (axis, -a * s / (w * w), -a * c / w, a * s)
            }
            BaseProfile::LogSweep { axis, accel_amplitude: a, f_start, f_end, duration } => {
                // omega = w0 e^(t/L), phase = w0 L (e^(t/L) - 1), x = -A sin(phase) / omega^2
                let l = sweep_rate_constant(f_start, f_end, duration);
                let w0 = 2.0 * PI * f_start;
                let e = (t / l).exp();
                let w = w0 * e;
                let phase = w0 * l * (e - 1.0);
                let (s, c) = phase.sin_cos();
                let u = 1.0 / w;
                let x = -a * s * u * u;
                let v = -a * (c * u - 2.0 * s * u * u / l);
                let acc = a * s + 3.0 * a * c * u / l - 4.0 * a * s * u * u / (l * l);
                (axis, x, v, acc)
            }
        }
    }

    pub fn sample(&self, t: f64) -> BaseSample {
        let (axis, x, v, a) = self.axis_motion(t);
        let mut out = BaseSample::default();
        if !matches!(self, BaseProfile::Still) {
            out.pose[axis] = x;
            out.velocity[axis] = v;
            out.acceleration[axis] = a;
        }
        out
    }
}

fn sweep_rate_constant(f_start: f64, f_end: f64, duration: f64) -> f64 {
    duration / (f_end / f_start).ln()
}

pub fn base_excitation(profile: &BaseProfile, t: f64) -> Result<BaseSample, PlantError> {
    profile.validate()?;
    Ok(profile.sample(t))
}

fn split(x: &PlantVector) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    (
        x.fixed_rows::<3>(0).into_owned(),
        x.fixed_rows::<3>(3).into_owned(),
        x.fixed_rows::<3>(6).into_owned(),
        x.fixed_rows::<3>(9).into_owned(),
    )
}

/// Absolute floater state (Euler rates recovered from the body rates).
pub fn rigid_state(x: &PlantVector) -> Result<RigidState, PlantError> {
    let (p, q, v, w) = split(x);
    Ok(RigidState { position: p, euler: q, velocity: v, euler_rates: euler_rate_map_inverse(&q)? * w })
}

/// Integrated state vector of an absolute floater state.
pub fn plant_vector(state: &RigidState) -> Result<PlantVector, PlantError> {
    let w = state.angular_velocity()?;
    let mut x = PlantVector::zeros();
    x.fixed_rows_mut::<3>(0).copy_from(&state.position);
    x.fixed_rows_mut::<3>(3).copy_from(&state.euler);
    x.fixed_rows_mut::<3>(6).copy_from(&state.velocity);
    x.fixed_rows_mut::<3>(9).copy_from(&w);
    Ok(x)
}

/// Floater state relative to the base.
pub fn relative_state(x: &PlantVector, base: &BaseSample) -> Result<RigidState, PlantError> {
    let abs = rigid_state(x)?;
    Ok(RigidState::from_pose(&(abs.pose() - base.pose), &(abs.pose_rates() - base.velocity)))
}

/// Time derivative of the plant state for a commanded CoM wrench.
pub fn dynamics_rhs(
    geom: &PlatformGeometry,
    coupling: &CouplingMatrix,
    x: &PlantVector,
    base: &BaseSample,
    commanded: &Wrench,
) -> Result<PlantVector, PlantError> {
    let (_, q, v, w) = split(x);
    let t_inv = euler_rate_map_inverse(&q)?;
    let rel = relative_state(x, base)?;
    let cable = cable_wrench(geom, &rel);
    let applied = Wrench::from_vector(&(coupling.matrix() * commanded.to_vector()));
    let j = &geom.inertia;
    let acc = (applied.force + cable.force + geom.gravity_force()) / geom.mass;
    let rhs_rot = applied.torque + cable.torque - w.cross(&(j * w));
    let wdot = j.lu().solve(&rhs_rot).ok_or(PlantError::NonFiniteState(f64::NAN))?;
    let mut d = PlantVector::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&v);
    d.fixed_rows_mut::<3>(3).copy_from(&(t_inv * w));
    d.fixed_rows_mut::<3>(6).copy_from(&acc);
    d.fixed_rows_mut::<3>(9).copy_from(&wdot);
    Ok(d)
}

/// One classical Runge-Kutta step of `x' = f(t, x)`.
pub fn rk4_step<const N: usize, F>(
    mut f: F,
    t: f64,
    x: &SVector<f64, N>,
    dt: f64,
) -> Result<SVector<f64, N>, PlantError>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>, PlantError>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(PlantError::BadStep(dt));
    }
    let k1 = f(t, x)?;
    let k2 = f(t + dt / 2.0, &(x + k1 * (dt / 2.0)))?;
    let k3 = f(t + dt / 2.0, &(x + k2 * (dt / 2.0)))?;
    let k4 = f(t + dt, &(x + k3 * dt))?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::NonFiniteState(t + dt));
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Running,
    /// The floater left the stroke box; the run must stop.
    ContactStop,
}

/// Floater driven by coil currents through position-dependent gains.
#[derive(Debug, Clone)]
pub struct Plant {
    geometry: PlatformGeometry,
    coupling: CouplingMatrix,
    layout: ActuatorLayout,
    mixing: MixingMatrix,
    fields: Vec<FieldGroundTruth>,
    base: BaseProfile,
    substeps: usize,
    x: PlantVector,
    t: f64,
    contact: bool,
}

impl Plant {
    /// Floater starts centred on the base, moving with the base velocity.
    pub fn new(
        geometry: PlatformGeometry,
        coupling: CouplingMatrix,
        fields: Vec<FieldGroundTruth>,
        base: BaseProfile,
        substeps: usize,
    ) -> Result<Self, PlantError> {
        geometry.validate()?;
        base.validate()?;
        if fields.len() != ACTUATOR_COUNT {
            return Err(PlantError::FieldCount(fields.len()));
        }
        let layout = ActuatorLayout::from_geometry(&geometry);
        let mixing = build_mixing_matrix(&geometry);
        let b0 = base.sample(0.0);
        let start = RigidState::from_pose(&b0.pose, &b0.velocity);
        let x = plant_vector(&start)?;
        Ok(Self {
            geometry,
            coupling,
            layout,
            mixing,
            fields,
            base,
            substeps: substeps.max(1),
            x,
            t: 0.0,
            contact: false,
        })
    }

    pub fn geometry(&self) -> &PlatformGeometry {
        &self.geometry
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn layout(&self) -> &ActuatorLayout {
        &self.layout
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn vector(&self) -> &PlantVector {
        &self.x
    }

    pub fn in_contact(&self) -> bool {
        self.contact
    }

    /// Places the floater at `relative` to the current base pose.
    pub fn set_relative_state(&mut self, relative: &RigidState) -> Result<(), PlantError> {
        let b = self.base.sample(self.t);
        let abs = RigidState::from_pose(&(relative.pose() + b.pose), &(relative.pose_rates() + b.velocity));
        self.x = plant_vector(&abs)?;
        Ok(())
    }

    pub fn base_sample(&self) -> BaseSample {
        self.base.sample(self.t)
    }

    pub fn absolute_state(&self) -> Result<RigidState, PlantError> {
        rigid_state(&self.x)
    }

    pub fn relative_state(&self) -> Result<RigidState, PlantError> {
        relative_state(&self.x, &self.base.sample(self.t))
    }

    /// Body angular velocity.
    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(9).into_owned()
    }

    /// True gains `Q_i` at the coil offsets implied by a relative pose.
    pub fn gains_at(&self, relative: &RigidState) -> Vector8 {
        Vector8::from_fn(|i, _| {
            let (y, z) = coil_offset(&self.layout, &relative.position, &relative.euler, i);
            self.fields[i].gain(y, z)
        })
    }

    fn commanded_wrench(&self, x: &PlantVector, base: &BaseSample, currents: &Vector8) -> Result<Wrench, PlantError> {
        let rel = relative_state(x, base)?;
        let forces = self.gains_at(&rel).component_mul(currents);
        Ok(Wrench::from_vector(&(self.mixing * forces)))
    }

    /// Wrench the actuators produce at the current state, before coupling.
    pub fn actuator_wrench(&self, currents: &Vector8) -> Result<Wrench, PlantError> {
        self.commanded_wrench(&self.x, &self.base.sample(self.t), currents)
    }

    /// Wrench acting on the floater after coupling.
    pub fn applied_wrench(&self, currents: &Vector8) -> Result<Wrench, PlantError> {
        let w = self.actuator_wrench(currents)?;
        Ok(Wrench::from_vector(&(self.coupling.matrix() * w.to_vector())))
    }

    fn rhs(&self, t: f64, x: &PlantVector, currents: &Vector8) -> Result<PlantVector, PlantError> {
        let base = self.base.sample(t);
        let w = self.commanded_wrench(x, &base, currents)?;
        dynamics_rhs(&self.geometry, &self.coupling, x, &base, &w)
    }

    /// State derivative at the current instant for the given currents.
    pub fn derivative(&self, currents: &Vector8) -> Result<PlantVector, PlantError> {
        self.rhs(self.t, &self.x, currents)
    }

    /// `[absolute linear acceleration; body angular acceleration]`.
    pub fn accelerations(&self, currents: &Vector8) -> Result<Vector6<f64>, PlantError> {
        let d = self.derivative(currents)?;
        Ok(stack(&d.fixed_rows::<3>(6).into_owned(), &d.fixed_rows::<3>(9).into_owned()))
    }

    /// Advances by `dt` with the currents held, using `substeps` RK4 steps.
    pub fn step(&mut self, currents: &Vector8, dt: f64) -> Result<StepStatus, PlantError> {
        if !(dt > 0.0) {
            return Err(PlantError::BadStep(dt));
        }
        if self.contact {
            return Ok(StepStatus::ContactStop);
        }
        let h = dt / self.substeps as f64;
        for k in 0..self.substeps {
            let t0 = self.t + k as f64 * h;
            self.x = rk4_step(|t, x| self.rhs(t, x, currents), t0, &self.x, h)?;
        }
        self.t += dt;
        let rel = self.relative_state()?;
        if !self.geometry.within_stroke(&rel.position) {
            self.contact = true;
            return Ok(StepStatus::ContactStop);
        }
        Ok(StepStatus::Running)
    }
}

/// Rotational kinetic energy and angular momentum norm for body rates.
pub fn rotational_invariants(inertia: &Matrix3<f64>, omega: &Vector3<f64>) -> (f64, f64) {
    let h = inertia * omega;
    (0.5 * omega.dot(&h), h.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;

    fn free_geometry() -> PlatformGeometry {
        PlatformGeometry {
            cable_stiffness: Vector6::zeros(),
            cable_damping: Vector6::zeros(),
            gravity: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn cable_examples() {
        let mut g = PlatformGeometry::default();
        assert_eq!(cable_wrench(&g, &RigidState::at_rest()), Wrench::zero());
        g.cable_stiffness[0] = 10.0;
        g.cable_damping[0] = 0.5;
        let s = RigidState { position: Vector3::new(1e-3, 0.0, 0.0), ..Default::default() };
        assert_relative_eq!(cable_wrench(&g, &s).force.x, -0.01, epsilon = 1e-15);
        let s = RigidState { velocity: Vector3::new(1e-3, 0.0, 0.0), ..Default::default() };
        assert_relative_eq!(cable_wrench(&g, &s).force.x, -5e-4, epsilon = 1e-15);
    }

    #[test]
    fn rest_is_equilibrium() {
        let d = dynamics_rhs(
            &free_geometry(),
            &CouplingMatrix::identity(),
            &PlantVector::zeros(),
            &BaseSample::default(),
            &Wrench::zero(),
        )
        .unwrap();
        assert_eq!(d, PlantVector::zeros());
    }

    #[test]
    fn ballistic_lift() {
        let g = free_geometry();
        let w = Wrench::new(Vector3::new(0.0, 0.0, g.mass), Vector3::zeros());
        let mut x = PlantVector::zeros();
        let dt = 5e-4 / 4.0;
        let steps = 8000;
        for k in 0..steps {
            x = rk4_step(
                |_, x| dynamics_rhs(&g, &CouplingMatrix::identity(), x, &BaseSample::default(), &w),
                k as f64 * dt,
                &x,
                dt,
            )
            .unwrap();
        }
        let t = steps as f64 * dt;
        assert!((x[2] - t * t / 2.0).abs() < 1e-8);
    }

    #[test]
    fn rk4_matches_fourth_order_series() {
        let a = Matrix2::new(0.0, 1.0, -4.0, -0.3);
        let x0 = SVector::<f64, 2>::new(1.0, 0.5);
        let h = 0.01;
        let x1 = rk4_step(|_, x| Ok(a * x), 0.0, &x0, h).unwrap();
        let ah = a * h;
        let series = (Matrix2::identity() + ah + ah * ah / 2.0 + ah * ah * ah / 6.0 + ah * ah * ah * ah / 24.0) * x0;
        assert_relative_eq!(x1, series, epsilon = 1e-15);
        assert_eq!(rk4_step(|_, x| Ok(a * x), 0.0, &x0, 0.0), Err(PlantError::BadStep(0.0)));
    }

    #[test]
    fn principal_spin_is_steady() {
        let g =
            PlatformGeometry { inertia: Matrix3::from_diagonal(&Vector3::new(0.15, 0.16, 0.25)), ..free_geometry() };
        let mut x = PlantVector::zeros();
        x[11] = 0.3;
        let d = dynamics_rhs(&g, &CouplingMatrix::identity(), &x, &BaseSample::default(), &Wrench::zero()).unwrap();
        assert_eq!(d.fixed_rows::<3>(9).into_owned(), Vector3::zeros());
    }

    #[test]
    fn sine_base_amplitude() {
        let p = BaseProfile::Sine { axis: 0, accel_amplitude: 0.98, frequency: 3.0 };
        let peak = (0..1000).map(|k| p.sample(k as f64 / 3000.0).pose[0].abs()).fold(0.0, f64::max);
        assert_relative_eq!(peak, 2.758e-3, epsilon = 2e-6);
        assert_eq!(BaseProfile::Still.sample(1.3), BaseSample::default());
    }

    #[test]
    fn sweep_derivatives_consistent() {
        let p = BaseProfile::LogSweep { axis: 1, accel_amplitude: 0.02, f_start: 0.1, f_end: 50.0, duration: 300.0 };
        assert_relative_eq!(p.instantaneous_frequency(0.0), 0.1, max_relative = 1e-14);
        assert_relative_eq!(p.instantaneous_frequency(300.0), 50.0, max_relative = 1e-12);
        let h = 1e-5;
        for &t in &[0.0, 1.0, 37.2, 150.0, 299.0] {
            let t = t + h;
            let (a, b, c) = (p.sample(t - h), p.sample(t), p.sample(t + h));
            let v_fd = (c.pose[1] - a.pose[1]) / (2.0 * h);
            let a_fd = (c.velocity[1] - a.velocity[1]) / (2.0 * h);
            assert!((v_fd - b.velocity[1]).abs() < 1e-8, "v at {t}");
            assert!((a_fd - b.acceleration[1]).abs() < 1e-6 * (1.0 + b.acceleration[1].abs()), "a at {t}");
        }
    }

    #[test]
    fn bad_profiles() {
        assert!(BaseProfile::Sine { axis: 0, accel_amplitude: 1.0, frequency: 0.0 }.validate().is_err());
        assert!(BaseProfile::Sine { axis: 7, accel_amplitude: 1.0, frequency: 1.0 }.validate().is_err());
        assert!(base_excitation(
            &BaseProfile::LogSweep { axis: 0, accel_amplitude: 1.0, f_start: 1.0, f_end: 1.0, duration: 1.0 },
            0.0
        )
        .is_err());
    }

    #[test]
    fn coupling_validation() {
        assert!(CouplingMatrix::new(Matrix6::zeros()).is_err());
        let c = CouplingMatrix::perturbed(0.05, 3).unwrap();
        assert!(condition_number(c.matrix()) < 10.0);
        assert_eq!(c, CouplingMatrix::perturbed(0.05, 3).unwrap());
    }

    #[test]
    fn contact_stop_on_stroke_exit() {
        let g = free_geometry();
        let mut plant =
            Plant::new(g, CouplingMatrix::identity(), vec![FieldGroundTruth::default(); 8], BaseProfile::Still, 4)
                .unwrap();
        plant.set_relative_state(&RigidState { velocity: Vector3::new(0.0, 0.0, 0.1), ..Default::default() }).unwrap();
        let mut status = StepStatus::Running;
        let mut steps = 0;
        while status == StepStatus::Running {
            status = plant.step(&Vector8::zeros(), 5e-4).unwrap();
            steps += 1;
        }
        // 4 mm at 0.1 m/s takes 40 ms = 80 steps
        assert!((80..=81).contains(&steps), "{steps}");
        assert!(plant.relative_state().unwrap().position.z > 4e-3);
        assert!(plant.in_contact());
    }
}
