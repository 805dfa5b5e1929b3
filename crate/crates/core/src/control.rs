//! Discrete control stack: per-axis I-PD loops with band-pass acceleration
//! feedback, feedback linearization of the floater dynamics, and analytic
//! loop metrics.
//!
//! Each axis computes
//!
//! ```text
//! u = K_I * int(r - x) - K_P * x - K_D * D(x) - K_A * W_A(a[k-1])
//! ```
//!
//! with a trapezoidal integrator, a zero-order-hold filtered derivative
//! `D(s) = N s / (s + N)` and the band-pass
//! `W_A(s) = 2 xi wn s / (s^2 + 2 xi wn s + wn^2)` discretized by the
//! prewarped bilinear transform.

use std::f64::consts::PI;

use nalgebra::{Complex, Vector6};
use thiserror::Error;

use crate::model::{euler_rate_map, ModelError, PlatformGeometry, RigidState, Wrench};
use crate::plant::cable_wrench;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("band-pass centre {wn} rad/s is at or above the Nyquist limit {limit} rad/s")]
    NyquistViolation { wn: f64, limit: f64 },
    #[error("invalid controller gains: {0}")]
    InvalidGains(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Gains and filter parameters of one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Derivative filter pole `N` (rad/s).
    pub derivative_filter: f64,
    /// Acceleration feedback gain (kg, or kg m^2 for rotations).
    pub ka: f64,
    pub bandpass_wn: f64,
    pub bandpass_xi: f64,
}

impl AxisGains {
    /// Translational gains for a 15 kg floater: 0.58 Hz crossover,
    /// 43 degree phase margin, 1.04 Hz closed-loop cutoff.
    pub fn translational_default() -> Self {
        Self {
            kp: 85.0,
            ki: 80.0,
            kd: 50.0,
            derivative_filter: 10.0,
            ka: 3.0,
            bandpass_wn: 2.0 * PI * 8.0,
            bandpass_xi: 0.7,
        }
    }

    /// Same loop shape for an axis whose inertia is `ratio` times larger.
    pub fn scaled(&self, ratio: f64) -> Self {
        Self { kp: self.kp * ratio, ki: self.ki * ratio, kd: self.kd * ratio, ka: self.ka * ratio, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub axes: [AxisGains; 6],
    pub sample_period: f64,
    /// Clamp on the integral term `|K_I int e|` per axis (N or N m).
    pub integral_limit: [f64; 6],
}

impl ControllerGains {
    /// Translational gains on x, y, z; rotational axes use the same loop
    /// shape scaled by `J_ii / m`.
    pub fn for_geometry(translational: AxisGains, geom: &PlatformGeometry, sample_period: f64) -> Self {
        let inertia = geom.axis_inertia();
        let axes = std::array::from_fn(|i| translational.scaled(inertia[i] / geom.mass));
        Self { axes, sample_period, integral_limit: [40.0, 40.0, 40.0, 4.0, 4.0, 4.0] }
    }

    pub fn validate(&self, axis_inertia: &[f64; 6]) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::InvalidGains(m));
        if !(self.sample_period > 0.0) {
            return bad("sample period must be positive".into());
        }
        for (i, g) in self.axes.iter().enumerate() {
            if [g.kp, g.ki, g.kd, g.ka].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("axis {i}: gains must be finite and non-negative"));
            }
            if !(g.derivative_filter > 0.0) {
                return bad(format!("axis {i}: derivative filter pole must be positive"));
            }
            if !(g.ka < axis_inertia[i]) {
                return bad(format!("axis {i}: K_A = {} must be below the axis inertia {}", g.ka, axis_inertia[i]));
            }
            if !(self.integral_limit[i] > 0.0) {
                return bad(format!("axis {i}: integral limit must be positive"));
            }
            bandpass_wa(g.bandpass_wn, g.bandpass_xi, self.sample_period)?;
        }
        Ok(())
    }
}

/// Second-order IIR section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

/// Transposed direct-form-II state of a [`Biquad`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiquadState {
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn process(&self, st: &mut BiquadState, x: f64) -> f64 {
        let y = self.b[0] * x + st.s1;
        st.s1 = self.b[1] * x - self.a[0] * y + st.s2;
        st.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Frequency response at `omega` (rad/s) for sample period `ts`.
    pub fn response(&self, omega: f64, ts: f64) -> Complex<f64> {
        let zi = Complex::from_polar(1.0, -omega * ts);
        let num = Complex::new(self.b[0], 0.0) + zi * self.b[1] + zi * zi * self.b[2];
        let den = Complex::new(1.0, 0.0) + zi * self.a[0] + zi * zi * self.a[1];
        num / den
    }
}

/// Discrete band-pass `W_A`, unity gain at `wn`.
pub fn bandpass_wa(wn: f64, xi: f64, ts: f64) -> Result<Biquad, ControlError> {
    if !(wn > 0.0 && xi > 0.0 && ts > 0.0) {
        return Err(ControlError::InvalidGains(format!("band-pass needs wn, xi > 0 (wn = {wn}, xi = {xi})")));
    }
    let limit = PI / ts;
    if wn >= limit {
        return Err(ControlError::NyquistViolation { wn, limit });
    }
    let k = wn / (wn * ts / 2.0).tan();
    let c = 2.0 * xi * wn * k;
    let a0 = k * k + c + wn * wn;
    Ok(Biquad { b: [c / a0, 0.0, -c / a0], a: [(2.0 * wn * wn - 2.0 * k * k) / a0, (k * k - c + wn * wn) / a0] })
}

/// Continuous `W_A(s)`.
pub fn bandpass_continuous(wn: f64, xi: f64, s: Complex<f64>) -> Complex<f64> {
    s * (2.0 * xi * wn) / (s * s + s * (2.0 * xi * wn) + wn * wn)
}

/// Per-axis controller memory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoopState {
    integral: f64,
    prev_error: Option<f64>,
    derivative: f64,
    prev_measurement: Option<f64>,
    bandpass: BiquadState,
    accel_delay: f64,
}

impl LoopState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn is_finite(&self) -> bool {
        [self.integral, self.derivative, self.bandpass.s1, self.bandpass.s2, self.accel_delay]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One I-PD update for a single axis; returns the force-like effort.
#[allow(clippy::too_many_arguments)]
pub fn ipd_step(
    gains: &AxisGains,
    filter: &Biquad,
    state: &mut LoopState,
    sample_period: f64,
    integral_limit: f64,
    setpoint: f64,
    measured: f64,
    measured_accel: f64,
) -> f64 {
    let ts = sample_period;
    let e = setpoint - measured;
    let e_prev = state.prev_error.unwrap_or(e);
    state.integral += ts / 2.0 * (e + e_prev);
    state.prev_error = Some(e);
    if gains.ki > 0.0 {
        let cap = integral_limit / gains.ki;
        state.integral = state.integral.clamp(-cap, cap);
    }

    let x_prev = state.prev_measurement.unwrap_or(measured);
    let pole = (-gains.derivative_filter * ts).exp();
    state.derivative = pole * state.derivative + gains.derivative_filter * (measured - x_prev);
    state.prev_measurement = Some(measured);

    let delayed = state.accel_delay;
    state.accel_delay = measured_accel;
    let filtered = filter.process(&mut state.bandpass, delayed);

    let accel_term = if gains.ka == 0.0 { 0.0 } else { gains.ka * filtered };
    gains.ki * state.integral - gains.kp * measured - gains.kd * state.derivative - accel_term
}

/// First-order low-pass `y += (1 - e^(-2 pi f T)) (x - y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPass {
    alpha: f64,
}

impl LowPass {
    pub fn new(cutoff_hz: f64, ts: f64) -> Self {
        Self { alpha: 1.0 - (-2.0 * PI * cutoff_hz * ts).exp() }
    }

    pub fn apply(&self, state: &mut f64, x: f64) -> f64 {
        *state += self.alpha * (x - *state);
        *state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Hold a (low-passed) setpoint.
    Regulation,
    /// Follow a trajectory with acceleration feedforward.
    Tracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Reference {
    pub pose: Vector6<f64>,
    pub acceleration: Vector6<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Per-axis effort (N or N m).
    pub effort: Vector6<f64>,
    /// Virtual accelerations handed to the linearization.
    pub virtual_accel: Vector6<f64>,
    /// Filtered pose-rate estimate.
    pub rate_estimate: Vector6<f64>,
}

/// Six decoupled axis loops plus setpoint shaping and a rate estimator.
#[derive(Debug, Clone)]
pub struct Controller {
    gains: ControllerGains,
    filters: [Biquad; 6],
    loops: [LoopState; 6],
    axis_inertia: [f64; 6],
    setpoint_filter: Option<LowPass>,
    filtered_setpoint: Option<Vector6<f64>>,
    rate_filter: LowPass,
    rate: Vector6<f64>,
    prev_pose: Option<Vector6<f64>>,
}

impl Controller {
    pub fn new(
        gains: ControllerGains,
        axis_inertia: [f64; 6],
        setpoint_lowpass_hz: Option<f64>,
        rate_filter_hz: f64,
    ) -> Result<Self, ControlError> {
        gains.validate(&axis_inertia)?;
        if !(rate_filter_hz > 0.0) || setpoint_lowpass_hz.is_some_and(|f| !(f > 0.0)) {
            return Err(ControlError::InvalidGains("filter cut-offs must be positive".into()));
        }
        let ts = gains.sample_period;
        let mut filters = [Biquad { b: [0.0; 3], a: [0.0; 2] }; 6];
        for (f, g) in filters.iter_mut().zip(&gains.axes) {
            *f = bandpass_wa(g.bandpass_wn, g.bandpass_xi, ts)?;
        }
        Ok(Self {
            filters,
            loops: [LoopState::default(); 6],
            axis_inertia,
            setpoint_filter: setpoint_lowpass_hz.map(|f| LowPass::new(f, ts)),
            filtered_setpoint: None,
            rate_filter: LowPass::new(rate_filter_hz, ts),
            rate: Vector6::zeros(),
            prev_pose: None,
            gains,
        })
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn loops(&self) -> &[LoopState; 6] {
        &self.loops
    }

    pub fn reset(&mut self) {
        self.loops = [LoopState::default(); 6];
        self.filtered_setpoint = None;
        self.rate = Vector6::zeros();
        self.prev_pose = None;
    }

    pub fn step(
        &mut self,
        reference: &Reference,
        mode: ReferenceMode,
        measured_pose: &Vector6<f64>,
        measured_accel: &Vector6<f64>,
    ) -> ControlOutput {
        let ts = self.gains.sample_period;
        let prev = self.prev_pose.unwrap_or(*measured_pose);
        for i in 0..6 {
            let diff = (measured_pose[i] - prev[i]) / ts;
            self.rate_filter.apply(&mut self.rate[i], diff);
        }
        self.prev_pose = Some(*measured_pose);

        let mut effort = Vector6::zeros();
        let mut virtual_accel = Vector6::zeros();
        match mode {
            ReferenceMode::Regulation => {
                let sp = match (&self.setpoint_filter, self.filtered_setpoint.as_mut()) {
                    (Some(lp), Some(state)) => {
                        for i in 0..6 {
                            lp.apply(&mut state[i], reference.pose[i]);
                        }
                        *state
                    }
                    (Some(_), None) => *self.filtered_setpoint.insert(reference.pose),
                    (None, _) => reference.pose,
                };
                for i in 0..6 {
                    effort[i] = self.axis(i, sp[i], measured_pose[i], measured_accel[i]);
                    virtual_accel[i] = effort[i] / self.axis_inertia[i];
                }
            }
            ReferenceMode::Tracking => {
                for i in 0..6 {
                    let r_acc = reference.acceleration[i];
                    effort[i] = self.axis(i, 0.0, measured_pose[i] - reference.pose[i], measured_accel[i] - r_acc);
                    virtual_accel[i] = effort[i] / self.axis_inertia[i] + r_acc;
                }
            }
        }
        ControlOutput { effort, virtual_accel, rate_estimate: self.rate }
    }

    fn axis(&mut self, i: usize, r: f64, x: f64, a: f64) -> f64 {
        ipd_step(
            &self.gains.axes[i],
            &self.filters[i],
            &mut self.loops[i],
            self.gains.sample_period,
            self.gains.integral_limit[i],
            r,
            x,
            a,
        )
    }
}

/// Commanded CoM wrench realizing virtual accelerations `v` on the model
/// `geom`: gravity, cable and gyroscopic terms are cancelled.
pub fn linearize_wrench(geom: &PlatformGeometry, state: &RigidState, v: &Vector6<f64>) -> Result<Wrench, ControlError> {
    let t = euler_rate_map(&state.euler)?;
    let omega = t * state.euler_rates;
    let j = &geom.inertia;
    let cable = cable_wrench(geom, state);
    let v_lin = v.fixed_rows::<3>(0).into_owned();
    let v_rot = v.fixed_rows::<3>(3).into_owned();
    let force = v_lin * geom.mass - geom.gravity_force() - cable.force;
    let torque = j * (t * v_rot) + omega.cross(&(j * omega)) - cable.torque;
    Ok(Wrench::new(force, torque))
}

/// Linear single-axis plant seen by one loop: inertia plus any cable
/// stiffness and damping left uncancelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopPlant {
    pub inertia: f64,
    pub stiffness: f64,
    pub damping: f64,
}

impl LoopPlant {
    pub fn rigid(inertia: f64) -> Self {
        Self { inertia, stiffness: 0.0, damping: 0.0 }
    }
}

/// Continuous `C(s) = K_P + K_I / s + K_D N s / (s + N)`.
pub fn controller_response(g: &AxisGains, s: Complex<f64>) -> Complex<f64> {
    let n = g.derivative_filter;
    Complex::new(g.kp, 0.0) + Complex::new(g.ki, 0.0) / s + s * (g.kd * n) / (s + n)
}

/// Frequency response of the discrete controller (trapezoid integrator,
/// zero-order-hold derivative).
pub fn discrete_controller_response(g: &AxisGains, ts: f64, omega: f64) -> Complex<f64> {
    let zi = Complex::from_polar(1.0, -omega * ts);
    let one = Complex::new(1.0, 0.0);
    let pole = (-g.derivative_filter * ts).exp();
    let integ = (one + zi) / (one - zi) * (ts / 2.0);
    let deriv = (one - zi) / (one - zi * pole) * g.derivative_filter;
    Complex::new(g.kp, 0.0) + integ * g.ki + deriv * g.kd
}

/// Open loop `L = (C + D s + K) / (s^2 (m + K_A W_A e^(-sT)))`.
pub fn open_loop(g: &AxisGains, plant: &LoopPlant, ts: f64, f_hz: f64) -> Complex<f64> {
    let s = Complex::new(0.0, 2.0 * PI * f_hz);
    let delay = (-s * ts).exp();
    let accel = bandpass_continuous(g.bandpass_wn, g.bandpass_xi, s) * delay * g.ka + plant.inertia;
    (controller_response(g, s) + s * plant.damping + plant.stiffness) / (s * s * accel)
}

/// Base-to-floater acceleration transmissibility `L / (1 + L)`.
pub fn closed_loop(g: &AxisGains, plant: &LoopPlant, ts: f64, f_hz: f64) -> Complex<f64> {
    let l = open_loop(g, plant, ts, f_hz);
    l / (l + 1.0)
}

fn db(c: Complex<f64>) -> f64 {
    20.0 * c.norm().log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopReport {
    pub crossover_hz: f64,
    pub phase_margin_deg: f64,
    pub cutoff_hz: f64,
    pub dc_gain_db: f64,
    pub peak_db: f64,
    pub peak_hz: f64,
    /// Transmissibility slope between 100 Hz and 1 kHz.
    pub high_frequency_slope_db_per_decade: f64,
    /// Least-squares transmissibility slope over 1-10 Hz.
    pub band_slope_db_per_decade: f64,
    pub stable: bool,
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Least-squares slope of `db` against `log10 f`.
pub fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), (f, d)| (a + f.log10(), b + d));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), (f, d)| {
        let dx = f.log10() - mx;
        (a + dx * (d - my), b + dx * dx)
    });
    num / den
}

/// Crossover, margins, cutoff and slopes of one loop.
pub fn analyze_loop(g: &AxisGains, plant: &LoopPlant, ts: f64) -> LoopReport {
    let grid: Vec<f64> = (0..=6000).map(|k| 10f64.powf(-3.0 + k as f64 * 1e-3)).collect();
    let mag = |f: f64| open_loop(g, plant, ts, f).norm();
    let mut crossover = f64::NAN;
    for w in grid.windows(2).rev() {
        if mag(w[0]) >= 1.0 && mag(w[1]) < 1.0 {
            crossover = bisect(w[0], w[1], |f| mag(f) - 1.0);
            break;
        }
    }
    let phase_margin =
        if crossover.is_finite() { 180.0 + open_loop(g, plant, ts, crossover).arg().to_degrees() } else { f64::NAN };
    let tdb = |f: f64| db(closed_loop(g, plant, ts, f));
    let (peak_idx, peak_db) = grid
        .iter()
        .enumerate()
        .map(|(i, &f)| (i, tdb(f)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    let mut cutoff = f64::NAN;
    for w in grid[peak_idx..].windows(2) {
        if tdb(w[0]) >= -3.0 && tdb(w[1]) < -3.0 {
            cutoff = bisect(w[0], w[1], |f| tdb(f) + 3.0);
            break;
        }
    }
    let band: Vec<(f64, f64)> = (0..=100).map(|k| 10f64.powf(k as f64 / 100.0)).map(|f| (f, tdb(f))).collect();
    LoopReport {
        crossover_hz: crossover,
        phase_margin_deg: phase_margin,
        cutoff_hz: cutoff,
        dc_gain_db: tdb(1e-4),
        peak_db,
        peak_hz: grid[peak_idx],
        high_frequency_slope_db_per_decade: tdb(1000.0) - tdb(100.0),
        band_slope_db_per_decade: log_slope(&band),
        stable: phase_margin > 0.0,
    }
}

/// One row of an exported frequency response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPoint {
    pub frequency_hz: f64,
    pub magnitude_db: f64,
    pub phase_deg: f64,
}

/// Samples `h` on `points` log-spaced frequencies between `f0` and `f1`.
pub fn frequency_response(f0: f64, f1: f64, points: usize, h: impl Fn(f64) -> Complex<f64>) -> Vec<FrequencyPoint> {
    let n = points.max(2);
    (0..n)
        .map(|k| {
            let f = f0 * (f1 / f0).powf(k as f64 / (n - 1) as f64);
            let v = h(f);
            FrequencyPoint { frequency_hz: f, magnitude_db: db(v), phase_deg: v.arg().to_degrees() }
        })
        .collect()
}
