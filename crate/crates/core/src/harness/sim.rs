//! Closed-loop simulation: sensors, controller, linearization, allocation
//! and the plant stepped at the control rate.

use nalgebra::{Matrix6, Vector3, Vector6};

use crate::allocation::{allocate_qp, reconfigure, AllocatorState, OperatingMode};
use crate::control::{linearize_wrench, ControlOutput, Controller, Reference, ReferenceMode};
use crate::error::Result;
use crate::field::{coil_offset, fit_model, synthesize_calibration, ActuatorModel};
use crate::model::{
    build_mixing_matrix, stack, ActuatorLayout, PlatformGeometry, RigidState, Vector8, Wrench, ACTUATOR_COUNT,
};
use crate::plant::{BaseProfile, CouplingMatrix, Plant, StepStatus};
use crate::sensing::{specific_force, Accelerometer, PsdArray, PsdSensor, Quantizer};

use super::config::Config;

/// Per-run choices that are not part of the configuration file.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub profile: BaseProfile,
    pub coupling: CouplingMatrix,
    /// Multiplies the linearized wrench before allocation.
    pub rectifier: Option<Matrix6<f64>>,
    pub controller_enabled: bool,
    /// Floater state relative to the base at `t = 0`.
    pub initial: RigidState,
    /// Failed actuators, numbered from 1.
    pub failed: Vec<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            profile: BaseProfile::Still,
            coupling: CouplingMatrix::identity(),
            rectifier: None,
            controller_enabled: true,
            initial: RigidState::at_rest(),
            failed: Vec::new(),
        }
    }
}

/// Everything observed during one control cycle at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// True floater state relative to the base at `t`.
    pub relative: RigidState,
    /// Body angular velocity at `t`.
    pub omega: Vector3<f64>,
    /// Base acceleration at `t`.
    pub base_accel: Vector6<f64>,
    /// Floater acceleration at `t` with the currents of the previous cycle.
    pub floater_accel: Vector6<f64>,
    /// Floater acceleration at `t` with this cycle's currents.
    pub response_accel: Vector6<f64>,
    pub psd_readings: Vector6<f64>,
    pub pose_estimate: Vector6<f64>,
    pub accel_measured: Vector6<f64>,
    pub control: ControlOutput,
    /// Wrench requested from the allocator (after rectification).
    pub commanded: Wrench,
    /// Actuator wrench predicted by the calibrated model for `currents`.
    pub model_wrench: Wrench,
    /// Wrench acting on the floater.
    pub applied: Wrench,
    pub currents: Vector8,
    pub saturated: bool,
    pub contact: bool,
}

/// Sensors, controller and plant wired together.
pub struct ClosedLoop {
    model_geometry: PlatformGeometry,
    layout: ActuatorLayout,
    models: Vec<ActuatorModel>,
    allocator: AllocatorState,
    controller: Controller,
    psd: PsdSensor,
    accel: Accelerometer,
    dac: Option<Quantizer>,
    plant: Plant,
    rectifier: Option<Matrix6<f64>>,
    controller_enabled: bool,
    ts: f64,
    currents: Vector8,
    k: u64,
}

/// Fits one actuator model per coil from synthesized calibration grids.
pub fn calibrated_models(config: &Config) -> Result<Vec<ActuatorModel>> {
    let truth = config.field.calibrated_truth();
    let noise = if config.run.noise { config.field.calibration_noise_n_per_a } else { 0.0 };
    (0..ACTUATOR_COUNT)
        .map(|i| {
            let seed = config.run.seed.wrapping_mul(31).wrapping_add(100 + i as u64);
            let grid = synthesize_calibration(&truth, config.field.calibration_spacing_m, noise, seed)?;
            Ok(fit_model(&grid, config.field.fit_order)?)
        })
        .collect()
}

impl ClosedLoop {
    pub fn new(config: &Config, options: SimOptions) -> Result<Self> {
        config.validate()?;
        let geom = config.geometry();
        let ts = config.controller.sample_period_s;
        let noise = config.run.noise;
        let seed = config.run.seed;
        let s = &config.sensing;

        let truth = config.field.plant_truth();
        let mut plant = Plant::new(
            geom.clone(),
            options.coupling,
            vec![truth; ACTUATOR_COUNT],
            options.profile.clone(),
            config.plant.substeps,
        )?;
        plant.set_relative_state(&options.initial)?;

        let models = calibrated_models(config)?;
        let layout = ActuatorLayout::from_geometry(&geom);
        let base_alloc = AllocatorState::new(build_mixing_matrix(&geom), config.field.current_limit_a);
        let allocator = reconfigure(&base_alloc, &options.failed)?;

        let controller = Controller::new(
            config.controller_gains(),
            geom.axis_inertia(),
            Some(config.controller.setpoint_lowpass_hz),
            config.controller.rate_filter_hz,
        )?;

        let array = PsdArray::new(geom.sensor_offsets)?;
        let psd = if noise {
            PsdSensor::new(
                array,
                s.psd_translation_noise_m,
                s.psd_rotation_noise_rad,
                Some(Quantizer::new(s.psd_adc_bits, s.psd_full_scale_m)?),
                seed,
            )?
        } else {
            PsdSensor::new(array, 0.0, 0.0, None, seed)?
        };
        let accel = if noise {
            let lin = s.accel_noise_m_per_s2;
            let ang = s.accel_angular_noise_rad_per_s2;
            let wl = s.accel_bias_walk_m_per_s2_sqrt_s;
            let wa = s.accel_angular_bias_walk_rad_per_s2_sqrt_s;
            Accelerometer::new(
                Vector6::new(lin, lin, lin, ang, ang, ang),
                Vector6::new(wl, wl, wl, wa, wa, wa),
                Some(Quantizer::new(s.accel_adc_bits, s.accel_full_scale_m_per_s2)?),
                seed,
            )?
        } else {
            Accelerometer::ideal()
        };
        let dac = if noise { Some(Quantizer::new(s.current_dac_bits, config.field.current_limit_a)?) } else { None };

        Ok(Self {
            model_geometry: geom,
            layout,
            models,
            allocator,
            controller,
            psd,
            accel,
            dac,
            plant,
            rectifier: options.rectifier,
            controller_enabled: options.controller_enabled,
            ts,
            currents: Vector8::zeros(),
            k: 0,
        })
    }

    pub fn sample_period(&self) -> f64 {
        self.ts
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.ts
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn models(&self) -> &[ActuatorModel] {
        &self.models
    }

    pub fn mode(&self) -> OperatingMode {
        self.allocator.mode()
    }

    /// Calibrated gains at the coil offsets implied by a pose.
    pub fn model_gains(&self, pose: &Vector6<f64>) -> Vector8 {
        let p = pose.fixed_rows::<3>(0).into_owned();
        let q = pose.fixed_rows::<3>(3).into_owned();
        Vector8::from_fn(|i, _| {
            let (y, z) = coil_offset(&self.layout, &p, &q, i);
            self.models[i].force_per_ampere(y, z)
        })
    }

    /// Currents realizing `wrench` at `pose` with the calibrated models.
    pub fn allocate(&mut self, pose: &Vector6<f64>, wrench: &Wrench) -> Result<(Vector8, bool)> {
        let gains = self.model_gains(pose);
        self.allocator.set_gains(&gains)?;
        let res = allocate_qp(&self.allocator, wrench)?;
        Ok((res.currents, res.any_saturated()))
    }

    /// One control cycle. `extra` is added to the linearized wrench before
    /// rectification and allocation.
    pub fn step(&mut self, reference: &Reference, mode: ReferenceMode, extra: &Wrench) -> Result<StepRecord> {
        let t = self.time();
        let relative = self.plant.relative_state()?;
        let omega = self.plant.angular_velocity();
        let base = self.plant.base_sample();
        let floater_accel = self.plant.accelerations(&self.currents)?;

        let (psd_readings, pose_estimate) = self.psd.measure(&relative.pose());
        let accel_measured = self.accel.measure(&specific_force(&floater_accel, self.model_geometry.gravity), self.ts);
        let control = self.controller.step(reference, mode, &pose_estimate, &accel_measured);

        let mut wrench = *extra;
        if self.controller_enabled {
            // cable terms at the middle of the hold interval
            let half = 0.5 * self.sample_period();
            let rates = control.rate_estimate + control.virtual_accel * half;
            let mid = pose_estimate + (control.rate_estimate + rates) * (0.5 * half);
            let est = RigidState::from_pose(&mid, &rates);
            wrench = wrench + linearize_wrench(&self.model_geometry, &est, &control.virtual_accel)?;
        }
        let commanded = match &self.rectifier {
            Some(r) => Wrench::from_vector(&(r * wrench.to_vector())),
            None => wrench,
        };
        let (mut currents, saturated) = if commanded.to_vector().iter().all(|v| *v == 0.0) {
            (Vector8::zeros(), false)
        } else {
            self.allocate(&pose_estimate, &commanded)?
        };
        if let Some(q) = &self.dac {
            currents.apply(|c| *c = q.quantize(*c));
        }
        let gains = self.model_gains(&pose_estimate);
        let model_wrench = Wrench::from_vector(&(self.allocator.mixing() * gains.component_mul(&currents)));
        let applied = self.plant.applied_wrench(&currents)?;
        let response_accel = self.plant.accelerations(&currents)?;

        self.currents = currents;
        let status = self.plant.step(&currents, self.ts)?;
        self.k += 1;
        Ok(StepRecord {
            t,
            relative,
            omega,
            base_accel: base.acceleration,
            floater_accel,
            response_accel,
            psd_readings,
            pose_estimate,
            accel_measured,
            control,
            commanded,
            model_wrench,
            applied,
            currents,
            saturated,
            contact: status == StepStatus::ContactStop,
        })
    }
}

/// Names of the per-record trace columns, in [`record_row`] order.
pub fn trace_columns() -> Vec<String> {
    let mut c = vec!["t_s".to_string()];
    let pose = ["x_m", "y_m", "z_m", "alpha_rad", "beta_rad", "gamma_rad"];
    let acc = ["ax", "ay", "az", "alpha_dd", "beta_dd", "gamma_dd"];
    let wr = ["fx_n", "fy_n", "fz_n", "tx_n_m", "ty_n_m", "tz_n_m"];
    let psd = ["p1y_m", "p2y_m", "p3y_m", "p1z_m", "p2z_m", "p3z_m"];
    c.extend(pose.iter().map(|s| format!("rel_{s}")));
    c.extend(acc.iter().map(|s| format!("floater_{s}")));
    c.extend(acc.iter().map(|s| format!("base_{s}")));
    c.extend(wr.iter().map(|s| format!("cmd_{s}")));
    c.extend(wr.iter().map(|s| format!("applied_{s}")));
    c.extend((1..=ACTUATOR_COUNT).map(|i| format!("current{i}_a")));
    c.extend(psd.iter().map(|s| s.to_string()));
    c.extend(acc.iter().map(|s| format!("meas_{s}")));
    c.push("saturated".into());
    c.push("contact".into());
    c
}

pub fn record_row(r: &StepRecord) -> Vec<f64> {
    let mut row = Vec::with_capacity(56);
    row.push(r.t);
    row.extend(r.relative.pose().iter());
    row.extend(r.floater_accel.iter());
    row.extend(r.base_accel.iter());
    row.extend(r.commanded.to_vector().iter());
    row.extend(r.applied.to_vector().iter());
    row.extend(r.currents.iter());
    row.extend(r.psd_readings.iter());
    row.extend(r.accel_measured.iter());
    row.push(r.saturated as u8 as f64);
    row.push(r.contact as u8 as f64);
    row
}

/// Regression target `diag(M, J) a - F_d - G + w x J w` whose exact value
/// is `R_cp` times the actuator wrench.
pub fn coupling_target(geom: &PlatformGeometry, record: &StepRecord, accel: &Vector6<f64>) -> Vector6<f64> {
    let cable = crate::plant::cable_wrench(geom, &record.relative);
    let w = record.omega;
    let gyro = w.cross(&(geom.inertia * w));
    let mut y = geom.spatial_inertia() * accel;
    y -= cable.to_vector();
    y -= stack(&geom.gravity_force(), &Vector3::zeros());
    y += stack(&Vector3::zeros(), &gyro);
    y
}
