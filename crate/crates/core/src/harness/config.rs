//! Scenario configuration: one TOML file, units in key names.

use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{AxisGains, ControllerGains};
use crate::design::{DesignEnvelope, DesignParams, DesignVariable, ObjectiveWeights, SearchBudget, VariableBound};
use crate::field::{FieldGroundTruth, FieldRegion};
use crate::model::PlatformGeometry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration value `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read configuration {path}: {reason}")]
    Read { path: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Sensor noise, converter quantization and calibration noise.
    pub noise: bool,
    /// Keep every n-th control cycle in the trace.
    pub trace_decimation: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 1, noise: true, trace_decimation: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatformConfig {
    pub arm_l1_m: f64,
    pub arm_l2_m: f64,
    pub sensor_offsets_m: [f64; 3],
    pub mass_kg: f64,
    /// Row-major inertia about the CoM.
    pub inertia_kg_m2: [f64; 9],
    pub cable_stiffness_n_per_m: [f64; 3],
    pub cable_stiffness_n_m_per_rad: [f64; 3],
    pub cable_damping_n_s_per_m: [f64; 3],
    pub cable_damping_n_m_s_per_rad: [f64; 3],
    pub gravity_m_per_s2: f64,
    pub stroke_half_range_m: [f64; 3],
}

impl Default for PlatformConfig {
    fn default() -> Self {
        let g = PlatformGeometry::default();
        let k = g.cable_stiffness;
        let d = g.cable_damping;
        let mut inertia = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                inertia[3 * i + j] = g.inertia[(i, j)];
            }
        }
        Self {
            arm_l1_m: g.arm_l1,
            arm_l2_m: g.arm_l2,
            sensor_offsets_m: g.sensor_offsets,
            mass_kg: g.mass,
            inertia_kg_m2: inertia,
            cable_stiffness_n_per_m: [k[0], k[1], k[2]],
            cable_stiffness_n_m_per_rad: [k[3], k[4], k[5]],
            cable_damping_n_s_per_m: [d[0], d[1], d[2]],
            cable_damping_n_m_s_per_rad: [d[3], d[4], d[5]],
            gravity_m_per_s2: g.gravity,
            stroke_half_range_m: [g.stroke_half_range.x, g.stroke_half_range.y, g.stroke_half_range.z],
        }
    }
}

impl PlatformConfig {
    pub fn geometry(&self) -> PlatformGeometry {
        let six = |a: [f64; 3], b: [f64; 3]| Vector6::new(a[0], a[1], a[2], b[0], b[1], b[2]);
        PlatformGeometry {
            arm_l1: self.arm_l1_m,
            arm_l2: self.arm_l2_m,
            sensor_offsets: self.sensor_offsets_m,
            mass: self.mass_kg,
            inertia: Matrix3::from_row_slice(&self.inertia_kg_m2),
            cable_stiffness: six(self.cable_stiffness_n_per_m, self.cable_stiffness_n_m_per_rad),
            cable_damping: six(self.cable_damping_n_s_per_m, self.cable_damping_n_m_s_per_rad),
            gravity: self.gravity_m_per_s2,
            stroke_half_range: Vector3::from(self.stroke_half_range_m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub nominal_gain_n_per_a: f64,
    pub variation: f64,
    pub cubic_weight: f64,
    pub region_half_y_m: f64,
    pub region_half_z_m: f64,
    pub fit_order: usize,
    pub calibration_spacing_m: f64,
    pub calibration_noise_n_per_a: f64,
    /// Ratio of true to calibrated gain on every actuator.
    pub true_gain_scale: f64,
    pub current_limit_a: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        let t = FieldGroundTruth::default();
        Self {
            nominal_gain_n_per_a: t.nominal_gain,
            variation: t.variation,
            cubic_weight: t.cubic_weight,
            region_half_y_m: 5e-3,
            region_half_z_m: 5e-3,
            fit_order: 3,
            calibration_spacing_m: 1e-3,
            calibration_noise_n_per_a: 0.02,
            true_gain_scale: 1.0,
            current_limit_a: 2.0,
        }
    }
}

impl FieldConfig {
    /// Surface the calibration rig measures.
    pub fn calibrated_truth(&self) -> FieldGroundTruth {
        FieldGroundTruth {
            nominal_gain: self.nominal_gain_n_per_a,
            variation: self.variation,
            cubic_weight: self.cubic_weight,
            region: FieldRegion::symmetric(self.region_half_y_m, self.region_half_z_m),
            scale: 1.0,
        }
    }

    /// Surface acting in the simulated plant.
    pub fn plant_truth(&self) -> FieldGroundTruth {
        FieldGroundTruth { scale: self.true_gain_scale, ..self.calibrated_truth() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub psd_translation_noise_m: f64,
    pub psd_rotation_noise_rad: f64,
    pub psd_adc_bits: u32,
    pub psd_full_scale_m: f64,
    pub accel_noise_m_per_s2: f64,
    pub accel_angular_noise_rad_per_s2: f64,
    pub accel_bias_walk_m_per_s2_sqrt_s: f64,
    pub accel_angular_bias_walk_rad_per_s2_sqrt_s: f64,
    pub accel_adc_bits: u32,
    pub accel_full_scale_m_per_s2: f64,
    pub current_dac_bits: u32,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            psd_translation_noise_m: 1e-7,
            psd_rotation_noise_rad: 1e-5,
            psd_adc_bits: 18,
            psd_full_scale_m: 1e-2,
            accel_noise_m_per_s2: 5e-5,
            accel_angular_noise_rad_per_s2: 5e-4,
            accel_bias_walk_m_per_s2_sqrt_s: 1e-6,
            accel_angular_bias_walk_rad_per_s2_sqrt_s: 1e-5,
            accel_adc_bits: 18,
            accel_full_scale_m_per_s2: 20.0,
            current_dac_bits: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub sample_period_s: f64,
    /// Translational gains; rotational axes are scaled by `J_ii / m`.
    pub kp_n_per_m: f64,
    pub ki_n_per_m_s: f64,
    pub kd_n_s_per_m: f64,
    pub derivative_filter_rad_per_s: f64,
    pub ka_kg: f64,
    pub bandpass_wn_rad_per_s: f64,
    pub bandpass_xi: f64,
    pub integral_limit_n: f64,
    pub integral_limit_n_m: f64,
    pub setpoint_lowpass_hz: f64,
    pub rate_filter_hz: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let g = AxisGains::translational_default();
        Self {
            sample_period_s: 5e-4,
            kp_n_per_m: g.kp,
            ki_n_per_m_s: g.ki,
            kd_n_s_per_m: g.kd,
            derivative_filter_rad_per_s: g.derivative_filter,
            ka_kg: g.ka,
            bandpass_wn_rad_per_s: g.bandpass_wn,
            bandpass_xi: g.bandpass_xi,
            integral_limit_n: 40.0,
            integral_limit_n_m: 4.0,
            setpoint_lowpass_hz: 0.2,
            rate_filter_hz: 100.0,
        }
    }
}

impl ControllerConfig {
    pub fn translational(&self) -> AxisGains {
        AxisGains {
            kp: self.kp_n_per_m,
            ki: self.ki_n_per_m_s,
            kd: self.kd_n_s_per_m,
            derivative_filter: self.derivative_filter_rad_per_s,
            ka: self.ka_kg,
            bandpass_wn: self.bandpass_wn_rad_per_s,
            bandpass_xi: self.bandpass_xi,
        }
    }

    pub fn gains(&self, geom: &PlatformGeometry) -> ControllerGains {
        let mut g = ControllerGains::for_geometry(self.translational(), geom, self.sample_period_s);
        g.integral_limit = [
            self.integral_limit_n,
            self.integral_limit_n,
            self.integral_limit_n,
            self.integral_limit_n_m,
            self.integral_limit_n_m,
            self.integral_limit_n_m,
        ];
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub substeps: usize,
    /// Entrywise magnitude of the payload cross-coupling `R_cp - I`.
    pub coupling_perturbation: f64,
    pub coupling_seed: u64,
    /// Apply the identified rectifier in the loop.
    pub rectify: bool,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { substeps: 4, coupling_perturbation: 0.0, coupling_seed: 7, rectify: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevitateConfig {
    pub duration_s: f64,
    pub initial_offset_m: [f64; 3],
    pub initial_angle_rad: [f64; 3],
    pub settle_tolerance_m: f64,
}

impl Default for LevitateConfig {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            initial_offset_m: [1e-3, -5e-4, 5e-4],
            initial_angle_rad: [5e-4, -5e-4, 1e-3],
            settle_tolerance_m: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourConfig {
    pub duration_s: f64,
    pub diameter_m: f64,
    pub frequency_hz: f64,
    pub ramp_s: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self { duration_s: 25.0, diameter_m: 6e-3, frequency_hz: 0.1, ramp_s: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub duration_s: f64,
    /// Pose axis excited on the base (0..6).
    pub axis: usize,
    pub accel_amplitude_m_per_s2: f64,
    pub f_start_hz: f64,
    pub f_end_hz: f64,
    pub segment_len: usize,
    pub controller_enabled: bool,
    pub slope_band_hz: [f64; 2],
    pub cutoff_search_hz: [f64; 2],
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            duration_s: 300.0,
            axis: 0,
            accel_amplitude_m_per_s2: 0.01,
            f_start_hz: 0.1,
            f_end_hz: 50.0,
            segment_len: 4096,
            controller_enabled: true,
            slope_band_hz: [1.0, 10.0],
            cutoff_search_hz: [0.2, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    pub channel_duration_s: f64,
    pub force_amplitude_n: f64,
    pub torque_amplitude_n_m: f64,
    pub f_start_hz: f64,
    pub f_end_hz: f64,
    pub coupling_perturbation: f64,
    /// Acceleration noise as a fraction of each channel's rms.
    pub noise_fraction: f64,
    pub forgetting: f64,
    pub initial_covariance: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            channel_duration_s: 2.0,
            force_amplitude_n: 2.0,
            torque_amplitude_n_m: 0.2,
            f_start_hz: 2.0,
            f_end_hz: 20.0,
            coupling_perturbation: 0.05,
            noise_fraction: 0.01,
            forgetting: 1.0,
            initial_covariance: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureConfig {
    pub check_duration_s: f64,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self { check_duration_s: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocCompareConfig {
    pub wrenches: usize,
    pub force_scale_n: f64,
    pub torque_scale_n_m: f64,
}

impl Default for AllocCompareConfig {
    fn default() -> Self {
        Self { wrenches: 100, force_scale_n: 10.0, torque_scale_n_m: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfigs {
    pub levitate: LevitateConfig,
    pub contour: ContourConfig,
    pub sweep: SweepConfig,
    pub identify: IdentifyConfig,
    pub failure: FailureConfig,
    pub alloc_compare: AllocCompareConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignVariableConfig {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub max_width_m: f64,
    pub max_thickness_m: f64,
    pub max_height_m: f64,
    pub min_force_n: f64,
    pub weight_flux: f64,
    pub weight_heat: f64,
    pub weight_mass: f64,
    pub population: usize,
    pub generations: usize,
    pub variables: Vec<DesignVariableConfig>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        let env = DesignEnvelope::default();
        let w = ObjectiveWeights::default();
        let b = SearchBudget::default();
        let var = |name: &str, lower: f64, upper: f64, step: Option<f64>| DesignVariableConfig {
            name: name.into(),
            lower,
            upper,
            step,
        };
        Self {
            max_width_m: env.max_width,
            max_thickness_m: env.max_thickness,
            max_height_m: env.max_height,
            min_force_n: env.min_force,
            weight_flux: w.flux,
            weight_heat: w.heat,
            weight_mass: w.mass,
            population: b.population,
            generations: b.generations,
            variables: vec![
                var("magnet_thickness", 8e-3, 20e-3, None),
                var("air_gap", 20e-3, 32e-3, None),
                var("coil_thickness", 6e-3, 16e-3, None),
                var("turns", 200.0, 600.0, Some(1.0)),
            ],
        }
    }
}

impl DesignConfig {
    pub fn envelope(&self) -> DesignEnvelope {
        DesignEnvelope {
            max_width: self.max_width_m,
            max_thickness: self.max_thickness_m,
            max_height: self.max_height_m,
            min_force: self.min_force_n,
        }
    }

    pub fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights { flux: self.weight_flux, heat: self.weight_heat, mass: self.weight_mass }
    }

    pub fn budget(&self) -> SearchBudget {
        SearchBudget { population: self.population, generations: self.generations }
    }

    pub fn bounds(&self) -> Result<Vec<VariableBound>, ConfigError> {
        self.variables
            .iter()
            .map(|v| {
                let variable = DesignVariable::from_name(&v.name)
                    .ok_or_else(|| invalid("design.variables.name", format!("unknown variable `{}`", v.name)))?;
                Ok(VariableBound { variable, lower: v.lower, upper: v.upper, step: v.step })
            })
            .collect()
    }

    /// Reference actuator the search starts from.
    pub fn base(&self) -> DesignParams {
        DesignParams::reference()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunConfig,
    pub platform: PlatformConfig,
    pub field: FieldConfig,
    pub sensing: SensingConfig,
    pub controller: ControllerConfig,
    pub plant: PlantConfig,
    pub scenario: ScenarioConfigs,
    pub design: DesignConfig,
}

/// Keys whose defaults come from the hardware description; every other
/// key is annotated as a non-paper default in the reference file.
const SOURCED_KEYS: &[&str] = &[
    "controller.sample_period_s",
    "controller.bandpass_xi",
    "sensing.psd_translation_noise_m",
    "sensing.psd_rotation_noise_rad",
    "sensing.psd_adc_bits",
    "sensing.accel_adc_bits",
    "sensing.current_dac_bits",
    "platform.stroke_half_range_m",
    "field.current_limit_a",
    "field.fit_order",
    "scenario.contour.diameter_m",
    "design.max_width_m",
    "design.max_thickness_m",
    "design.max_height_m",
    "design.min_force_n",
];

const NON_PAPER: &str = "# non-paper default";

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_toml(&text)
    }

    /// Canonical serialization, used for hashing.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn geometry(&self) -> PlatformGeometry {
        self.platform.geometry()
    }

    pub fn controller_gains(&self) -> ControllerGains {
        self.controller.gains(&self.geometry())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let geom = self.geometry();
        geom.validate().map_err(|e| invalid("platform", e.to_string()))?;
        self.field.calibrated_truth().validate().map_err(|e| invalid("field", e.to_string()))?;
        if !(1..=5).contains(&self.field.fit_order) {
            return Err(invalid("field.fit_order", "must lie in 1..=5"));
        }
        if !(self.field.calibration_spacing_m > 0.0) {
            return Err(invalid("field.calibration_spacing_m", "must be positive"));
        }
        if !(self.field.calibration_noise_n_per_a >= 0.0) {
            return Err(invalid("field.calibration_noise_n_per_a", "must be non-negative"));
        }
        if !(self.field.true_gain_scale > 0.0) {
            return Err(invalid("field.true_gain_scale", "must be positive"));
        }
        if !(self.field.current_limit_a > 0.0) {
            return Err(invalid("field.current_limit_a", "must be positive"));
        }
        self.controller_gains().validate(&geom.axis_inertia()).map_err(|e| invalid("controller", e.to_string()))?;
        if !(self.controller.setpoint_lowpass_hz > 0.0 && self.controller.rate_filter_hz > 0.0) {
            return Err(invalid("controller", "filter cut-offs must be positive"));
        }
        let s = &self.sensing;
        let noise = [
            s.psd_translation_noise_m,
            s.psd_rotation_noise_rad,
            s.accel_noise_m_per_s2,
            s.accel_angular_noise_rad_per_s2,
            s.accel_bias_walk_m_per_s2_sqrt_s,
            s.accel_angular_bias_walk_rad_per_s2_sqrt_s,
        ];
        if noise.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("sensing", "noise levels must be non-negative"));
        }
        for (key, bits) in [
            ("psd_adc_bits", s.psd_adc_bits),
            ("accel_adc_bits", s.accel_adc_bits),
            ("current_dac_bits", s.current_dac_bits),
        ] {
            if !(2..=32).contains(&bits) {
                return Err(invalid(&format!("sensing.{key}"), "must lie in 2..=32"));
            }
        }
        if !(s.psd_full_scale_m > 0.0 && s.accel_full_scale_m_per_s2 > 0.0) {
            return Err(invalid("sensing", "full-scale ranges must be positive"));
        }
        if self.run.trace_decimation == 0 {
            return Err(invalid("run.trace_decimation", "must be at least 1"));
        }
        if self.plant.substeps == 0 {
            return Err(invalid("plant.substeps", "must be at least 1"));
        }
        if !(self.plant.coupling_perturbation >= 0.0) {
            return Err(invalid("plant.coupling_perturbation", "must be non-negative"));
        }
        let sc = &self.scenario;
        for (key, d) in [
            ("scenario.levitate.duration_s", sc.levitate.duration_s),
            ("scenario.contour.duration_s", sc.contour.duration_s),
            ("scenario.sweep.duration_s", sc.sweep.duration_s),
            ("scenario.identify.channel_duration_s", sc.identify.channel_duration_s),
            ("scenario.failure.check_duration_s", sc.failure.check_duration_s),
        ] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid(key, "duration must be positive"));
            }
        }
        if !(sc.levitate.settle_tolerance_m > 0.0) {
            return Err(invalid("scenario.levitate.settle_tolerance_m", "must be positive"));
        }
        if !(sc.contour.diameter_m > 0.0 && sc.contour.frequency_hz > 0.0 && sc.contour.ramp_s >= 0.0) {
            return Err(invalid("scenario.contour", "diameter and frequency must be positive"));
        }
        if sc.sweep.axis >= 6 {
            return Err(invalid("scenario.sweep.axis", "must lie in 0..6"));
        }
        if !(sc.sweep.f_start_hz > 0.0 && sc.sweep.f_end_hz > sc.sweep.f_start_hz) {
            return Err(invalid("scenario.sweep", "need 0 < f_start_hz < f_end_hz"));
        }
        if sc.sweep.segment_len < 16 {
            return Err(invalid("scenario.sweep.segment_len", "must be at least 16"));
        }
        let id = &sc.identify;
        if !(id.f_start_hz > 0.0 && id.f_end_hz > id.f_start_hz) {
            return Err(invalid("scenario.identify", "need 0 < f_start_hz < f_end_hz"));
        }
        if !(id.forgetting > 0.0 && id.forgetting <= 1.0) {
            return Err(invalid("scenario.identify.forgetting", "must lie in (0, 1]"));
        }
        if !(id.initial_covariance > 0.0 && id.noise_fraction >= 0.0 && id.coupling_perturbation >= 0.0) {
            return Err(invalid(
                "scenario.identify",
                "covariance must be positive, noise and perturbation non-negative",
            ));
        }
        if sc.alloc_compare.wrenches == 0 {
            return Err(invalid("scenario.alloc_compare.wrenches", "must be at least 1"));
        }
        let bounds = self.design.bounds()?;
        if bounds.is_empty() || bounds.iter().any(|b| !(b.lower > 0.0 && b.lower <= b.upper)) {
            return Err(invalid("design.variables", "bounds must be positive and ordered"));
        }
        if self.design.population < 4 {
            return Err(invalid("design.population", "must be at least 4"));
        }
        Ok(())
    }
}

/// The default configuration as TOML, with every key whose value is not
/// taken from the hardware description annotated `# non-paper default`.
pub fn reference_config() -> String {
    let text = Config::default().to_toml();
    let mut section = String::new();
    let mut out = String::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
            out.push_str(line);
        } else if let Some((key, _)) = trimmed.split_once(" = ") {
            let full = format!("{section}.{key}");
            out.push_str(line);
            if !SOURCED_KEYS.contains(&full.as_str()) {
                out.push_str("  ");
                out.push_str(NON_PAPER);
            }
        } else {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates() {
        Config::default().validate().unwrap();
        assert_eq!(Config::default().geometry(), PlatformGeometry::default());
    }

    #[test]
    fn reference_round_trip() {
        let text = reference_config();
        assert!(text.contains(NON_PAPER));
        assert!(text.lines().any(|l| l.starts_with("sample_period_s") && !l.contains(NON_PAPER)));
        assert_eq!(Config::from_toml(&text).unwrap(), Config::default());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = Config::from_toml("[run]\nseed = 42\n").unwrap();
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.platform, PlatformConfig::default());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(Config::from_toml("[run]\nsed = 1\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(Config::from_toml("[controller]\nka_kg = 20.0\n"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(Config::from_toml("[platform]\nmass_kg = -1.0\n"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(
            Config::from_toml("[[design.variables]]\nname = \"colour\"\nlower = 1.0\nupper = 2.0\n"),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        b.run.seed += 1;
        assert_eq!(a.sha256(), Config::default().sha256());
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }
}
