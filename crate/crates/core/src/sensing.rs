//! Measurement chain: PSD array geometry, accelerometers with drift and
//! white noise, and converter quantization.
//!
//! The PSD map is defined on the pose ordering `(x, y, gamma, z, alpha,
//! beta)`; the public API takes and returns standard pose vectors
//! `[x, y, z, alpha, beta, gamma]` and permutes internally.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("PSD offsets need d1 + d3 > 0 and d2 > 0, got {0:?}")]
    DegenerateGeometry([f64; 3]),
    #[error("invalid sensor parameter: {0}")]
    BadParameter(String),
}

/// Standard pose index of each PSD-order coordinate.
const PSD_ORDER: [usize; 6] = [0, 1, 5, 2, 3, 4];

fn to_psd_order(pose: &Vector6<f64>) -> Vector6<f64> {
    Vector6::from_fn(|i, _| pose[PSD_ORDER[i]])
}

fn from_psd_order(v: &Vector6<f64>) -> Vector6<f64> {
    let mut out = Vector6::zeros();
    for (i, &k) in PSD_ORDER.iter().enumerate() {
        out[k] = v[i];
    }
    out
}

/// Three two-axis PSDs at offsets `d1, d2, d3` from the floater centre.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdArray {
    offsets: [f64; 3],
    forward: Matrix6<f64>,
    inverse: Matrix6<f64>,
}

impl PsdArray {
    pub fn new(offsets: [f64; 3]) -> Result<Self, SensingError> {
        let [d1, d2, d3] = offsets;
        if !(d1 + d3 > 0.0 && d2 > 0.0) || offsets.iter().any(|d| !d.is_finite()) {
            return Err(SensingError::DegenerateGeometry(offsets));
        }
        let horizontal = Matrix3::new(1.0, 0.0, -d1, 0.0, 1.0, -d2, -1.0, 0.0, -d3);
        let vertical = Matrix3::new(1.0, d1, 0.0, 1.0, 0.0, d2, 1.0, -d3, 0.0);
        let s = d1 + d3;
        let horizontal_inv = Matrix3::new(d3 / s, 0.0, -d1 / s, -d2 / s, 1.0, -d2 / s, -1.0 / s, 0.0, -1.0 / s);
        let vertical_inv =
            Matrix3::new(d3 / s, 0.0, d1 / s, 1.0 / s, 0.0, -1.0 / s, -d3 / (s * d2), 1.0 / d2, -d1 / (s * d2));
        let mut forward = Matrix6::zeros();
        forward.fixed_view_mut::<3, 3>(0, 0).copy_from(&horizontal);
        forward.fixed_view_mut::<3, 3>(3, 3).copy_from(&vertical);
        let mut inverse = Matrix6::zeros();
        inverse.fixed_view_mut::<3, 3>(0, 0).copy_from(&horizontal_inv);
        inverse.fixed_view_mut::<3, 3>(3, 3).copy_from(&vertical_inv);
        Ok(Self { offsets, forward, inverse })
    }

    pub fn offsets(&self) -> [f64; 3] {
        self.offsets
    }

    /// Readings-from-displacement matrix in PSD coordinate order.
    pub fn forward_matrix(&self) -> &Matrix6<f64> {
        &self.forward
    }

    /// Displacement-from-readings matrix in PSD coordinate order.
    pub fn inverse_matrix(&self) -> &Matrix6<f64> {
        &self.inverse
    }

    /// Readings `(p1y, p2y, p3y, p1z, p2z, p3z)` for a standard-order pose.
    pub fn forward(&self, pose: &Vector6<f64>) -> Vector6<f64> {
        self.forward * to_psd_order(pose)
    }

    /// Standard-order pose from readings.
    pub fn inverse(&self, readings: &Vector6<f64>) -> Vector6<f64> {
        from_psd_order(&(self.inverse * readings))
    }
}

pub fn psd_forward(psd: &PsdArray, pose: &Vector6<f64>) -> Vector6<f64> {
    psd.forward(pose)
}

pub fn psd_inverse(psd: &PsdArray, readings: &Vector6<f64>) -> Vector6<f64> {
    psd.inverse(readings)
}

/// Mid-tread quantizer over `[-full_scale, full_scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub bits: u32,
    pub full_scale: f64,
}

impl Quantizer {
    pub fn new(bits: u32, full_scale: f64) -> Result<Self, SensingError> {
        if !(1..=32).contains(&bits) || !(full_scale > 0.0) {
            return Err(SensingError::BadParameter(format!("quantizer {bits} bits over +-{full_scale}")));
        }
        Ok(Self { bits, full_scale })
    }

    pub fn lsb(&self) -> f64 {
        2.0 * self.full_scale / 2f64.powi(self.bits as i32)
    }

    pub fn quantize(&self, v: f64) -> f64 {
        let lsb = self.lsb();
        let half = 2f64.powi(self.bits as i32 - 1);
        let code = (v / lsb).round().clamp(-half, half - 1.0);
        code * lsb
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// PSD chain: pose noise, geometry, ADC and inversion.
#[derive(Debug, Clone)]
pub struct PsdSensor {
    array: PsdArray,
    /// Standard deviation of translation (m) and rotation (rad) noise.
    translation_noise: f64,
    rotation_noise: f64,
    adc: Option<Quantizer>,
    rng: ChaCha8Rng,
}

impl PsdSensor {
    pub fn new(
        array: PsdArray,
        translation_noise: f64,
        rotation_noise: f64,
        adc: Option<Quantizer>,
        seed: u64,
    ) -> Result<Self, SensingError> {
        if !(translation_noise >= 0.0 && rotation_noise >= 0.0) {
            return Err(SensingError::BadParameter("noise levels must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self { array, translation_noise, rotation_noise, adc, rng })
    }

    pub fn array(&self) -> &PsdArray {
        &self.array
    }

    /// Returns the (quantized) readings and the pose recovered from them.
    pub fn measure(&mut self, pose: &Vector6<f64>) -> (Vector6<f64>, Vector6<f64>) {
        let mut noisy = *pose;
        for i in 0..6 {
            let sigma = if i < 3 { self.translation_noise } else { self.rotation_noise };
            if sigma > 0.0 {
                noisy[i] += sigma * gaussian(&mut self.rng);
            }
        }
        let mut readings = self.array.forward(&noisy);
        if let Some(q) = &self.adc {
            readings.apply(|r| *r = q.quantize(*r));
        }
        (readings, self.array.inverse(&readings))
    }
}

/// Six-channel accelerometer (three linear, three angular) with a random
/// walk bias and white noise.
#[derive(Debug, Clone)]
pub struct Accelerometer {
    /// White noise standard deviation per sample.
    pub noise_rms: Vector6<f64>,
    /// Bias random walk intensity, per square-root second.
    pub bias_walk: Vector6<f64>,
    adc: Option<Quantizer>,
    bias: Vector6<f64>,
    rng: ChaCha8Rng,
}

impl Accelerometer {
    pub fn new(
        noise_rms: Vector6<f64>,
        bias_walk: Vector6<f64>,
        adc: Option<Quantizer>,
        seed: u64,
    ) -> Result<Self, SensingError> {
        if noise_rms.iter().chain(bias_walk.iter()).any(|v| !(*v >= 0.0)) {
            return Err(SensingError::BadParameter("noise levels must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Ok(Self { noise_rms, bias_walk, adc, bias: Vector6::zeros(), rng })
    }

    /// Ideal sensor.
    pub fn ideal() -> Self {
        Self::new(Vector6::zeros(), Vector6::zeros(), None, 0).expect("zero noise is valid")
    }

    pub fn bias(&self) -> &Vector6<f64> {
        &self.bias
    }

    /// Advances the bias by `dt` and returns the measurement of `truth`.
    pub fn measure(&mut self, truth: &Vector6<f64>, dt: f64) -> Vector6<f64> {
        let root = dt.max(0.0).sqrt();
        let mut out = *truth;
        for i in 0..6 {
            if self.bias_walk[i] > 0.0 {
                self.bias[i] += self.bias_walk[i] * root * gaussian(&mut self.rng);
            }
            out[i] += self.bias[i];
            if self.noise_rms[i] > 0.0 {
                out[i] += self.noise_rms[i] * gaussian(&mut self.rng);
            }
        }
        if let Some(q) = &self.adc {
            out.apply(|v| *v = q.quantize(*v));
        }
        out
    }
}

/// Specific force sensed by the linear channels: `a - g e_z`, so a floater
/// held still under gravity reads `-g` on z.
pub fn specific_force(acceleration: &Vector6<f64>, gravity: f64) -> Vector6<f64> {
    let mut f = *acceleration;
    f[2] -= gravity;
    f
}

/// Translational part of a pose vector.
pub fn translation(pose: &Vector6<f64>) -> Vector3<f64> {
    pose.fixed_rows::<3>(0).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn array() -> PsdArray {
        PsdArray::new([0.1, 0.1, 0.1]).unwrap()
    }

    #[test]
    fn forward_examples() {
        let a = array();
        let r = a.forward(&Vector6::new(1e-3, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(r, Vector6::new(1e-3, 0.0, -1e-3, 0.0, 0.0, 0.0));
        let r = a.forward(&Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 1e-3));
        assert_relative_eq!(r, Vector6::new(-1e-4, -1e-4, -1e-4, 0.0, 0.0, 0.0), epsilon = 1e-18);
        let r = a.forward(&Vector6::new(0.0, 0.0, 1e-3, 0.0, 0.0, 0.0));
        assert_relative_eq!(r, Vector6::new(0.0, 0.0, 0.0, 1e-3, 1e-3, 1e-3));
    }

    #[test]
    fn inverse_examples() {
        let a = array();
        let p = a.inverse(&Vector6::new(1e-3, 0.0, -1e-3, 0.0, 0.0, 0.0));
        assert_relative_eq!(p, Vector6::new(1e-3, 0.0, 0.0, 0.0, 0.0, 0.0), epsilon = 1e-15);
        let p = a.inverse(&Vector6::new(0.0, 0.0, 0.0, 1e-3, 1e-3, 1e-3));
        assert_relative_eq!(p, Vector6::new(0.0, 0.0, 1e-3, 0.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn inverse_is_exact_for_random_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = [rng.random_range(0.01..0.3), rng.random_range(0.01..0.3), rng.random_range(0.01..0.3)];
            let a = PsdArray::new(d).unwrap();
            let id = a.inverse_matrix() * a.forward_matrix();
            assert!((id - Matrix6::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn degenerate_offsets() {
        assert!(PsdArray::new([0.1, 0.0, 0.1]).is_err());
        assert!(PsdArray::new([0.1, 0.1, -0.1]).is_err());
    }

    #[test]
    fn quantizer() {
        let q = Quantizer::new(18, 0.01).unwrap();
        assert_relative_eq!(q.lsb(), 0.02 / 262144.0);
        assert_eq!(q.quantize(0.0), 0.0);
        assert!((q.quantize(1.234e-3) - 1.234e-3).abs() <= q.lsb() / 2.0);
        assert!(q.quantize(1.0) < 0.01);
        assert_eq!(q.quantize(-1.0), -0.01);
    }

    #[test]
    fn ideal_accelerometer() {
        let mut a = Accelerometer::ideal();
        let t = Vector6::new(0.1, -0.2, 9.8, 0.0, 1e-3, -2e-3);
        assert_eq!(a.measure(&t, 5e-4), t);
    }

    #[test]
    fn same_seed_same_noise() {
        let mk = || Accelerometer::new(Vector6::repeat(1e-3), Vector6::repeat(1e-4), None, 9).unwrap();
        let (mut a, mut b) = (mk(), mk());
        for _ in 0..100 {
            assert_eq!(a.measure(&Vector6::zeros(), 5e-4), b.measure(&Vector6::zeros(), 5e-4));
        }
    }

    #[test]
    fn gravity_on_z() {
        let f = specific_force(&Vector6::zeros(), 9.8);
        assert_eq!(f[2], -9.8);
    }
}
