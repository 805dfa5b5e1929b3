//! Position-dependent Lorentz actuator gain.
//!
//! Each actuator's force per ampere `Q(y, z)` depends on the coil's offset
//! in the magnet gap (`y`) and along the force axis (`z`). The gain surface
//! is captured by a calibration grid, fitted with a bivariate monomial basis
//! `[1, y, z, y^2, yz, z^2, y^3, y^2 z, y z^2, z^3, ...]` and inverted in
//! real time to obtain the coil current for a desired force.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{ActuatorLayout, RigidState};

/// Gains below this value are treated as a broken model.
pub const MIN_GAIN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("calibration region is empty")]
    EmptyRegion,
    #[error("rank-deficient fit: {samples} samples for {terms} basis terms")]
    RankDeficientFit { samples: usize, terms: usize },
    #[error("fit order {0} outside 1..=5")]
    BadOrder(usize),
    #[error("force-per-ampere {gain} N/A is below the {MIN_GAIN} N/A floor")]
    DegenerateGain { gain: f64 },
    #[error("invalid ground-truth surface: {0}")]
    BadSurface(String),
    #[error("calibration file: {0}")]
    Format(String),
}

impl From<csv::Error> for FieldError {
    fn from(e: csv::Error) -> Self {
        FieldError::Format(e.to_string())
    }
}

/// Rectangular `(y, z)` box in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRegion {
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl FieldRegion {
    pub fn symmetric(half_y: f64, half_z: f64) -> Self {
        Self { y: (-half_y, half_y), z: (-half_z, half_z) }
    }

    /// Clamps a point into the box; the flag is set when clamping occurred.
    pub fn clamp(&self, y: f64, z: f64) -> (f64, f64, bool) {
        let cy = y.clamp(self.y.0, self.y.1);
        let cz = z.clamp(self.z.0, self.z.1);
        (cy, cz, cy != y || cz != z)
    }
}

/// Closed-form gain surface used to synthesize calibration data and as the
/// simulated plant's true actuator gain.
///
/// The shape is a saddle, `-u^2/2 + v^2/2 + c v^3` in normalized
/// coordinates, scaled so the peak-to-peak variation over the box equals
/// `variation * nominal_gain * scale`. Along z the gain is minimal at the
/// center, along y maximal.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGroundTruth {
    /// Gain at the center (N/A).
    pub nominal_gain: f64,
    /// Peak-to-peak variation as a fraction of the nominal gain.
    pub variation: f64,
    /// Weight of the asymmetric `v^3` term, in `[0, 0.5]`.
    pub cubic_weight: f64,
    pub region: FieldRegion,
    /// Overall multiplier, e.g. measured/simulated ratio.
    pub scale: f64,
}

impl Default for FieldGroundTruth {
    fn default() -> Self {
        Self {
            nominal_gain: 12.0,
            variation: 0.12,
            cubic_weight: 0.1,
            region: FieldRegion::symmetric(0.005, 0.005),
            scale: 1.0,
        }
    }
}

impl FieldGroundTruth {
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: &str| Err(FieldError::BadSurface(m.into()));
        if !(self.nominal_gain > 0.0 && self.scale > 0.0) {
            return bad("nominal gain and scale must be positive");
        }
        if !(0.0..1.0).contains(&self.variation) {
            return bad("variation must lie in [0, 1)");
        }
        if !(0.0..=0.5).contains(&self.cubic_weight) {
            return bad("cubic weight must lie in [0, 0.5]");
        }
        let r = self.region;
        if !(r.y.1 > r.y.0 && r.z.1 > r.z.0) {
            return Err(FieldError::EmptyRegion);
        }
        Ok(())
    }

    fn half_extents(&self) -> (f64, f64) {
        let r = self.region;
        ((r.y.1 - r.y.0) / 2.0, (r.z.1 - r.z.0) / 2.0)
    }

    /// Gain in N/A. Points outside the box take the value at the nearest
    /// edge.
    pub fn gain(&self, y: f64, z: f64) -> f64 {
        let (y, z, _) = self.region.clamp(y, z);
        let (hy, hz) = self.half_extents();
        let cy = (self.region.y.0 + self.region.y.1) / 2.0;
        let cz = (self.region.z.0 + self.region.z.1) / 2.0;
        let u = (y - cy) / hy;
        let v = (z - cz) / hz;
        let c = self.cubic_weight;
        let shape = -0.5 * u * u + 0.5 * v * v + c * v * v * v;
        self.nominal_gain * self.scale * (1.0 + self.variation * shape / (1.0 + c))
    }

    /// Exact coefficients of the surface in the order-3 SI monomial basis
    /// (box centered at the origin).
    pub fn cubic_coefficients(&self) -> [f64; 10] {
        let (hy, hz) = self.half_extents();
        let a = self.nominal_gain * self.scale;
        let k = a * self.variation / (1.0 + self.cubic_weight);
        let mut g = [0.0; 10];
        g[0] = a;
        g[3] = -0.5 * k / (hy * hy);
        g[5] = 0.5 * k / (hz * hz);
        g[9] = self.cubic_weight * k / (hz * hz * hz);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub y: f64,
    pub z: f64,
    pub force_per_ampere: f64,
}

/// Force-per-ampere measurements over the `(y, z)` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationGrid {
    pub samples: Vec<CalibrationSample>,
    pub spacing: f64,
    pub region: FieldRegion,
    /// Coil current used during calibration (A).
    pub reference_current: f64,
}

fn lattice(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    let n = ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
    (0..n).map(|i| (lo + i as f64 * spacing).min(hi)).collect()
}

/// Samples `truth` on a regular lattice over its region and adds seeded
/// Gaussian noise of standard deviation `noise_rms` (N/A).
pub fn synthesize_calibration(
    truth: &FieldGroundTruth,
    spacing: f64,
    noise_rms: f64,
    seed: u64,
) -> Result<CalibrationGrid, FieldError> {
    truth.validate()?;
    if !(spacing > 0.0) || !(noise_rms >= 0.0) {
        return Err(FieldError::EmptyRegion);
    }
    let r = truth.region;
    let ys = lattice(r.y.0, r.y.1, spacing);
    let zs = lattice(r.z.0, r.z.1, spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_rms).map_err(|_| FieldError::EmptyRegion)?;
    let mut samples = Vec::with_capacity(ys.len() * zs.len());
    for &y in &ys {
        for &z in &zs {
            let n = if noise_rms > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            samples.push(CalibrationSample { y, z, force_per_ampere: truth.gain(y, z) + n });
        }
    }
    Ok(CalibrationGrid { samples, spacing, region: r, reference_current: 1.0 })
}

impl CalibrationGrid {
    /// Writes `y_mm,z_mm,N_per_A` rows with 12 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FieldError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["y_mm", "z_mm", "N_per_A"])?;
        for s in &self.samples {
            wr.write_record([sig12(s.y * 1e3), sig12(s.z * 1e3), sig12(s.force_per_ampere)])?;
        }
        wr.flush().map_err(|e| FieldError::Format(e.to_string()))?;
        Ok(())
    }

    /// Reads a grid written by [`CalibrationGrid::write_csv`] (or any file
    /// with the same three columns). Spacing and region are recovered from
    /// the samples.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, FieldError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers()?.clone();
        let want = ["y_mm", "z_mm", "N_per_A"];
        if headers.len() != 3 || headers.iter().zip(want).any(|(h, w)| h != w) {
            return Err(FieldError::Format(format!("expected header y_mm,z_mm,N_per_A, got {headers:?}")));
        }
        let mut samples = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64, FieldError> {
                rec[i].parse::<f64>().map_err(|e| FieldError::Format(format!("{}: {e}", &rec[i])))
            };
            samples.push(CalibrationSample { y: num(0)? * 1e-3, z: num(1)? * 1e-3, force_per_ampere: num(2)? });
        }
        if samples.is_empty() {
            return Err(FieldError::EmptyRegion);
        }
        let fold = |f: fn(&CalibrationSample) -> f64| {
            samples.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let region = FieldRegion { y: fold(|s| s.y), z: fold(|s| s.z) };
        let mut ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
        ys.sort_by(f64::total_cmp);
        let spacing = ys.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 1e-12).fold(f64::INFINITY, f64::min);
        Ok(Self { samples, spacing: if spacing.is_finite() { spacing } else { 0.0 }, region, reference_current: 1.0 })
    }
}

/// Formats with 12 significant digits in scientific notation.
pub(crate) fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Exponents `(a, b)` of `y^a z^b` in basis order for a given total order.
pub fn monomial_exponents(order: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for deg in 0..=order as i32 {
        for b in 0..=deg {
            out.push((deg - b, b));
        }
    }
    out
}

/// Number of basis terms for an order, `(n + 1)(n + 2) / 2`.
pub fn basis_len(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub r_squared: f64,
    pub rmse: f64,
}

/// Gain returned by a model evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSample {
    pub gain: f64,
    /// The query point was outside the valid region and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentCommand {
    pub current: f64,
    pub saturated: bool,
    pub clamped: bool,
}

/// Fitted force-per-ampere polynomial of one actuator.
///
/// Coefficients are held in coordinates normalized by the region's
/// half-extent for conditioning; [`ActuatorModel::coefficients`] returns
/// them in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorModel {
    order: usize,
    scaled: Vec<f64>,
    scale: (f64, f64),
    region: FieldRegion,
    diagnostics: FitDiagnostics,
}

fn region_scale(region: &FieldRegion) -> (f64, f64) {
    let s = |(lo, hi): (f64, f64)| {
        let m = lo.abs().max(hi.abs());
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    (s(region.y), s(region.z))
}

impl ActuatorModel {
    /// Builds a model from SI coefficients in basis order.
    pub fn from_coefficients(order: usize, coefficients: &[f64], region: FieldRegion) -> Result<Self, FieldError> {
        if !(1..=5).contains(&order) {
            return Err(FieldError::BadOrder(order));
        }
        if coefficients.len() != basis_len(order) {
            return Err(FieldError::RankDeficientFit { samples: coefficients.len(), terms: basis_len(order) });
        }
        let scale = region_scale(&region);
        let scaled = monomial_exponents(order)
            .iter()
            .zip(coefficients)
            .map(|(&(a, b), g)| g * scale.0.powi(a) * scale.1.powi(b))
            .collect();
        Ok(Self { order, scaled, scale, region, diagnostics: FitDiagnostics { r_squared: 1.0, rmse: 0.0 } })
    }

    /// Uniform gain `g` everywhere in the region.
    pub fn constant(g: f64, region: FieldRegion) -> Self {
        let mut c = vec![0.0; basis_len(3)];
        c[0] = g;
        Self::from_coefficients(3, &c, region).expect("order 3 is valid")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn region(&self) -> FieldRegion {
        self.region
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        self.diagnostics
    }

    /// Coefficients `G` in SI units, basis order.
    pub fn coefficients(&self) -> Vec<f64> {
        monomial_exponents(self.order)
            .iter()
            .zip(&self.scaled)
            .map(|(&(a, b), g)| g / (self.scale.0.powi(a) * self.scale.1.powi(b)))
            .collect()
    }

    fn eval_scaled(&self, y: f64, z: f64) -> f64 {
        let u = y / self.scale.0;
        let v = z / self.scale.1;
        monomial_exponents(self.order).iter().zip(&self.scaled).map(|(&(a, b), g)| g * u.powi(a) * v.powi(b)).sum()
    }

    pub fn evaluate(&self, y: f64, z: f64) -> GainSample {
        let (cy, cz, clamped) = self.region.clamp(y, z);
        GainSample { gain: self.eval_scaled(cy, cz), clamped }
    }

    /// `Q(y, z)` in N/A; out-of-region points are clamped to the box.
    pub fn force_per_ampere(&self, y: f64, z: f64) -> f64 {
        self.evaluate(y, z).gain
    }

    /// Current producing `force` at `(y, z)`, saturated at `+-current_limit`.
    pub fn current_for_force(
        &self,
        force: f64,
        y: f64,
        z: f64,
        current_limit: f64,
    ) -> Result<CurrentCommand, FieldError> {
        let GainSample { gain, clamped } = self.evaluate(y, z);
        let mut cmd = current_from_gain(force, gain, current_limit)?;
        cmd.clamped = clamped;
        Ok(cmd)
    }
}

/// `I = F / Q`, saturated at `+-current_limit`.
pub fn current_from_gain(force: f64, gain: f64, current_limit: f64) -> Result<CurrentCommand, FieldError> {
    if !(gain >= MIN_GAIN) {
        return Err(FieldError::DegenerateGain { gain });
    }
    let current = force / gain;
    let saturated = current.abs() > current_limit;
    Ok(CurrentCommand {
        current: if saturated { current.signum() * current_limit } else { current },
        saturated,
        clamped: false,
    })
}

/// Least-squares fit of the monomial basis of the given order.
pub fn fit_model(grid: &CalibrationGrid, order: usize) -> Result<ActuatorModel, FieldError> {
    if !(1..=5).contains(&order) {
        return Err(FieldError::BadOrder(order));
    }
    let terms = basis_len(order);
    let n = grid.samples.len();
    let deficient = || FieldError::RankDeficientFit { samples: n, terms };
    if n < terms {
        return Err(deficient());
    }
    let scale = region_scale(&grid.region);
    let exps = monomial_exponents(order);
    let a = DMatrix::from_fn(n, terms, |i, j| {
        let s = &grid.samples[i];
        let (pa, pb) = exps[j];
        (s.y / scale.0).powi(pa) * (s.z / scale.1).powi(pb)
    });
    let b = DVector::from_iterator(n, grid.samples.iter().map(|s| s.force_per_ampere));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-10 {
        return Err(deficient());
    }
    let x = svd.solve(&b, 0.0).map_err(|_| deficient())?;
    let resid = &b - &a * &x;
    let ss_res = resid.norm_squared();
    let mean = b.mean();
    let ss_tot: f64 = b.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ActuatorModel {
        order,
        scaled: x.iter().copied().collect(),
        scale,
        region: grid.region,
        diagnostics: FitDiagnostics { r_squared, rmse: (ss_res / n as f64).sqrt() },
    })
}

/// Coil offset `(y_i, z_i)` of actuator `index` (0-based) for a small
/// floater displacement: `delta = p + q x r_i`, projected on the gap normal
/// and the force axis.
pub fn coil_local_displacement(layout: &ActuatorLayout, state: &RigidState, index: usize) -> (f64, f64) {
    coil_offset(layout, &state.position, &state.euler, index)
}

pub(crate) fn coil_offset(
    layout: &ActuatorLayout,
    position: &Vector3<f64>,
    euler: &Vector3<f64>,
    index: usize,
) -> (f64, f64) {
    let mount = &layout.mounts[index];
    let delta = position + euler.cross(&mount.position);
    (delta.dot(&mount.gap_normal), delta.dot(&mount.force_direction()))
}
