//! Lorentz actuator sizing: flux, force, coil volume, heat and mass
//! evaluators, envelope constraints, and a seeded genetic search over a
//! weighted-sum objective.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("winding window a - s - c = {0} m is not positive")]
    InvalidWindow(f64),
    #[error("invalid design parameters: {0}")]
    InvalidParams(String),
    #[error("search bounds are empty or inverted")]
    EmptyBounds,
    #[error("no feasible design found within the search budget")]
    NoFeasibleDesign,
    #[error("design export: {0}")]
    Export(String),
}

/// Actuator dimensions and material constants (SI).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignParams {
    pub magnet_length: f64,
    pub magnet_width: f64,
    pub magnet_thickness: f64,
    pub air_gap: f64,
    pub stroke: f64,
    pub coil_width: f64,
    pub coil_length: f64,
    pub coil_thickness: f64,
    pub turns: f64,
    pub wire_diameter: f64,
    /// Coil supporting frame thickness `c`.
    pub frame_thickness: f64,
    /// Spacing `d1` between the magnet pairs in the width constraint.
    pub yoke_spacing: f64,
    pub remanence: f64,
    pub resistivity: f64,
    pub density: f64,
    pub packing: f64,
    pub current_limit: f64,
}

impl DesignParams {
    /// The reference actuator: 40.5 x 20.5 x 14 mm magnets, 26 mm gap,
    /// 12 mm stroke, 11 x 64 x 12 mm coil of 380 turns, 2 A.
    pub fn reference() -> Self {
        Self {
            magnet_length: 40.5e-3,
            magnet_width: 20.5e-3,
            magnet_thickness: 14e-3,
            air_gap: 26e-3,
            stroke: 12e-3,
            coil_width: 11e-3,
            coil_length: 64e-3,
            coil_thickness: 12e-3,
            turns: 380.0,
            wire_diameter: 0.6e-3,
            frame_thickness: 2e-3,
            yoke_spacing: 20e-3,
            remanence: 1.43,
            resistivity: 1.7e-8,
            density: 8960.0,
            packing: 0.75,
            current_limit: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        let dims = [
            self.magnet_length,
            self.magnet_width,
            self.magnet_thickness,
            self.air_gap,
            self.stroke,
            self.coil_width,
            self.coil_length,
            self.coil_thickness,
            self.turns,
            self.wire_diameter,
            self.frame_thickness,
            self.remanence,
            self.resistivity,
            self.density,
        ];
        if dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(DesignError::InvalidParams("dimensions and constants must be positive".into()));
        }
        if !(self.yoke_spacing >= 0.0) {
            return Err(DesignError::InvalidParams("yoke spacing must be non-negative".into()));
        }
        if !(self.packing > 0.0 && self.packing <= 1.0) {
            return Err(DesignError::InvalidParams("packing fraction must lie in (0, 1]".into()));
        }
        if !(self.current_limit > 0.0) {
            return Err(DesignError::InvalidParams("current limit must be positive".into()));
        }
        Ok(())
    }

    /// Winding window `a - s - c`.
    pub fn window(&self) -> f64 {
        self.air_gap - self.stroke - self.frame_thickness
    }

    /// Inner length `p` of the coil window.
    pub fn window_length(&self) -> f64 {
        self.coil_length - 2.0 * self.coil_thickness
    }

    /// Inner width `q` of the coil window.
    pub fn window_width(&self) -> f64 {
        self.coil_width
    }
}

/// Maximum actuator size and minimum peak force.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignEnvelope {
    pub max_width: f64,
    pub max_thickness: f64,
    pub max_height: f64,
    pub min_force: f64,
}

impl Default for DesignEnvelope {
    fn default() -> Self {
        Self { max_width: 65e-3, max_thickness: 55e-3, max_height: 70e-3, min_force: 24.0 }
    }
}

fn flux_term(w: f64, l: f64, g: f64) -> f64 {
    (w * l / (g * (g * g + l * l + w * w).sqrt())).atan()
}

/// Gap flux density (T) of the magnet pair.
pub fn flux_density(p: &DesignParams) -> f64 {
    let (l, w, t, a) = (p.magnet_length, p.magnet_width, p.magnet_thickness, p.air_gap);
    2.0 * p.remanence / PI * (flux_term(w, l, a) - flux_term(w, l, 4.0 * t + a))
}

/// `2 N B I l_m`.
pub fn lorentz_peak_force(turns: f64, flux: f64, current: f64, magnet_length: f64) -> f64 {
    2.0 * turns * flux * current * magnet_length
}

pub fn peak_force(p: &DesignParams) -> f64 {
    lorentz_peak_force(p.turns, flux_density(p), p.current_limit, p.magnet_length)
}

/// Copper volume of the winding (m^3).
pub fn coil_volume(p: &DesignParams) -> Result<f64, DesignError> {
    let w = p.window();
    if !(w > 0.0) {
        return Err(DesignError::InvalidWindow(w));
    }
    let d = p.wire_diameter;
    let n = p.turns;
    let layers = n * d / w;
    let perimeter = p.window_length() + p.window_width() + 4.0 * d;
    Ok(PI / 2.0 * d * d * (w / d) * (layers * perimeter + n * d * d / w * (layers - 1.0)))
}

/// Ohmic heat (W) at the current limit.
pub fn heat(p: &DesignParams) -> Result<f64, DesignError> {
    let v = coil_volume(p)?;
    Ok(16.0 * p.current_limit.powi(2) * p.resistivity * v / (PI * PI * p.wire_diameter.powi(4)))
}

/// Copper mass (kg).
pub fn coil_mass(p: &DesignParams) -> Result<f64, DesignError> {
    Ok(p.density * p.packing * coil_volume(p)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignMetrics {
    pub flux_density: f64,
    pub peak_force: f64,
    pub coil_volume: f64,
    pub heat: f64,
    pub coil_mass: f64,
}

pub fn evaluate(p: &DesignParams) -> Result<DesignMetrics, DesignError> {
    Ok(DesignMetrics {
        flux_density: flux_density(p),
        peak_force: peak_force(p),
        coil_volume: coil_volume(p)?,
        heat: heat(p)?,
        coil_mass: coil_mass(p)?,
    })
}

/// Constraint margins; each is non-negative when satisfied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    /// `x2 - (2 t_m + a)`.
    pub thickness: f64,
    /// `x1 - (2 w_m + d1)`.
    pub width: f64,
    /// `x3 - l_coil`.
    pub height: f64,
    /// `F_max - F_min`.
    pub force: f64,
}

impl FeasibilityReport {
    pub fn margins(&self) -> [f64; 4] {
        [self.thickness, self.width, self.height, self.force]
    }

    pub fn is_feasible(&self) -> bool {
        self.margins().iter().all(|m| *m >= 0.0)
    }
}

pub fn feasibility(p: &DesignParams, env: &DesignEnvelope) -> FeasibilityReport {
    FeasibilityReport {
        thickness: env.max_thickness - (2.0 * p.magnet_thickness + p.air_gap),
        width: env.max_width - (2.0 * p.magnet_width + p.yoke_spacing),
        height: env.max_height - p.coil_length,
        force: peak_force(p) - env.min_force,
    }
}

pub fn feasible(p: &DesignParams, env: &DesignEnvelope) -> bool {
    feasibility(p, env).is_feasible()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DesignVariable {
    MagnetLength,
    MagnetWidth,
    MagnetThickness,
    AirGap,
    Stroke,
    CoilWidth,
    CoilLength,
    CoilThickness,
    Turns,
}

impl DesignVariable {
    pub fn name(self) -> &'static str {
        match self {
            DesignVariable::MagnetLength => "magnet_length",
            DesignVariable::MagnetWidth => "magnet_width",
            DesignVariable::MagnetThickness => "magnet_thickness",
            DesignVariable::AirGap => "air_gap",
            DesignVariable::Stroke => "stroke",
            DesignVariable::CoilWidth => "coil_width",
            DesignVariable::CoilLength => "coil_length",
            DesignVariable::CoilThickness => "coil_thickness",
            DesignVariable::Turns => "turns",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        use DesignVariable::*;
        [MagnetLength, MagnetWidth, MagnetThickness, AirGap, Stroke, CoilWidth, CoilLength, CoilThickness, Turns]
            .into_iter()
            .find(|v| v.name() == name)
    }

    fn slot(self, p: &mut DesignParams) -> &mut f64 {
        match self {
            DesignVariable::MagnetLength => &mut p.magnet_length,
            DesignVariable::MagnetWidth => &mut p.magnet_width,
            DesignVariable::MagnetThickness => &mut p.magnet_thickness,
            DesignVariable::AirGap => &mut p.air_gap,
            DesignVariable::Stroke => &mut p.stroke,
            DesignVariable::CoilWidth => &mut p.coil_width,
            DesignVariable::CoilLength => &mut p.coil_length,
            DesignVariable::CoilThickness => &mut p.coil_thickness,
            DesignVariable::Turns => &mut p.turns,
        }
    }
}

/// Search interval of one variable; with a step the variable is restricted
/// to the lattice `lower + k * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableBound {
    pub variable: DesignVariable,
    pub lower: f64,
    pub upper: f64,
    pub step: Option<f64>,
}

impl VariableBound {
    fn snap(&self, v: f64) -> f64 {
        let v = v.clamp(self.lower, self.upper);
        match self.step {
            Some(step) if step > 0.0 => {
                let k = ((v - self.lower) / step).round();
                (self.lower + k * step).min(self.upper)
            }
            _ => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub flux: f64,
    pub heat: f64,
    pub mass: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { flux: 1.0, heat: 1.0, mass: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBudget {
    pub population: usize,
    pub generations: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { population: 60, generations: 80 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDesign {
    pub params: DesignParams,
    pub metrics: DesignMetrics,
    pub margins: FeasibilityReport,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSearch {
    /// Distinct feasible designs of the final population, best first.
    pub designs: Vec<RankedDesign>,
    /// Best objective value after each generation (index 0: initial population).
    pub best_history: Vec<f64>,
    /// `(min, span)` of flux, heat and mass used by [`objective`].
    pub normalization: [(f64, f64); 3],
}

#[derive(Clone)]
struct Individual {
    genes: Vec<f64>,
    objective: f64,
}

struct Scorer<'a> {
    base: &'a DesignParams,
    env: &'a DesignEnvelope,
    bounds: &'a [VariableBound],
    weights: ObjectiveWeights,
    // (min, span) of B, Q, m over the initial population
    norm: [(f64, f64); 3],
}

const PENALTY: f64 = 10.0;

impl Scorer<'_> {
    fn params(&self, genes: &[f64]) -> DesignParams {
        let mut p = self.base.clone();
        for (b, g) in self.bounds.iter().zip(genes) {
            *b.variable.slot(&mut p) = *g;
        }
        p
    }

    fn raw(&self, genes: &[f64]) -> Option<(DesignMetrics, FeasibilityReport)> {
        let p = self.params(genes);
        let m = evaluate(&p).ok()?;
        Some((m, feasibility(&p, self.env)))
    }

    fn score(&self, genes: &[f64]) -> f64 {
        objective(&self.params(genes), self.env, self.weights, &self.norm)
    }
}

/// Search objective `-w_B B^ + w_Q Q^ + w_m m^` with hats normalized as
/// `(v - min) / span` by `norm` (flux, heat, mass), plus a penalty for
/// envelope violations and invalid geometry.
pub fn objective(p: &DesignParams, env: &DesignEnvelope, weights: ObjectiveWeights, norm: &[(f64, f64); 3]) -> f64 {
    let Ok(m) = evaluate(p) else {
        return 1e3 * PENALTY * (1.0 + (-p.window()).max(0.0) / p.air_gap);
    };
    let report = feasibility(p, env);
    let hat = |v: f64, k: usize| (v - norm[k].0) / norm[k].1;
    let mut f =
        -weights.flux * hat(m.flux_density, 0) + weights.heat * hat(m.heat, 1) + weights.mass * hat(m.coil_mass, 2);
    if !report.is_feasible() {
        let scales = [env.max_thickness, env.max_width, env.max_height, env.min_force];
        let violation: f64 =
            report.margins().iter().zip(scales).map(|(m, s)| (-m).max(0.0) / if s > 0.0 { s } else { 1.0 }).sum();
        f += PENALTY * (1.0 + violation);
    }
    f
}

fn compare(a: &Individual, b: &Individual) -> Ordering {
    a.objective.total_cmp(&b.objective).then_with(|| {
        a.genes.iter().zip(&b.genes).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    })
}

/// Genetic search for designs minimizing
/// `-w_B B^ + w_Q Q^ + w_m m^` plus an infeasibility penalty, where hats
/// are min-max normalized over the initial population.
pub fn optimize(
    base: &DesignParams,
    env: &DesignEnvelope,
    bounds: &[VariableBound],
    weights: ObjectiveWeights,
    budget: SearchBudget,
    seed: u64,
) -> Result<DesignSearch, DesignError> {
    base.validate()?;
    if bounds.is_empty() || bounds.iter().any(|b| !(b.lower <= b.upper) || !(b.lower > 0.0)) {
        return Err(DesignError::EmptyBounds);
    }
    let pop_size = budget.population.max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut genes: Vec<Vec<f64>> = (0..pop_size)
        .map(|_| bounds.iter().map(|b| b.snap(b.lower + rng.random::<f64>() * (b.upper - b.lower))).collect())
        .collect();

    let mut scorer = Scorer { base, env, bounds, weights, norm: [(0.0, 1.0); 3] };
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for g in &genes {
        if let Some((m, _)) = scorer.raw(g) {
            for (k, v) in [m.flux_density, m.heat, m.coil_mass].into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
    }
    for k in 0..3 {
        scorer.norm[k] = if lo[k].is_finite() && hi[k] > lo[k] {
            (lo[k], hi[k] - lo[k])
        } else if lo[k].is_finite() {
            (lo[k], lo[k].abs().max(1e-300))
        } else {
            (0.0, 1.0)
        };
    }

    let mut pop: Vec<Individual> =
        genes.drain(..).map(|g| Individual { objective: scorer.score(&g), genes: g }).collect();
    pop.sort_by(compare);
    let mut best_history = vec![pop[0].objective];
    let elites = (pop_size / 10).max(2);
    let mutation_rate = 1.0 / bounds.len() as f64;

    for _ in 0..budget.generations {
        let mut next: Vec<Individual> = pop[..elites].to_vec();
        while next.len() < pop_size {
            let pick = |rng: &mut ChaCha8Rng| {
                let mut best = rng.random_range(0..pop_size);
                for _ in 0..2 {
                    best = best.min(rng.random_range(0..pop_size));
                }
                best
            };
            let (pa, pb) = (pick(&mut rng), pick(&mut rng));
            let child: Vec<f64> = bounds
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let (x, y) = (pop[pa].genes[k], pop[pb].genes[k]);
                    let alpha: f64 = rng.random_range(-0.25..1.25);
                    let mut v = x + alpha * (y - x);
                    if rng.random::<f64>() < mutation_rate {
                        v += 0.15 * (b.upper - b.lower) * unit.sample(&mut rng);
                    }
                    b.snap(v)
                })
                .collect();
            next.push(Individual { objective: scorer.score(&child), genes: child });
        }
        next.sort_by(compare);
        pop = next;
        best_history.push(pop[0].objective);
    }

    let mut designs: Vec<RankedDesign> = Vec::new();
    for ind in &pop {
        let params = scorer.params(&ind.genes);
        let Ok(metrics) = evaluate(&params) else { continue };
        let margins = feasibility(&params, env);
        if margins.is_feasible() && !designs.iter().any(|d| d.params == params) {
            designs.push(RankedDesign { params, metrics, margins, objective: ind.objective });
        }
    }
    if designs.is_empty() {
        return Err(DesignError::NoFeasibleDesign);
    }
    Ok(DesignSearch { designs, best_history, normalization: scorer.norm })
}

const CSV_COLUMNS: [&str; 26] = [
    "rank",
    "objective",
    "magnet_length_m",
    "magnet_width_m",
    "magnet_thickness_m",
    "air_gap_m",
    "stroke_m",
    "coil_width_m",
    "coil_length_m",
    "coil_thickness_m",
    "turns",
    "wire_diameter_m",
    "frame_thickness_m",
    "yoke_spacing_m",
    "remanence_T",
    "current_limit_A",
    "flux_density_T",
    "peak_force_N",
    "coil_volume_m3",
    "heat_W",
    "coil_mass_kg",
    "margin_thickness_m",
    "margin_width_m",
    "margin_height_m",
    "margin_force_N",
    "feasible",
];

fn design_fields(rank: usize, d: &RankedDesign) -> Vec<(&'static str, String)> {
    let p = &d.params;
    let m = &d.metrics;
    let g = &d.margins;
    let nums = [
        d.objective,
        p.magnet_length,
        p.magnet_width,
        p.magnet_thickness,
        p.air_gap,
        p.stroke,
        p.coil_width,
        p.coil_length,
        p.coil_thickness,
        p.turns,
        p.wire_diameter,
        p.frame_thickness,
        p.yoke_spacing,
        p.remanence,
        p.current_limit,
        m.flux_density,
        m.peak_force,
        m.coil_volume,
        m.heat,
        m.coil_mass,
        g.thickness,
        g.width,
        g.height,
        g.force,
    ];
    let mut out = vec![(CSV_COLUMNS[0], rank.to_string())];
    out.extend(CSV_COLUMNS[1..25].iter().zip(nums).map(|(k, v)| (*k, format!("{v:.11e}"))));
    out.push((CSV_COLUMNS[25], g.is_feasible().to_string()));
    out
}

/// One row per design with parameters, evaluator outputs and margins.
pub fn write_designs_csv<W: Write>(designs: &[RankedDesign], w: W) -> Result<(), DesignError> {
    let err = |e: csv::Error| DesignError::Export(e.to_string());
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_COLUMNS).map_err(err)?;
    for (i, d) in designs.iter().enumerate() {
        wr.write_record(design_fields(i + 1, d).into_iter().map(|(_, v)| v)).map_err(err)?;
    }
    wr.flush().map_err(|e| DesignError::Export(e.to_string()))
}

/// Human-readable `key = value` block per design.
pub fn write_designs_report<W: Write>(designs: &[RankedDesign], mut w: W) -> Result<(), DesignError> {
    let io = |e: std::io::Error| DesignError::Export(e.to_string());
    for (i, d) in designs.iter().enumerate() {
        writeln!(w, "[design {}]", i + 1).map_err(io)?;
        for (k, v) in design_fields(i + 1, d).into_iter().skip(1) {
            writeln!(w, "{k} = {v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_flux() {
        let b = flux_density(&DesignParams::reference());
        assert!((b - 0.40).abs() < 0.005, "{b}");
    }

    #[test]
    fn flux_vanishes_with_thin_magnet() {
        let mut p = DesignParams::reference();
        p.magnet_thickness = 1e-12;
        assert!(flux_density(&p).abs() < 1e-9);
    }

    #[test]
    fn flux_linear_in_remanence() {
        let mut p = DesignParams::reference();
        let b1 = flux_density(&p);
        p.remanence *= 1.7;
        assert_relative_eq!(flux_density(&p), 1.7 * b1, max_relative = 1e-14);
    }

    #[test]
    fn force_arithmetic() {
        assert_relative_eq!(lorentz_peak_force(380.0, 0.4, 2.0, 0.0405), 24.624, max_relative = 1e-14);
        assert_eq!(lorentz_peak_force(380.0, 0.4, 0.0, 0.0405), 0.0);
        let mut p = DesignParams::reference();
        let f = peak_force(&p);
        p.turns *= 2.0;
        assert_relative_eq!(peak_force(&p), 2.0 * f, max_relative = 1e-14);
    }

    #[test]
    fn volume_hand_calculation() {
        // window 12 mm, 19 layers of 0.6 mm wire, p = 40 mm, q = 11 mm:
        // V = pi/2 * 0.36e-6 * 20 * (19 * 0.0534 + 0.0114 * 18) m^3
        let expect = PI / 2.0 * 0.36e-6 * 20.0 * (19.0 * 0.0534 + 0.0114 * 18.0);
        assert_relative_eq!(coil_volume(&DesignParams::reference()).unwrap(), expect, max_relative = 1e-12);
        assert_relative_eq!(expect, 1.3795612987855786e-05, max_relative = 1e-12);
    }

    #[test]
    fn heat_and_mass_scaling() {
        let mut p = DesignParams::reference();
        let q = heat(&p).unwrap();
        let m = coil_mass(&p).unwrap();
        p.current_limit *= 3.0;
        assert_relative_eq!(heat(&p).unwrap(), 9.0 * q, max_relative = 1e-14);
        p.packing = 0.375;
        assert_relative_eq!(coil_mass(&p).unwrap(), 0.5 * m, max_relative = 1e-14);
    }

    #[test]
    fn invalid_window() {
        let mut p = DesignParams::reference();
        p.stroke = 24e-3;
        assert!(matches!(coil_volume(&p), Err(DesignError::InvalidWindow(_))));
        assert!(heat(&p).is_err() && coil_mass(&p).is_err());
    }

    #[test]
    fn millimetre_units_agree() {
        let p = DesignParams::reference();
        let k = 1e3;
        let mm = DesignParams {
            magnet_length: p.magnet_length * k,
            magnet_width: p.magnet_width * k,
            magnet_thickness: p.magnet_thickness * k,
            air_gap: p.air_gap * k,
            stroke: p.stroke * k,
            coil_width: p.coil_width * k,
            coil_length: p.coil_length * k,
            coil_thickness: p.coil_thickness * k,
            wire_diameter: p.wire_diameter * k,
            frame_thickness: p.frame_thickness * k,
            yoke_spacing: p.yoke_spacing * k,
            // ohm mm, kg / mm^3
            resistivity: p.resistivity * k,
            density: p.density / (k * k * k),
            ..p.clone()
        };
        let (a, b) = (evaluate(&p).unwrap(), evaluate(&mm).unwrap());
        assert_relative_eq!(a.flux_density, b.flux_density, max_relative = 1e-12);
        assert_relative_eq!(a.peak_force, b.peak_force / k, max_relative = 1e-12);
        assert_relative_eq!(a.coil_volume, b.coil_volume / (k * k * k), max_relative = 1e-12);
        assert_relative_eq!(a.heat, b.heat, max_relative = 1e-12);
        assert_relative_eq!(a.coil_mass, b.coil_mass, max_relative = 1e-12);
    }

    #[test]
    fn reference_is_feasible() {
        let r = feasibility(&DesignParams::reference(), &DesignEnvelope::default());
        assert_relative_eq!(r.thickness, 1e-3, epsilon = 1e-12);
        assert_relative_eq!(r.width, 4e-3, epsilon = 1e-12);
        assert_relative_eq!(r.height, 6e-3, epsilon = 1e-12);
        assert!(r.force > 0.0);
        assert!(r.is_feasible());
        let zero = DesignEnvelope { max_width: 0.0, max_thickness: 0.0, max_height: 0.0, min_force: 24.0 };
        assert!(!feasible(&DesignParams::reference(), &zero));
        let mut weak = DesignParams::reference();
        weak.current_limit = 1e-6;
        assert!(!feasible(&weak, &DesignEnvelope::default()));
        assert!(feasible(&weak, &DesignEnvelope { min_force: 0.0, ..Default::default() }));
    }

    #[test]
    fn collapsed_bounds() {
        let p = DesignParams::reference();
        let bounds = [VariableBound { variable: DesignVariable::Turns, lower: 380.0, upper: 380.0, step: None }];
        let s = optimize(
            &p,
            &DesignEnvelope::default(),
            &bounds,
            ObjectiveWeights::default(),
            SearchBudget { population: 8, generations: 3 },
            1,
        )
        .unwrap();
        assert_eq!(s.designs.len(), 1);
        assert_eq!(s.designs[0].params, p);
        let tight = DesignEnvelope { min_force: 100.0, ..Default::default() };
        assert_eq!(
            optimize(
                &p,
                &tight,
                &bounds,
                ObjectiveWeights::default(),
                SearchBudget { population: 8, generations: 3 },
                1
            ),
            Err(DesignError::NoFeasibleDesign)
        );
    }

    #[test]
    fn elitism_and_determinism() {
        let p = DesignParams::reference();
        let bounds = [
            VariableBound { variable: DesignVariable::MagnetLength, lower: 0.03, upper: 0.05, step: None },
            VariableBound { variable: DesignVariable::Turns, lower: 250.0, upper: 500.0, step: Some(1.0) },
            VariableBound { variable: DesignVariable::CoilWidth, lower: 0.008, upper: 0.016, step: None },
        ];
        let run = |seed| {
            optimize(
                &p,
                &DesignEnvelope::default(),
                &bounds,
                ObjectiveWeights::default(),
                SearchBudget { population: 30, generations: 25 },
                seed,
            )
            .unwrap()
        };
        let a = run(5);
        for w in a.best_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for d in &a.designs {
            assert!(d.margins.margins().iter().all(|m| *m >= 0.0));
            assert!(feasible(&d.params, &DesignEnvelope::default()));
        }
        assert_eq!(a, run(5));
    }

    #[test]
    fn export_formats() {
        let p = DesignParams::reference();
        let d = RankedDesign {
            metrics: evaluate(&p).unwrap(),
            margins: feasibility(&p, &DesignEnvelope::default()),
            params: p,
            objective: -1.0,
        };
        let mut csv_out = Vec::new();
        write_designs_csv(std::slice::from_ref(&d), &mut csv_out).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        let mut report = Vec::new();
        write_designs_report(&[d], &mut report).unwrap();
        let report = String::from_utf8(report).unwrap();
        assert!(report.starts_with("[design 1]\n"));
        assert!(report.contains("feasible = true"));
    }
}
