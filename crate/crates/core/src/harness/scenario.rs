//! Scenario definitions, metrics and output files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::allocation::{allocate_minimax, allocate_qp, reconfigure, AllocatorState, OperatingMode};
use crate::control::{analyze_loop, closed_loop, frequency_response, open_loop, LoopPlant, Reference, ReferenceMode};
use crate::design::{self, optimize, write_designs_csv, write_designs_report};
use crate::error::{Error, Result};
use crate::ident::{batch_least_squares, rectifier, write_matrix, RlsEstimator};
use crate::model::{build_mixing_matrix, RigidState, Wrench, ACTUATOR_COUNT};
use crate::plant::{BaseProfile, CouplingMatrix};

use super::config::{Config, ConfigError};
use super::sim::{coupling_target, record_row, trace_columns, ClosedLoop, SimOptions, StepRecord};
use super::spectral::{spectrum, transmissibility};
use super::trace::{Manifest, SimTrace, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScenarioKind {
    Levitate,
    Contour,
    Sweep,
    Identify,
    Failure,
    AllocCompare,
    Design,
    LoopAnalysis,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::Levitate,
        ScenarioKind::Contour,
        ScenarioKind::Sweep,
        ScenarioKind::Identify,
        ScenarioKind::Failure,
        ScenarioKind::AllocCompare,
        ScenarioKind::Design,
        ScenarioKind::LoopAnalysis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Levitate => "levitate",
            ScenarioKind::Contour => "contour",
            ScenarioKind::Sweep => "sweep",
            ScenarioKind::Identify => "identify",
            ScenarioKind::Failure => "failure",
            ScenarioKind::AllocCompare => "alloc-compare",
            ScenarioKind::Design => "design",
            ScenarioKind::LoopAnalysis => "loop-analysis",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Command-line adjustments applied on top of the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
    pub no_noise: bool,
}

impl Overrides {
    pub fn apply(&self, config: &mut Config, kind: ScenarioKind) -> Result<()> {
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if self.no_noise {
            config.run.noise = false;
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                return Err(ConfigError::Invalid { key: "--duration".into(), reason: "must be positive".into() }.into());
            }
            let sc = &mut config.scenario;
            match kind {
                ScenarioKind::Levitate => sc.levitate.duration_s = d,
                ScenarioKind::Contour => sc.contour.duration_s = d,
                ScenarioKind::Sweep => sc.sweep.duration_s = d,
                ScenarioKind::Identify => sc.identify.channel_duration_s = d / 6.0,
                ScenarioKind::Failure => sc.failure.check_duration_s = d,
                _ => {}
            }
        }
        config.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Number(f64),
    Count(u64),
    Flag(bool),
    Text(String),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Number(v) => write!(f, "{v:.9e}"),
            Metric::Count(v) => write!(f, "{v}"),
            Metric::Flag(v) => write!(f, "{v}"),
            Metric::Text(v) => write!(f, "\"{v}\""),
        }
    }
}

/// Two-or-more-column numeric table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub file_name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub kind: ScenarioKind,
    pub metrics: BTreeMap<String, Metric>,
    pub trace: Option<SimTrace>,
    pub curves: Vec<Curve>,
    /// Extra text files `(name, contents)`.
    pub files: Vec<(String, String)>,
}

impl ScenarioOutput {
    fn new(kind: ScenarioKind) -> Self {
        Self { kind, metrics: BTreeMap::new(), trace: None, curves: Vec::new(), files: Vec::new() }
    }

    fn num(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.into(), Metric::Number(v));
    }

    fn count(&mut self, key: &str, v: usize) {
        self.metrics.insert(key.into(), Metric::Count(v as u64));
    }

    fn flag(&mut self, key: &str, v: bool) {
        self.metrics.insert(key.into(), Metric::Flag(v));
    }

    fn text(&mut self, key: &str, v: impl Into<String>) {
        self.metrics.insert(key.into(), Metric::Text(v.into()));
    }

    /// Numeric value of a metric (flags map to 0/1).
    pub fn metric(&self, key: &str) -> Option<f64> {
        match self.metrics.get(key)? {
            Metric::Number(v) => Some(*v),
            Metric::Count(v) => Some(*v as f64),
            Metric::Flag(v) => Some(*v as u8 as f64),
            Metric::Text(_) => None,
        }
    }

    pub fn metric_text(&self, key: &str) -> Option<&str> {
        match self.metrics.get(key)? {
            Metric::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn metrics_text(&self) -> String {
        let mut s = format!("# scenario = {}\n", self.kind);
        for (k, v) in &self.metrics {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Writes `metrics.txt`, `trace.csv` (after validation) and all curves
    /// into `dir`.
    pub fn write_to(&self, dir: &Path, config: &Config) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.txt"), self.metrics_text())?;
        if let Some(trace) = &self.trace {
            trace.validate()?;
            let manifest =
                Manifest { schema_version: SCHEMA_VERSION, config_sha256: config.sha256(), seed: config.run.seed };
            let f = BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
            trace.write_csv(f, &manifest)?;
        }
        for c in &self.curves {
            let mut s = c.columns.join(",");
            s.push('\n');
            for row in &c.rows {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            fs::write(dir.join(&c.file_name), s)?;
        }
        for (name, text) in &self.files {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

/// Runs one scenario. The configuration is validated first.
pub fn run_scenario(config: &Config, kind: ScenarioKind) -> Result<ScenarioOutput> {
    config.validate()?;
    match kind {
        ScenarioKind::Levitate => levitate(config),
        ScenarioKind::Contour => contour(config),
        ScenarioKind::Sweep => sweep(config),
        ScenarioKind::Identify => identify(config),
        ScenarioKind::Failure => failure(config),
        ScenarioKind::AllocCompare => alloc_compare(config),
        ScenarioKind::Design => design_search(config),
        ScenarioKind::LoopAnalysis => loop_analysis(config),
    }
}

struct Run {
    trace: SimTrace,
    contact: bool,
    final_relative: RigidState,
}

/// Steps the closed loop for `duration`; `drive(t, ts)` supplies the
/// reference, mode and extra wrench for the cycle at `t`.
fn simulate(
    config: &Config,
    options: SimOptions,
    duration: f64,
    mut drive: impl FnMut(f64, f64) -> (Reference, ReferenceMode, Wrench),
    mut observe: impl FnMut(&StepRecord),
) -> Result<Run> {
    let mut lp = ClosedLoop::new(config, options)?;
    let ts = lp.sample_period();
    let dec = config.run.trace_decimation;
    let mut trace = SimTrace::new(trace_columns(), ts * dec as f64);
    let steps = (duration / ts).round() as u64;
    let mut contact = false;
    for k in 0..steps {
        let t = k as f64 * ts;
        let (r, mode, extra) = drive(t, ts);
        let rec = lp.step(&r, mode, &extra)?;
        if k % dec as u64 == 0 {
            let mut row = record_row(&rec);
            row[0] = (k / dec as u64) as f64 * trace.sample_period;
            trace.push(row);
        }
        observe(&rec);
        if rec.contact {
            contact = true;
            break;
        }
    }
    let final_relative = lp.plant().relative_state()?;
    Ok(Run { trace, contact, final_relative })
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn rms_about_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

const AXES: [&str; 6] = ["x", "y", "z", "alpha", "beta", "gamma"];

fn regulation(_: f64, _: f64) -> (Reference, ReferenceMode, Wrench) {
    (Reference::default(), ReferenceMode::Regulation, Wrench::zero())
}

fn levitate(config: &Config) -> Result<ScenarioOutput> {
    let lc = &config.scenario.levitate;
    let ts = config.controller.sample_period_s;
    let initial = RigidState {
        position: Vector3::from(lc.initial_offset_m),
        euler: Vector3::from(lc.initial_angle_rad),
        ..Default::default()
    };
    let steady_from = 0.75 * lc.duration_s;
    let mut times = Vec::new();
    let mut errors = Vec::new();
    let mut steady: [Vec<f64>; 3] = Default::default();
    let mut steady_accel: [Vec<f64>; 3] = Default::default();
    let run = simulate(config, SimOptions { initial, ..Default::default() }, lc.duration_s, regulation, |r| {
        times.push(r.t);
        errors.push(r.relative.position.norm());
        if r.t >= steady_from {
            for i in 0..3 {
                steady[i].push(r.relative.position[i]);
                steady_accel[i].push(r.accel_measured[i]);
            }
        }
    })?;

    let mut out = ScenarioOutput::new(ScenarioKind::Levitate);
    out.flag("contact_stop", run.contact);
    let last_out = errors.iter().rposition(|e| *e > lc.settle_tolerance_m);
    let settling = match last_out {
        None => 0.0,
        Some(i) if i + 1 < times.len() => times[i + 1],
        Some(_) => f64::INFINITY,
    };
    out.flag("settled", settling.is_finite());
    if settling.is_finite() {
        out.num("settling_time_s", settling);
    }
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        out.num(&format!("steady_position_rms_{}_m", AXES[i]), rms(&steady[i]));
        let m = steady[i].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        worst = worst.max(m);
        out.num(&format!("steady_accel_rms_{}_mg", AXES[i]), rms_about_mean(&steady_accel[i]) / 9.8 * 1e3);
    }
    out.num("steady_position_max_abs_m", worst);
    out.num("final_position_error_m", run.final_relative.position.norm());
    if let Ok(s) = spectrum(&steady_accel[1], 1.0 / ts) {
        let (pf, pa) = s.peak().unwrap_or((0.0, 0.0));
        out.num("spectrum_y_peak_hz", pf);
        out.num("spectrum_y_peak_g", pa);
        out.curves.push(Curve {
            file_name: "spectrum.csv".into(),
            columns: vec!["frequency_hz".into(), "amplitude_g".into()],
            rows: s.frequency_hz.iter().zip(&s.amplitude_g).map(|(f, a)| vec![*f, *a]).collect(),
        });
    }
    out.trace = Some(run.trace);
    Ok(out)
}

/// Circle of radius `r` at `f` Hz in the x-y plane whose radius ramps in
/// with a quintic over `ramp`. Returns position and acceleration.
pub fn contour_reference(r: f64, f: f64, ramp: f64, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (rho, drho, ddrho) = if ramp <= 0.0 || t >= ramp {
        (1.0, 0.0, 0.0)
    } else {
        let s = (t / ramp).max(0.0);
        (
            s * s * s * (10.0 - 15.0 * s + 6.0 * s * s),
            30.0 * s * s * (1.0 - s) * (1.0 - s) / ramp,
            60.0 * s * (1.0 - 3.0 * s + 2.0 * s * s) / (ramp * ramp),
        )
    };
    let w = 2.0 * PI * f;
    let (sn, cs) = (w * t).sin_cos();
    let pos = Vector3::new(r * rho * cs, r * rho * sn, 0.0);
    let acc = Vector3::new(
        r * (ddrho * cs - 2.0 * drho * w * sn - rho * w * w * cs),
        r * (ddrho * sn + 2.0 * drho * w * cs - rho * w * w * sn),
        0.0,
    );
    (pos, acc)
}

fn contour(config: &Config) -> Result<ScenarioOutput> {
    let cc = config.scenario.contour.clone();
    let radius = cc.diameter_m / 2.0;
    let mut err: [Vec<f64>; 3] = Default::default();
    let mut contour_err = Vec::new();
    let drive = |t: f64, ts: f64| {
        let (p, _) = contour_reference(radius, cc.frequency_hz, cc.ramp_s, t);
        let (_, a) = contour_reference(radius, cc.frequency_hz, cc.ramp_s, t + ts / 2.0);
        let r = Reference {
            pose: Vector6::new(p.x, p.y, p.z, 0.0, 0.0, 0.0),
            acceleration: Vector6::new(a.x, a.y, a.z, 0.0, 0.0, 0.0),
        };
        (r, ReferenceMode::Tracking, Wrench::zero())
    };
    let run = simulate(config, SimOptions::default(), cc.duration_s, drive, |r| {
        if r.t < cc.ramp_s {
            return;
        }
        let (p, _) = contour_reference(radius, cc.frequency_hz, cc.ramp_s, r.t);
        let x = r.relative.position;
        for i in 0..3 {
            err[i].push(x[i] - p[i]);
        }
        contour_err.push((x.x.hypot(x.y) - radius).abs());
    })?;
    let mut out = ScenarioOutput::new(ScenarioKind::Contour);
    out.flag("contact_stop", run.contact);
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let v = rms(&err[i]);
        worst = worst.max(v);
        out.num(&format!("tracking_rms_{}_m", AXES[i]), v);
    }
    out.num("tracking_rms_max_m", worst);
    out.num("contour_error_max_m", contour_err.iter().fold(0.0, |a: f64, v| a.max(*v)));
    out.num("contour_error_rms_m", rms(&contour_err));
    out.trace = Some(run.trace);
    Ok(out)
}

fn sweep(config: &Config) -> Result<ScenarioOutput> {
    let sc = config.scenario.sweep.clone();
    let profile = BaseProfile::LogSweep {
        axis: sc.axis,
        accel_amplitude: sc.accel_amplitude_m_per_s2,
        f_start: sc.f_start_hz,
        f_end: sc.f_end_hz,
        duration: sc.duration_s,
    };
    let options = SimOptions { profile, controller_enabled: sc.controller_enabled, ..Default::default() };
    let run = simulate(config, options, sc.duration_s, regulation, |_| {})?;
    let mut out = ScenarioOutput::new(ScenarioKind::Sweep);
    out.flag("contact_stop", run.contact);
    let name = ["ax", "ay", "az", "alpha_dd", "beta_dd", "gamma_dd"][sc.axis];
    let input = run.trace.column(&format!("base_{name}")).unwrap_or_default();
    let output = run.trace.column(&format!("meas_{name}")).unwrap_or_default();
    let fs = 1.0 / run.trace.sample_period;
    let est = transmissibility(&input, &output, fs, sc.segment_len)?;
    out.count("welch_segments", est.segments);
    let [lo, hi] = sc.slope_band_hz;
    out.num("slope_db_per_decade", est.slope_db_per_decade(lo, hi)?);
    let [clo, chi] = sc.cutoff_search_hz;
    match est.cutoff_hz(clo, chi) {
        Some(fc) => out.num("cutoff_hz", fc),
        None => out.text("cutoff_hz", "none"),
    }
    let db = est.magnitude_db();
    let (pi, pdb) = db
        .iter()
        .enumerate()
        .filter(|(i, _)| est.frequency_hz[*i] >= clo && est.frequency_hz[*i] <= chi)
        .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
    out.num("peak_db", pdb);
    out.num("peak_hz", est.frequency_hz[pi]);
    out.curves.push(Curve {
        file_name: "transmissibility.csv".into(),
        columns: vec!["frequency_hz".into(), "magnitude_db".into(), "phase_deg".into(), "coherence".into()],
        rows: (0..est.frequency_hz.len())
            .filter(|&i| est.frequency_hz[i] >= sc.f_start_hz && est.frequency_hz[i] <= sc.f_end_hz)
            .map(|i| vec![est.frequency_hz[i], db[i], est.response[i].arg().to_degrees(), est.coherence[i]])
            .collect(),
    });
    out.trace = Some(run.trace);
    Ok(out)
}

/// Sequential log-sweep excitation, one wrench channel at a time.
pub fn identification_excitation(config: &Config, t: f64) -> Wrench {
    let ic = &config.scenario.identify;
    let d = ic.channel_duration_s;
    let ch = (t / d).floor() as usize;
    if ch >= 6 {
        return Wrench::zero();
    }
    let tau = t - ch as f64 * d;
    let l = d / (ic.f_end_hz / ic.f_start_hz).ln();
    let phase = 2.0 * PI * ic.f_start_hz * l * ((tau / l).exp() - 1.0);
    let amp = if ch < 3 { ic.force_amplitude_n } else { ic.torque_amplitude_n_m };
    let mut v = Vector6::zeros();
    v[ch] = amp * phase.sin();
    Wrench::from_vector(&v)
}

/// Identified coupling, its rectifier and quality figures.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub truth: Matrix6<f64>,
    pub estimate: Matrix6<f64>,
    pub batch: Matrix6<f64>,
    pub rectifier: Matrix6<f64>,
    pub samples: usize,
    pub contact: bool,
    /// Largest off-axis to on-axis ratio of the applied wrench for unit
    /// pure-axis commands, with and without the rectifier.
    pub cross_axis_rectified: f64,
    pub cross_axis_raw: f64,
}

pub fn run_identification(config: &Config) -> Result<(IdentificationResult, SimTrace)> {
    let ic = config.scenario.identify.clone();
    let geom = config.geometry();
    let coupling = CouplingMatrix::perturbed(ic.coupling_perturbation, config.plant.coupling_seed)?;
    let options = SimOptions { coupling, ..Default::default() };
    let mut records: Vec<(Vector6<f64>, StepRecord)> = Vec::new();
    let run = simulate(
        config,
        options.clone(),
        6.0 * ic.channel_duration_s,
        |t, _| (Reference::default(), ReferenceMode::Regulation, identification_excitation(config, t)),
        |r| records.push((r.model_wrench.to_vector(), r.clone())),
    )?;

    let mut sigma = [0.0; 6];
    if config.run.noise && ic.noise_fraction > 0.0 {
        for (i, s) in sigma.iter_mut().enumerate() {
            let ch: Vec<f64> = records.iter().map(|(_, r)| r.response_accel[i]).collect();
            *s = ic.noise_fraction * rms(&ch);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
    rng.set_stream(3);
    let mut est = RlsEstimator::new(Matrix6::identity(), ic.initial_covariance, ic.forgetting)?;
    let mut ws = Vec::with_capacity(records.len());
    let mut ys = Vec::with_capacity(records.len());
    for (w, r) in &records {
        let mut a = r.response_accel;
        for i in 0..6 {
            if sigma[i] > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                a[i] += sigma[i] * n;
            }
        }
        let y = coupling_target(&geom, r, &a);
        est.update_target(w, &y);
        ws.push(*w);
        ys.push(y);
    }
    let batch = batch_least_squares(&ws, &ys, &Matrix6::identity(), ic.initial_covariance)
        .ok_or(Error::Ident(crate::ident::IdentError::SingularEstimate(f64::INFINITY)))?;
    let r_rt = rectifier(est.estimate())?;

    let mut check_cfg = config.clone();
    check_cfg.run.noise = false;
    let mut check = ClosedLoop::new(&check_cfg, options)?;
    let mut cross = |rect: Option<&Matrix6<f64>>| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for j in 0..6 {
            let mut e = Vector6::zeros();
            e[j] = 1.0;
            let cmd = rect.map_or(e, |r| r * e);
            let (currents, _) = check.allocate(&Vector6::zeros(), &Wrench::from_vector(&cmd))?;
            let applied = check.plant().applied_wrench(&currents)?.to_vector();
            for i in (0..6).filter(|&i| i != j) {
                worst = worst.max(applied[i].abs() / applied[j].abs());
            }
        }
        Ok(worst)
    };
    let cross_axis_rectified = cross(Some(&r_rt))?;
    let cross_axis_raw = cross(None)?;
    Ok((
        IdentificationResult {
            truth: *coupling.matrix(),
            estimate: *est.estimate(),
            batch,
            rectifier: r_rt,
            samples: est.samples(),
            contact: run.contact,
            cross_axis_rectified,
            cross_axis_raw,
        },
        run.trace,
    ))
}

fn identify(config: &Config) -> Result<ScenarioOutput> {
    let (res, trace) = run_identification(config)?;
    let mut out = ScenarioOutput::new(ScenarioKind::Identify);
    out.flag("contact_stop", res.contact);
    out.count("samples", res.samples);
    out.num("frobenius_error", (res.estimate - res.truth).norm());
    out.num("rls_batch_relative_difference", (res.estimate - res.batch).norm() / res.batch.norm());
    out.num("cross_axis_ratio_rectified", res.cross_axis_rectified);
    out.num("cross_axis_ratio_raw", res.cross_axis_raw);
    for (name, m) in [
        ("coupling_estimate.csv", &res.estimate),
        ("rectifier.csv", &res.rectifier),
        ("coupling_truth.csv", &res.truth),
    ] {
        let mut buf = Vec::new();
        write_matrix(&mut buf, m)?;
        out.files.push((name.into(), String::from_utf8_lossy(&buf).into_owned()));
    }
    out.trace = Some(trace);
    Ok(out)
}

/// All single and double actuator failure sets, numbered from 1.
pub fn failure_sets() -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = (1..=ACTUATOR_COUNT).map(|i| vec![i]).collect();
    for i in 1..=ACTUATOR_COUNT {
        for j in i + 1..=ACTUATOR_COUNT {
            sets.push(vec![i, j]);
        }
    }
    sets
}

fn set_name(set: &[usize]) -> String {
    set.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+")
}

fn failure(config: &Config) -> Result<ScenarioOutput> {
    let geom = config.geometry();
    let base = AllocatorState::new(build_mixing_matrix(&geom), config.field.current_limit_a);
    let lc = &config.scenario.levitate;
    let initial = RigidState {
        position: Vector3::from(lc.initial_offset_m),
        euler: Vector3::from(lc.initial_angle_rad),
        ..Default::default()
    };
    let mut out = ScenarioOutput::new(ScenarioKind::Failure);
    let mut rows = Vec::new();
    let mut security = Vec::new();
    let (mut contacts, mut worst) = (0usize, 0.0_f64);
    for set in failure_sets() {
        let st = reconfigure(&base, &set)?;
        let functional = st.mode() == OperatingMode::Functional;
        let (mut contact, mut final_err) = (false, f64::NAN);
        if functional {
            let opts = SimOptions { initial, failed: set.clone(), ..Default::default() };
            let run = simulate(config, opts, config.scenario.failure.check_duration_s, regulation, |_| {})?;
            contact = run.contact;
            final_err = run.final_relative.position.norm();
            contacts += contact as usize;
            worst = worst.max(final_err);
        } else {
            security.push(set_name(&set));
        }
        let a = set[0] as f64;
        let b = set.get(1).map_or(0.0, |v| *v as f64);
        rows.push(vec![a, b, st.rank() as f64, functional as u8 as f64, contact as u8 as f64, final_err]);
    }
    out.count("sets", rows.len());
    out.count("security_mode_count", security.len());
    out.text("security_mode_sets", security.join(" "));
    out.count("check_contact_count", contacts);
    out.num("check_final_error_max_m", worst);
    out.curves.push(Curve {
        file_name: "failures.csv".into(),
        columns: ["failed_a", "failed_b", "rank", "functional", "contact", "final_error_m"].map(String::from).to_vec(),
        rows,
    });
    Ok(out)
}

/// Shared random wrench profile for allocation comparisons.
pub fn random_wrenches(n: usize, force_scale: f64, torque_scale: f64, seed: u64) -> Vec<Wrench> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    (0..n)
        .map(|_| {
            let f = Vector3::from_fn(|_, _| force_scale * rng.random_range(-1.0..1.0));
            let t = Vector3::from_fn(|_, _| torque_scale * rng.random_range(-1.0..1.0));
            Wrench::new(f, t)
        })
        .collect()
}

fn alloc_compare(config: &Config) -> Result<ScenarioOutput> {
    let ac = &config.scenario.alloc_compare;
    let geom = config.geometry();
    let models = super::sim::calibrated_models(config)?;
    let gains = nalgebra::SVector::<f64, 8>::from_fn(|i, _| models[i].force_per_ampere(0.0, 0.0));
    let st = AllocatorState::new(build_mixing_matrix(&geom), f64::INFINITY).with_gains(&gains)?;
    let (mut qp_sum, mut mm_sum) = (0.0, 0.0);
    let (mut le, mut lt) = (0usize, 0usize);
    let mut rows = Vec::new();
    for (k, w) in
        random_wrenches(ac.wrenches, ac.force_scale_n, ac.torque_scale_n_m, config.run.seed).iter().enumerate()
    {
        let q = allocate_qp(&st, w)?;
        let m = allocate_minimax(&st, w)?;
        qp_sum += q.cost;
        mm_sum += m.cost;
        le += (q.cost <= m.cost * (1.0 + 1e-12)) as usize;
        lt += (q.cost < m.cost * (1.0 - 1e-9)) as usize;
        rows.push(vec![k as f64 + 1.0, q.cost, m.cost, qp_sum, mm_sum]);
    }
    let mut out = ScenarioOutput::new(ScenarioKind::AllocCompare);
    out.count("profiles", ac.wrenches);
    out.num("qp_energy_a2", qp_sum);
    out.num("minimax_energy_a2", mm_sum);
    out.count("qp_not_worse_count", le);
    out.count("qp_strictly_better_count", lt);
    out.curves.push(Curve {
        file_name: "alloc_compare.csv".into(),
        columns: ["index", "qp_a2", "minimax_a2", "qp_cumulative_a2", "minimax_cumulative_a2"]
            .map(String::from)
            .to_vec(),
        rows,
    });
    Ok(out)
}

fn design_search(config: &Config) -> Result<ScenarioOutput> {
    let dc = &config.design;
    let env = dc.envelope();
    let base = dc.base();
    let search = optimize(&base, &env, &dc.bounds()?, dc.weights(), dc.budget(), config.run.seed)?;
    let mut out = ScenarioOutput::new(ScenarioKind::Design);
    let best = &search.designs[0];
    out.count("feasible_designs", search.designs.len());
    out.num("best_objective", best.objective);
    out.num("best_peak_force_n", best.metrics.peak_force);
    out.num("best_flux_density_t", best.metrics.flux_density);
    out.num("best_heat_w", best.metrics.heat);
    out.num("best_coil_mass_kg", best.metrics.coil_mass);
    out.num("reference_peak_force_n", design::peak_force(&base));
    out.flag("reference_feasible", design::feasible(&base, &env));
    let mut csv = Vec::new();
    write_designs_csv(&search.designs, &mut csv)?;
    let mut txt = Vec::new();
    write_designs_report(&search.designs, &mut txt)?;
    out.files.push(("designs.csv".into(), String::from_utf8_lossy(&csv).into_owned()));
    out.files.push(("designs.txt".into(), String::from_utf8_lossy(&txt).into_owned()));
    Ok(out)
}

fn loop_analysis(config: &Config) -> Result<ScenarioOutput> {
    let geom = config.geometry();
    let gains = config.controller_gains();
    let inertia = geom.axis_inertia();
    let ts = gains.sample_period;
    let mut out = ScenarioOutput::new(ScenarioKind::LoopAnalysis);
    for i in 0..6 {
        let r = analyze_loop(&gains.axes[i], &LoopPlant::rigid(inertia[i]), ts);
        let a = AXES[i];
        out.num(&format!("{a}.crossover_hz"), r.crossover_hz);
        out.num(&format!("{a}.phase_margin_deg"), r.phase_margin_deg);
        out.num(&format!("{a}.cutoff_hz"), r.cutoff_hz);
        out.num(&format!("{a}.dc_gain_db"), r.dc_gain_db);
        out.num(&format!("{a}.peak_db"), r.peak_db);
        out.num(&format!("{a}.high_frequency_slope_db_per_decade"), r.high_frequency_slope_db_per_decade);
        out.num(&format!("{a}.band_slope_db_per_decade"), r.band_slope_db_per_decade);
        out.flag(&format!("{a}.stable"), r.stable);
    }
    let g = gains.axes[0];
    let plant = LoopPlant::rigid(inertia[0]);
    let cols = || ["frequency_hz", "magnitude_db", "phase_deg"].map(String::from).to_vec();
    let to_rows = |pts: Vec<crate::control::FrequencyPoint>| {
        pts.into_iter().map(|p| vec![p.frequency_hz, p.magnitude_db, p.phase_deg]).collect()
    };
    out.curves.push(Curve {
        file_name: "open_loop.csv".into(),
        columns: cols(),
        rows: to_rows(frequency_response(0.01, 1000.0, 401, |f| open_loop(&g, &plant, ts, f))),
    });
    out.curves.push(Curve {
        file_name: "transmissibility.csv".into(),
        columns: cols(),
        rows: to_rows(frequency_response(0.01, 1000.0, 401, |f| closed_loop(&g, &plant, ts, f))),
    });
    Ok(out)
}
