//! Distribution of a commanded CoM wrench over the eight actuators.
//!
//! The production path minimizes the coil energy `sum I_i^2` subject to
//! `C_K f = F_T` by solving the KKT system
//!
//! ```text
//! [ H  -C^T ] [ f      ]   [ 0   ]
//! [ C   0   ] [ lambda ] = [ F_T ]
//! ```
//!
//! with `H = diag(1 / Q_i^2)`. A minimax allocator (smallest peak current)
//! is provided as the comparison baseline.

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector6};
use thiserror::Error;

use crate::field::{current_from_gain, MIN_GAIN};
use crate::lp;
use crate::model::{numeric_rank, MixingMatrix, Vector8, Wrench, ACTUATOR_COUNT};

/// KKT systems with a 1-norm condition number above this are rejected.
pub const MAX_KKT_CONDITION: f64 = 1e12;

/// More simultaneous failures than this always lock the platform.
pub const MAX_TOLERATED_FAILURES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("active actuators cannot span all six wrench axes")]
    RankDeficient,
    #[error("KKT system is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("actuator {index} has degenerate gain {gain} N/A")]
    DegenerateGain { index: usize, gain: f64 },
    #[error("actuator number {0} is outside 1..=8")]
    InvalidActuator(usize),
    #[error("minimax solver failed: {0}")]
    Minimax(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatingMode {
    Functional,
    /// The floater is locked; no allocation is attempted.
    SecurityMode,
}

/// Mixing matrix, active set and the current per-actuator gains.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorState {
    mixing: MixingMatrix,
    active: [bool; ACTUATOR_COUNT],
    gains: Vector8,
    current_limit: f64,
    mode: OperatingMode,
    rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// Actuator forces (N); zero at failed slots.
    pub forces: Vector8,
    /// Coil currents (A) after saturation.
    pub currents: Vector8,
    /// `sum I_i^2` (A^2) of the returned currents.
    pub cost: f64,
    pub saturated: [bool; ACTUATOR_COUNT],
    /// Lagrange multipliers of the equality constraint (QP only).
    pub multipliers: Vector6<f64>,
}

impl AllocationResult {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }

    pub fn peak_current(&self) -> f64 {
        self.currents.amax()
    }
}

impl AllocatorState {
    /// All actuators active with unit gains.
    pub fn new(mixing: MixingMatrix, current_limit: f64) -> Self {
        let mut s = Self {
            mixing,
            active: [true; ACTUATOR_COUNT],
            gains: Vector8::repeat(1.0),
            current_limit,
            mode: OperatingMode::Functional,
            rank: 0,
        };
        s.refresh_rank();
        s
    }

    pub fn with_gains(mut self, gains: &Vector8) -> Result<Self, AllocationError> {
        self.set_gains(gains)?;
        Ok(self)
    }

    /// Replaces the per-actuator gains `Q_i(y_i, z_i)` for this cycle.
    pub fn set_gains(&mut self, gains: &Vector8) -> Result<(), AllocationError> {
        for (index, &gain) in gains.iter().enumerate() {
            if self.active[index] && !(gain >= MIN_GAIN) {
                return Err(AllocationError::DegenerateGain { index, gain });
            }
        }
        self.gains = *gains;
        Ok(())
    }

    pub fn gains(&self) -> &Vector8 {
        &self.gains
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn active(&self) -> [bool; ACTUATOR_COUNT] {
        self.active
    }

    pub fn mode(&self) -> OperatingMode {
        self.mode
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn current_limit(&self) -> f64 {
        self.current_limit
    }

    /// Mixing matrix with failed columns zeroed.
    pub fn effective_mixing(&self) -> MixingMatrix {
        let mut c = self.mixing;
        for (j, &on) in self.active.iter().enumerate() {
            if !on {
                c.column_mut(j).fill(0.0);
            }
        }
        c
    }

    /// Energy weight `H = diag(1 / Q_i^2)`.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(ACTUATOR_COUNT, self.gains.iter().map(|q| 1.0 / (q * q))))
    }

    fn active_indices(&self) -> Vec<usize> {
        (0..ACTUATOR_COUNT).filter(|&j| self.active[j]).collect()
    }

    fn active_mixing(&self) -> DMatrix<f64> {
        let idx = self.active_indices();
        DMatrix::from_fn(6, idx.len(), |r, c| self.mixing[(r, idx[c])])
    }

    fn refresh_rank(&mut self) {
        let failures = self.active.iter().filter(|a| !**a).count();
        self.rank = numeric_rank(&self.active_mixing());
        self.mode = if failures > MAX_TOLERATED_FAILURES || self.rank < 6 {
            OperatingMode::SecurityMode
        } else {
            OperatingMode::Functional
        };
    }

    /// Basis (8 x k) of the null space of the effective mixing matrix,
    /// zero at failed slots.
    pub fn null_space_basis(&self) -> DMatrix<f64> {
        let idx = self.active_indices();
        let c = self.active_mixing();
        let n = idx.len();
        let cct = &c * c.transpose();
        let Some(cct_inv) = cct.try_inverse() else {
            return DMatrix::zeros(ACTUATOR_COUNT, 0);
        };
        let projector = DMatrix::identity(n, n) - c.transpose() * cct_inv * &c;
        let eig = SymmetricEigen::new(projector);
        let cols: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
        let mut basis = DMatrix::zeros(ACTUATOR_COUNT, cols.len());
        for (out, &k) in cols.iter().enumerate() {
            for (r, &j) in idx.iter().enumerate() {
                basis[(j, out)] = eig.eigenvectors[(r, k)];
            }
        }
        basis
    }

    fn ensure_functional(&self) -> Result<(), AllocationError> {
        match self.mode {
            OperatingMode::Functional => Ok(()),
            OperatingMode::SecurityMode => Err(AllocationError::RankDeficient),
        }
    }

    fn finish(&self, forces: Vector8, multipliers: Vector6<f64>) -> Result<AllocationResult, AllocationError> {
        let mut currents = Vector8::zeros();
        let mut saturated = [false; ACTUATOR_COUNT];
        for j in 0..ACTUATOR_COUNT {
            if !self.active[j] {
                continue;
            }
            let cmd = current_from_gain(forces[j], self.gains[j], self.current_limit)
                .map_err(|_| AllocationError::DegenerateGain { index: j, gain: self.gains[j] })?;
            currents[j] = cmd.current;
            saturated[j] = cmd.saturated;
        }
        Ok(AllocationResult { forces, currents, cost: currents.norm_squared(), saturated, multipliers })
    }
}

/// Marks the given actuators (1-based numbers) as failed and recomputes
/// the operating mode. Failures accumulate on top of the current state.
pub fn reconfigure(state: &AllocatorState, failed: &[usize]) -> Result<AllocatorState, AllocationError> {
    let mut next = state.clone();
    for &n in failed {
        if !(1..=ACTUATOR_COUNT).contains(&n) {
            return Err(AllocationError::InvalidActuator(n));
        }
        next.active[n - 1] = false;
    }
    next.refresh_rank();
    Ok(next)
}

/// Minimum-energy allocation via the KKT system.
pub fn allocate_qp(state: &AllocatorState, target: &Wrench) -> Result<AllocationResult, AllocationError> {
    state.ensure_functional()?;
    let idx = state.active_indices();
    let n = idx.len();
    let c = state.active_mixing();
    let dim = n + 6;
    let mut kkt = DMatrix::zeros(dim, dim);
    for (k, &j) in idx.iter().enumerate() {
        kkt[(k, k)] = 1.0 / (state.gains[j] * state.gains[j]);
    }
    kkt.view_mut((0, n), (n, 6)).copy_from(&(-c.transpose()));
    kkt.view_mut((n, 0), (6, n)).copy_from(&c);

    let lu = kkt.clone().full_piv_lu();
    let inv = lu.try_inverse().ok_or(AllocationError::RankDeficient)?;
    let norm1 = |m: &DMatrix<f64>| m.column_iter().map(|col| col.abs().sum()).fold(0.0, f64::max);
    let cond = norm1(&kkt) * norm1(&inv);
    if !(cond <= MAX_KKT_CONDITION) {
        return Err(AllocationError::IllConditioned(cond));
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(n, 6).copy_from(&target.to_vector());
    let sol = inv * rhs;

    let mut forces = Vector8::zeros();
    for (k, &j) in idx.iter().enumerate() {
        forces[j] = sol[k];
    }
    let multipliers = Vector6::from_iterator(sol.rows(n, 6).iter().copied());
    state.finish(forces, multipliers)
}

/// Allocation minimizing the peak coil current `max_i |I_i|`.
///
/// Starts from the QP solution and moves along the null space of the
/// mixing matrix; the resulting linear program is solved by simplex.
pub fn allocate_minimax(state: &AllocatorState, target: &Wrench) -> Result<AllocationResult, AllocationError> {
    let qp = allocate_qp(state, target)?;
    let basis = state.null_space_basis();
    let k = basis.ncols();
    if k == 0 {
        return Ok(qp);
    }
    let idx = state.active_indices();
    // I_i = a_i + b_i . z over active actuators
    let a: Vec<f64> = idx.iter().map(|&j| qp.forces[j] / state.gains[j]).collect();
    let b: Vec<Vec<f64>> = idx.iter().map(|&j| (0..k).map(|c| basis[(j, c)] / state.gains[j]).collect()).collect();
    let t0 = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if t0 == 0.0 {
        return Ok(qp);
    }
    // variables [z+ (k), z- (k), s]; peak t = t0 - s; maximize s
    let nv = 2 * k + 1;
    let mut rows = Vec::with_capacity(2 * idx.len());
    let mut rhs = Vec::with_capacity(2 * idx.len());
    for (ai, bi) in a.iter().zip(&b) {
        for sign in [1.0, -1.0] {
            let mut row = vec![0.0; nv];
            for c in 0..k {
                row[c] = sign * bi[c];
                row[k + c] = -sign * bi[c];
            }
            row[2 * k] = 1.0;
            rows.push(row);
            rhs.push(t0 - sign * ai);
        }
    }
    let mut cost = vec![0.0; nv];
    cost[2 * k] = -1.0;
    let sol = lp::solve(&cost, &rows, &rhs).map_err(|e| AllocationError::Minimax(format!("{e:?}")))?;
    let z = DVector::from_iterator(k, (0..k).map(|c| sol.x[c] - sol.x[k + c]));
    let shift = &basis * z;
    let forces = qp.forces + Vector8::from_iterator(shift.iter().copied());
    state.finish(forces, Vector6::zeros())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_mixing_matrix, PlatformGeometry};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(gains: Vector8) -> AllocatorState {
        AllocatorState::new(build_mixing_matrix(&PlatformGeometry::default()), 1e9).with_gains(&gains).unwrap()
    }

    fn random_wrench(rng: &mut ChaCha8Rng) -> Wrench {
        let f =
            Vector6::from_fn(|i, _| if i < 3 { rng.random_range(-20.0..20.0) } else { rng.random_range(-2.0..2.0) });
        Wrench::from_vector(&f)
    }

    fn random_gains(rng: &mut ChaCha8Rng) -> Vector8 {
        Vector8::from_fn(|_, _| rng.random_range(10.5..13.5))
    }

    #[test]
    fn zero_wrench() {
        let r = allocate_qp(&state(Vector8::repeat(12.0)), &Wrench::zero()).unwrap();
        assert_eq!(r.forces, Vector8::zeros());
        assert_eq!(r.cost, 0.0);
        let m = allocate_minimax(&state(Vector8::repeat(12.0)), &Wrench::zero()).unwrap();
        assert_eq!(m.forces, Vector8::zeros());
    }

    #[test]
    fn pure_lift_uniform_gains() {
        let w = Wrench::from_vector(&Vector6::new(0.0, 0.0, 4.0, 0.0, 0.0, 0.0));
        let r = allocate_qp(&state(Vector8::repeat(1.0)), &w).unwrap();
        for j in 0..8 {
            let want = if j % 2 == 1 { 1.0 } else { 0.0 };
            assert!((r.forces[j] - want).abs() < 1e-12, "{j}: {}", r.forces[j]);
        }
        let m = allocate_minimax(&state(Vector8::repeat(1.0)), &w).unwrap();
        assert_relative_eq!(m.forces, r.forces, epsilon = 1e-9);
    }

    #[test]
    fn matches_weighted_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let s = state(random_gains(&mut rng));
            let w = random_wrench(&mut rng);
            let r = allocate_qp(&s, &w).unwrap();
            let c = DMatrix::from_column_slice(6, 8, s.mixing().as_slice());
            let hinv = DMatrix::from_diagonal(&DVector::from_iterator(8, s.gains().iter().map(|q| q * q)));
            let oracle = &hinv
                * c.transpose()
                * (&c * &hinv * c.transpose()).try_inverse().unwrap()
                * DVector::from_column_slice(w.to_vector().as_slice());
            for j in 0..8 {
                assert!((r.forces[j] - oracle[j]).abs() <= 1e-8 * (1.0 + oracle.amax()));
            }
        }
    }

    #[test]
    fn stationarity_and_null_space_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = state(random_gains(&mut rng));
        let basis = s.null_space_basis();
        assert_eq!(basis.ncols(), 2);
        let c = DMatrix::from_column_slice(6, 8, s.mixing().as_slice());
        assert!((&c * &basis).amax() < 1e-12);
        let w = random_wrench(&mut rng);
        let r = allocate_qp(&s, &w).unwrap();
        let f = DVector::from_column_slice(r.forces.as_slice());
        let lambda = DVector::from_column_slice(r.multipliers.as_slice());
        let station = s.weight_matrix() * &f - c.transpose() * lambda;
        assert!(station.amax() < 1e-9);
        let energy = |f: &DVector<f64>| (0..8).map(|j| (f[j] / s.gains()[j]).powi(2)).sum::<f64>();
        let e0 = energy(&f);
        for _ in 0..1000 {
            let z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let n = &basis * z;
            assert!(energy(&(&f + n)) >= e0 - 1e-12);
        }
    }

    #[test]
    fn qp_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = state(random_gains(&mut rng));
        let (w1, w2) = (random_wrench(&mut rng), random_wrench(&mut rng));
        let f = |w: &Wrench| allocate_qp(&s, w).unwrap().forces;
        let combo = f(&(w1 * 0.7 + w2 * -1.3));
        assert_relative_eq!(combo, f(&w1) * 0.7 + f(&w2) * -1.3, epsilon = 1e-9);
    }

    /// Brute-force minimax: every vertex of the epigraph where three of the
    /// constraints `+-(a_i + b_i z) <= t` are tight.
    fn vertex_oracle(a: &[f64], b: &[[f64; 2]]) -> f64 {
        let mut rows = Vec::new();
        for (ai, bi) in a.iter().zip(b) {
            for s in [1.0, -1.0] {
                rows.push((s * bi[0], s * bi[1], s * ai));
            }
        }
        let mut best = f64::INFINITY;
        let n = rows.len();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    // r.z - t = -a
                    let m = nalgebra::Matrix3::new(
                        rows[i].0, rows[i].1, -1.0, rows[j].0, rows[j].1, -1.0, rows[k].0, rows[k].1, -1.0,
                    );
                    let Some(inv) = m.try_inverse() else { continue };
                    let sol = inv * nalgebra::Vector3::new(-rows[i].2, -rows[j].2, -rows[k].2);
                    let peak =
                        a.iter().zip(b).map(|(ai, bi)| (ai + bi[0] * sol.x + bi[1] * sol.y).abs()).fold(0.0, f64::max);
                    if peak <= sol.z + 1e-9 {
                        best = best.min(peak);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn minimax_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let s = state(random_gains(&mut rng));
            let w = random_wrench(&mut rng);
            let qp = allocate_qp(&s, &w).unwrap();
            let mm = allocate_minimax(&s, &w).unwrap();
            let basis = s.null_space_basis();
            let a: Vec<f64> = (0..8).map(|j| qp.forces[j] / s.gains()[j]).collect();
            let b: Vec<[f64; 2]> =
                (0..8).map(|j| [basis[(j, 0)] / s.gains()[j], basis[(j, 1)] / s.gains()[j]]).collect();
            let oracle = vertex_oracle(&a, &b);
            assert!((mm.peak_current() - oracle).abs() < 1e-9, "{} vs {oracle}", mm.peak_current());
            let res = s.mixing() * mm.forces - w.to_vector();
            assert!(res.norm() <= 1e-9 * (1.0 + w.to_vector().norm()));
        }
    }

    #[test]
    fn qp_energy_below_minimax() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut strict = 0;
        for _ in 0..100 {
            let s = state(random_gains(&mut rng));
            let w = random_wrench(&mut rng);
            let q = allocate_qp(&s, &w).unwrap().cost;
            let m = allocate_minimax(&s, &w).unwrap().cost;
            assert!(q <= m * (1.0 + 1e-12));
            if q < m * (1.0 - 1e-9) {
                strict += 1;
            }
        }
        assert!(strict >= 90, "{strict}");
    }

    #[test]
    fn failure_modes() {
        let s = state(Vector8::repeat(12.0));
        assert_eq!(s.rank(), 6);
        let one = reconfigure(&s, &[2]).unwrap();
        assert_eq!((one.rank(), one.mode()), (6, OperatingMode::Functional));
        assert_eq!(one.null_space_basis().ncols(), 1);
        let opposed = reconfigure(&s, &[1, 5]).unwrap();
        assert_eq!((opposed.rank(), opposed.mode()), (5, OperatingMode::SecurityMode));
        assert_eq!(allocate_qp(&opposed, &Wrench::zero()), Err(AllocationError::RankDeficient));
        let three = reconfigure(&s, &[2, 4, 6]).unwrap();
        assert_eq!(three.mode(), OperatingMode::SecurityMode);
        assert_eq!(reconfigure(&s, &[9]), Err(AllocationError::InvalidActuator(9)));
    }

    #[test]
    fn failed_slots_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = reconfigure(&state(random_gains(&mut rng)), &[3]).unwrap();
        let w = random_wrench(&mut rng);
        for r in [allocate_qp(&s, &w).unwrap(), allocate_minimax(&s, &w).unwrap()] {
            assert_eq!(r.forces[2], 0.0);
            assert_eq!(r.currents[2], 0.0);
            let res = s.mixing() * r.forces - w.to_vector();
            assert!(res.norm() <= 1e-9 * (1.0 + w.to_vector().norm()));
        }
    }

    #[test]
    fn saturation_is_flagged() {
        let s = AllocatorState::new(build_mixing_matrix(&PlatformGeometry::default()), 2.0)
            .with_gains(&Vector8::repeat(12.0))
            .unwrap();
        let w = Wrench::from_vector(&Vector6::new(0.0, 0.0, 200.0, 0.0, 0.0, 0.0));
        let r = allocate_qp(&s, &w).unwrap();
        assert!(r.any_saturated());
        assert!(r.currents.amax() <= 2.0);
    }

    #[test]
    fn degenerate_gain_rejected() {
        let mut g = Vector8::repeat(12.0);
        g[4] = 0.01;
        let s = AllocatorState::new(build_mixing_matrix(&PlatformGeometry::default()), 2.0);
        assert!(matches!(s.with_gains(&g), Err(AllocationError::DegenerateGain { index: 4, .. })));
    }
}
