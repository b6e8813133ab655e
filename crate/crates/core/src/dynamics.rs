//! Time evolution: master-equation integration and Monte Carlo
//! wave-function trajectories, plus decay-rate extraction.
//!
//! Both paths share an adaptive Dormand-Prince 5(4) stepper with cubic
//! Hermite dense output onto the requested time grid. Trajectories use
//! the quantum-jump unraveling: deterministic drift under
//! H_eff = H − (i/2) Σ Γ A†A, a norm² threshold drawn per segment,
//! bisection refinement of the jump time, and channel selection
//! proportional to Γ‖Aψ‖².

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hilbert::{partial_trace, DensityMatrix, HilbertSpace, PureState, Site, SiteKind};
use crate::liouvillian::{frobenius, SuperOp};
use crate::model::{build_hamiltonian, build_jump_operators, JumpOperator, ModelSpec};
use crate::sparse::CsrMatrix;
use crate::entanglement::wootters_concurrence;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Master,
    Mcwf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// Strictly increasing output times starting at 0, in units of 1/κ.
    pub t_grid: Vec<f64>,
    pub method: Method,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Check positivity of ρ(t) at record times (master path).
    #[serde(default = "default_true")]
    pub validate_states: bool,
}

fn default_n_traj() -> usize {
    500
}
fn default_abs_tol() -> f64 {
    1e-10
}
fn default_rel_tol() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(Error::InvalidConfig("t_grid is empty".into()));
        }
        if self.t_grid[0] != 0.0 {
            return Err(Error::InvalidConfig("t_grid must start at 0".into()));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("t_grid must be strictly increasing".into()));
        }
        if self.n_traj < 1 {
            return Err(Error::InvalidConfig("n_traj must be at least 1".into()));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("integrator tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// ⟨b†b⟩ for a boson site, ⟨σ†σ⟩ for qubit/companion sites.
    Occupation(Site),
    /// ⟨σᶻ⟩ of a two-level site.
    SigmaZ(Site),
    /// Wootters concurrence of the reduced (j, k) qubit pair.
    PairConcurrence(i32, i32),
}

impl Observable {
    pub fn column_name(&self) -> String {
        match self {
            Observable::Occupation(s) => format!("n_{s}"),
            Observable::SigmaZ(s) => format!("sz_{s}"),
            Observable::PairConcurrence(j, k) => format!("C_{j}_{k}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObservableColumn {
    pub observable: Observable,
    pub name: String,
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub columns: Vec<ObservableColumn>,
    pub method: Method,
    pub n_traj: Option<usize>,
}

impl TimeSeries {
    pub fn column(&self, name: &str) -> Option<&ObservableColumn> {
        self.columns.iter().find(|c| c.name == name)
    }
}

/// Per-trajectory jump records (times of jumps, per trajectory).
#[derive(Clone, Debug, Default)]
pub struct McwfDiagnostics {
    pub jump_times: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4) with cubic Hermite dense output
// ---------------------------------------------------------------------------

const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// b5 coincides with the last A row (FSAL); b4 is the embedded solution
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

type StateVec = Array1<C64>;

struct Stepper<'a> {
    rhs: &'a dyn Fn(&StateVec) -> StateVec,
    abs_tol: f64,
    rel_tol: f64,
}

struct Step {
    y1: StateVec,
    f1: StateVec,
    err: f64,
}

impl<'a> Stepper<'a> {
    /// One DP5(4) attempt of size h from (y0, f0).
    fn attempt(&self, y0: &StateVec, f0: &StateVec, h: f64) -> Step {
        let mut k: Vec<StateVec> = Vec::with_capacity(7);
        k.push(f0.clone());
        for stage in 0..6 {
            let mut y = y0.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = DP_A[stage][j];
                if a != 0.0 {
                    y.scaled_add(C64::new(h * a, 0.0), kj);
                }
            }
            k.push((self.rhs)(&y));
            let _ = DP_C[stage];
        }
        // y1 from the 5th-order weights = A row 5 (already accumulated in
        // the last stage's argument); rebuild explicitly for clarity
        let mut y1 = y0.clone();
        for (j, kj) in k.iter().take(6).enumerate() {
            let a = DP_A[5][j];
            if a != 0.0 {
                y1.scaled_add(C64::new(h * a, 0.0), kj);
            }
        }
        let f1 = k[6].clone();
        // embedded 4th-order error estimate
        let mut y4 = y0.clone();
        for (j, kj) in k.iter().enumerate() {
            let b = DP_B4[j];
            if b != 0.0 {
                y4.scaled_add(C64::new(h * b, 0.0), kj);
            }
        }
        let mut acc = 0.0f64;
        for i in 0..y0.len() {
            let sc = self.abs_tol + self.rel_tol * y0[i].norm().max(y1[i].norm());
            let e = (y1[i] - y4[i]).norm() / sc;
            acc += e * e;
        }
        let err = (acc / y0.len() as f64).sqrt();
        Step { y1, f1, err }
    }
}

/// Cubic Hermite interpolation on [t0, t0+h] at fraction θ.
fn hermite(y0: &StateVec, f0: &StateVec, y1: &StateVec, f1: &StateVec, h: f64, theta: f64) -> StateVec {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let mut out = y0.mapv(|z| z * C64::new(h00, 0.0));
    out.scaled_add(C64::new(h10 * h, 0.0), f0);
    out.scaled_add(C64::new(h01, 0.0), y1);
    out.scaled_add(C64::new(h11 * h, 0.0), f1);
    out
}

fn initial_step(y0: &StateVec, f0: &StateVec, abs_tol: f64, rel_tol: f64) -> f64 {
    let ny = y0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nf = f0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale = abs_tol + rel_tol * ny;
    if nf < 1e-300 {
        return 0.1;
    }
    (0.01 * scale.max(1e-8) / nf * ny.max(1.0)).clamp(1e-8, 0.1)
}

const MIN_STEP: f64 = 1e-12;
const SAFETY: f64 = 0.9;

// ---------------------------------------------------------------------------
// Observable evaluation
// ---------------------------------------------------------------------------

enum ObsEval {
    Linear {
        observable: Observable,
        name: String,
        op: CsrMatrix,
    },
    Pair {
        observable: Observable,
        name: String,
        j: i32,
        k: i32,
        reducer: PairReducer,
    },
}

impl ObsEval {
    fn observable(&self) -> &Observable {
        match self {
            ObsEval::Linear { observable, .. } | ObsEval::Pair { observable, .. } => observable,
        }
    }

    fn name(&self) -> &str {
        match self {
            ObsEval::Linear { name, .. } | ObsEval::Pair { name, .. } => name,
        }
    }
}

/// Precomputed index maps for the reduced two-qubit state of a pure state.
struct PairReducer {
    pair_digit: Vec<u8>,
    rest_rank: Vec<u32>,
    n_rest: usize,
}

impl PairReducer {
    fn new(space: &Arc<HilbertSpace>, j: i32, k: i32) -> Result<Self> {
        let pj = space.position_of(Site::Qubit(j))?;
        let pk = space.position_of(Site::Qubit(k))?;
        let dim = space.total_dim();
        let mut pair_digit = vec![0u8; dim];
        let mut rest_rank = vec![0u32; dim];
        let mut rank_map: std::collections::HashMap<usize, u32> = std::collections::HashMap::new();
        for idx in 0..dim {
            let digits = space.digits(idx);
            pair_digit[idx] = (digits[pj] * 2 + digits[pk]) as u8;
            let mut rest = digits;
            rest[pj] = 0;
            rest[pk] = 0;
            let rest_id = space.index_from_digits(&rest);
            let next = rank_map.len() as u32;
            let r = *rank_map.entry(rest_id).or_insert(next);
            rest_rank[idx] = r;
        }
        Ok(Self {
            pair_digit,
            rest_rank,
            n_rest: rank_map.len(),
        })
    }

    /// Reduced 4×4 density matrix of a (not necessarily normalized)
    /// pure state; result is normalized to unit trace.
    fn reduce(&self, amp: &StateVec) -> Array2<C64> {
        let mut groups = vec![[C64::new(0.0, 0.0); 4]; self.n_rest];
        for (idx, a) in amp.iter().enumerate() {
            groups[self.rest_rank[idx] as usize][self.pair_digit[idx] as usize] = *a;
        }
        let mut rho = Array2::zeros((4, 4));
        for g in &groups {
            for a in 0..4 {
                for b in 0..4 {
                    rho[[a, b]] += g[a] * g[b].conj();
                }
            }
        }
        let tr: C64 = rho.diag().iter().sum();
        rho.mapv(|z| z / tr)
    }
}

fn build_observable_evals(
    space: &Arc<HilbertSpace>,
    observables: &[Observable],
) -> Result<Vec<ObsEval>> {
    observables
        .iter()
        .map(|obs| match obs {
            Observable::Occupation(site) => {
                let local = match space.kind_of(*site)? {
                    SiteKind::Boson { n_max } => crate::hilbert::boson_number(n_max),
                    SiteKind::Qubit | SiteKind::CompanionQubit => {
                        let sm = crate::hilbert::sigma_minus();
                        sm.t().mapv(|z| z.conj()).dot(&sm)
                    }
                };
                let op = crate::hilbert::local_embed(space, *site, &local)?;
                Ok(ObsEval::Linear {
                    observable: obs.clone(),
                    name: obs.column_name(),
                    op: op.matrix().clone(),
                })
            }
            Observable::SigmaZ(site) => {
                if space.dim_of(*site)? != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "sigma_z requested on non-two-level site {site}"
                    )));
                }
                let op = crate::hilbert::local_embed(space, *site, &crate::hilbert::sigma_z())?;
                Ok(ObsEval::Linear {
                    observable: obs.clone(),
                    name: obs.column_name(),
                    op: op.matrix().clone(),
                })
            }
            Observable::PairConcurrence(j, k) => {
                for idx in [j, k] {
                    if space.kind_of(Site::Qubit(*idx))? != SiteKind::Qubit {
                        return Err(Error::InvalidConfig(format!(
                            "pair concurrence target q{idx} is not a qubit"
                        )));
                    }
                }
                Ok(ObsEval::Pair {
                    observable: obs.clone(),
                    name: obs.column_name(),
                    j: *j,
                    k: *k,
                    reducer: PairReducer::new(space, *j, *k)?,
                })
            }
        })
        .collect()
}

fn eval_on_density(evals: &[ObsEval], rho: &DensityMatrix) -> Result<Vec<f64>> {
    evals
        .iter()
        .map(|e| match e {
            ObsEval::Linear { op, .. } => {
                let m = rho.matrix();
                let mut s = C64::new(0.0, 0.0);
                for i in 0..op.nrows() {
                    let (cols, vals) = op.row(i);
                    for (t, &jc) in cols.iter().enumerate() {
                        s += vals[t] * m[[jc, i]];
                    }
                }
                Ok(s.re)
            }
            ObsEval::Pair { j, k, .. } => {
                let red = partial_trace(rho, &[Site::Qubit(*j), Site::Qubit(*k)])?;
                wootters_concurrence(red.matrix())
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Master-equation integration
// ---------------------------------------------------------------------------

/// Integrate dρ/dt = L ρ on the config's time grid and record the
/// requested observables.
pub fn integrate_master(
    spec: &ModelSpec,
    rho0: &DensityMatrix,
    config: &EvolutionConfig,
    observables: &[Observable],
) -> Result<TimeSeries> {
    let l = crate::liouvillian::build_liouvillian(spec)?;
    integrate_master_superop(&l, rho0, config, observables)
}

pub fn integrate_master_superop(
    l: &SuperOp,
    rho0: &DensityMatrix,
    config: &EvolutionConfig,
    observables: &[Observable],
) -> Result<TimeSeries> {
    config.validate()?;
    if config.method != Method::Master {
        return Err(Error::InvalidConfig("integrate_master needs method = master".into()));
    }
    if **rho0.space() != **l.space() {
        return Err(Error::DimensionMismatch("initial state space mismatch".into()));
    }
    rho0.validate()?;
    let d = l.dim();
    let evals = build_observable_evals(l.space(), observables)?;
    let check_psd = config.validate_states && d <= 192;

    let flat = |m: &Array2<C64>| -> StateVec { Array1::from_iter(m.iter().copied()) };
    let unflat = |v: &StateVec| -> Array2<C64> {
        Array2::from_shape_vec((d, d), v.to_vec()).expect("shape")
    };
    let rhs = move |y: &StateVec| -> StateVec { flat(&l.apply(&unflat(y))) };
    let stepper = Stepper {
        rhs: &rhs,
        abs_tol: config.abs_tol,
        rel_tol: config.rel_tol,
    };

    let mut records: Vec<Vec<f64>> = Vec::with_capacity(config.t_grid.len());
    let mut record_state = |y: &StateVec| -> Result<()> {
        let m = unflat(y);
        let dm = DensityMatrix::new(l.space().clone(), m)?;
        let tr = dm.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::SolverFailure(format!(
                "trace drifted to {tr} during master integration"
            )));
        }
        if dm.hermiticity_deviation() > 1e-10 {
            return Err(Error::SolverFailure(
                "Hermiticity lost during master integration".into(),
            ));
        }
        if check_psd {
            let min = dm.min_eigenvalue()?;
            if min <= -1e-7 {
                return Err(Error::SolverFailure(format!(
                    "positivity lost during master integration (min eig {min:.3e})"
                )));
            }
        }
        records.push(eval_on_density(&evals, &dm)?);
        Ok(())
    };

    let mut t = 0.0f64;
    let mut y = flat(rho0.matrix());
    let mut f = rhs(&y);
    record_state(&y)?;
    let mut grid_idx = 1usize;
    let t_end = *config.t_grid.last().unwrap();
    let mut h = initial_step(&y, &f, config.abs_tol, config.rel_tol);

    while grid_idx < config.t_grid.len() {
        h = h.min(t_end - t).max(MIN_STEP);
        let step = stepper.attempt(&y, &f, h);
        if step.err > 1.0 {
            let shrink = (SAFETY * step.err.powf(-0.2)).max(0.2);
            h *= shrink;
            if h < MIN_STEP {
                return Err(Error::SolverFailure(format!(
                    "step size underflow at t = {t:.6e}"
                )));
            }
            continue;
        }
        // record grid times inside (t, t+h]
        while grid_idx < config.t_grid.len() && config.t_grid[grid_idx] <= t + h + 1e-14 {
            let tg = config.t_grid[grid_idx];
            let theta = ((tg - t) / h).clamp(0.0, 1.0);
            let yi = hermite(&y, &f, &step.y1, &step.f1, h, theta);
            record_state(&yi)?;
            grid_idx += 1;
        }
        t += h;
        y = step.y1;
        f = step.f1;
        let grow = (SAFETY * step.err.max(1e-10).powf(-0.2)).min(5.0).max(0.2);
        h *= grow;
        if t >= t_end {
            break;
        }
    }

    assemble_series(config, observables, &evals, records, Method::Master, None)
}

fn assemble_series(
    config: &EvolutionConfig,
    _observables: &[Observable],
    evals: &[ObsEval],
    records: Vec<Vec<f64>>,
    method: Method,
    stderr: Option<Vec<Vec<f64>>>,
) -> Result<TimeSeries> {
    let columns = evals
        .iter()
        .enumerate()
        .map(|(ci, e)| ObservableColumn {
            observable: e.observable().clone(),
            name: e.name().to_string(),
            values: records.iter().map(|r| r[ci]).collect(),
            stderr: stderr.as_ref().map(|s| s.iter().map(|r| r[ci]).collect()),
        })
        .collect();
    Ok(TimeSeries {
        times: config.t_grid.clone(),
        columns,
        method,
        n_traj: if method == Method::Mcwf {
            Some(config.n_traj)
        } else {
            None
        },
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo wave function
// ---------------------------------------------------------------------------

struct TrajRecord {
    /// per grid time, per linear observable
    linear: Vec<Vec<f64>>,
    /// per grid time, per pair observable: reduced 4×4 matrix
    pairs: Vec<Vec<Array2<C64>>>,
    jump_times: Vec<f64>,
}

/// Run the quantum-jump unraveling. Returns the ensemble time series
/// (mean ± standard error) and per-trajectory jump diagnostics.
/// Trajectory i draws from the RNG stream (seed, i); results are
/// bit-reproducible and independent of scheduling order.
pub fn mcwf_trajectories(
    spec: &ModelSpec,
    psi0: &PureState,
    config: &EvolutionConfig,
    observables: &[Observable],
) -> Result<(TimeSeries, McwfDiagnostics)> {
    let h = build_hamiltonian(spec)?;
    let jumps = build_jump_operators(spec)?;
    mcwf_trajectories_parts(&h, &jumps, psi0, config, observables)
}

pub fn mcwf_trajectories_parts(
    h: &crate::hilbert::Operator,
    jumps: &[JumpOperator],
    psi0: &PureState,
    config: &EvolutionConfig,
    observables: &[Observable],
) -> Result<(TimeSeries, McwfDiagnostics)> {
    config.validate()?;
    if config.method != Method::Mcwf {
        return Err(Error::InvalidConfig("mcwf_trajectories needs method = mcwf".into()));
    }
    let space = h.space().clone();
    if **psi0.space() != *space {
        return Err(Error::DimensionMismatch("initial state space mismatch".into()));
    }
    if (psi0.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::NonPhysicalState("mcwf initial state must be normalized".into()));
    }
    let evals = build_observable_evals(&space, observables)?;

    // H_eff drift: dψ/dt = (−iH − ½ Σ Γ A†A) ψ
    let mut drift = h.matrix().scale(C64::new(0.0, -1.0));
    let jump_mats: Vec<(CsrMatrix, f64)> = jumps
        .iter()
        .map(|j| (j.op.matrix().clone(), j.rate))
        .collect();
    for (a, rate) in &jump_mats {
        let adaga = a.adjoint().matmul(a);
        drift = drift.add(&adaga.scale(C64::new(-rate / 2.0, 0.0)));
    }

    let results: Vec<Result<TrajRecord>> = (0..config.n_traj)
        .into_par_iter()
        .map(|traj| {
            run_single_trajectory(
                &drift,
                &jump_mats,
                psi0,
                config,
                &evals,
                config.seed,
                traj as u64,
            )
        })
        .collect();

    let mut records: Vec<TrajRecord> = Vec::with_capacity(config.n_traj);
    for r in results {
        records.push(r?);
    }

    let n_times = config.t_grid.len();
    let n = config.n_traj;
    let n_lin = records[0].linear[0].len();
    let n_pair = records[0].pairs[0].len();

    // linear observables: mean ± sample std / √n
    // pair concurrences: C(mean ρ) with delete-block jackknife errors
    let n_blocks = n.min(25);
    let block_of = |traj: usize| traj * n_blocks / n;
    let block_len = |b: usize| (0..n).filter(|&t| block_of(t) == b).count();

    let mut means = vec![vec![0.0f64; n_lin + n_pair]; n_times];
    let mut errs = vec![vec![0.0f64; n_lin + n_pair]; n_times];

    for ti in 0..n_times {
        for li in 0..n_lin {
            let vals: Vec<f64> = records.iter().map(|r| r.linear[ti][li]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            means[ti][li] = mean;
            errs[ti][li] = (var / n as f64).sqrt();
        }
        for pi in 0..n_pair {
            let mut total = Array2::<C64>::zeros((4, 4));
            let mut block_sums = vec![Array2::<C64>::zeros((4, 4)); n_blocks];
            for (traj, r) in records.iter().enumerate() {
                total += &r.pairs[ti][pi];
                block_sums[block_of(traj)] += &r.pairs[ti][pi];
            }
            let mean_rho = total.mapv(|z| z / C64::new(n as f64, 0.0));
            let c_mean = wootters_concurrence(&mean_rho)?;
            means[ti][n_lin + pi] = c_mean;
            if n_blocks > 1 {
                let mut pseudo = Vec::with_capacity(n_blocks);
                for b in 0..n_blocks {
                    let rest = (&total - &block_sums[b])
                        .mapv(|z| z / C64::new((n - block_len(b)) as f64, 0.0));
                    pseudo.push(wootters_concurrence(&rest)?);
                }
                let pm = pseudo.iter().sum::<f64>() / n_blocks as f64;
                let var = pseudo.iter().map(|v| (v - pm).powi(2)).sum::<f64>()
                    * (n_blocks - 1) as f64
                    / n_blocks as f64;
                errs[ti][n_lin + pi] = var.sqrt();
            }
        }
    }

    // reorder into the requested observable order (linear first inside
    // evals already matches: evals order == observables order)
    let mut rec_rows = vec![vec![0.0f64; evals.len()]; n_times];
    let mut err_rows = vec![vec![0.0f64; evals.len()]; n_times];
    let mut lin_seen = 0usize;
    let mut pair_seen = 0usize;
    for (ei, e) in evals.iter().enumerate() {
        match e {
            ObsEval::Linear { .. } => {
                for ti in 0..n_times {
                    rec_rows[ti][ei] = means[ti][lin_seen];
                    err_rows[ti][ei] = errs[ti][lin_seen];
                }
                lin_seen += 1;
            }
            ObsEval::Pair { .. } => {
                for ti in 0..n_times {
                    rec_rows[ti][ei] = means[ti][n_lin + pair_seen];
                    err_rows[ti][ei] = errs[ti][n_lin + pair_seen];
                }
                pair_seen += 1;
            }
        }
    }

    let diagnostics = McwfDiagnostics {
        jump_times: records.into_iter().map(|r| r.jump_times).collect(),
    };
    let series = assemble_series(
        config,
        observables,
        &evals,
        rec_rows,
        Method::Mcwf,
        Some(err_rows),
    )?;
    Ok((series, diagnostics))
}

#[allow(clippy::too_many_arguments)]
fn run_single_trajectory(
    drift: &CsrMatrix,
    jumps: &[(CsrMatrix, f64)],
    psi0: &PureState,
    config: &EvolutionConfig,
    evals: &[ObsEval],
    seed: u64,
    stream: u64,
) -> Result<TrajRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let rhs = move |y: &StateVec| -> StateVec { Array1::from_vec(drift.mul_vec(y.as_slice().unwrap())) };
    let stepper = Stepper {
        rhs: &rhs,
        abs_tol: config.abs_tol,
        rel_tol: config.rel_tol,
    };

    let n_times = config.t_grid.len();
    let mut record = TrajRecord {
        linear: Vec::with_capacity(n_times),
        pairs: Vec::with_capacity(n_times),
        jump_times: Vec::new(),
    };
    let mut push_record = |amp: &StateVec| -> Result<()> {
        let norm = amp.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let normalized = amp.mapv(|z| z / norm);
        let mut lin = Vec::new();
        let mut pairs = Vec::new();
        for e in evals {
            match e {
                ObsEval::Linear { op, .. } => {
                    let ax = op.mul_vec(normalized.as_slice().unwrap());
                    let v: C64 = normalized
                        .iter()
                        .zip(&ax)
                        .map(|(a, b)| a.conj() * b)
                        .sum();
                    lin.push(v.re);
                }
                ObsEval::Pair { reducer, .. } => {
                    pairs.push(reducer.reduce(&normalized));
                }
            }
        }
        record.linear.push(lin);
        record.pairs.push(pairs);
        Ok(())
    };

    let mut t = 0.0f64;
    let mut y: StateVec = psi0.amplitudes().clone();
    let mut f = rhs(&y);
    push_record(&y)?;
    let mut grid_idx = 1usize;
    let t_end = *config.t_grid.last().unwrap();
    let mut h = initial_step(&y, &f, config.abs_tol, config.rel_tol);
    let mut threshold: f64 = rng.gen::<f64>();
    let norm_sq = |v: &StateVec| -> f64 { v.iter().map(|z| z.norm_sqr()).sum() };

    while grid_idx < config.t_grid.len() {
        h = h.min(t_end - t).max(MIN_STEP);
        let step = stepper.attempt(&y, &f, h);
        if step.err > 1.0 {
            h *= (SAFETY * step.err.powf(-0.2)).max(0.2);
            if h < MIN_STEP {
                return Err(Error::SolverFailure(format!(
                    "mcwf step underflow at t = {t:.6e}"
                )));
            }
            continue;
        }
        let n1 = norm_sq(&step.y1);
        if n1 < 1e-30 {
            // reject and halve per the norm-underflow contract
            h *= 0.5;
            if h < MIN_STEP {
                return Err(Error::SolverFailure("mcwf norm underflow".into()));
            }
            continue;
        }
        if n1 >= threshold {
            // no jump inside this step
            while grid_idx < config.t_grid.len() && config.t_grid[grid_idx] <= t + h + 1e-14 {
                let tg = config.t_grid[grid_idx];
                let theta = ((tg - t) / h).clamp(0.0, 1.0);
                push_record(&hermite(&y, &f, &step.y1, &step.f1, h, theta))?;
                grid_idx += 1;
            }
            t += h;
            y = step.y1;
            f = step.f1;
            h *= (SAFETY * step.err.max(1e-10).powf(-0.2)).min(5.0).max(0.2);
            continue;
        }

        // jump inside (t, t+h]: bisect the interpolated norm² crossing
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let n_mid = norm_sq(&hermite(&y, &f, &step.y1, &step.f1, h, mid));
            if n_mid >= threshold {
                lo = mid;
            } else {
                hi = mid;
            }
            if (hi - lo) < 1e-10 * hi.max(1e-3) {
                break;
            }
        }
        let theta_jump = 0.5 * (lo + hi);
        let t_jump = t + theta_jump * h;

        // re-integrate to the jump time for an accurate pre-jump state
        let (y_pre, f_pre) = integrate_to(&stepper, t, &y, &f, t_jump)?;
        while grid_idx < config.t_grid.len() && config.t_grid[grid_idx] <= t_jump + 1e-14 {
            let tg = config.t_grid[grid_idx];
            let theta = ((tg - t) / (t_jump - t).max(MIN_STEP)).clamp(0.0, 1.0);
            push_record(&hermite(&y, &f, &y_pre, &f_pre, t_jump - t, theta))?;
            grid_idx += 1;
        }

        // select the jump channel ∝ Γ‖Aψ‖²
        let candidates: Vec<Vec<C64>> = jumps
            .iter()
            .map(|(a, _)| a.mul_vec(y_pre.as_slice().unwrap()))
            .collect();
        let weights: Vec<f64> = candidates
            .iter()
            .zip(jumps)
            .map(|(c, (_, rate))| rate * c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .collect();
        let total: f64 = weights.iter().sum();
        if total < 1e-300 {
            return Err(Error::SolverFailure(
                "jump triggered but all channel weights vanish".into(),
            ));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                chosen = k;
                break;
            }
            u -= w;
        }
        let jumped = Array1::from_vec(candidates[chosen].clone());
        let jn = norm_sq(&jumped).sqrt();
        y = jumped.mapv(|z| z / jn);
        f = rhs(&y);
        t = t_jump;
        record.jump_times.push(t_jump);
        threshold = rng.gen::<f64>();
        // h continues from its current value
    }
    Ok(record)
}

/// Error-controlled integration from (t0, y0) to exactly t_target.
fn integrate_to(
    stepper: &Stepper,
    t0: f64,
    y0: &StateVec,
    f0: &StateVec,
    t_target: f64,
) -> Result<(StateVec, StateVec)> {
    let mut t = t0;
    let mut y = y0.clone();
    let mut f = f0.clone();
    let mut h = (t_target - t0).max(MIN_STEP);
    while t < t_target - 1e-15 * t_target.abs().max(1.0) {
        h = h.min(t_target - t);
        let step = stepper.attempt(&y, &f, h);
        if step.err > 1.0 {
            h *= (SAFETY * step.err.powf(-0.2)).max(0.2);
            if h < MIN_STEP {
                return Err(Error::SolverFailure("jump refinement step underflow".into()));
            }
            continue;
        }
        t += h;
        y = step.y1;
        f = step.f1;
        h *= (SAFETY * step.err.max(1e-10).powf(-0.2)).min(5.0).max(0.2);
    }
    Ok((y, f))
}

// ---------------------------------------------------------------------------
// Decay-rate extraction
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    /// Explicit fit window (t_lo, t_hi); otherwise the default rule:
    /// from where |C − c_ss| first falls below half its initial value
    /// to where it reaches `floor`.
    pub window: Option<(f64, f64)>,
    pub floor: f64,
    /// Largest tolerated uptick factor between consecutive residuals.
    pub monotone_factor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: None,
            floor: 1e-4,
            monotone_factor: 1.05,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecayFit {
    pub rate: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

/// Least-squares slope of log|C(t) − c_ss| over the fit window,
/// returned as a positive rate.
pub fn fit_decay_rate(
    series: &TimeSeries,
    column: &str,
    c_ss: f64,
    opts: &FitOptions,
) -> Result<DecayFit> {
    let col = series
        .column(column)
        .ok_or_else(|| Error::InvalidConfig(format!("no column named {column}")))?;
    let resid: Vec<f64> = col.values.iter().map(|v| (v - c_ss).abs()).collect();
    let r0 = resid
        .first()
        .copied()
        .ok_or_else(|| Error::FitRejected("empty series".into()))?;

    let (lo_t, hi_t) = match opts.window {
        Some(w) => w,
        None => {
            let start = series
                .times
                .iter()
                .zip(&resid)
                .find(|(_, r)| **r < 0.5 * r0)
                .map(|(t, _)| *t)
                .ok_or_else(|| {
                    Error::FitRejected("residual never falls below half its initial value".into())
                })?;
            let end = series
                .times
                .iter()
                .zip(&resid)
                .find(|(t, r)| **t > start && **r < opts.floor)
                .map(|(t, _)| *t)
                .unwrap_or(*series.times.last().unwrap());
            (start, end)
        }
    };

    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&resid)
        .filter(|(t, r)| **t >= lo_t && **t <= hi_t && **r > 0.0)
        .map(|(t, r)| (*t, *r))
        .collect();
    if pts.len() < 4 {
        return Err(Error::FitRejected(format!(
            "only {} usable points in the window [{lo_t}, {hi_t}]",
            pts.len()
        )));
    }
    let span = pts.first().unwrap().1 / pts.last().unwrap().1.max(1e-300);
    if span < 100.0 {
        return Err(Error::FitRejected(format!(
            "window covers {:.2} decades of decay, need at least 2",
            span.log10()
        )));
    }
    for w in pts.windows(2) {
        if w[1].1 > w[0].1 * opts.monotone_factor {
            return Err(Error::FitRejected(format!(
                "log-residual not monotone near t = {:.4}",
                w[1].0
            )));
        }
    }

    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(t, _)| t).sum();
    let sy: f64 = pts.iter().map(|(_, r)| r.ln()).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| t * t).sum();
    let sxy: f64 = pts.iter().map(|(t, r)| t * r.ln()).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(DecayFit {
        rate: -slope,
        window: (lo_t, hi_t),
        n_points: pts.len(),
    })
}
