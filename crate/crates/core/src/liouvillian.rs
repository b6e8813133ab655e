//! Liouvillian assembly, steady states, and spectral analysis.
//!
//! Vectorization is column-stacking throughout: vec(AXB) = (Bᵀ ⊗ A) vec(X),
//! so the generator reads
//!   L = −i[(I ⊗ H) − (Hᵀ ⊗ I)]
//!       + Σ_k Γ_k [ (Ā_k ⊗ A_k) − ½ (I ⊗ A_k†A_k) − ½ ((A_k†A_k)ᵀ ⊗ I) ].
//!
//! Spaces small enough for a dense eigendecomposition (total_dim ≤ 48)
//! use zgeev on the assembled matrix; larger problems run matrix-free:
//! the steady state through preconditioned GMRES on a trace-bordered
//! system, the leading spectrum through Arnoldi on the propagator
//! exp(L·T) evaluated by fixed-step RK4 integration.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Inverse};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, HilbertSpace, Operator, PureState};
use crate::model::{build_hamiltonian, build_jump_operators, JumpOperator, ModelSpec};
use crate::sparse::CsrMatrix;

/// Largest total_dim handled by dense eigendecomposition of L.
pub const DENSE_EIG_DIM: usize = 48;
/// Guard on the vectorized dimension (dim² entries per state).
pub const VEC_DIM_CAP: usize = 1 << 32;

fn cx(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// The Liouvillian over vectorized density matrices, with a sparse
/// representation and a matrix-free application path.
pub struct SuperOp {
    space: Arc<HilbertSpace>,
    h: CsrMatrix,
    jumps: Vec<(CsrMatrix, CsrMatrix, CsrMatrix, f64)>, // (A, A†, A†A, rate)
    rate_scale: f64,
}

impl SuperOp {
    pub fn new(h: &Operator, jumps: &[JumpOperator]) -> Result<Self> {
        let space = h.space().clone();
        let d = space.total_dim();
        if d.checked_mul(d).map_or(true, |v| v > VEC_DIM_CAP) {
            return Err(Error::DimensionCap(format!(
                "vectorized dimension {d}² exceeds the configured cap"
            )));
        }
        h.assert_hermitian(1e-12)?;
        let mut js = Vec::with_capacity(jumps.len());
        let mut rate_scale = 0.0f64;
        for j in jumps {
            if !(j.rate > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "jump rates must be positive, got {}",
                    j.rate
                )));
            }
            if **j.op.space() != *space {
                return Err(Error::DimensionMismatch(
                    "jump operator lives on a different space".into(),
                ));
            }
            rate_scale = rate_scale.max(j.rate);
            let a = j.op.matrix().clone();
            let adag = a.adjoint();
            let adaga = adag.matmul(&a);
            js.push((a, adag, adaga, j.rate));
        }
        Ok(Self {
            space,
            h: h.matrix().clone(),
            jumps: js,
            rate_scale: if rate_scale > 0.0 { rate_scale } else { 1.0 },
        })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn vec_dim(&self) -> usize {
        self.dim() * self.dim()
    }

    /// Largest jump rate; sets the scale of spectral tolerances.
    pub fn rate_scale(&self) -> f64 {
        self.rate_scale
    }

    /// dρ/dt = −i[H,ρ] + Σ Γ (AρA† − ½{A†A, ρ}), matrix-free.
    pub fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        let d = self.dim();
        let mut out = Array2::zeros((d, d));
        self.h.mul_dense_into(rho, &mut out, cx(0.0, -1.0));
        self.h.rmul_dense_into(rho, &mut out, cx(0.0, 1.0));
        for (a, adag, adaga, rate) in &self.jumps {
            let arho = a.mul_dense(rho);
            adag.rmul_dense_into(&arho, &mut out, cx(*rate, 0.0));
            adaga.mul_dense_into(rho, &mut out, cx(-rate / 2.0, 0.0));
            adaga.rmul_dense_into(rho, &mut out, cx(-rate / 2.0, 0.0));
        }
        out
    }

    /// Adjoint generator (Heisenberg picture):
    /// L†(X) = +i[H,X] + Σ Γ (A†XA − ½{A†A, X}).
    pub fn apply_adjoint(&self, x: &Array2<C64>) -> Array2<C64> {
        let d = self.dim();
        let mut out = Array2::zeros((d, d));
        self.h.mul_dense_into(x, &mut out, cx(0.0, 1.0));
        self.h.rmul_dense_into(x, &mut out, cx(0.0, -1.0));
        for (a, adag, adaga, rate) in &self.jumps {
            let xa = a.rmul_dense(x);
            adag.mul_dense_into(&xa, &mut out, cx(*rate, 0.0));
            adaga.mul_dense_into(x, &mut out, cx(-rate / 2.0, 0.0));
            adaga.rmul_dense_into(x, &mut out, cx(-rate / 2.0, 0.0));
        }
        out
    }

    /// Column-stacked apply on a vectorized state.
    pub fn apply_vec(&self, x: &Array1<C64>) -> Array1<C64> {
        vec_col(&self.apply(&unvec_col(x, self.dim())))
    }

    /// Effective non-Hermitian drift M = −iH − ½ Σ Γ A†A
    /// (dρ/dt = Mρ + ρM† + Σ Γ AρA†).
    pub fn effective_drift(&self) -> CsrMatrix {
        let mut m = self.h.scale(cx(0.0, -1.0));
        for (_, _, adaga, rate) in &self.jumps {
            m = m.add(&adaga.scale(cx(-rate / 2.0, 0.0)));
        }
        m
    }

    /// Sparse matrix of L in column-stacking vectorization.
    pub fn to_csr(&self) -> CsrMatrix {
        let d = self.dim();
        let id = CsrMatrix::identity(d);
        let ht = self.h.transpose();
        let mut l = id
            .kron(&self.h)
            .scale(cx(0.0, -1.0))
            .add(&ht.kron(&id).scale(cx(0.0, 1.0)));
        for (a, _, adaga, rate) in &self.jumps {
            let abar = a.conj();
            l = l.add(&abar.kron(a).scale(cx(*rate, 0.0)));
            l = l.add(&id.kron(adaga).scale(cx(-rate / 2.0, 0.0)));
            l = l.add(&adaga.transpose().kron(&id).scale(cx(-rate / 2.0, 0.0)));
        }
        l
    }

    pub fn to_dense(&self) -> Result<Array2<C64>> {
        if self.dim() > 64 {
            return Err(Error::DimensionCap(format!(
                "dense Liouvillian of dimension {}² refused",
                self.dim()
            )));
        }
        Ok(self.to_csr().to_dense())
    }

    /// ‖L†(I)‖_F: the trace-preservation (left-null-vector) residual.
    pub fn left_null_residual(&self) -> f64 {
        let id = Array2::from_diag(&Array1::from_elem(self.dim(), cx(1.0, 0.0)));
        frobenius(&self.apply_adjoint(&id))
    }
}

/// Build L for a model spec: Hamiltonian and jumps from the builders.
pub fn build_liouvillian(spec: &ModelSpec) -> Result<SuperOp> {
    let h = build_hamiltonian(spec)?;
    let jumps = build_jump_operators(spec)?;
    SuperOp::new(&h, &jumps)
}

/// Column-stacking vec: x[i + d·j] = ρ[i, j].
pub fn vec_col(rho: &Array2<C64>) -> Array1<C64> {
    let (d, e) = rho.dim();
    let mut x = Array1::zeros(d * e);
    for j in 0..e {
        for i in 0..d {
            x[i + d * j] = rho[[i, j]];
        }
    }
    x
}

pub fn unvec_col(x: &Array1<C64>, d: usize) -> Array2<C64> {
    let e = x.len() / d;
    let mut rho = Array2::zeros((d, e));
    for j in 0..e {
        for i in 0..d {
            rho[[i, j]] = x[i + d * j];
        }
    }
    rho
}

pub fn frobenius(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn norm2(x: &Array1<C64>) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ‖L vec(ρ)‖₂ for a density matrix (or a pure state's projector).
pub fn stationarity_residual(l: &SuperOp, rho: &DensityMatrix) -> Result<f64> {
    if **rho.space() != **l.space() {
        return Err(Error::DimensionMismatch("state lives on a different space".into()));
    }
    Ok(frobenius(&l.apply(rho.matrix())))
}

pub fn stationarity_residual_pure(l: &SuperOp, psi: &PureState) -> Result<f64> {
    stationarity_residual(l, &psi.to_density())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Uniqueness {
    Unique,
    Degenerate,
    Indeterminate,
}

/// Spectrum of L near zero: eigenvalues sorted by |Re| ascending.
#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<C64>,
    /// |Re| of the smallest-|Re| eigenvalue outside the null cluster;
    /// NaN when the computed window contains no such eigenvalue.
    pub gap: f64,
    pub null_dim: usize,
    /// |λ| threshold that defined the null cluster.
    pub tol_null: f64,
    /// Ratio |λ_{null_dim−1}| / |λ_{null_dim}| in the |λ|-sorted list;
    /// must be small for the null count to be trustworthy.
    pub separation: f64,
}

impl SpectrumResult {
    fn from_eigenvalues(mut eigs: Vec<C64>, tol_null: f64) -> Self {
        eigs.sort_by(|a, b| {
            (a.re.abs(), a.im.abs())
                .partial_cmp(&(b.re.abs(), b.im.abs()))
                .unwrap()
        });
        let mut by_mod: Vec<f64> = eigs.iter().map(|z| z.norm()).collect();
        by_mod.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let null_dim = by_mod.iter().take_while(|&&m| m < tol_null).count();
        let separation = if null_dim == 0 {
            f64::NAN
        } else if null_dim < by_mod.len() {
            // |λ| of the largest null candidate over the smallest survivor
            by_mod[null_dim - 1] / by_mod[null_dim]
        } else {
            f64::NAN
        };
        let gap = eigs
            .iter()
            .find(|z| z.norm() >= tol_null)
            .map(|z| z.re.abs())
            .unwrap_or(f64::NAN);
        Self {
            eigenvalues: eigs,
            gap,
            null_dim,
            tol_null,
            separation,
        }
    }

    /// Uniqueness certificate per the null-cluster separation test.
    pub fn uniqueness(&self, ratio_tol: f64) -> Uniqueness {
        if self.null_dim == 0 || !self.separation.is_finite() || self.separation >= ratio_tol {
            Uniqueness::Indeterminate
        } else if self.null_dim == 1 {
            Uniqueness::Unique
        } else {
            Uniqueness::Degenerate
        }
    }

    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpectrumOptions {
    /// |λ| below this counts as zero. Default 1e−8 · rate_scale.
    pub tol_null: Option<f64>,
    /// Null-cluster separation required for a definite uniqueness call.
    pub ratio_tol: f64,
    /// Time horizon of the Arnoldi propagator, in units of 1/rate_scale.
    pub horizon: f64,
    /// RK4 steps per horizon.
    pub steps: usize,
    /// Krylov subspace size.
    pub subspace: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            tol_null: None,
            ratio_tol: 1e-3,
            horizon: 3.0,
            steps: 120,
            subspace: 40,
        }
    }
}

/// The k eigenvalues of smallest |Re|: dense eigendecomposition when
/// total_dim ≤ 48, Arnoldi on the propagator exp(L·T) otherwise.
pub fn leading_eigenvalues(l: &SuperOp, k: usize, opts: &SpectrumOptions) -> Result<SpectrumResult> {
    if k < 2 {
        return Err(Error::InvalidConfig("leading_eigenvalues needs k >= 2".into()));
    }
    let tol_null = opts.tol_null.unwrap_or(1e-8 * l.rate_scale());
    let mut full = if l.dim() <= DENSE_EIG_DIM {
        dense_spectrum(l, tol_null)?
    } else {
        propagator_spectrum(l, k, tol_null, opts)?
    };
    full.eigenvalues.truncate(k.max(full.null_dim + 1));
    Ok(full)
}

/// Number of eigenvalues with |λ| below tol_null.
pub fn null_space_dimension(l: &SuperOp, tol_null: f64) -> Result<usize> {
    let opts = SpectrumOptions {
        tol_null: Some(tol_null),
        ..Default::default()
    };
    let spec = if l.dim() <= DENSE_EIG_DIM {
        dense_spectrum(l, tol_null)?
    } else {
        propagator_spectrum(l, 8, tol_null, &opts)?
    };
    Ok(spec.null_dim)
}

fn dense_spectrum(l: &SuperOp, tol_null: f64) -> Result<SpectrumResult> {
    let dense = l.to_csr().to_dense();
    let (eigs, _) = dense
        .eig()
        .map_err(|e| Error::SolverFailure(format!("zgeev on the Liouvillian: {e}")))?;
    Ok(SpectrumResult::from_eigenvalues(eigs.to_vec(), tol_null))
}

/// Fixed-step RK4 propagation of ρ over time T (matrix-free).
fn rk4_propagate(l: &SuperOp, rho: &Array2<C64>, t_total: f64, steps: usize) -> Array2<C64> {
    let h = t_total / steps as f64;
    let mut y = rho.clone();
    for _ in 0..steps {
        let k1 = l.apply(&y);
        let k2 = l.apply(&(&y + &(&k1 * cx(h / 2.0, 0.0))));
        let k3 = l.apply(&(&y + &(&k2 * cx(h / 2.0, 0.0))));
        let k4 = l.apply(&(&y + &(&k3 * cx(h, 0.0))));
        y = &y
            + &((&k1 + &(&k2 * cx(2.0, 0.0)) + &(&k3 * cx(2.0, 0.0)) + &k4) * cx(h / 6.0, 0.0));
    }
    y
}

/// Arnoldi iteration on exp(L·T). The dominant Ritz values μ map back to
/// the slowest Liouvillian eigenvalues through λ = ln(μ)/T; Re λ is
/// alias-free, Im λ is reliable for |Im λ| < π/T.
fn propagator_spectrum(
    l: &SuperOp,
    k: usize,
    tol_null: f64,
    opts: &SpectrumOptions,
) -> Result<SpectrumResult> {
    let d = l.dim();
    let vec_dim = l.vec_dim();
    let t_horizon = opts.horizon / l.rate_scale();
    let m = opts.subspace.max(2 * k + 6).min(vec_dim);

    // deterministic Hermitian start vector with weight on the identity
    let mut rng = ChaCha12Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut start = Array2::from_shape_fn((d, d), |(i, j)| {
        if i <= j {
            cx(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        } else {
            cx(0.0, 0.0)
        }
    });
    start = &start + &start.t().mapv(|z| z.conj());
    for i in 0..d {
        start[[i, i]] += cx(d as f64, 0.0);
    }
    let mut v0 = vec_col(&start);
    let n0 = norm2(&v0);
    v0.mapv_inplace(|z| z / n0);

    let mut basis: Vec<Array1<C64>> = vec![v0];
    let mut hess = Array2::<C64>::zeros((m + 1, m));
    let mut mdim = m;
    for j in 0..m {
        let w_mat = rk4_propagate(l, &unvec_col(&basis[j], d), t_horizon, opts.steps);
        let mut w = vec_col(&w_mat);
        for i in 0..=j {
            let hij: C64 = basis[i].iter().zip(w.iter()).map(|(v, x)| v.conj() * x).sum();
            hess[[i, j]] = hij;
            w.scaled_add(-hij, &basis[i]);
        }
        // one re-orthogonalization pass
        for i in 0..=j {
            let corr: C64 = basis[i].iter().zip(w.iter()).map(|(v, x)| v.conj() * x).sum();
            hess[[i, j]] += corr;
            w.scaled_add(-corr, &basis[i]);
        }
        let hnext = norm2(&w);
        hess[[j + 1, j]] = cx(hnext, 0.0);
        if hnext < 1e-12 {
            mdim = j + 1;
            break;
        }
        w.mapv_inplace(|z| z / hnext);
        basis.push(w);
    }

    let hm = hess.slice(ndarray::s![..mdim, ..mdim]).to_owned();
    let (mu, _) = hm
        .eig()
        .map_err(|e| Error::SolverFailure(format!("Hessenberg eigensolve: {e}")))?;
    let mut lambdas: Vec<C64> = mu
        .iter()
        .filter(|z| z.norm() > 1e-14)
        .map(|z| {
            let lnmu = C64::new(z.norm().ln(), z.arg());
            lnmu / cx(t_horizon, 0.0)
        })
        .collect();
    // keep the best-converged (largest |μ| ⇔ largest Re λ) modes
    lambdas.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
    lambdas.truncate((2 * k).max(8).min(lambdas.len()));
    Ok(SpectrumResult::from_eigenvalues(lambdas, tol_null))
}

#[derive(Clone, Copy, Debug)]
pub struct SteadyStateOptions {
    /// Target on ‖L vec(ρ)‖₂ after trace normalization.
    pub tol: f64,
    /// GMRES restart length.
    pub restart: usize,
    /// Maximum number of GMRES restart cycles.
    pub max_restarts: usize,
    /// Spectral-preconditioner shift, in units of rate_scale.
    pub shift: f64,
    /// Verify positivity (needs one Hermitian eigensolve).
    pub check_psd: bool,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            restart: 50,
            max_restarts: 12,
            shift: 0.1,
            check_psd: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    pub residual: f64,
    pub iterations: usize,
}

/// Solve L ρ = 0 with Tr ρ = 1.
///
/// The bordered system (L + w uᴴ) x = w with u = vec(I), w = vec(I)/d
/// is nonsingular exactly when the null space is one-dimensional; GMRES
/// runs on it with a left preconditioner built from the eigenbasis of
/// the effective drift M (L₀ρ = Mρ + ρM† is diagonal there). The
/// result is Hermitized, trace-normalized, and its true residual
/// ‖L vec(ρ)‖₂ is reported.
pub fn steady_state_nullspace(l: &SuperOp, opts: &SteadyStateOptions) -> Result<SteadyState> {
    let d = l.dim();

    // preconditioner: (L0 − s)⁻¹ through the eigenbasis of M
    let m_dense = l.effective_drift().to_dense();
    let (lam, s_mat) = m_dense
        .eig()
        .map_err(|e| Error::SolverFailure(format!("drift eigensolve: {e}")))?;
    let s_inv = s_mat
        .inv()
        .map_err(|e| Error::SolverFailure(format!("drift eigenbasis inversion: {e}")))?;
    let s_dag = s_mat.t().mapv(|z| z.conj());
    let s_inv_dag = s_inv.t().mapv(|z| z.conj());
    let shift = opts.shift * l.rate_scale();
    let denom = Array2::from_shape_fn((d, d), |(i, j)| lam[i] + lam[j].conj() - cx(shift, 0.0));

    let precond = |rho: &Array2<C64>| -> Array2<C64> {
        let x = s_inv.dot(rho).dot(&s_inv_dag);
        let y = &x / &denom;
        s_mat.dot(&y).dot(&s_dag)
    };

    let trace_of = |x: &Array1<C64>| -> C64 { (0..d).map(|i| x[i + d * i]).sum() };

    // bordered, preconditioned operator
    let apply = |x: &Array1<C64>| -> Array1<C64> {
        let rho = unvec_col(x, d);
        let mut lx = l.apply(&rho);
        let tr = trace_of(x) / cx(d as f64, 0.0);
        for i in 0..d {
            lx[[i, i]] += tr;
        }
        vec_col(&precond(&lx))
    };

    let mut b_mat = Array2::zeros((d, d));
    for i in 0..d {
        b_mat[[i, i]] = cx(1.0 / d as f64, 0.0);
    }
    let b = vec_col(&precond(&b_mat));
    let x0 = vec_col(&b_mat); // maximally mixed initial guess

    let finalize = |x: &Array1<C64>| -> Result<(DensityMatrix, f64)> {
        let raw = unvec_col(x, d);
        let herm = (&raw + &raw.t().mapv(|z| z.conj())) * cx(0.5, 0.0);
        let tr: C64 = herm.diag().iter().sum();
        if tr.norm() < 1e-300 {
            return Err(Error::SolverFailure("steady-state candidate has zero trace".into()));
        }
        let rho = herm.mapv(|z| z / tr);
        let resid = frobenius(&l.apply(&rho));
        Ok((DensityMatrix::new(l.space().clone(), rho)?, resid))
    };

    let mut x = x0;
    let mut total_iters = 0;
    let mut best: Option<(DensityMatrix, f64)> = None;
    for _cycle in 0..opts.max_restarts {
        let (xn, iters, _relres) = gmres_cycle(&apply, &b, &x, opts.restart, 1e-14);
        total_iters += iters;
        x = xn;
        let (rho, resid) = finalize(&x)?;
        let improved = best.as_ref().map_or(true, |(_, r)| resid < *r);
        if improved {
            best = Some((rho, resid));
        }
        let resid_now = best.as_ref().unwrap().1;
        if resid_now < opts.tol {
            break;
        }
        if !improved {
            // stagnation: a singular bordered system (degenerate null
            // space) or an exhausted preconditioner
            break;
        }
    }
    let (rho, residual) = best.unwrap();
    if residual >= opts.tol {
        return Err(Error::SolverFailure(format!(
            "steady-state residual {residual:.3e} did not reach {:.1e} after {total_iters} GMRES iterations (degenerate null space?)",
            opts.tol
        )));
    }
    if opts.check_psd {
        let min = rho.min_eigenvalue()?;
        if min <= -1e-9 {
            return Err(Error::NonPhysicalState(format!(
                "steady state has eigenvalue {min:.3e}"
            )));
        }
    }
    Ok(SteadyState {
        rho,
        residual,
        iterations: total_iters,
    })
}

/// One restarted GMRES cycle with modified Gram-Schmidt and Givens
/// rotations. Returns (x, iterations, relative residual).
fn gmres_cycle(
    apply: &dyn Fn(&Array1<C64>) -> Array1<C64>,
    b: &Array1<C64>,
    x0: &Array1<C64>,
    m: usize,
    tol: f64,
) -> (Array1<C64>, usize, f64) {
    let ax0 = apply(x0);
    let r0 = b - &ax0;
    let beta = norm2(&r0);
    let bnorm = norm2(b).max(1e-300);
    if beta / bnorm < tol {
        return (x0.clone(), 0, beta / bnorm);
    }
    let mut basis = vec![r0.mapv(|z| z / beta)];
    let mut hess = Array2::<C64>::zeros((m + 1, m));
    let mut cs = vec![cx(0.0, 0.0); m];
    let mut sn = vec![cx(0.0, 0.0); m];
    let mut g = Array1::<C64>::zeros(m + 1);
    g[0] = cx(beta, 0.0);
    let mut used = 0;

    for j in 0..m {
        let mut w = apply(&basis[j]);
        for i in 0..=j {
            let hij: C64 = basis[i].iter().zip(w.iter()).map(|(v, x)| v.conj() * x).sum();
            hess[[i, j]] = hij;
            w.scaled_add(-hij, &basis[i]);
        }
        let hnext = norm2(&w);
        hess[[j + 1, j]] = cx(hnext, 0.0);

        // apply accumulated rotations to the new column
        for i in 0..j {
            let t = cs[i] * hess[[i, j]] + sn[i] * hess[[i + 1, j]];
            hess[[i + 1, j]] = -sn[i].conj() * hess[[i, j]] + cs[i].conj() * hess[[i + 1, j]];
            hess[[i, j]] = t;
        }
        // new rotation to zero the subdiagonal
        let (c, s) = givens(hess[[j, j]], hess[[j + 1, j]]);
        cs[j] = c;
        sn[j] = s;
        hess[[j, j]] = c * hess[[j, j]] + s * hess[[j + 1, j]];
        hess[[j + 1, j]] = cx(0.0, 0.0);
        g[j + 1] = -s.conj() * g[j];
        g[j] = c.conj() * g[j] * cx(1.0, 0.0) + s.conj() * cx(0.0, 0.0); // c real by construction
        used = j + 1;

        let relres = g[j + 1].norm() / bnorm;
        if relres < tol {
            break;
        }
        if hnext < 1e-14 {
            break;
        }
        basis.push(w.mapv(|z| z / hnext));
    }

    // back substitution
    let mut y = vec![cx(0.0, 0.0); used];
    for i in (0..used).rev() {
        let mut s = g[i];
        for k in i + 1..used {
            s -= hess[[i, k]] * y[k];
        }
        y[i] = s / hess[[i, i]];
    }
    let mut x = x0.clone();
    for (i, yi) in y.iter().enumerate() {
        x.scaled_add(*yi, &basis[i]);
    }
    let relres = g[used].norm() / bnorm;
    (x, used, relres)
}

/// Givens rotation with real cosine: returns (c, s) with
/// c·a + s·b = r and −s̄·a + c·b = 0.
fn givens(a: C64, b: C64) -> (C64, C64) {
    let na = a.norm();
    let nb = b.norm();
    if nb == 0.0 {
        return (cx(1.0, 0.0), cx(0.0, 0.0));
    }
    if na == 0.0 {
        return (cx(0.0, 0.0), b.conj() / nb);
    }
    let r = (na * na + nb * nb).sqrt();
    let c = cx(na / r, 0.0);
    let s = (a / na) * b.conj() / r;
    (c, s)
}

/// Grid scan of the spectral gap against the base detuning. Returns the
/// maximizing detuning (first grid point wins ties) and the full table.
pub struct DetuningScan {
    pub best: f64,
    pub best_gap: f64,
    pub rows: Vec<(f64, SpectrumResult)>,
}

pub fn optimize_detuning(
    spec: &ModelSpec,
    grid: &[f64],
    k: usize,
    opts: &SpectrumOptions,
) -> Result<DetuningScan> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("detuning grid is empty".into()));
    }
    let base = spec_detunings(spec);
    let offsets: Vec<f64> = base.iter().map(|v| v - base[0]).collect();
    let mut rows = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &delta in grid {
        let mut s = spec.clone();
        let arr: Vec<f64> = offsets.iter().map(|o| delta + o).collect();
        set_spec_detunings(&mut s, arr);
        let l = build_liouvillian(&s)?;
        let spectrum = leading_eigenvalues(&l, k, opts)?;
        if spectrum.gap.is_finite() && spectrum.gap > best.1 {
            best = (delta, spectrum.gap);
        }
        rows.push((delta, spectrum));
    }
    Ok(DetuningScan {
        best: best.0,
        best_gap: best.1,
        rows,
    })
}

fn spec_detunings(spec: &ModelSpec) -> Vec<f64> {
    if spec.topology.has_outer_cavities() {
        spec.delta_c.clone()
    } else {
        spec.delta_q.clone()
    }
}

fn set_spec_detunings(spec: &mut ModelSpec, arr: Vec<f64>) {
    if spec.topology.has_outer_cavities() {
        spec.delta_c = arr;
    } else {
        spec.delta_q = arr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{
        boson_annihilate, local_embed, sigma_z, HilbertSpace, Site, SiteDescriptor, SiteKind,
    };
    use crate::model::{
        analytic_full_state, build_space, ModelSpec, Representation, Topology,
    };
    use approx::assert_abs_diff_eq;

    fn single_cavity(n_max: usize, kappa: f64) -> SuperOp {
        let space = HilbertSpace::new(vec![SiteDescriptor {
            site: Site::Cavity(0),
            kind: SiteKind::Boson { n_max },
        }])
        .unwrap();
        let b = local_embed(&space, Site::Cavity(0), &boson_annihilate(n_max).unwrap()).unwrap();
        let h = Operator::zero(space);
        SuperOp::new(&h, &[JumpOperator { op: b, rate: kappa }]).unwrap()
    }

    fn single_qubit_dephasing(gamma: f64) -> SuperOp {
        let space = HilbertSpace::new(vec![SiteDescriptor {
            site: Site::Qubit(1),
            kind: SiteKind::Qubit,
        }])
        .unwrap();
        let z = local_embed(&space, Site::Qubit(1), &sigma_z()).unwrap();
        let h = Operator::zero(space);
        SuperOp::new(&h, &[JumpOperator { op: z, rate: gamma }]).unwrap()
    }

    fn cq1_spec(n_bar: f64) -> ModelSpec {
        ModelSpec {
            topology: Topology::Cq,
            n_pairs: 1,
            n_bar,
            kappa: 1.0,
            gamma: 0.0,
            delta_c: vec![],
            delta_q: vec![0.197],
            g: vec![0.36],
            eta_c: vec![],
            eta_q: vec![],
            n_max: vec![2],
            representation: Representation::Squeezed,
            disorder: None,
            overrides: None,
            realization: None,
        }
    }

    #[test]
    fn amplitude_damping_component_rate() {
        // H = 0, jump √κ b, n_max = 1: L vec(|1⟩⟨1|) has component −κ
        // along vec(|1⟩⟨1|)
        let l = single_cavity(1, 1.0);
        let mut rho = Array2::zeros((2, 2));
        rho[[1, 1]] = cx(1.0, 0.0);
        let out = l.apply(&rho);
        assert_abs_diff_eq!(out[[1, 1]].re, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out[[0, 0]].re, 1.0, epsilon = 1e-14);
        // trace preserved
        assert!(out.diag().iter().sum::<C64>().norm() < 1e-14);
    }

    #[test]
    fn dephasing_decays_coherence_at_two_gamma() {
        let gamma = 0.3;
        let l = single_qubit_dephasing(gamma);
        let mut rho = Array2::zeros((2, 2));
        rho[[0, 1]] = cx(1.0, 0.0);
        let out = l.apply(&rho);
        assert_abs_diff_eq!(out[[0, 1]].re, -2.0 * gamma, epsilon = 1e-14);
        // populations invariant
        let mut pop = Array2::zeros((2, 2));
        pop[[0, 0]] = cx(0.7, 0.0);
        pop[[1, 1]] = cx(0.3, 0.0);
        assert!(frobenius(&l.apply(&pop)) < 1e-14);
    }

    #[test]
    fn left_null_identity() {
        let l = build_liouvillian(&cq1_spec(1.0)).unwrap();
        assert!(l.left_null_residual() < 1e-10);
    }

    #[test]
    fn matrix_free_agrees_with_csr() {
        let l = build_liouvillian(&cq1_spec(0.7)).unwrap();
        let csr = l.to_csr();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let d = l.dim();
        for _ in 0..3 {
            let x = Array1::from_shape_fn(d * d, |_| {
                cx(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let via_mat = Array1::from_vec(csr.mul_vec(x.as_slice().unwrap()));
            let via_free = l.apply_vec(&x);
            let diff = (&via_mat - &via_free)
                .iter()
                .map(|z| z.norm())
                .fold(0.0f64, f64::max);
            assert!(diff < 1e-12, "matrix-free deviates by {diff}");
        }
    }

    #[test]
    fn hermiticity_preserved_by_apply() {
        let l = build_liouvillian(&cq1_spec(1.0)).unwrap();
        let d = l.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let a = Array2::from_shape_fn((d, d), |_| cx(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let herm = (&a + &a.t().mapv(|z| z.conj())) * cx(0.5, 0.0);
        let out = l.apply(&herm);
        let dev = (&out - &out.t().mapv(|z| z.conj()))
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        assert!(dev < 1e-12);
    }

    #[test]
    fn cavity_decay_spectrum_is_half_kappa_ladder() {
        // pure decay: eigenvalues −κ(m+n)/2
        let l = single_cavity(1, 1.0);
        let spec = leading_eigenvalues(&l, 4, &SpectrumOptions::default()).unwrap();
        let mut res: Vec<f64> = spec.eigenvalues.iter().map(|z| z.re).collect();
        res.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_abs_diff_eq!(res[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(res[1], -0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(res[2], -0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(res[3], -1.0, epsilon = 1e-10);
        assert_eq!(spec.null_dim, 1);
        assert!(spec.max_real_part() <= 1e-10);
    }

    #[test]
    fn steady_state_single_cavity_is_vacuum() {
        let l = single_cavity(2, 1.0);
        let ss = steady_state_nullspace(&l, &SteadyStateOptions::default()).unwrap();
        assert!(ss.residual < 1e-10);
        assert_abs_diff_eq!(ss.rho.matrix()[[0, 0]].re, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn steady_state_cq1_matches_analytic() {
        for n_bar in [0.0, 1.0] {
            let spec = cq1_spec(n_bar);
            let l = build_liouvillian(&spec).unwrap();
            let ss = steady_state_nullspace(&l, &SteadyStateOptions::default()).unwrap();
            let psi = analytic_full_state(&spec).unwrap();
            // fidelity ⟨ψ|ρ|ψ⟩
            let rho = ss.rho.matrix();
            let amp = psi.amplitudes();
            let mut fid = cx(0.0, 0.0);
            for i in 0..amp.len() {
                for j in 0..amp.len() {
                    fid += amp[i].conj() * rho[[i, j]] * amp[j];
                }
            }
            assert!(
                fid.re > 1.0 - 1e-8,
                "fidelity {} at n_bar={n_bar}",
                fid.re
            );
            let resid = stationarity_residual_pure(&l, &psi).unwrap();
            assert!(resid < 1e-10, "analytic stationarity residual {resid}");
        }
    }

    #[test]
    fn null_dim_counts_degeneracy() {
        // decoupled qubit sector: Cq with g = 0 leaves the qubits free,
        // so the null space is large
        let mut spec = cq1_spec(1.0);
        spec.g = vec![0.0];
        spec.delta_q = vec![0.0];
        let l = build_liouvillian(&spec).unwrap();
        let n = null_space_dimension(&l, 1e-8).unwrap();
        assert!(n >= 2, "expected degenerate null space, got {n}");
        // the coupled model is unique
        let l = build_liouvillian(&cq1_spec(1.0)).unwrap();
        assert_eq!(null_space_dimension(&l, 1e-8).unwrap(), 1);
        let spec_res = leading_eigenvalues(&l, 4, &SpectrumOptions::default()).unwrap();
        assert_eq!(spec_res.uniqueness(1e-3), Uniqueness::Unique);
    }

    #[test]
    fn propagator_arnoldi_matches_dense_gap() {
        let spec = cq1_spec(1.0);
        let l = build_liouvillian(&spec).unwrap();
        let dense = dense_spectrum(&l, 1e-8).unwrap();
        let opts = SpectrumOptions {
            subspace: 36,
            horizon: 3.0,
            steps: 300,
            ..Default::default()
        };
        let arn = propagator_spectrum(&l, 4, 1e-8, &opts).unwrap();
        assert_eq!(arn.null_dim, 1);
        assert_abs_diff_eq!(arn.gap, dense.gap, epsilon = 1e-4);
    }

    #[test]
    fn maximally_mixed_is_stationary_under_pure_dephasing() {
        let l = single_qubit_dephasing(0.4);
        let mut rho = Array2::zeros((2, 2));
        rho[[0, 0]] = cx(0.5, 0.0);
        rho[[1, 1]] = cx(0.5, 0.0);
        let dm = DensityMatrix::new(l.space().clone(), rho).unwrap();
        assert!(stationarity_residual(&l, &dm).unwrap() < 1e-12);
    }

    #[test]
    fn analytic_state_not_stationary_with_dephasing() {
        let mut spec = cq1_spec(1.0);
        spec.gamma = 5e-4;
        let l = build_liouvillian(&spec).unwrap();
        let psi = analytic_full_state(&spec).unwrap();
        let resid = stationarity_residual_pure(&l, &psi).unwrap();
        assert!(resid > 1e-6, "dephasing must break exact stationarity");
    }

    #[test]
    fn optimize_detuning_scan() {
        let spec = cq1_spec(1.0);
        let grid: Vec<f64> = (0..7).map(|i| 0.12 + 0.025 * i as f64).collect();
        let scan = optimize_detuning(&spec, &grid, 3, &SpectrumOptions::default()).unwrap();
        for (_, row) in &scan.rows {
            assert!(scan.best_gap >= row.gap || !row.gap.is_finite());
            assert_eq!(row.null_dim, 1);
        }
        assert!(grid.contains(&scan.best));
    }

    #[test]
    fn vec_col_round_trip() {
        let a = Array2::from_shape_fn((3, 3), |(i, j)| cx(i as f64, j as f64));
        let v = vec_col(&a);
        assert_eq!(v[0 + 3 * 1], cx(0.0, 1.0)); // (0,1) at index i + d*j
        let b = unvec_col(&v, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn stationarity_of_analytic_state_squeezed_reps() {
        let spec = crate::model::tests_support::ccq_spec(1, 1.0);
        let l = build_liouvillian(&spec).unwrap();
        let psi = analytic_full_state(&spec).unwrap();
        assert!(stationarity_residual_pure(&l, &psi).unwrap() < 1e-10);
        assert_eq!(build_space(&spec).unwrap().total_dim(), 48);
    }
}
