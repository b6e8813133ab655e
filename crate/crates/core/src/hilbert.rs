//! Tensor-product Hilbert-space bookkeeping and operator embedding.
//!
//! Sites are addressed by a [`Site`] label and kept in a fixed canonical
//! order: ascending position index j, with a cavity preceding the qubit
//! that shares its position. Companion qubits (the two-level stand-ins
//! for cavities in the qubit-only models) occupy the positions their
//! cavities had. Qubit basis order is (|+⟩, |−⟩) with σᶻ|±⟩ = ±|±⟩;
//! boson basis order is |0⟩ … |n_max⟩.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Label of one subsystem. `Cavity(j)` also addresses the companion
/// qubit replacing that cavity in the qubit-only models.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Site {
    Cavity(i32),
    Qubit(i32),
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Cavity(j) => write!(f, "c{j}"),
            Site::Qubit(j) => write!(f, "q{j}"),
        }
    }
}

impl Site {
    pub fn index(&self) -> i32 {
        match self {
            Site::Cavity(j) | Site::Qubit(j) => *j,
        }
    }

    /// Mirror image under the left↔right relabeling j ↦ −j.
    pub fn mirrored(&self) -> Site {
        match self {
            Site::Cavity(j) => Site::Cavity(-j),
            Site::Qubit(j) => Site::Qubit(-j),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SiteKind {
    Boson { n_max: usize },
    Qubit,
    /// Two-level stand-in for a cavity in the qubit-only models.
    CompanionQubit,
}

#[derive(Clone, Copy, Debug)]
pub struct SiteDescriptor {
    pub site: Site,
    pub kind: SiteKind,
}

impl SiteDescriptor {
    pub fn dim(&self) -> usize {
        match self.kind {
            SiteKind::Boson { n_max } => n_max + 1,
            SiteKind::Qubit | SiteKind::CompanionQubit => 2,
        }
    }
}

#[derive(Debug)]
pub struct HilbertSpace {
    sites: Vec<SiteDescriptor>,
    dims: Vec<usize>,
    strides: Vec<usize>,
    total_dim: usize,
    position: HashMap<Site, usize>,
}

impl PartialEq for HilbertSpace {
    fn eq(&self, other: &Self) -> bool {
        self.sites.len() == other.sites.len()
            && self
                .sites
                .iter()
                .zip(&other.sites)
                .all(|(a, b)| a.site == b.site && a.kind == b.kind)
    }
}

impl HilbertSpace {
    pub fn new(sites: Vec<SiteDescriptor>) -> Result<Arc<Self>> {
        let mut position = HashMap::new();
        for (k, s) in sites.iter().enumerate() {
            if position.insert(s.site, k).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate site label {}", s.site)));
            }
            if let SiteKind::Boson { n_max } = s.kind {
                if n_max < 1 {
                    return Err(Error::InvalidSpec(format!(
                        "boson site {} needs n_max >= 1",
                        s.site
                    )));
                }
            }
        }
        let dims: Vec<usize> = sites.iter().map(|s| s.dim()).collect();
        let mut total_dim = 1usize;
        for &d in &dims {
            total_dim = total_dim
                .checked_mul(d)
                .ok_or_else(|| Error::DimensionCap("total dimension overflows usize".into()))?;
        }
        let mut strides = vec![1usize; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Ok(Arc::new(Self {
            sites,
            dims,
            strides,
            total_dim,
            position,
        }))
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn sites(&self) -> &[SiteDescriptor] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn contains(&self, site: Site) -> bool {
        self.position.contains_key(&site)
    }

    pub fn position_of(&self, site: Site) -> Result<usize> {
        self.position
            .get(&site)
            .copied()
            .ok_or_else(|| Error::UnknownSite(site.to_string()))
    }

    pub fn dim_of(&self, site: Site) -> Result<usize> {
        Ok(self.dims[self.position_of(site)?])
    }

    pub fn kind_of(&self, site: Site) -> Result<SiteKind> {
        Ok(self.sites[self.position_of(site)?].kind)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Decompose a full-space basis index into per-site digits.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dims.len());
        for k in 0..self.dims.len() {
            out.push(index / self.strides[k]);
            index %= self.strides[k];
        }
        out
    }

    pub fn index_from_digits(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.strides)
            .map(|(&d, &s)| d * s)
            .sum()
    }

    /// Basis permutation induced by a relabeling of sites. `map(site)`
    /// must be a bijection of this space's labels onto themselves.
    pub fn relabel_permutation(&self, map: impl Fn(Site) -> Site) -> Result<Vec<usize>> {
        // new_position[k] = position of the site that k's content moves to
        let mut target = vec![0usize; self.n_sites()];
        for (k, s) in self.sites.iter().enumerate() {
            let t = self.position_of(map(s.site))?;
            if self.dims[t] != self.dims[k] {
                return Err(Error::DimensionMismatch(format!(
                    "relabeling maps {} onto a site of different dimension",
                    s.site
                )));
            }
            target[k] = t;
        }
        let mut perm = vec![0usize; self.total_dim];
        let mut new_digits = vec![0usize; self.n_sites()];
        for idx in 0..self.total_dim {
            let digits = self.digits(idx);
            for k in 0..self.n_sites() {
                new_digits[target[k]] = digits[k];
            }
            perm[idx] = self.index_from_digits(&new_digits);
        }
        Ok(perm)
    }
}

/// Sparse operator tagged with its Hilbert space.
#[derive(Clone, Debug)]
pub struct Operator {
    space: Arc<HilbertSpace>,
    mat: CsrMatrix,
}

impl Operator {
    pub fn new(space: Arc<HilbertSpace>, mat: CsrMatrix) -> Result<Self> {
        if mat.nrows() != space.total_dim() || mat.ncols() != space.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but space has dimension {}",
                mat.nrows(),
                mat.ncols(),
                space.total_dim()
            )));
        }
        Ok(Self { space, mat })
    }

    pub fn zero(space: Arc<HilbertSpace>) -> Self {
        let d = space.total_dim();
        Self {
            space,
            mat: CsrMatrix::zeros(d, d),
        }
    }

    pub fn identity(space: Arc<HilbertSpace>) -> Self {
        let d = space.total_dim();
        Self {
            space,
            mat: CsrMatrix::identity(d),
        }
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.mat
    }

    pub fn to_dense(&self) -> Array2<C64> {
        self.mat.to_dense()
    }

    pub fn add(&self, other: &Operator) -> Operator {
        assert!(self.space == other.space, "operator space mismatch");
        Operator {
            space: self.space.clone(),
            mat: self.mat.add(&other.mat),
        }
    }

    pub fn sub(&self, other: &Operator) -> Operator {
        assert!(self.space == other.space, "operator space mismatch");
        Operator {
            space: self.space.clone(),
            mat: self.mat.sub(&other.mat),
        }
    }

    pub fn matmul(&self, other: &Operator) -> Operator {
        assert!(self.space == other.space, "operator space mismatch");
        Operator {
            space: self.space.clone(),
            mat: self.mat.matmul(&other.mat),
        }
    }

    pub fn scale(&self, s: C64) -> Operator {
        Operator {
            space: self.space.clone(),
            mat: self.mat.scale(s),
        }
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            space: self.space.clone(),
            mat: self.mat.adjoint(),
        }
    }

    pub fn apply(&self, state: &PureState) -> Result<PureState> {
        if *state.space != *self.space {
            return Err(Error::DimensionMismatch("operator/state space mismatch".into()));
        }
        Ok(PureState {
            space: state.space.clone(),
            amplitudes: crate::sparse::apply_to_vector(&self.mat, &state.amplitudes),
        })
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        self.mat.hermiticity_deviation()
    }

    pub fn assert_hermitian(&self, tol: f64) -> Result<()> {
        let dev = self.hermiticity_deviation();
        if dev < tol {
            Ok(())
        } else {
            Err(Error::NotHermitian(dev))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.max_abs()
    }
}

/// I ⊗ … ⊗ local_op ⊗ … ⊗ I at the given site, in canonical order.
pub fn local_embed(
    space: &Arc<HilbertSpace>,
    site: Site,
    local_op: &Array2<C64>,
) -> Result<Operator> {
    let pos = space.position_of(site)?;
    let d = space.dims()[pos];
    if local_op.dim() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "local operator for {} is {}x{}, site dimension is {}",
            site,
            local_op.nrows(),
            local_op.ncols(),
            d
        )));
    }
    let pre: usize = space.dims()[..pos].iter().product();
    let post: usize = space.dims()[pos + 1..].iter().product();
    let mat = CsrMatrix::identity(pre)
        .kron(&CsrMatrix::from_dense(local_op))
        .kron(&CsrMatrix::identity(post));
    Operator::new(space.clone(), mat)
}

/// Embed an operator acting on two (not necessarily adjacent) sites.
/// `op` acts on the product space site_a ⊗ site_b.
pub fn embed_pair(
    space: &Arc<HilbertSpace>,
    site_a: Site,
    site_b: Site,
    op: &Array2<C64>,
) -> Result<Operator> {
    let pa = space.position_of(site_a)?;
    let pb = space.position_of(site_b)?;
    if pa == pb {
        return Err(Error::InvalidSpec("embed_pair needs two distinct sites".into()));
    }
    let (da, db) = (space.dims()[pa], space.dims()[pb]);
    if op.dim() != (da * db, da * db) {
        return Err(Error::DimensionMismatch(format!(
            "pair operator is {}x{}, expected {}",
            op.nrows(),
            op.ncols(),
            da * db
        )));
    }
    let mut triplets = Vec::new();
    let dim = space.total_dim();
    for idx in 0..dim {
        let digits = space.digits(idx);
        let (ia, ib) = (digits[pa], digits[pb]);
        let row_local = ia * db + ib;
        for ja in 0..da {
            for jb in 0..db {
                let v = op[[row_local, ja * db + jb]];
                if v.norm() < crate::sparse::DROP_TOL {
                    continue;
                }
                let mut dj = digits.clone();
                dj[pa] = ja;
                dj[pb] = jb;
                triplets.push((idx, space.index_from_digits(&dj), v));
            }
        }
    }
    Operator::new(space.clone(), CsrMatrix::from_triplets(dim, dim, triplets))
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// (n_max+1)-dimensional lowering matrix, entries √n on the first superdiagonal.
pub fn boson_annihilate(n_max: usize) -> Result<Array2<C64>> {
    if n_max < 1 {
        return Err(Error::InvalidSpec("boson truncation needs n_max >= 1".into()));
    }
    let d = n_max + 1;
    let mut b = Array2::zeros((d, d));
    for n in 1..d {
        b[[n - 1, n]] = c((n as f64).sqrt(), 0.0);
    }
    Ok(b)
}

pub fn boson_number(n_max: usize) -> Array2<C64> {
    let d = n_max + 1;
    Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            c(i as f64, 0.0)
        } else {
            c(0.0, 0.0)
        }
    })
}

/// Pauli matrices in the σᶻ eigenbasis with |+⟩ first.
pub fn sigma_x() -> Array2<C64> {
    ndarray::array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
}

pub fn sigma_y() -> Array2<C64> {
    ndarray::array![[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]]
}

pub fn sigma_z() -> Array2<C64> {
    ndarray::array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]
}

/// Lowering operator σ⁻ = (σˣ − iσʸ)/2, so σ⁻|+⟩ = |−⟩.
pub fn sigma_minus() -> Array2<C64> {
    ndarray::array![[c(0.0, 0.0), c(0.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
}

/// Normalized state vector on a Hilbert space.
#[derive(Clone, Debug)]
pub struct PureState {
    space: Arc<HilbertSpace>,
    amplitudes: Array1<C64>,
}

impl PureState {
    pub fn new(space: Arc<HilbertSpace>, amplitudes: Array1<C64>) -> Result<Self> {
        if amplitudes.len() != space.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} amplitudes, space dimension is {}",
                amplitudes.len(),
                space.total_dim()
            )));
        }
        let state = Self { space, amplitudes };
        let norm = state.norm();
        if (norm - 1.0).abs() >= 1e-12 {
            return Err(Error::NonPhysicalState(format!(
                "pure state norm deviates by {:.3e}",
                (norm - 1.0).abs()
            )));
        }
        Ok(state)
    }

    /// Construct without the norm check (for intermediate results).
    pub fn new_unchecked(space: Arc<HilbertSpace>, amplitudes: Array1<C64>) -> Self {
        Self { space, amplitudes }
    }

    /// Product basis state with the given digit at every site.
    pub fn basis_state(space: Arc<HilbertSpace>, digits: &[usize]) -> Result<Self> {
        if digits.len() != space.n_sites() {
            return Err(Error::DimensionMismatch("digit count != site count".into()));
        }
        let idx = space.index_from_digits(digits);
        let mut amp = Array1::zeros(space.total_dim());
        amp[idx] = c(1.0, 0.0);
        Ok(Self {
            space,
            amplitudes: amp,
        })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            space: self.space.clone(),
            amplitudes: self.amplitudes.mapv(|z| z / n),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        let d = self.space.total_dim();
        let mut rho = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                rho[[i, j]] = self.amplitudes[i] * self.amplitudes[j].conj();
            }
        }
        DensityMatrix {
            space: self.space.clone(),
            matrix: rho,
        }
    }
}

/// Density matrix on a Hilbert space (Hermitian, unit trace, PSD within tolerance).
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    space: Arc<HilbertSpace>,
    matrix: Array2<C64>,
}

impl DensityMatrix {
    pub fn new(space: Arc<HilbertSpace>, matrix: Array2<C64>) -> Result<Self> {
        if matrix.dim() != (space.total_dim(), space.total_dim()) {
            return Err(Error::DimensionMismatch(format!(
                "density matrix is {}x{}, space dimension is {}",
                matrix.nrows(),
                matrix.ncols(),
                space.total_dim()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diag().iter().sum()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.matrix.nrows() {
            for j in i..self.matrix.ncols() {
                dev = dev.max((self.matrix[[i, j]] - self.matrix[[j, i]].conj()).norm());
            }
        }
        dev
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let herm = self.matrix.mapv(|z| z) * c(0.5, 0.0)
            + self.matrix.t().mapv(|z| z.conj()) * c(0.5, 0.0);
        let (w, _) = herm
            .eigh(UPLO::Lower)
            .map_err(|e| Error::SolverFailure(format!("eigh: {e}")))?;
        Ok(w.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Trace and Hermiticity checks (cheap, O(d²)).
    pub fn validate(&self) -> Result<()> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() >= 1e-10 || tr.im.abs() >= 1e-10 {
            return Err(Error::NonPhysicalState(format!(
                "trace deviates from 1 by {:.3e}",
                (tr - c(1.0, 0.0)).norm()
            )));
        }
        let dev = self.hermiticity_deviation();
        if dev >= 1e-9 {
            return Err(Error::NonPhysicalState(format!(
                "Hermiticity deviation {dev:.3e}"
            )));
        }
        Ok(())
    }

    /// Full physicality check including the PSD tolerance (needs an eigensolve).
    pub fn validate_full(&self) -> Result<()> {
        self.validate()?;
        let min = self.min_eigenvalue()?;
        if min <= -1e-9 {
            return Err(Error::NonPhysicalState(format!(
                "minimum eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }

    pub fn purity(&self) -> f64 {
        let mut p = c(0.0, 0.0);
        for i in 0..self.matrix.nrows() {
            for j in 0..self.matrix.ncols() {
                p += self.matrix[[i, j]] * self.matrix[[j, i]];
            }
        }
        p.re
    }
}

/// Reduced density matrix on the kept sites; canonical order preserved.
pub fn partial_trace(rho: &DensityMatrix, keep: &[Site]) -> Result<DensityMatrix> {
    if keep.is_empty() {
        return Err(Error::EmptyKeepSet);
    }
    let space = rho.space();
    let mut keep_pos: Vec<usize> = keep
        .iter()
        .map(|&s| space.position_of(s))
        .collect::<Result<_>>()?;
    keep_pos.sort_unstable();
    keep_pos.dedup();
    let traced_pos: Vec<usize> = (0..space.n_sites())
        .filter(|p| !keep_pos.contains(p))
        .collect();

    let kept_sites: Vec<SiteDescriptor> = keep_pos.iter().map(|&p| space.sites()[p]).collect();
    let out_space = HilbertSpace::new(kept_sites)?;
    let d_out = out_space.total_dim();
    let d_tr: usize = traced_pos.iter().map(|&p| space.dims()[p]).product();

    // enumerate kept and traced sub-indices through the full-space strides
    let kept_strides: Vec<usize> = {
        let mut v = Vec::with_capacity(keep_pos.len());
        for &p in &keep_pos {
            v.push(space.strides()[p]);
        }
        v
    };
    let traced_strides: Vec<usize> = traced_pos.iter().map(|&p| space.strides()[p]).collect();
    let traced_dims: Vec<usize> = traced_pos.iter().map(|&p| space.dims()[p]).collect();
    let kept_dims: Vec<usize> = keep_pos.iter().map(|&p| space.dims()[p]).collect();

    let offset_of = |digits: &[usize], strides: &[usize]| -> usize {
        digits.iter().zip(strides).map(|(&d, &s)| d * s).sum()
    };

    let mut kept_offsets = Vec::with_capacity(d_out);
    let mut digits = vec![0usize; kept_dims.len()];
    for _ in 0..d_out {
        kept_offsets.push(offset_of(&digits, &kept_strides));
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < kept_dims[k] {
                break;
            }
            digits[k] = 0;
        }
    }
    let mut traced_offsets = Vec::with_capacity(d_tr);
    let mut digits = vec![0usize; traced_dims.len()];
    for _ in 0..d_tr {
        traced_offsets.push(offset_of(&digits, &traced_strides));
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < traced_dims[k] {
                break;
            }
            digits[k] = 0;
        }
    }

    let full = rho.matrix();
    let mut out = Array2::zeros((d_out, d_out));
    for (a, &oa) in kept_offsets.iter().enumerate() {
        for (b, &ob) in kept_offsets.iter().enumerate() {
            let mut s = c(0.0, 0.0);
            for &ot in &traced_offsets {
                s += full[[oa + ot, ob + ot]];
            }
            out[[a, b]] = s;
        }
    }
    DensityMatrix::new(out_space, out)
}

impl HilbertSpace {
    fn strides(&self) -> &[usize] {
        &self.strides
    }
}

/// ⟨A⟩ = Tr(Aρ) for density matrices, ⟨v|A|v⟩ for pure states.
pub fn expectation_density(op: &Operator, rho: &DensityMatrix) -> Result<C64> {
    if *op.space() != *rho.space() {
        return Err(Error::DimensionMismatch("operator/state space mismatch".into()));
    }
    // Tr(Aρ) = Σ_ik A_ik ρ_ki
    let m = op.matrix();
    let r = rho.matrix();
    let mut s = c(0.0, 0.0);
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (k, &j) in cols.iter().enumerate() {
            s += vals[k] * r[[j, i]];
        }
    }
    Ok(s)
}

pub fn expectation_pure(op: &Operator, psi: &PureState) -> Result<C64> {
    if *op.space() != *psi.space() {
        return Err(Error::DimensionMismatch("operator/state space mismatch".into()));
    }
    let ax = op.matrix().mul_vec(psi.amplitudes().as_slice().unwrap());
    Ok(psi
        .amplitudes()
        .iter()
        .zip(&ax)
        .map(|(v, w)| v.conj() * w)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_qubit_space() -> Arc<HilbertSpace> {
        HilbertSpace::new(vec![
            SiteDescriptor {
                site: Site::Qubit(-1),
                kind: SiteKind::Qubit,
            },
            SiteDescriptor {
                site: Site::Qubit(1),
                kind: SiteKind::Qubit,
            },
        ])
        .unwrap()
    }

    #[test]
    fn sigma_z_single_site() {
        let space = HilbertSpace::new(vec![SiteDescriptor {
            site: Site::Qubit(1),
            kind: SiteKind::Qubit,
        }])
        .unwrap();
        let sz = local_embed(&space, Site::Qubit(1), &sigma_z()).unwrap();
        let d = sz.to_dense();
        assert_eq!(d[[0, 0]], c(1.0, 0.0));
        assert_eq!(d[[1, 1]], c(-1.0, 0.0));
    }

    #[test]
    fn identity_embedding_is_identity() {
        let space = two_qubit_space();
        let id2 = Array2::from_shape_fn((2, 2), |(i, j)| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let op = local_embed(&space, Site::Qubit(-1), &id2).unwrap();
        let d = op.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(d[[i, j]].re, expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sigma_minus_on_site_one_hand_kron() {
        // canonical order is (q_{-1}, q_1); lowering the j=1 qubit of |++⟩
        // lands on |+-⟩, which is index 0*2 + 1 = 1. Hand Kronecker product:
        // I ⊗ σ⁻ has its single block entry at (1, 0) within the upper-left block.
        let space = two_qubit_space();
        let op = local_embed(&space, Site::Qubit(1), &sigma_minus()).unwrap();
        let plus_plus = PureState::basis_state(space.clone(), &[0, 0]).unwrap();
        let out = op.apply(&plus_plus).unwrap();
        assert_abs_diff_eq!(out.amplitudes()[1].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            out.amplitudes().iter().map(|z| z.norm_sqr()).sum::<f64>(),
            1.0,
            epsilon = 1e-15
        );
        // lowering the j=-1 qubit instead must land on |-+⟩ = index 2
        let op2 = local_embed(&space, Site::Qubit(-1), &sigma_minus()).unwrap();
        let out2 = op2.apply(&plus_plus).unwrap();
        assert_abs_diff_eq!(out2.amplitudes()[2].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn boson_ladder_truncation_artifact() {
        let b = boson_annihilate(2).unwrap();
        assert_abs_diff_eq!(b[[0, 1]].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[[1, 2]].re, 2f64.sqrt(), epsilon = 1e-15);
        // [b, b†] = I except the top corner, which is -n_max
        let bd = b.t().mapv(|z| z.conj());
        let comm = b.dot(&bd) - bd.dot(&b);
        assert_abs_diff_eq!(comm[[0, 0]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(comm[[1, 1]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(comm[[2, 2]].re, -2.0, epsilon = 1e-14);
    }

    #[test]
    fn boson_annihilate_rejects_trivial_truncation() {
        assert!(boson_annihilate(0).is_err());
    }

    #[test]
    fn pauli_algebra() {
        let sx = sigma_x();
        let sy = sigma_y();
        let sz = sigma_z();
        let comm = sx.dot(&sy) - sy.dot(&sx);
        for i in 0..2 {
            for j in 0..2 {
                let expect = sz[[i, j]] * c(0.0, 2.0);
                assert!((comm[[i, j]] - expect).norm() < 1e-15);
            }
        }
        // σ⁻|+⟩ = |−⟩, σ⁻|−⟩ = 0
        let sm = sigma_minus();
        assert_eq!(sm[[1, 0]], c(1.0, 0.0));
        assert_eq!(sm[[0, 1]], c(0.0, 0.0));
    }

    #[test]
    fn xx_plus_yy_equals_hopping() {
        // σ_jˣσ_kˣ + σ_jʸσ_kʸ = 2(σ_j†σ_k + σ_jσ_k†) on two sites
        let space = two_qubit_space();
        let sxj = local_embed(&space, Site::Qubit(-1), &sigma_x()).unwrap();
        let sxk = local_embed(&space, Site::Qubit(1), &sigma_x()).unwrap();
        let syj = local_embed(&space, Site::Qubit(-1), &sigma_y()).unwrap();
        let syk = local_embed(&space, Site::Qubit(1), &sigma_y()).unwrap();
        let smj = local_embed(&space, Site::Qubit(-1), &sigma_minus()).unwrap();
        let smk = local_embed(&space, Site::Qubit(1), &sigma_minus()).unwrap();
        let lhs = sxj.matmul(&sxk).add(&syj.matmul(&syk));
        let hop = smj.adjoint().matmul(&smk).add(&smj.matmul(&smk.adjoint()));
        let rhs = hop.scale(c(2.0, 0.0));
        assert!(lhs.sub(&rhs).max_abs() < 1e-14);
    }

    #[test]
    fn partial_trace_bell_state_is_maximally_mixed() {
        let space = two_qubit_space();
        // (|--⟩ + |++⟩)/√2 : indices 3 and 0
        let mut amp = Array1::zeros(4);
        amp[0] = c(1.0 / 2f64.sqrt(), 0.0);
        amp[3] = c(1.0 / 2f64.sqrt(), 0.0);
        let bell = PureState::new(space.clone(), amp).unwrap();
        let rho = bell.to_density();
        let red = partial_trace(&rho, &[Site::Qubit(1)]).unwrap();
        assert_abs_diff_eq!(red.matrix()[[0, 0]].re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(red.matrix()[[1, 1]].re, 0.5, epsilon = 1e-14);
        assert!(red.matrix()[[0, 1]].norm() < 1e-14);
    }

    #[test]
    fn partial_trace_preserves_product_factors() {
        // |0⟩⟨0|_c ⊗ |ψ⟩⟨ψ| traced over the cavity leaves |ψ⟩⟨ψ|
        let space = HilbertSpace::new(vec![
            SiteDescriptor {
                site: Site::Cavity(0),
                kind: SiteKind::Boson { n_max: 2 },
            },
            SiteDescriptor {
                site: Site::Qubit(1),
                kind: SiteKind::Qubit,
            },
        ])
        .unwrap();
        let mut amp = Array1::zeros(6);
        amp[0] = c(0.6, 0.0); // |0⟩|+⟩
        amp[1] = c(0.0, 0.8); // |0⟩|−⟩
        let psi = PureState::new(space.clone(), amp).unwrap();
        let red = partial_trace(&psi.to_density(), &[Site::Qubit(1)]).unwrap();
        assert_abs_diff_eq!(red.matrix()[[0, 0]].re, 0.36, epsilon = 1e-14);
        assert_abs_diff_eq!(red.matrix()[[1, 1]].re, 0.64, epsilon = 1e-14);
        assert!((red.matrix()[[0, 1]] - c(0.0, -0.48)).norm() < 1e-14);
        // keeping everything returns the original matrix
        let full = partial_trace(&psi.to_density(), &[Site::Cavity(0), Site::Qubit(1)]).unwrap();
        assert!(full
            .matrix()
            .iter()
            .zip(psi.to_density().matrix().iter())
            .all(|(a, b)| (a - b).norm() < 1e-14));
    }

    #[test]
    fn partial_trace_rejects_empty_keep() {
        let space = two_qubit_space();
        let rho = PureState::basis_state(space, &[0, 0]).unwrap().to_density();
        assert!(matches!(
            partial_trace(&rho, &[]),
            Err(Error::EmptyKeepSet)
        ));
    }

    #[test]
    fn expectation_values() {
        let space = two_qubit_space();
        let minus_minus = PureState::basis_state(space.clone(), &[1, 1]).unwrap();
        let id = Operator::identity(space.clone());
        assert_abs_diff_eq!(
            expectation_pure(&id, &minus_minus).unwrap().re,
            1.0,
            epsilon = 1e-14
        );
        let sz1 = local_embed(&space, Site::Qubit(1), &sigma_z()).unwrap();
        assert_abs_diff_eq!(
            expectation_pure(&sz1, &minus_minus).unwrap().re,
            -1.0,
            epsilon = 1e-14
        );
        let rho = minus_minus.to_density();
        assert_abs_diff_eq!(
            expectation_density(&sz1, &rho).unwrap().re,
            -1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn embed_pair_matches_kron_for_adjacent_sites() {
        let space = two_qubit_space();
        let op = {
            // σ⁻ ⊗ σ⁺ on (q_{-1}, q_1)
            let sm = sigma_minus();
            let sp = sm.t().mapv(|z| z.conj());
            let mut out = Array2::zeros((4, 4));
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            out[[i * 2 + k, j * 2 + l]] = sm[[i, j]] * sp[[k, l]];
                        }
                    }
                }
            }
            out
        };
        let via_pair = embed_pair(&space, Site::Qubit(-1), Site::Qubit(1), &op).unwrap();
        let a = local_embed(&space, Site::Qubit(-1), &sigma_minus()).unwrap();
        let bp = local_embed(&space, Site::Qubit(1), &sigma_minus())
            .unwrap()
            .adjoint();
        let via_mul = a.matmul(&bp);
        assert!(via_pair.sub(&via_mul).max_abs() < 1e-14);
    }
}
