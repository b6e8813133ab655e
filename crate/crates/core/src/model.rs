//! Model construction for the four array topologies.
//!
//! Each model has a single lossy central element. `Ccq`/`Scq` are
//! chains/stars of cavities where every non-central cavity carries a
//! qubit; `Cq`/`Sq` are chains/stars of qubits around one central
//! cavity. Couplings are symmetric and detunings antisymmetric under
//! j ↔ −j; that chirality is what stabilizes the paired steady state.
//!
//! All rates and frequencies are in units of κ and ħ = 1.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    boson_annihilate, local_embed, sigma_minus, sigma_z, HilbertSpace, Operator, PureState, Site,
    SiteDescriptor, SiteKind,
};

/// Largest space for which the squeezing unitary is constructed.
/// The unitary is validation-only; production runs stay in the
/// squeezed representation.
pub const SQUEEZE_UNITARY_DIM_CAP: usize = 4096;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Topology {
    Ccq,
    Scq,
    Cq,
    Sq,
}

impl Topology {
    pub fn has_outer_cavities(&self) -> bool {
        matches!(self, Topology::Ccq | Topology::Scq)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Original,
    Squeezed,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisorderTarget {
    Detunings,
    Couplings,
}

/// Ensemble of multiplicative parameter perturbations, drawn uniformly
/// from [−r_max, r_max] independently for the left and right element of
/// every pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderSpec {
    pub r_max: f64,
    pub targets: Vec<DisorderTarget>,
    pub seed: u64,
    pub realizations: usize,
}

/// Fully resolved per-side parameter values produced by disorder draws.
/// `plus`/`minus` are final values (signs included) for +j and −j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideValues {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_c: Option<SideValues>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_q: Option<SideValues>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g: Option<SideValues>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta_c: Option<SideValues>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta_q: Option<SideValues>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.delta_c.is_none()
            && self.delta_q.is_none()
            && self.g.is_none()
            && self.eta_c.is_none()
            && self.eta_q.is_none()
    }
}

/// Full description of one model instance.
///
/// Parameter arrays hold values for j = 1..N; the builders apply the
/// ± sign convention (detunings antisymmetric, couplings symmetric),
/// so the chirality cannot be mis-specified. `eta_q` holds the qubit
/// hoppings η_{q,j} for j = 2..N (index j−2). `n_max` is indexed by
/// |j| for `Ccq`/`Scq` (length N+1) and holds the single central
/// truncation for `Cq`/`Sq`. Setting every n_max to 1 selects the
/// qubit-only reduction, which replaces each cavity by a companion
/// qubit and requires the squeezed representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub topology: Topology,
    #[serde(rename = "N")]
    pub n_pairs: usize,
    pub n_bar: f64,
    pub kappa: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta_c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta_q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub g: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta_c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta_q: Vec<f64>,
    pub n_max: Vec<usize>,
    pub representation: Representation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderSpec>,
    /// Resolved per-side values from a disorder draw; absent for the
    /// symmetric configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Overrides>,
    /// Which realization produced the overrides (provenance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization: Option<usize>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_pairs;
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if n < 1 {
            return fail("need at least one pair (N >= 1)".into());
        }
        if !(self.kappa > 0.0) {
            return fail(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.gamma >= 0.0) {
            return fail(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.n_bar >= 0.0) {
            return fail(format!("n_bar must be >= 0, got {}", self.n_bar));
        }
        let expect_len = |name: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                Err(Error::InvalidSpec(format!(
                    "{name} has length {got}, topology {:?} with N={n} needs {want}",
                    self.topology
                )))
            } else {
                Ok(())
            }
        };
        match self.topology {
            Topology::Ccq | Topology::Scq => {
                expect_len("delta_c", self.delta_c.len(), n)?;
                expect_len("g", self.g.len(), n)?;
                expect_len("eta_c", self.eta_c.len(), n)?;
                expect_len("delta_q", self.delta_q.len(), 0)?;
                expect_len("eta_q", self.eta_q.len(), 0)?;
                expect_len("n_max", self.n_max.len(), n + 1)?;
            }
            Topology::Cq => {
                expect_len("delta_q", self.delta_q.len(), n)?;
                expect_len("g", self.g.len(), 1)?;
                expect_len("eta_q", self.eta_q.len(), n - 1)?;
                expect_len("delta_c", self.delta_c.len(), 0)?;
                expect_len("eta_c", self.eta_c.len(), 0)?;
                expect_len("n_max", self.n_max.len(), 1)?;
            }
            Topology::Sq => {
                expect_len("delta_q", self.delta_q.len(), n)?;
                expect_len("g", self.g.len(), n)?;
                expect_len("delta_c", self.delta_c.len(), 0)?;
                expect_len("eta_c", self.eta_c.len(), 0)?;
                expect_len("eta_q", self.eta_q.len(), 0)?;
                expect_len("n_max", self.n_max.len(), 1)?;
            }
        }
        if self.n_max.iter().any(|&m| m < 1) {
            return fail("every cavity needs n_max >= 1".into());
        }
        if self.n_max.iter().all(|&m| m == 1) && self.representation == Representation::Original {
            return fail(
                "the qubit-only reduction (all n_max = 1) exists only in the squeezed representation"
                    .into(),
            );
        }
        if let Some(d) = &self.disorder {
            if !(d.r_max >= 0.0 && d.r_max < 1.0) {
                return fail(format!(
                    "disorder r_max must lie in [0, 1) to preserve signs, got {}",
                    d.r_max
                ));
            }
            if d.realizations < 1 {
                return fail("disorder needs at least one realization".into());
            }
            if d.targets.is_empty() {
                return fail("disorder needs a non-empty target set".into());
            }
        }
        Ok(())
    }

    /// All truncations equal to one selects the §-style qubit-only models.
    pub fn is_qubit_only(&self) -> bool {
        self.representation == Representation::Squeezed && self.n_max.iter().all(|&m| m == 1)
    }

    pub fn n_max_at(&self, j: i32) -> usize {
        match self.topology {
            Topology::Ccq | Topology::Scq => self.n_max[j.unsigned_abs() as usize],
            Topology::Cq | Topology::Sq => self.n_max[0],
        }
    }

    fn side(values: &Option<SideValues>, j: i32, default: f64, idx: usize) -> f64 {
        match values {
            Some(sv) => {
                if j > 0 {
                    sv.plus[idx]
                } else {
                    sv.minus[idx]
                }
            }
            None => default,
        }
    }

    /// Signed cavity detuning at position j (antisymmetric by default).
    pub fn delta_c_at(&self, j: i32) -> f64 {
        if j == 0 || !self.topology.has_outer_cavities() {
            return 0.0;
        }
        let idx = (j.unsigned_abs() - 1) as usize;
        let default = (j.signum() as f64) * self.delta_c[idx];
        Self::side(
            &self.overrides.as_ref().and_then(|o| o.delta_c.clone()),
            j,
            default,
            idx,
        )
    }

    /// Signed qubit detuning at position j (antisymmetric by default).
    pub fn delta_q_at(&self, j: i32) -> f64 {
        if j == 0 || self.topology.has_outer_cavities() {
            return 0.0;
        }
        let idx = (j.unsigned_abs() - 1) as usize;
        let default = (j.signum() as f64) * self.delta_q[idx];
        Self::side(
            &self.overrides.as_ref().and_then(|o| o.delta_q.clone()),
            j,
            default,
            idx,
        )
    }

    /// Jaynes-Cummings strength for the element at position j
    /// (symmetric by default).
    pub fn g_at(&self, j: i32) -> f64 {
        let idx = match self.topology {
            Topology::Cq => 0,
            _ => (j.unsigned_abs() - 1) as usize,
        };
        Self::side(
            &self.overrides.as_ref().and_then(|o| o.g.clone()),
            j,
            self.g[idx],
            idx,
        )
    }

    pub fn eta_c_at(&self, j: i32) -> f64 {
        let idx = (j.unsigned_abs() - 1) as usize;
        Self::side(
            &self.overrides.as_ref().and_then(|o| o.eta_c.clone()),
            j,
            self.eta_c[idx],
            idx,
        )
    }

    pub fn eta_q_at(&self, j: i32) -> f64 {
        let idx = (j.unsigned_abs() - 2) as usize;
        Self::side(
            &self.overrides.as_ref().and_then(|o| o.eta_q.clone()),
            j,
            self.eta_q[idx],
            idx,
        )
    }
}

/// Topology-dependent phase of the |++⟩ component of each pair;
/// χ₀ = 1 always, and χ depends on |j| only.
pub fn chi(j: i32, topology: Topology) -> f64 {
    let j = j.unsigned_abs();
    if j == 0 {
        return 1.0;
    }
    match topology {
        Topology::Ccq => {
            if j % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        Topology::Cq => {
            if j % 2 == 0 {
                -1.0
            } else {
                1.0
            }
        }
        Topology::Scq => -1.0,
        Topology::Sq => 1.0,
    }
}

/// Canonical Hilbert space for a model instance: sites ordered by
/// ascending j, cavity before its qubit at shared positions.
pub fn build_space(spec: &ModelSpec) -> Result<Arc<HilbertSpace>> {
    spec.validate()?;
    let qubit_only = spec.is_qubit_only();
    let cavity_kind = |j: i32| -> SiteKind {
        if qubit_only {
            SiteKind::CompanionQubit
        } else {
            SiteKind::Boson {
                n_max: spec.n_max_at(j),
            }
        }
    };
    let n = spec.n_pairs as i32;
    let mut sites = Vec::new();
    match spec.topology {
        Topology::Ccq | Topology::Scq => {
            for j in -n..=n {
                sites.push(SiteDescriptor {
                    site: Site::Cavity(j),
                    kind: cavity_kind(j),
                });
                if j != 0 {
                    sites.push(SiteDescriptor {
                        site: Site::Qubit(j),
                        kind: SiteKind::Qubit,
                    });
                }
            }
        }
        Topology::Cq | Topology::Sq => {
            for j in -n..0 {
                sites.push(SiteDescriptor {
                    site: Site::Qubit(j),
                    kind: SiteKind::Qubit,
                });
            }
            sites.push(SiteDescriptor {
                site: Site::Cavity(0),
                kind: cavity_kind(0),
            });
            for j in 1..=n {
                sites.push(SiteDescriptor {
                    site: Site::Qubit(j),
                    kind: SiteKind::Qubit,
                });
            }
        }
    }
    HilbertSpace::new(sites)
}

/// Canonical space of the qubit subregister alone (no cavities).
pub fn qubit_space(spec: &ModelSpec) -> Result<Arc<HilbertSpace>> {
    spec.validate()?;
    let n = spec.n_pairs as i32;
    let sites = (-n..=n)
        .filter(|&j| j != 0)
        .map(|j| SiteDescriptor {
            site: Site::Qubit(j),
            kind: SiteKind::Qubit,
        })
        .collect();
    HilbertSpace::new(sites)
}

/// Lowering operator of the mode at `Site::Cavity(j)`: the truncated
/// boson annihilator, or σ_{c,j} for a companion qubit.
fn mode_lowering(space: &Arc<HilbertSpace>, j: i32) -> Result<Operator> {
    let site = Site::Cavity(j);
    match space.kind_of(site)? {
        SiteKind::Boson { n_max } => local_embed(space, site, &boson_annihilate(n_max)?),
        SiteKind::CompanionQubit | SiteKind::Qubit => local_embed(space, site, &sigma_minus()),
    }
}

fn qubit_lowering(space: &Arc<HilbertSpace>, j: i32) -> Result<Operator> {
    local_embed(space, Site::Qubit(j), &sigma_minus())
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// a†b + b†a (the Hermitian hopping pair), as an Operator sum helper.
fn hermitian_pair(term: &Operator) -> Operator {
    term.add(&term.adjoint())
}

/// Collective qubit operator τ_j = √(n̄+1) σ_j + χ_j √n̄ σ_{−j}†, embedded
/// on `space` (which must contain both qubits of the pair).
pub fn tau_on(space: &Arc<HilbertSpace>, spec: &ModelSpec, j: i32) -> Result<Operator> {
    if j == 0 || j.unsigned_abs() as usize > spec.n_pairs {
        return Err(Error::InvalidSpec(format!(
            "tau_j needs 1 <= |j| <= N, got j={j}"
        )));
    }
    let sp = (spec.n_bar + 1.0).sqrt();
    let sm = spec.n_bar.sqrt();
    let x = chi(j, spec.topology);
    let a = qubit_lowering(space, j)?.scale(re(sp));
    let b = qubit_lowering(space, -j)?.adjoint().scale(re(x * sm));
    Ok(a.add(&b))
}

/// τ_j on the model's full space.
pub fn tau_operator(spec: &ModelSpec, j: i32) -> Result<Operator> {
    let space = build_space(spec)?;
    tau_on(&space, spec, j)
}

/// The Hamiltonian parts shared by both representations: cavity-only
/// terms (Ccq/Scq) and qubit-only terms (Cq/Sq).
fn hamiltonian_free_parts(spec: &ModelSpec, space: &Arc<HilbertSpace>) -> Result<Operator> {
    let n = spec.n_pairs as i32;
    let mut h = Operator::zero(space.clone());
    match spec.topology {
        Topology::Ccq => {
            for j in 1..=n {
                for z in [1i32, -1] {
                    let jj = z * j;
                    let b = mode_lowering(space, jj)?;
                    let number = b.adjoint().matmul(&b);
                    h = h.add(&number.scale(re(spec.delta_c_at(jj))));
                    let prev = mode_lowering(space, z * (j - 1))?;
                    let hop = b.adjoint().matmul(&prev).scale(re(spec.eta_c_at(jj)));
                    h = h.add(&hermitian_pair(&hop));
                }
            }
        }
        Topology::Scq => {
            let b0 = mode_lowering(space, 0)?;
            for j in 1..=n {
                for z in [1i32, -1] {
                    let jj = z * j;
                    let b = mode_lowering(space, jj)?;
                    let number = b.adjoint().matmul(&b);
                    h = h.add(&number.scale(re(spec.delta_c_at(jj))));
                    let hop = b0.adjoint().matmul(&b).scale(re(spec.eta_c_at(jj)));
                    h = h.add(&hermitian_pair(&hop));
                }
            }
        }
        Topology::Cq => {
            for j in 1..=n {
                for z in [1i32, -1] {
                    let jj = z * j;
                    let sz = local_embed(space, Site::Qubit(jj), &sigma_z())?;
                    h = h.add(&sz.scale(re(spec.delta_q_at(jj) / 2.0)));
                }
            }
            for j in 2..=n {
                for z in [1i32, -1] {
                    let jj = z * j;
                    let s = qubit_lowering(space, jj)?;
                    let prev = qubit_lowering(space, z * (j - 1))?;
                    let hop = s.adjoint().matmul(&prev).scale(re(spec.eta_q_at(jj)));
                    h = h.add(&hermitian_pair(&hop));
                }
            }
        }
        Topology::Sq => {
            for j in 1..=n {
                for z in [1i32, -1] {
                    let jj = z * j;
                    let sz = local_embed(space, Site::Qubit(jj), &sigma_z())?;
                    h = h.add(&sz.scale(re(spec.delta_q_at(jj) / 2.0)));
                }
            }
        }
    }
    Ok(h)
}

/// Jaynes-Cummings interaction with the qubit operator produced by `qop`,
/// which maps a qubit index to σ_j (original) or τ_j (squeezed).
fn hamiltonian_interaction(
    spec: &ModelSpec,
    space: &Arc<HilbertSpace>,
    qop: &dyn Fn(i32) -> Result<Operator>,
) -> Result<Operator> {
    let n = spec.n_pairs as i32;
    let mut h = Operator::zero(space.clone());
    match spec.topology {
        Topology::Ccq | Topology::Scq => {
            for j in 1..=n {
                for z in [1i32, -1] {
                    let jj = z * j;
                    let b = mode_lowering(space, jj)?;
                    let term = b.adjoint().matmul(&qop(jj)?).scale(re(spec.g_at(jj)));
                    h = h.add(&hermitian_pair(&term));
                }
            }
        }
        Topology::Cq => {
            let b0 = mode_lowering(space, 0)?;
            for z in [1i32, -1] {
                let term = b0.adjoint().matmul(&qop(z)?).scale(re(spec.g_at(z)));
                h = h.add(&hermitian_pair(&term));
            }
        }
        Topology::Sq => {
            let b0 = mode_lowering(space, 0)?;
            for j in 1..=n {
                for z in [1i32, -1] {
                    let jj = z * j;
                    let term = b0.adjoint().matmul(&qop(jj)?).scale(re(spec.g_at(jj)));
                    h = h.add(&hermitian_pair(&term));
                }
            }
        }
    }
    Ok(h)
}

/// Hamiltonian in the original representation (Jaynes-Cummings with σ).
pub fn build_hamiltonian_original(spec: &ModelSpec) -> Result<Operator> {
    if spec.representation != Representation::Original {
        return Err(Error::InvalidSpec(
            "build_hamiltonian_original needs representation = original".into(),
        ));
    }
    let space = build_space(spec)?;
    let free = hamiltonian_free_parts(spec, &space)?;
    let int = hamiltonian_interaction(spec, &space, &|j| qubit_lowering(&space, j))?;
    let h = free.add(&int);
    h.assert_hermitian(1e-12)?;
    Ok(h)
}

/// Hamiltonian in the squeezed representation: the free parts are
/// unchanged and the Jaynes-Cummings terms couple to τ_j instead of σ_j.
/// With every n_max = 1 this is the qubit-only model (b_j → σ_{c,j}).
pub fn build_hamiltonian_squeezed(spec: &ModelSpec) -> Result<Operator> {
    if spec.representation != Representation::Squeezed {
        return Err(Error::InvalidSpec(
            "build_hamiltonian_squeezed needs representation = squeezed".into(),
        ));
    }
    let space = build_space(spec)?;
    let free = hamiltonian_free_parts(spec, &space)?;
    let int = hamiltonian_interaction(spec, &space, &|j| tau_on(&space, spec, j))?;
    let h = free.add(&int);
    h.assert_hermitian(1e-12)?;
    Ok(h)
}

/// Qubit-only Hamiltonian (all n_max = 1): the squeezed-representation
/// Hamiltonian under the substitution b_j → σ_{c,j}.
pub fn build_hamiltonian_qubit_only(spec: &ModelSpec) -> Result<Operator> {
    if !spec.is_qubit_only() {
        return Err(Error::InvalidSpec(
            "qubit-only construction needs all n_max = 1 in the squeezed representation".into(),
        ));
    }
    build_hamiltonian_squeezed(spec)
}

/// Interaction part alone (H_{c−q} or its squeezed form), used for the
/// annihilation checks.
pub fn build_interaction(spec: &ModelSpec) -> Result<Operator> {
    let space = build_space(spec)?;
    match spec.representation {
        Representation::Original => {
            hamiltonian_interaction(spec, &space, &|j| qubit_lowering(&space, j))
        }
        Representation::Squeezed => {
            hamiltonian_interaction(spec, &space, &|j| tau_on(&space, spec, j))
        }
    }
}

/// Free qubit part H_q (non-zero for Cq/Sq), on the qubit subregister.
pub fn qubit_hamiltonian_on_register(spec: &ModelSpec) -> Result<Operator> {
    let space = qubit_space(spec)?;
    let n = spec.n_pairs as i32;
    let mut h = Operator::zero(space.clone());
    if spec.topology.has_outer_cavities() {
        return Ok(h);
    }
    for j in 1..=n {
        for z in [1i32, -1] {
            let jj = z * j;
            let sz = local_embed(&space, Site::Qubit(jj), &sigma_z())?;
            h = h.add(&sz.scale(re(spec.delta_q_at(jj) / 2.0)));
        }
    }
    if spec.topology == Topology::Cq {
        for j in 2..=n {
            for z in [1i32, -1] {
                let jj = z * j;
                let s = qubit_lowering(&space, jj)?;
                let prev = qubit_lowering(&space, z * (j - 1))?;
                let hop = s.adjoint().matmul(&prev).scale(re(spec.eta_q_at(jj)));
                h = h.add(&hermitian_pair(&hop));
            }
        }
    }
    Ok(h)
}

/// Build the dispatching Hamiltonian for the spec's representation.
pub fn build_hamiltonian(spec: &ModelSpec) -> Result<Operator> {
    match spec.representation {
        Representation::Original => build_hamiltonian_original(spec),
        Representation::Squeezed => build_hamiltonian_squeezed(spec),
    }
}

/// One Lindblad channel. The engine-wide convention is
/// dρ/dt ⊇ rate · (AρA† − ½{A†A, ρ}); the master equation's (κ/2)·2
/// prefactor and the dephasing γ map onto `rate` at build time.
#[derive(Clone, Debug)]
pub struct JumpOperator {
    pub op: Operator,
    pub rate: f64,
}

/// Jump operators: the central-mode loss channel, plus one σᶻ dephasing
/// channel per non-central qubit when γ > 0.
pub fn build_jump_operators(spec: &ModelSpec) -> Result<Vec<JumpOperator>> {
    let space = build_space(spec)?;
    let mut jumps = Vec::new();
    let central = match spec.representation {
        Representation::Original => {
            // β₀ = √(n̄+1) b₀ − √n̄ b₀†
            let b0 = mode_lowering(&space, 0)?;
            let sp = (spec.n_bar + 1.0).sqrt();
            let sm = spec.n_bar.sqrt();
            b0.scale(re(sp)).sub(&b0.adjoint().scale(re(sm)))
        }
        Representation::Squeezed => mode_lowering(&space, 0)?,
    };
    jumps.push(JumpOperator {
        op: central,
        rate: spec.kappa,
    });
    if spec.gamma > 0.0 {
        let n = spec.n_pairs as i32;
        for j in -n..=n {
            if j == 0 {
                continue;
            }
            jumps.push(JumpOperator {
                op: local_embed(&space, Site::Qubit(j), &sigma_z())?,
                rate: spec.gamma,
            });
        }
    }
    Ok(jumps)
}

/// Pair coefficients of the analytic steady state:
/// a = √((n̄+1)/(2n̄+1)) on |−−⟩ and −χ_j b with b = √(n̄/(2n̄+1)) on |++⟩.
pub fn pair_amplitudes(n_bar: f64) -> (f64, f64) {
    let denom = 2.0 * n_bar + 1.0;
    (((n_bar + 1.0) / denom).sqrt(), (n_bar / denom).sqrt())
}

/// Product-of-pairs steady state of the qubits, on the qubit subregister.
pub fn analytic_qubit_state(spec: &ModelSpec) -> Result<PureState> {
    let space = qubit_space(spec)?;
    analytic_qubit_amplitudes(spec, &space)
}

fn analytic_qubit_amplitudes(spec: &ModelSpec, space: &Arc<HilbertSpace>) -> Result<PureState> {
    let (a, b) = pair_amplitudes(spec.n_bar);
    let n = spec.n_pairs as i32;
    let dim = space.total_dim();
    let mut amp = Array1::zeros(dim);
    let pair_positions: Vec<(usize, usize, f64)> = (1..=n)
        .map(|j| {
            Ok((
                space.position_of(Site::Qubit(j))?,
                space.position_of(Site::Qubit(-j))?,
                chi(j, spec.topology),
            ))
        })
        .collect::<Result<_>>()?;
    for idx in 0..dim {
        let digits = space.digits(idx);
        let mut v = 1.0;
        let mut nonzero = true;
        for &(pj, pm, x) in &pair_positions {
            match (digits[pj], digits[pm]) {
                (1, 1) => v *= a,
                (0, 0) => v *= -x * b,
                _ => {
                    nonzero = false;
                    break;
                }
            }
        }
        if nonzero {
            amp[idx] = re(v);
        }
    }
    PureState::new(space.clone(), amp)
}

/// Analytic steady state on the full model space. In the squeezed
/// representation the cavities are in vacuum (companion qubits in |−⟩);
/// in the original representation the squeezing unitary is applied.
pub fn analytic_full_state(spec: &ModelSpec) -> Result<PureState> {
    let space = build_space(spec)?;
    let (a, b) = pair_amplitudes(spec.n_bar);
    let n = spec.n_pairs as i32;
    let dim = space.total_dim();
    let mut amp = Array1::zeros(dim);

    let mut pair_positions = Vec::new();
    for j in 1..=n {
        pair_positions.push((
            space.position_of(Site::Qubit(j))?,
            space.position_of(Site::Qubit(-j))?,
            chi(j, spec.topology),
        ));
    }
    let cavity_ground: Vec<(usize, usize)> = space
        .sites()
        .iter()
        .enumerate()
        .filter_map(|(p, s)| match (s.site, s.kind) {
            (Site::Cavity(_), SiteKind::Boson { .. }) => Some((p, 0)),
            (Site::Cavity(_), SiteKind::CompanionQubit) => Some((p, 1)),
            _ => None,
        })
        .collect();

    for idx in 0..dim {
        let digits = space.digits(idx);
        if cavity_ground.iter().any(|&(p, d)| digits[p] != d) {
            continue;
        }
        let mut v = 1.0;
        let mut nonzero = true;
        for &(pj, pm, x) in &pair_positions {
            match (digits[pj], digits[pm]) {
                (1, 1) => v *= a,
                (0, 0) => v *= -x * b,
                _ => {
                    nonzero = false;
                    break;
                }
            }
        }
        if nonzero {
            amp[idx] = re(v);
        }
    }
    let squeezed = PureState::new(space.clone(), amp)?;
    match spec.representation {
        Representation::Squeezed => Ok(squeezed),
        Representation::Original => {
            let u = squeeze_unitary(spec)?;
            // U_c rotates the cavity vacuum into the squeezed steady state
            Ok(u.apply(&squeezed)?.normalized())
        }
    }
}

/// exp(G) for an anti-Hermitian generator G, via the eigendecomposition
/// of iG.
fn exp_antihermitian(g: &Array2<C64>) -> Result<Array2<C64>> {
    let i = C64::new(0.0, 1.0);
    let herm = g.mapv(|z| i * z);
    let (w, v) = herm
        .eigh(UPLO::Lower)
        .map_err(|e| Error::SolverFailure(format!("eigh in matrix exponential: {e}")))?;
    // exp(G) = V exp(−i w) V†
    let phase = Array1::from_iter(w.iter().map(|&x| (-i * x).exp()));
    let mut out = Array2::zeros(g.dim());
    for a in 0..g.nrows() {
        for bcol in 0..g.ncols() {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..g.nrows() {
                s += v[[a, k]] * phase[k] * v[[bcol, k]].conj();
            }
            out[[a, bcol]] = s;
        }
    }
    Ok(out)
}

/// Squeezing strength r with tanh r = √(n̄/(n̄+1)), i.e. cosh r = √(n̄+1).
pub fn squeeze_parameter(n_bar: f64) -> f64 {
    ((n_bar + 1.0).sqrt() + n_bar.sqrt()).ln()
}

/// The unitary U_c generating the cavity steady state: a single-mode
/// squeezer on the central cavity, and for Ccq/Scq additionally one
/// two-mode squeezer per cavity pair. Validation-only; accuracy is
/// limited by the Fock truncation.
pub fn squeeze_unitary(spec: &ModelSpec) -> Result<Operator> {
    let space = build_space(spec)?;
    if spec.is_qubit_only() {
        return Err(Error::InvalidSpec(
            "the squeezing unitary involves cavity modes; qubit-only models have none".into(),
        ));
    }
    if space.total_dim() > SQUEEZE_UNITARY_DIM_CAP {
        return Err(Error::DimensionCap(format!(
            "squeeze_unitary is validation-only and capped at dimension {}, space has {}",
            SQUEEZE_UNITARY_DIM_CAP,
            space.total_dim()
        )));
    }
    let r = squeeze_parameter(spec.n_bar);

    // single-mode factor on the central cavity: exp(r/2 (b†² − b²))
    let n0 = spec.n_max_at(0);
    let b0 = boson_annihilate(n0)?;
    let b0d = b0.t().mapv(|z| z.conj());
    let gen0 = (b0d.dot(&b0d) - b0.dot(&b0)).mapv(|z| z * re(r / 2.0));
    let u0 = exp_antihermitian(&gen0)?;
    let mut u = local_embed(&space, Site::Cavity(0), &u0)?;

    if spec.topology.has_outer_cavities() {
        for j in 1..=spec.n_pairs as i32 {
            // two-mode factor exp(χ_j r (b_j† b_{−j}† − b_j b_{−j}))
            let nj = spec.n_max_at(j);
            let nm = spec.n_max_at(-j);
            let bj = boson_annihilate(nj)?;
            let bm = boson_annihilate(nm)?;
            let dj = nj + 1;
            let dm = nm + 1;
            let mut lower = Array2::zeros((dj * dm, dj * dm));
            for a1 in 0..dj {
                for a2 in 0..dj {
                    for c1 in 0..dm {
                        for c2 in 0..dm {
                            lower[[a1 * dm + c1, a2 * dm + c2]] = bj[[a1, a2]] * bm[[c1, c2]];
                        }
                    }
                }
            }
            let raise = lower.t().mapv(|z| z.conj());
            let x = chi(j, spec.topology);
            let gen = (raise - lower).mapv(|z| z * re(x * r));
            let upair = exp_antihermitian(&gen)?;
            let embedded =
                crate::hilbert::embed_pair(&space, Site::Cavity(j), Site::Cavity(-j), &upair)?;
            u = u.matmul(&embedded);
        }
    }
    Ok(u)
}

/// Default initial state: cavity vacuum (companion qubits in |−⟩) and
/// every qubit in the σᶻ = −1 eigenstate.
pub fn default_initial_state(spec: &ModelSpec) -> Result<PureState> {
    let space = build_space(spec)?;
    let digits: Vec<usize> = space
        .sites()
        .iter()
        .map(|s| match s.kind {
            SiteKind::Boson { .. } => 0,
            SiteKind::Qubit | SiteKind::CompanionQubit => 1,
        })
        .collect();
    PureState::basis_state(space, &digits)
}

/// Draw one disorder realization: multiplicative perturbations
/// (1 + r) with r uniform in [−r_max, r_max], independent for the
/// left and right member of every pair. Deterministic in
/// (seed, realization_index); realization streams are independent.
pub fn apply_disorder(spec: &ModelSpec, realization_index: usize) -> Result<ModelSpec> {
    spec.validate()?;
    let disorder = spec
        .disorder
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("apply_disorder needs a disorder block".into()))?;
    if realization_index >= disorder.realizations {
        return Err(Error::InvalidSpec(format!(
            "realization index {realization_index} out of range (realizations = {})",
            disorder.realizations
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(disorder.seed);
    rng.set_stream(realization_index as u64);
    let dist = Uniform::new_inclusive(-disorder.r_max, disorder.r_max);
    let mut draw = || dist.sample(&mut rng);

    let n = spec.n_pairs;
    let mut overrides = Overrides::default();

    // draw order is fixed: detunings first, then g, then eta;
    // within each group j = 1..N, right (+j) before left (−j)
    if disorder.targets.contains(&DisorderTarget::Detunings) {
        if spec.topology.has_outer_cavities() {
            let mut plus = Vec::with_capacity(n);
            let mut minus = Vec::with_capacity(n);
            for j in 0..n {
                plus.push(spec.delta_c[j] * (1.0 + draw()));
                minus.push(-spec.delta_c[j] * (1.0 + draw()));
            }
            overrides.delta_c = Some(SideValues { plus, minus });
        } else {
            let mut plus = Vec::with_capacity(n);
            let mut minus = Vec::with_capacity(n);
            for j in 0..n {
                plus.push(spec.delta_q[j] * (1.0 + draw()));
                minus.push(-spec.delta_q[j] * (1.0 + draw()));
            }
            overrides.delta_q = Some(SideValues { plus, minus });
        }
    }
    if disorder.targets.contains(&DisorderTarget::Couplings) {
        let g_len = spec.g.len();
        let mut plus = Vec::with_capacity(g_len);
        let mut minus = Vec::with_capacity(g_len);
        for j in 0..g_len {
            plus.push(spec.g[j] * (1.0 + draw()));
            minus.push(spec.g[j] * (1.0 + draw()));
        }
        overrides.g = Some(SideValues { plus, minus });
        if spec.topology.has_outer_cavities() {
            let mut plus = Vec::with_capacity(n);
            let mut minus = Vec::with_capacity(n);
            for j in 0..n {
                plus.push(spec.eta_c[j] * (1.0 + draw()));
                minus.push(spec.eta_c[j] * (1.0 + draw()));
            }
            overrides.eta_c = Some(SideValues { plus, minus });
        } else if spec.topology == Topology::Cq && n >= 2 {
            let mut plus = Vec::with_capacity(n - 1);
            let mut minus = Vec::with_capacity(n - 1);
            for j in 0..n - 1 {
                plus.push(spec.eta_q[j] * (1.0 + draw()));
                minus.push(spec.eta_q[j] * (1.0 + draw()));
            }
            overrides.eta_q = Some(SideValues { plus, minus });
        }
    }

    let mut out = spec.clone();
    out.overrides = Some(overrides);
    out.realization = Some(realization_index);
    Ok(out)
}

/// Ready-made specs with representative parameters, shared by the test
/// suites across the crate.
#[doc(hidden)]
pub mod tests_support {
    use super::*;

    pub fn cq_spec(n_pairs: usize, n_bar: f64) -> ModelSpec {
        ModelSpec {
            topology: Topology::Cq,
            n_pairs,
            n_bar,
            kappa: 1.0,
            gamma: 0.0,
            delta_c: vec![],
            delta_q: (0..n_pairs).map(|k| 0.197 + 0.05 * k as f64).collect(),
            g: vec![0.36],
            eta_c: vec![],
            eta_q: (0..n_pairs.saturating_sub(1)).map(|k| 0.362 + 0.002 * k as f64).collect(),
            n_max: vec![2],
            representation: Representation::Squeezed,
            disorder: None,
            overrides: None,
            realization: None,
        }
    }

    pub fn sq_spec(n_pairs: usize, n_bar: f64) -> ModelSpec {
        ModelSpec {
            topology: Topology::Sq,
            n_pairs,
            n_bar,
            kappa: 1.0,
            gamma: 0.0,
            delta_c: vec![],
            delta_q: (0..n_pairs).map(|k| 1.3 + 0.05 * k as f64).collect(),
            g: (0..n_pairs).map(|k| 0.36 + 0.002 * k as f64).collect(),
            eta_c: vec![],
            eta_q: vec![],
            n_max: vec![2],
            representation: Representation::Squeezed,
            disorder: None,
            overrides: None,
            realization: None,
        }
    }

    pub fn ccq_spec(n_pairs: usize, n_bar: f64) -> ModelSpec {
        ModelSpec {
            topology: Topology::Ccq,
            n_pairs,
            n_bar,
            kappa: 1.0,
            gamma: 0.0,
            delta_c: (0..n_pairs).map(|k| 0.26 + 0.05 * k as f64).collect(),
            delta_q: vec![],
            g: (0..n_pairs).map(|k| 0.36 + 0.002 * k as f64).collect(),
            eta_c: (0..n_pairs).map(|k| 0.36 + 0.01 * k as f64).collect(),
            eta_q: vec![],
            n_max: {
                let mut v = vec![2];
                v.extend(std::iter::repeat(1).take(n_pairs));
                v
            },
            representation: Representation::Squeezed,
            disorder: None,
            overrides: None,
            realization: None,
        }
    }

    pub fn scq_spec(n_pairs: usize, n_bar: f64) -> ModelSpec {
        ModelSpec {
            topology: Topology::Scq,
            ..ccq_spec(n_pairs, n_bar)
        }
    }
}
