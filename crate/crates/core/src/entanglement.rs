//! Pairwise entanglement: two-qubit reductions and Wootters concurrence.
//!
//! C(ρ) = max(0, λ₁ − λ₂ − λ₃ − λ₄) with λᵢ the descending square roots
//! of the eigenvalues of ρ·ρ̃, ρ̃ = (σʸ⊗σʸ) ρ* (σʸ⊗σʸ). The λᵢ are
//! computed from the Hermitian form √ρ ρ̃ √ρ, which has the same
//! spectrum as ρρ̃; mixed states always go through the full spin-flip
//! spectrum (no pure-state shortcut), so dephased steady states are
//! handled uniformly.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::{partial_trace, DensityMatrix, PureState, Site, SiteKind};

/// Negative eigenvalue round-off clamped to zero; anything more
/// negative than this (relative to the matrix scale) is a genuinely
/// invalid input.
pub const PSD_CLAMP: f64 = 1e-12;

fn cx(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Cyclic Jacobi eigensolve for small Hermitian matrices. Returns
/// eigenvalues (unsorted) and accumulated eigenvectors as columns.
fn jacobi_eigh(a: &Array2<C64>) -> (Vec<f64>, Array2<C64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| if i == j { cx(1.0, 0.0) } else { cx(0.0, 0.0) });
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[[p, q]].norm());
            }
        }
        if off < 1e-15 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.norm() < 1e-18 {
                    continue;
                }
                // unitary 2x2 rotation diagonalizing the (p,q) block
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let phase = apq / apq.norm();
                let theta = 0.5 * (2.0 * apq.norm()).atan2(aqq - app);
                let (c, s) = (theta.cos(), theta.sin());
                let sp = phase * cx(s, 0.0);
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = mkp * cx(c, 0.0) - mkq * sp.conj();
                    m[[k, q]] = mkp * sp + mkq * cx(c, 0.0);
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = mpk * cx(c, 0.0) - mqk * sp;
                    m[[q, k]] = mpk * sp.conj() + mqk * cx(c, 0.0);
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * cx(c, 0.0) - vkq * sp.conj();
                    v[[k, q]] = vkp * sp + vkq * cx(c, 0.0);
                }
            }
        }
    }
    let w = (0..n).map(|i| m[[i, i]].re).collect();
    (w, v)
}

/// σʸ ⊗ σʸ on the two-qubit space.
fn spin_flip_matrix() -> Array2<C64> {
    let mut f = Array2::zeros((4, 4));
    // σy⊗σy = antidiag(−1, 1, 1, −1)
    f[[0, 3]] = cx(-1.0, 0.0);
    f[[1, 2]] = cx(1.0, 0.0);
    f[[2, 1]] = cx(1.0, 0.0);
    f[[3, 0]] = cx(-1.0, 0.0);
    f
}

/// Wootters concurrence of a two-qubit density matrix.
///
/// Works through the factored form: with ρ = LL† (spectral factor,
/// eigenvalues below the relative noise floor clamped to exact zero),
/// the λᵢ are the singular values of Z = L† (σʸ⊗σʸ) L̄, since
/// ZZ† is similar to ρρ̃. The clamping keeps pure and near-pure
/// states accurate to machine precision, where the direct square-root
/// of the ρρ̃ spectrum would amplify eigenvalue noise to ~√ε.
pub fn wootters_concurrence(rho2: &Array2<C64>) -> Result<f64> {
    if rho2.dim() != (4, 4) {
        return Err(Error::DimensionMismatch(
            "concurrence needs a 4x4 two-qubit density matrix".into(),
        ));
    }
    let tr: C64 = rho2.diag().iter().sum();
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return Err(Error::NonPhysicalState(format!(
            "two-qubit state trace {} deviates from 1",
            tr
        )));
    }
    let herm = (rho2 + &rho2.t().mapv(|z| z.conj())) * cx(0.5, 0.0);

    let (w, v) = jacobi_eigh(&herm);
    let w_max = w.iter().copied().fold(0.0f64, f64::max);
    let noise_floor = 64.0 * f64::EPSILON * w_max;
    let mut sqrt_w = Vec::with_capacity(4);
    for &x in &w {
        if x < -PSD_CLAMP {
            return Err(Error::NonPhysicalState(format!(
                "two-qubit state has eigenvalue {x:.3e}"
            )));
        }
        sqrt_w.push(if x < noise_floor { 0.0 } else { x.sqrt() });
    }
    // L = V diag(√w); Z = L† F L̄
    let mut l_mat = Array2::zeros((4, 4));
    for i in 0..4 {
        for k in 0..4 {
            l_mat[[i, k]] = v[[i, k]] * cx(sqrt_w[k], 0.0);
        }
    }
    let f = spin_flip_matrix();
    let z = l_mat
        .t()
        .mapv(|x| x.conj())
        .dot(&f)
        .dot(&l_mat.mapv(|x| x.conj()));
    let zz = z.dot(&z.t().mapv(|x| x.conj()));
    let (mut lam, _) = jacobi_eigh(&zz);
    for x in lam.iter_mut() {
        *x = x.max(0.0).sqrt();
    }
    lam.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let c = lam[0] - lam[1] - lam[2] - lam[3];
    Ok(c.max(0.0).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairConcurrenceRecord {
    pub pair: (i32, i32),
    pub value: f64,
}

/// Trace down to the qubit pair (j, k) (canonical order) and evaluate
/// the concurrence.
pub fn pair_concurrence(state: &DensityMatrix, j: i32, k: i32) -> Result<PairConcurrenceRecord> {
    let space = state.space();
    for idx in [j, k] {
        let site = Site::Qubit(idx);
        if !space.contains(site) {
            return Err(Error::UnknownSite(format!("{site}")));
        }
        if space.kind_of(site)? != SiteKind::Qubit {
            return Err(Error::InvalidSpec(format!("{site} is not a qubit site")));
        }
    }
    let red = partial_trace(state, &[Site::Qubit(j), Site::Qubit(k)])?;
    let value = wootters_concurrence(red.matrix())?;
    Ok(PairConcurrenceRecord { pair: (j, k), value })
}

pub fn pair_concurrence_pure(state: &PureState, j: i32, k: i32) -> Result<PairConcurrenceRecord> {
    pair_concurrence(&state.to_density(), j, k)
}

/// Closed-form γ = 0 steady-state pair concurrence, 2√(n̄(n̄+1))/(2n̄+1).
pub fn analytic_pair_concurrence(n_bar: f64) -> f64 {
    2.0 * (n_bar * (n_bar + 1.0)).sqrt() / (2.0 * n_bar + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests_support::{ccq_spec, cq_spec};
    use crate::model::{analytic_full_state, analytic_qubit_state, chi, Topology};
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;
    use ndarray_linalg::Eig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn pure_rho(amp: &[C64]) -> Array2<C64> {
        let mut rho = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                rho[[i, j]] = amp[i] * amp[j].conj();
            }
        }
        rho
    }

    /// Brute-force oracle: eigenvalues of ρρ̃ through zgeev.
    fn concurrence_brute(rho: &Array2<C64>) -> f64 {
        let f = spin_flip_matrix();
        let rho_tilde = f.dot(&rho.mapv(|z| z.conj())).dot(&f);
        let r = rho.dot(&rho_tilde);
        let (w, _) = r.eig().unwrap();
        let mut lam: Vec<f64> = w.iter().map(|z| z.re.max(0.0).sqrt()).collect();
        lam.sort_by(|a, b| b.partial_cmp(a).unwrap());
        (lam[0] - lam[1] - lam[2] - lam[3]).max(0.0)
    }

    #[test]
    fn bell_state_is_maximally_entangled() {
        let s = 1.0 / 2f64.sqrt();
        let amp = [cx(s, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(s, 0.0)];
        let c = wootters_concurrence(&pure_rho(&amp)).unwrap();
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn product_states_are_separable() {
        let amp = [cx(1.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0)];
        assert_abs_diff_eq!(
            wootters_concurrence(&pure_rho(&amp)).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // generic product state (a|+⟩+b|−⟩)⊗(c|+⟩+d|−⟩)
        let (a, b) = (cx(0.6, 0.1), cx(0.2, -0.7732));
        let n1 = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (c1, d1) = (cx(0.3, -0.4), cx(0.5, 0.2));
        let n2 = (c1.norm_sqr() + d1.norm_sqr()).sqrt();
        let amp = [
            a * c1 / cx(n1 * n2, 0.0),
            a * d1 / cx(n1 * n2, 0.0),
            b * c1 / cx(n1 * n2, 0.0),
            b * d1 / cx(n1 * n2, 0.0),
        ];
        assert!(wootters_concurrence(&pure_rho(&amp)).unwrap() < 1e-10);
    }

    #[test]
    fn pair_superposition_value_and_brute_force() {
        // a|−−⟩ − b|++⟩ has concurrence 2ab
        let a = (2f64 / 3.0).sqrt();
        let b = (1f64 / 3.0).sqrt();
        let amp = [cx(-b, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(a, 0.0)];
        let rho = pure_rho(&amp);
        let c = wootters_concurrence(&rho).unwrap();
        assert_abs_diff_eq!(c, 2.0 * a * b, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 2.0 * 2f64.sqrt() / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, concurrence_brute(&rho), epsilon = 1e-10);
    }

    #[test]
    fn brute_force_agreement_on_random_mixed_states() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            // random rank-4 density matrix
            let a = Array2::from_shape_fn((4, 4), |_| {
                cx(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let mut rho = a.dot(&a.t().mapv(|z| z.conj()));
            let tr: C64 = rho.diag().iter().sum();
            rho.mapv_inplace(|z| z / tr);
            let c = wootters_concurrence(&rho).unwrap();
            let b = concurrence_brute(&rho);
            assert_abs_diff_eq!(c, b, epsilon = 1e-9);
            assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn local_unitary_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let amp = [
            cx(0.5, 0.1),
            cx(-0.2, 0.3),
            cx(0.4, -0.3),
            cx(0.1, 0.55),
        ];
        let n: f64 = amp.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amp: Vec<C64> = amp.iter().map(|z| z / n).collect();
        let rho = pure_rho(&amp);
        let c0 = wootters_concurrence(&rho).unwrap();
        for _ in 0..5 {
            // random SU(2) on each qubit
            let su2 = |rng: &mut ChaCha12Rng| {
                let th = rng.gen::<f64>() * std::f64::consts::PI;
                let ph = rng.gen::<f64>() * std::f64::consts::TAU;
                let la = rng.gen::<f64>() * std::f64::consts::TAU;
                ndarray::array![
                    [
                        cx(th.cos(), 0.0) * cx(0.0, ph).exp(),
                        cx(th.sin(), 0.0) * cx(0.0, la).exp()
                    ],
                    [
                        -cx(th.sin(), 0.0) * cx(0.0, -la).exp(),
                        cx(th.cos(), 0.0) * cx(0.0, -ph).exp()
                    ]
                ]
            };
            let u1 = su2(&mut rng);
            let u2 = su2(&mut rng);
            let mut u = Array2::zeros((4, 4));
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            u[[i * 2 + k, j * 2 + l]] = u1[[i, j]] * u2[[k, l]];
                        }
                    }
                }
            }
            let rotated = u.dot(&rho).dot(&u.t().mapv(|z| z.conj()));
            let c1 = wootters_concurrence(&rotated).unwrap();
            assert_abs_diff_eq!(c0, c1, epsilon = 1e-10);
        }
    }

    #[test]
    fn analytic_oracle_values() {
        assert_abs_diff_eq!(analytic_pair_concurrence(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            analytic_pair_concurrence(1.0),
            2.0 * 2f64.sqrt() / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(analytic_pair_concurrence(0.5), 0.8660254037844386, epsilon = 1e-12);
        assert_abs_diff_eq!(analytic_pair_concurrence(5.0), 2.0 * 30f64.sqrt() / 11.0, epsilon = 1e-15);
        assert_abs_diff_eq!(analytic_pair_concurrence(5.0), 0.9958591954639383, epsilon = 1e-12);
        // monotone toward the Bell limit
        let mut last = 0.0;
        for k in 1..200 {
            let v = analytic_pair_concurrence(k as f64 * 0.5);
            assert!(v > last);
            last = v;
        }
        assert!(analytic_pair_concurrence(1e6) > 1.0 - 1e-6);
    }

    #[test]
    fn analytic_full_state_pair_values() {
        let spec = cq_spec(1, 1.0);
        let psi = analytic_full_state(&spec).unwrap();
        let rec = pair_concurrence_pure(&psi, 1, -1).unwrap();
        assert_abs_diff_eq!(rec.value, 2.0 * 2f64.sqrt() / 3.0, epsilon = 1e-12);

        // cross pairs are separable by the product structure
        let spec2 = ccq_spec(2, 1.0);
        let psi2 = analytic_full_state(&spec2).unwrap();
        let cross = pair_concurrence_pure(&psi2, 1, -2).unwrap();
        assert_abs_diff_eq!(cross.value, 0.0, epsilon = 1e-10);
        let paired = pair_concurrence_pure(&psi2, 2, -2).unwrap();
        assert_abs_diff_eq!(paired.value, analytic_pair_concurrence(1.0), epsilon = 1e-12);

        // n̄ = 0 steady state is a product of |−−⟩ pairs
        let spec0 = cq_spec(2, 0.0);
        let psi0 = analytic_full_state(&spec0).unwrap();
        assert!(pair_concurrence_pure(&psi0, 1, -1).unwrap().value < 1e-12);
    }

    #[test]
    fn chi_phase_is_local_unitary() {
        // flipping χ changes the state but not the pair concurrence
        for topo in [Topology::Cq, Topology::Ccq] {
            let mut spec = match topo {
                Topology::Cq => cq_spec(1, 1.0),
                _ => ccq_spec(1, 1.0),
            };
            spec.n_bar = 2.0;
            let psi = analytic_qubit_state(&spec).unwrap();
            let c = pair_concurrence_pure(&psi, 1, -1).unwrap().value;
            assert_abs_diff_eq!(c, analytic_pair_concurrence(2.0), epsilon = 1e-12);
            let _ = chi(1, topo); // sign enters the state, not the concurrence
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let junk = Array2::from_elem((4, 4), cx(0.5, 0.0));
        assert!(wootters_concurrence(&junk).is_err()); // trace 2
        let mut neg = Array2::zeros((4, 4));
        neg[[0, 0]] = cx(1.5, 0.0);
        neg[[1, 1]] = cx(-0.5, 0.0);
        assert!(wootters_concurrence(&neg).is_err());
        // non-qubit pair target
        let spec = cq_spec(1, 1.0);
        let psi = analytic_full_state(&spec).unwrap();
        let rho = psi.to_density();
        assert!(pair_concurrence(&rho, 0, 1).is_err());
    }

    #[test]
    fn wootters_matches_reduced_mixed_state_from_dephasing() {
        // a dephased pair: diagonal damping of the analytic state's
        // coherences; concurrence must decrease smoothly
        let a = (2f64 / 3.0).sqrt();
        let b = (1f64 / 3.0).sqrt();
        let amp: Vec<C64> = vec![cx(-b, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(a, 0.0)];
        let rho = pure_rho(&amp);
        let mut last = wootters_concurrence(&rho).unwrap();
        for k in 1..=4 {
            let damp = 1.0 - 0.2 * k as f64;
            let mut mixed = rho.clone();
            mixed[[0, 3]] *= cx(damp, 0.0);
            mixed[[3, 0]] *= cx(damp, 0.0);
            let c = wootters_concurrence(&mixed).unwrap();
            assert!(c < last);
            assert_abs_diff_eq!(c, concurrence_brute(&mixed), epsilon = 1e-10);
            last = c;
        }
    }

    #[test]
    fn jacobi_matches_lapack_on_random_hermitian() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..10 {
            let a = Array2::from_shape_fn((4, 4), |_| {
                cx(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let h = (&a + &a.t().mapv(|z| z.conj())) * cx(0.5, 0.0);
            let (mut w, v) = jacobi_eigh(&h);
            // eigen equation residual
            for k in 0..4 {
                let col = Array1::from_iter((0..4).map(|i| v[[i, k]]));
                let hv = h.dot(&col);
                let dev = (&hv - &col.mapv(|z| z * cx(w[k], 0.0)))
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0f64, f64::max);
                assert!(dev < 1e-12, "jacobi residual {dev}");
            }
            use ndarray_linalg::Eigh;
            let (lw, _) = h.eigh(ndarray_linalg::UPLO::Lower).unwrap();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (x, y) in w.iter().zip(lw.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }
}
