//! Spin-1/2 chain Hilbert spaces.
//!
//! Site `j` (1-based) is bit `j - 1` of a `u64` configuration and a set bit
//! means spin up (excited). Basis states are always listed in ascending
//! integer order, so the index of a configuration is reproducible.

use std::sync::Arc;

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::C64;

/// Largest chain supported by [`SpinBasis::full`].
pub const MAX_FULL_SITES: usize = 24;
/// Largest chain supported by [`SpinBasis::constrained`].
pub const MAX_CONSTRAINED_SITES: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BasisKind {
    Full,
    /// No two neighbouring excitations, open boundaries.
    RydbergConstrained,
}

#[derive(Debug, Clone)]
pub struct SpinBasis {
    n_sites: usize,
    kind: BasisKind,
    states: Vec<u64>,
}

impl PartialEq for SpinBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n_sites == other.n_sites && self.kind == other.kind
    }
}

impl Eq for SpinBasis {}

impl SpinBasis {
    pub fn full(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_FULL_SITES {
            return Err(Error::SiteCountOutOfRange {
                n,
                max: MAX_FULL_SITES,
            });
        }
        Ok(Self {
            n_sites: n,
            kind: BasisKind::Full,
            states: (0..1u64 << n).collect(),
        })
    }

    pub fn constrained(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_CONSTRAINED_SITES {
            return Err(Error::SiteCountOutOfRange {
                n,
                max: MAX_CONSTRAINED_SITES,
            });
        }
        let mut states = Vec::new();
        // Walking from the top site down with 0 before 1 yields ascending order.
        fn walk(site: usize, prev_up: bool, acc: u64, states: &mut Vec<u64>) {
            if site == 0 {
                states.push(acc);
                return;
            }
            let bit = site - 1;
            walk(site - 1, false, acc, states);
            if !prev_up {
                walk(site - 1, true, acc | (1 << bit), states);
            }
        }
        walk(n, false, 0, &mut states);
        Ok(Self {
            n_sites: n,
            kind: BasisKind::RydbergConstrained,
            states,
        })
    }

    pub fn new(n: usize, kind: BasisKind) -> Result<Self> {
        match kind {
            BasisKind::Full => Self::full(n),
            BasisKind::RydbergConstrained => Self::constrained(n),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn state(&self, index: usize) -> u64 {
        self.states[index]
    }

    /// Ordinal of a configuration, `None` if it is not part of the basis.
    pub fn index_of(&self, config: u64) -> Option<usize> {
        match self.kind {
            BasisKind::Full => ((config >> self.n_sites) == 0).then_some(config as usize),
            BasisKind::RydbergConstrained => self.states.binary_search(&config).ok(),
        }
    }

    pub fn contains(&self, config: u64) -> bool {
        self.index_of(config).is_some()
    }

    pub(crate) fn check_site(&self, site: usize) -> Result<()> {
        if site == 0 || site > self.n_sites {
            Err(Error::SiteOutOfRange {
                site,
                n_sites: self.n_sites,
            })
        } else {
            Ok(())
        }
    }
}

/// Parse a ket label such as `"1010"`; the leftmost character is site 1.
pub fn config_from_ket(label: &str) -> Result<u64> {
    let mut config = 0u64;
    for (j, ch) in label.chars().enumerate() {
        match ch {
            '1' | 'u' | '^' => config |= 1 << j,
            '0' | 'd' | 'v' => {}
            _ => return Err(Error::InvalidParams(format!("bad ket label {label:?}"))),
        }
    }
    Ok(config)
}

/// Inverse of [`config_from_ket`].
pub fn ket_label(config: u64, n_sites: usize) -> String {
    (0..n_sites)
        .map(|j| if config >> j & 1 == 1 { '1' } else { '0' })
        .collect()
}

pub fn is_spin_up(config: u64, site: usize) -> bool {
    config >> (site - 1) & 1 == 1
}

#[derive(Debug, Clone)]
pub struct StateVector {
    basis: Arc<SpinBasis>,
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn from_amplitudes(basis: Arc<SpinBasis>, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::BasisMismatch(format!(
                "{} amplitudes for a basis of dimension {}",
                amplitudes.len(),
                basis.dim()
            )));
        }
        Ok(Self { basis, amplitudes })
    }

    /// Same as [`Self::from_amplitudes`] but rescaled to unit norm.
    pub fn normalized(basis: Arc<SpinBasis>, amplitudes: Vec<C64>) -> Result<Self> {
        let mut psi = Self::from_amplitudes(basis, amplitudes)?;
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::InvalidParams(
                "cannot normalize the zero vector".into(),
            ));
        }
        psi.amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(psi)
    }

    pub fn basis_state(basis: Arc<SpinBasis>, config: u64) -> Result<Self> {
        let index = basis.index_of(config).ok_or_else(|| {
            Error::InvalidParams(format!("configuration {config:#b} not in basis"))
        })?;
        let mut amplitudes = vec![C64::new(0.0, 0.0); basis.dim()];
        amplitudes[index] = C64::new(1.0, 0.0);
        Ok(Self { basis, amplitudes })
    }

    pub fn basis(&self) -> &Arc<SpinBasis> {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_same_basis(&self, other: &SpinBasis) -> Result<()> {
        if *self.basis != *other {
            return Err(Error::BasisMismatch(format!(
                "{:?}({}) vs {:?}({})",
                self.basis.kind(),
                self.basis.n_sites(),
                other.kind(),
                other.n_sites()
            )));
        }
        Ok(())
    }
}

/// `⟨a|b⟩`, conjugate-linear in `a`.
pub fn inner(a: &StateVector, b: &StateVector) -> Result<C64> {
    a.check_same_basis(&b.basis)?;
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    X,
    Y,
    Z,
    /// Raising operator `|↑⟩⟨↓|`.
    Plus,
    /// Lowering operator `|↓⟩⟨↑|`.
    Minus,
}

/// Action of a single-site Pauli operator on one configuration.
/// Returns the image configuration and its coefficient, or `None` when the
/// operator annihilates the configuration.
pub fn pauli_action(config: u64, site: usize, axis: Pauli) -> Option<(u64, C64)> {
    let mask = 1u64 << (site - 1);
    let up = config & mask != 0;
    let flipped = config ^ mask;
    match axis {
        Pauli::X => Some((flipped, C64::new(1.0, 0.0))),
        Pauli::Y => Some((
            flipped,
            if up {
                C64::new(0.0, 1.0)
            } else {
                C64::new(0.0, -1.0)
            },
        )),
        Pauli::Z => Some((config, C64::new(if up { 1.0 } else { -1.0 }, 0.0))),
        Pauli::Plus => (!up).then_some((flipped, C64::new(1.0, 0.0))),
        Pauli::Minus => up.then_some((flipped, C64::new(1.0, 0.0))),
    }
}

/// Apply `σ^axis` at `site` (1-based).
///
/// On the constrained basis an error is raised if a populated configuration
/// would be mapped onto a blockaded one.
pub fn apply_pauli(psi: &StateVector, site: usize, axis: Pauli) -> Result<StateVector> {
    let basis = psi.basis();
    basis.check_site(site)?;
    let mut out = vec![C64::new(0.0, 0.0); basis.dim()];
    for (&config, &amp) in basis.states().iter().zip(psi.amplitudes()) {
        if amp == C64::new(0.0, 0.0) {
            continue;
        }
        if let Some((image, coeff)) = pauli_action(config, site, axis) {
            match basis.index_of(image) {
                Some(j) => out[j] += coeff * amp,
                None => return Err(Error::LeavesConstrainedSpace { config }),
            }
        }
    }
    StateVector::from_amplitudes(basis.clone(), out)
}

/// Reduced density matrix, row-major. Index bit `k` is the `k`-th kept site
/// in ascending site order.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl DensityMatrix {
    pub fn from_entries(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::InvalidParams("density matrix must be square".into()));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.dim + j]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..=i {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let m = Mat::<C64>::from_fn(self.dim, self.dim, |i, j| self.get(i, j));
        m.self_adjoint_eigenvalues(Side::Lower)
            .map_err(|_| Error::EigenSolver)
    }

    /// `-Tr ρ ln ρ`; eigenvalues below 1e-14 contribute nothing.
    pub fn von_neumann_entropy(&self) -> Result<f64> {
        Ok(self
            .eigenvalues()?
            .into_iter()
            .filter(|&p| p > 1e-14)
            .map(|p| -p * p.ln())
            .sum())
    }
}

fn gather_bits(config: u64, positions: &[usize]) -> usize {
    positions.iter().enumerate().fold(0usize, |acc, (k, &bit)| {
        acc | (((config >> bit) & 1) as usize) << k
    })
}

/// `ρ_S = Tr_B |ψ⟩⟨ψ|` over the complement of `kept_sites` (1-based).
pub fn partial_trace(psi: &StateVector, kept_sites: &[usize]) -> Result<DensityMatrix> {
    let basis = psi.basis();
    let n = basis.n_sites();
    let mut kept: Vec<usize> = kept_sites.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.is_empty() || kept.len() >= n || kept.len() != kept_sites.len() {
        return Err(Error::InvalidSiteSet(format!(
            "kept sites {kept_sites:?} must be a nonempty proper subset without repeats"
        )));
    }
    for &s in &kept {
        basis.check_site(s)?;
    }
    let kept_bits: Vec<usize> = kept.iter().map(|s| s - 1).collect();
    let env_bits: Vec<usize> = (0..n).filter(|b| !kept_bits.contains(b)).collect();
    let dim_s = 1usize << kept_bits.len();
    let dim_e = 1usize << env_bits.len();

    // Embed ψ into the full tensor space as a dim_s × dim_e matrix.
    let mut m = vec![C64::new(0.0, 0.0); dim_s * dim_e];
    for (&config, &amp) in basis.states().iter().zip(psi.amplitudes()) {
        let s = gather_bits(config, &kept_bits);
        let e = gather_bits(config, &env_bits);
        m[s * dim_e + e] = amp;
    }
    let mut rho = vec![C64::new(0.0, 0.0); dim_s * dim_s];
    for i in 0..dim_s {
        let row_i = &m[i * dim_e..(i + 1) * dim_e];
        for j in 0..=i {
            let row_j = &m[j * dim_e..(j + 1) * dim_e];
            let v: C64 = row_i.iter().zip(row_j).map(|(a, b)| a * b.conj()).sum();
            rho[i * dim_s + j] = v;
            rho[j * dim_s + i] = v.conj();
        }
    }
    DensityMatrix::from_entries(dim_s, rho)
}
