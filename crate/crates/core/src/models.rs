//! Hamiltonians for the probe-plus-bath spin chain, its disordered variant,
//! and the PXP chain with a probe field.
//!
//! Operators are real symmetric. They are kept as a diagonal plus a sorted
//! list of off-diagonal entries and only densified for diagonalization.

use std::sync::Arc;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{is_spin_up, BasisKind, SpinBasis};
use crate::C64;

/// Tolerance on `max |H_ij - H_ji|` for an operator to count as Hermitian.
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    basis: Arc<SpinBasis>,
    diagonal: Vec<f64>,
    /// `(row, col, value)` sorted by `(row, col)`, zero diagonal excluded.
    off_diagonal: Vec<(u32, u32, f64)>,
    tag: String,
}

/// Observables share the operator representation of Hamiltonians.
pub type Observable = HamiltonianMatrix;

struct TermBuilder {
    basis: Arc<SpinBasis>,
    diagonal: Vec<f64>,
    entries: Vec<(u32, u32, f64)>,
}

impl TermBuilder {
    fn new(basis: Arc<SpinBasis>) -> Self {
        let dim = basis.dim();
        Self {
            basis,
            diagonal: vec![0.0; dim],
            entries: Vec::new(),
        }
    }

    /// Add `value · |image⟩⟨config|`, i.e. row = image, column = config.
    fn push(&mut self, config: u64, image: u64, value: f64) -> Result<()> {
        let col = self
            .basis
            .index_of(config)
            .expect("source configuration in basis");
        let row = self
            .basis
            .index_of(image)
            .ok_or(Error::LeavesConstrainedSpace { config })?;
        if row == col {
            self.diagonal[row] += value;
        } else {
            self.entries.push((row as u32, col as u32, value));
        }
        Ok(())
    }

    fn finish(self, tag: impl Into<String>) -> HamiltonianMatrix {
        HamiltonianMatrix::from_parts(self.basis, self.diagonal, self.entries, tag.into())
    }
}

impl HamiltonianMatrix {
    fn from_parts(
        basis: Arc<SpinBasis>,
        diagonal: Vec<f64>,
        mut entries: Vec<(u32, u32, f64)>,
        tag: String,
    ) -> Self {
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        Self {
            basis,
            diagonal,
            off_diagonal: merged,
            tag,
        }
    }

    pub fn zeros(basis: Arc<SpinBasis>, tag: impl Into<String>) -> Self {
        let dim = basis.dim();
        Self::from_parts(basis, vec![0.0; dim], Vec::new(), tag.into())
    }

    pub fn from_diagonal(
        basis: Arc<SpinBasis>,
        diagonal: Vec<f64>,
        tag: impl Into<String>,
    ) -> Result<Self> {
        if diagonal.len() != basis.dim() {
            return Err(Error::BasisMismatch(
                "diagonal length differs from basis dimension".into(),
            ));
        }
        Ok(Self::from_parts(basis, diagonal, Vec::new(), tag.into()))
    }

    /// Build from a dense real matrix; entries below `1e-300` are dropped.
    pub fn from_dense(
        basis: Arc<SpinBasis>,
        dense: &Mat<f64>,
        tag: impl Into<String>,
    ) -> Result<Self> {
        let dim = basis.dim();
        if dense.nrows() != dim || dense.ncols() != dim {
            return Err(Error::BasisMismatch(
                "dense matrix shape differs from basis".into(),
            ));
        }
        let diagonal = (0..dim).map(|i| dense[(i, i)]).collect();
        let mut entries = Vec::new();
        for j in 0..dim {
            for i in 0..dim {
                if i != j && dense[(i, j)].abs() > 1e-300 {
                    entries.push((i as u32, j as u32, dense[(i, j)]));
                }
            }
        }
        let h = Self::from_parts(basis, diagonal, entries, tag.into());
        h.check_hermitian()?;
        Ok(h)
    }

    pub fn basis(&self) -> &Arc<SpinBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn off_diagonal(&self) -> &[(u32, u32, f64)] {
        &self.off_diagonal
    }

    pub fn is_diagonal(&self) -> bool {
        self.off_diagonal.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if row == col {
            return self.diagonal[row];
        }
        self.off_diagonal
            .binary_search_by_key(&(row as u32, col as u32), |&(r, c, _)| (r, c))
            .map(|k| self.off_diagonal[k].2)
            .unwrap_or(0.0)
    }

    /// `max |H_ij - H_ji|`.
    pub fn hermiticity_error(&self) -> f64 {
        self.off_diagonal
            .iter()
            .map(|&(r, c, v)| (v - self.get(c as usize, r as usize)).abs())
            .fold(0.0, f64::max)
    }

    fn check_hermitian(&self) -> Result<()> {
        let deviation = self.hermiticity_error();
        if deviation > HERMITICITY_TOL {
            Err(Error::NotHermitian { deviation })
        } else {
            Ok(())
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.dim(), self.dim());
        for (i, &d) in self.diagonal.iter().enumerate() {
            m[(i, i)] = d;
        }
        for &(r, c, v) in &self.off_diagonal {
            m[(r as usize, c as usize)] = v;
        }
        m
    }

    /// Largest absolute matrix element; a cheap scale for tolerances.
    pub fn max_abs_entry(&self) -> f64 {
        self.diagonal
            .iter()
            .map(|d| d.abs())
            .chain(self.off_diagonal.iter().map(|e| e.2.abs()))
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let mut out: Vec<C64> = self.diagonal.iter().zip(psi).map(|(d, a)| a * *d).collect();
        for &(r, c, v) in &self.off_diagonal {
            out[r as usize] += psi[c as usize] * v;
        }
        out
    }

    /// `self · m` for a dense real block of columns.
    pub fn apply_dense(&self, m: faer::MatRef<'_, f64>) -> Mat<f64> {
        let mut out = Mat::<f64>::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            let src = m.col(j);
            let mut dst = out.col_mut(j);
            for (i, &d) in self.diagonal.iter().enumerate() {
                dst[i] = d * src[i];
            }
            for &(r, c, v) in &self.off_diagonal {
                dst[r as usize] += v * src[c as usize];
            }
        }
        out
    }

    /// `⟨ψ|H|ψ⟩` for an unnormalized amplitude vector.
    pub fn quadratic_form(&self, psi: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (d, a) in self.diagonal.iter().zip(psi) {
            acc += a.norm_sqr() * d;
        }
        for &(r, c, v) in &self.off_diagonal {
            acc += psi[r as usize].conj() * psi[c as usize] * v;
        }
        acc
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            basis: self.basis.clone(),
            diagonal: self.diagonal.iter().map(|d| d * factor).collect(),
            off_diagonal: self
                .off_diagonal
                .iter()
                .map(|&(r, c, v)| (r, c, v * factor))
                .filter(|e| e.2 != 0.0)
                .collect(),
            tag: self.tag.clone(),
        }
    }

    /// `Σ_k c_k H_k` over operators on one basis.
    pub fn linear_combination(terms: &[(f64, &HamiltonianMatrix)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidParams("empty linear combination".into()))?;
        let basis = first.basis.clone();
        let mut diagonal = vec![0.0; basis.dim()];
        let mut entries = Vec::new();
        for (coeff, term) in terms {
            if *term.basis != *basis {
                return Err(Error::BasisMismatch(format!(
                    "term {:?} lives on a different basis",
                    term.tag
                )));
            }
            for (acc, d) in diagonal.iter_mut().zip(&term.diagonal) {
                *acc += coeff * d;
            }
            entries.extend(term.off_diagonal.iter().map(|&(r, c, v)| (r, c, coeff * v)));
        }
        let tag = terms
            .iter()
            .map(|(_, t)| t.tag.as_str())
            .collect::<Vec<_>>()
            .join(" + ");
        Ok(Self::from_parts(basis, diagonal, entries, tag))
    }

    /// `H²`, used for quantum-variance averages.
    pub fn square(&self) -> Self {
        let dense_rows = {
            let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.dim()];
            for (i, &d) in self.diagonal.iter().enumerate() {
                if d != 0.0 {
                    rows[i].push((i as u32, d));
                }
            }
            for &(r, c, v) in &self.off_diagonal {
                rows[r as usize].push((c, v));
            }
            rows
        };
        let mut diagonal = vec![0.0; self.dim()];
        let mut entries = Vec::new();
        for (i, row) in dense_rows.iter().enumerate() {
            for &(k, a) in row {
                for &(j, b) in &dense_rows[k as usize] {
                    if j as usize == i {
                        diagonal[i] += a * b;
                    } else {
                        entries.push((i as u32, j, a * b));
                    }
                }
            }
        }
        Self::from_parts(
            self.basis.clone(),
            diagonal,
            entries,
            format!("({})^2", self.tag),
        )
    }
}

/// Elementwise sum of operators on one basis; Hermiticity is rechecked.
pub fn assemble(terms: &[HamiltonianMatrix]) -> Result<HamiltonianMatrix> {
    let pairs: Vec<(f64, &HamiltonianMatrix)> = terms.iter().map(|t| (1.0, t)).collect();
    let h = HamiltonianMatrix::linear_combination(&pairs)?;
    h.check_hermitian()?;
    Ok(h)
}

/// `max |(AB - BA)_ij|` computed densely; intended for small checks.
pub fn commutator_norm(a: &HamiltonianMatrix, b: &HamiltonianMatrix) -> f64 {
    let da = a.to_dense();
    let db = b.to_dense();
    let comm = &da * &db - &db * &da;
    let mut worst = 0.0f64;
    for j in 0..comm.ncols() {
        for i in 0..comm.nrows() {
            worst = worst.max(comm[(i, j)].abs());
        }
    }
    worst
}

/// `σ^z` at `site` as a diagonal observable.
pub fn sigma_z(basis: &Arc<SpinBasis>, site: usize) -> Result<Observable> {
    basis.check_site(site)?;
    let diagonal = basis
        .states()
        .iter()
        .map(|&s| if is_spin_up(s, site) { 1.0 } else { -1.0 })
        .collect();
    HamiltonianMatrix::from_diagonal(basis.clone(), diagonal, format!("sz{site}"))
}

pub fn total_magnetization(basis: &Arc<SpinBasis>) -> Observable {
    let n = basis.n_sites();
    let diagonal = basis
        .states()
        .iter()
        .map(|&s| 2.0 * s.count_ones() as f64 - n as f64)
        .collect();
    HamiltonianMatrix::from_parts(basis.clone(), diagonal, Vec::new(), "Mz".into())
}

pub fn identity(basis: &Arc<SpinBasis>) -> Observable {
    HamiltonianMatrix::from_parts(
        basis.clone(),
        vec![1.0; basis.dim()],
        Vec::new(),
        "1".into(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinChainParams {
    /// Total spins, probe included (site 1).
    pub n: usize,
    /// Probe field `B`.
    pub b: f64,
    /// Bath transverse field.
    pub bx_bath: f64,
    /// Bath flip-flop amplitude.
    pub jx: f64,
    pub jz_sb: f64,
    pub jx_sb: f64,
    /// Bath site the probe couples to.
    pub contact: usize,
    /// Disorder half-width.
    pub w: f64,
    pub disorder_seed: u64,
}

impl Default for SpinChainParams {
    fn default() -> Self {
        Self {
            n: 13,
            b: 0.01,
            bx_bath: 0.3,
            jx: 1.0,
            jz_sb: 0.2,
            jx_sb: 0.4,
            contact: 5,
            w: 0.0,
            disorder_seed: 0,
        }
    }
}

impl SpinChainParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidParams(format!("N = {} < 3", self.n)));
        }
        if self.contact < 2 || self.contact > self.n {
            return Err(Error::InvalidParams(format!(
                "contact site {} outside [2, {}]",
                self.contact, self.n
            )));
        }
        if !(self.w >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "disorder width {} < 0",
                self.w
            )));
        }
        Ok(())
    }

    fn basis(&self) -> Result<Arc<SpinBasis>> {
        self.validate()?;
        Ok(Arc::new(SpinBasis::full(self.n)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PxpParams {
    pub n: usize,
    /// Field on the probe site.
    pub b: f64,
    /// 1-based probe site; the QFI setting uses site 1.
    pub probe_site: usize,
    pub boundary: Boundary,
}

impl Default for PxpParams {
    fn default() -> Self {
        Self {
            n: 16,
            b: 0.4,
            probe_site: 1,
            boundary: Boundary::Open,
        }
    }
}

impl PxpParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidParams(format!("N = {} < 3", self.n)));
        }
        if self.probe_site == 0 || self.probe_site > self.n {
            return Err(Error::InvalidParams(format!(
                "probe site {} outside chain",
                self.probe_site
            )));
        }
        Ok(())
    }

    pub fn central_site(n: usize) -> usize {
        n.div_ceil(2)
    }
}

/// One draw of the on-site fields `D_i`, site order `1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub seed: u64,
    pub fields: Vec<f64>,
}

impl DisorderRealization {
    /// `D_i = W u_i` with `u_i` uniform on `[-1, 1]` from a ChaCha stream
    /// keyed by `seed`. The same seed gives the same landscape for every `W`.
    pub fn draw(seed: u64, n: usize, w: f64) -> Self {
        let fields = if w == 0.0 {
            vec![0.0; n]
        } else {
            unit_draws(seed, n).into_iter().map(|u| w * u).collect()
        };
        Self { seed, fields }
    }
}

pub fn unit_draws(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn push_flip_flop(tb: &mut TermBuilder, config: u64, a: usize, b: usize, amp: f64) -> Result<()> {
    if is_spin_up(config, a) != is_spin_up(config, b) {
        let image = config ^ (1 << (a - 1)) ^ (1 << (b - 1));
        tb.push(config, image, amp)?;
    }
    Ok(())
}

pub fn build_probe(params: &SpinChainParams) -> Result<HamiltonianMatrix> {
    let basis = params.basis()?;
    let diagonal = basis
        .states()
        .iter()
        .map(|&s| {
            if is_spin_up(s, 1) {
                params.b
            } else {
                -params.b
            }
        })
        .collect();
    HamiltonianMatrix::from_diagonal(basis, diagonal, "probe")
}

fn bath_terms(
    tb: &mut TermBuilder,
    sites: std::ops::RangeInclusive<usize>,
    bx: f64,
    jx: f64,
) -> Result<()> {
    let states = tb.basis.states().to_vec();
    let (first, last) = (*sites.start(), *sites.end());
    for &s in &states {
        if bx != 0.0 {
            for k in first..=last {
                tb.push(s, s ^ (1 << (k - 1)), bx)?;
            }
        }
        if jx != 0.0 {
            for k in first..last {
                push_flip_flop(tb, s, k, k + 1, jx)?;
            }
        }
    }
    Ok(())
}

/// Transverse field on sites `2..=N` plus nearest-neighbour flip-flop on the
/// bath bonds `(k, k+1)`, `k = 2..N-1`.
pub fn build_bath(params: &SpinChainParams) -> Result<HamiltonianMatrix> {
    let mut tb = TermBuilder::new(params.basis()?);
    bath_terms(&mut tb, 2..=params.n, params.bx_bath, params.jx)?;
    Ok(tb.finish("bath"))
}

pub fn build_coupling(params: &SpinChainParams) -> Result<HamiltonianMatrix> {
    let mut tb = TermBuilder::new(params.basis()?);
    let r = params.contact;
    let states = tb.basis.states().to_vec();
    for &s in &states {
        if params.jz_sb != 0.0 {
            let zz = if is_spin_up(s, 1) == is_spin_up(s, r) {
                1.0
            } else {
                -1.0
            };
            tb.push(s, s, params.jz_sb * zz)?;
        }
        if params.jx_sb != 0.0 {
            push_flip_flop(&mut tb, s, 1, r, params.jx_sb)?;
        }
    }
    Ok(tb.finish("coupling"))
}

/// `Σ_{i=1..N} D_i σ^z_i`, probe site included.
pub fn build_disorder(
    params: &SpinChainParams,
) -> Result<(DisorderRealization, HamiltonianMatrix)> {
    let basis = params.basis()?;
    let realization = DisorderRealization::draw(params.disorder_seed, params.n, params.w);
    let h = disorder_operator(&basis, &realization.fields, 1)?;
    Ok((realization, h))
}

/// `Σ_k fields[k] σ^z_{first_site + k}` on `basis`.
fn disorder_operator(
    basis: &Arc<SpinBasis>,
    fields: &[f64],
    first_site: usize,
) -> Result<HamiltonianMatrix> {
    let diagonal = basis
        .states()
        .iter()
        .map(|&s| {
            fields
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    if is_spin_up(s, first_site + k) {
                        *d
                    } else {
                        -*d
                    }
                })
                .sum()
        })
        .collect();
    HamiltonianMatrix::from_diagonal(basis.clone(), diagonal, "disorder")
}

/// Probe + bath + coupling (+ disorder when `W > 0`).
pub fn build_spin_chain(params: &SpinChainParams) -> Result<HamiltonianMatrix> {
    let mut terms = vec![
        build_probe(params)?,
        build_bath(params)?,
        build_coupling(params)?,
    ];
    if params.w > 0.0 {
        terms.push(build_disorder(params)?.1);
    }
    Ok(assemble(&terms)?.with_tag(format!("spin-chain {params:?}")))
}

/// Probe + bath (+ disorder): the Hamiltonian with the probe-bath coupling removed.
pub fn build_uncoupled(params: &SpinChainParams) -> Result<HamiltonianMatrix> {
    let mut terms = vec![build_probe(params)?, build_bath(params)?];
    if params.w > 0.0 {
        terms.push(build_disorder(params)?.1);
    }
    Ok(assemble(&terms)?.with_tag("uncoupled"))
}

/// The uncoupled Hamiltonian factorizes as `h σ^z_1 ⊗ 1 + 1 ⊗ H_bath`.
/// Returns the probe field `h = B + D_1` and `H_bath` on the `N - 1` bath
/// sites, relabelled so that chain site `k` becomes bath site `k - 1`.
pub fn uncoupled_factors(params: &SpinChainParams) -> Result<(f64, HamiltonianMatrix)> {
    params.validate()?;
    let disorder = DisorderRealization::draw(params.disorder_seed, params.n, params.w);
    let basis = Arc::new(SpinBasis::full(params.n - 1)?);
    let mut tb = TermBuilder::new(basis.clone());
    bath_terms(&mut tb, 1..=params.n - 1, params.bx_bath, params.jx)?;
    let hopping = tb.finish("bath");
    let bath = if params.w > 0.0 {
        let d = disorder_operator(&basis, &disorder.fields[1..], 1)?;
        assemble(&[hopping, d])?
    } else {
        hopping
    };
    Ok((params.b + disorder.fields[0], bath.with_tag("bath-only")))
}

/// PXP on an existing constrained basis.
pub fn build_pxp_on(basis: &Arc<SpinBasis>) -> Result<HamiltonianMatrix> {
    if basis.kind() != BasisKind::RydbergConstrained {
        return Err(Error::BasisMismatch(
            "PXP needs the Rydberg-constrained basis".into(),
        ));
    }
    let n = basis.n_sites();
    let mut tb = TermBuilder::new(basis.clone());
    for &s in basis.states() {
        for i in 1..=n {
            let left_down = i == 1 || !is_spin_up(s, i - 1);
            let right_down = i == n || !is_spin_up(s, i + 1);
            if left_down && right_down {
                tb.push(s, s ^ (1 << (i - 1)), 1.0)?;
            }
        }
    }
    Ok(tb.finish("pxp"))
}

/// `σ^x_1 P_2 + Σ_{i=2}^{N-1} P_{i-1} σ^x_i P_{i+1} + P_{N-1} σ^x_N`.
pub fn build_pxp(params: &PxpParams) -> Result<HamiltonianMatrix> {
    params.validate()?;
    build_pxp_on(&Arc::new(SpinBasis::constrained(params.n)?))
}

/// `B σ^z_probe + H_PXP`.
pub fn build_qmbs(params: &PxpParams) -> Result<HamiltonianMatrix> {
    let pxp = build_pxp(params)?;
    let field = sigma_z(pxp.basis(), params.probe_site)?.scaled(params.b);
    Ok(assemble(&[field, pxp])?.with_tag(format!("qmbs {params:?}")))
}
