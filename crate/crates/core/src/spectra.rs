//! Diagonalization and spectrum-level statistics.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::{Mat, MatRef, Par, Side};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{SpinBasis, StateVector};
use crate::models::HamiltonianMatrix;
use crate::C64;

/// Ascending energies with orthonormal real eigenvectors (column `μ` ↔ `E_μ`).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    basis: Arc<SpinBasis>,
    energies: Vec<f64>,
    vectors: Mat<f64>,
}

impl EigenSystem {
    pub fn basis(&self) -> &Arc<SpinBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vectors(&self) -> MatRef<'_, f64> {
        self.vectors.as_ref()
    }

    pub fn eigenstate(&self, index: usize) -> Result<StateVector> {
        if index >= self.dim() {
            return Err(Error::InvalidParams(format!(
                "eigenstate index {index} beyond dimension {}",
                self.dim()
            )));
        }
        let amps = (0..self.dim())
            .map(|i| C64::new(self.vectors[(i, index)], 0.0))
            .collect();
        StateVector::from_amplitudes(self.basis.clone(), amps)
    }

    /// `a_μ = ⟨ψ_μ|ψ⟩`.
    pub fn coefficients(&self, psi: &StateVector) -> Result<Vec<C64>> {
        psi.check_same_basis(&self.basis)?;
        let v = self.vectors.as_ref();
        let amps = psi.amplitudes();
        Ok((0..self.dim())
            .map(|mu| {
                let col = v.col(mu);
                let mut acc = C64::new(0.0, 0.0);
                for (i, a) in amps.iter().enumerate() {
                    acc += a * col[i];
                }
                acc
            })
            .collect())
    }

    /// `Σ_μ c_μ |ψ_μ⟩` in the computational basis.
    pub fn to_computational(&self, coeffs: &[C64]) -> Vec<C64> {
        let v = self.vectors.as_ref();
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        for (mu, c) in coeffs.iter().enumerate() {
            if *c == C64::new(0.0, 0.0) {
                continue;
            }
            let col = v.col(mu);
            for (i, o) in out.iter_mut().enumerate() {
                *o += c * col[i];
            }
        }
        out
    }

    pub fn spectral_width(&self) -> f64 {
        spectral_width(&self.energies)
    }

    /// `max_μ ‖H v_μ - E_μ v_μ‖`.
    pub fn residual(&self, h: &HamiltonianMatrix) -> f64 {
        let hv = h.apply_dense(self.vectors.as_ref());
        (0..self.dim())
            .map(|mu| {
                (0..self.dim())
                    .map(|i| (hv[(i, mu)] - self.energies[mu] * self.vectors[(i, mu)]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `max |VᵀV - 1|`.
    pub fn orthogonality_error(&self) -> f64 {
        let vtv = gemm(self.vectors.transpose(), self.vectors.as_ref());
        let mut worst = 0.0f64;
        for j in 0..vtv.ncols() {
            for i in 0..vtv.nrows() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((vtv[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Eigensystem of an operator with no off-diagonal elements: unit vectors
    /// ordered by (energy, basis index).
    pub fn from_diagonal(h: &HamiltonianMatrix) -> Result<EigenSystem> {
        if !h.is_diagonal() {
            return Err(Error::InvalidParams(format!("{} is not diagonal", h.tag())));
        }
        let mut order: Vec<usize> = (0..h.dim()).collect();
        order.sort_by(|&i, &j| h.diagonal()[i].total_cmp(&h.diagonal()[j]).then(i.cmp(&j)));
        let mut vectors = Mat::<f64>::zeros(h.dim(), h.dim());
        for (col, &row) in order.iter().enumerate() {
            vectors[(row, col)] = 1.0;
        }
        Ok(EigenSystem {
            basis: h.basis().clone(),
            energies: order.iter().map(|&i| h.diagonal()[i]).collect(),
            vectors,
        })
    }

    /// Eigensystem of `h σ^z_1 ⊗ 1 + 1 ⊗ H_bath` assembled from the bath
    /// eigensystem. Site 1 is the lowest bit of the full configuration.
    pub fn with_probe_spin(probe_field: f64, bath: &EigenSystem) -> Result<EigenSystem> {
        let n = bath.basis.n_sites() + 1;
        let basis = Arc::new(SpinBasis::full(n)?);
        let dim_b = bath.dim();
        let mut labels: Vec<(f64, usize, usize)> = Vec::with_capacity(2 * dim_b);
        for (k, &e) in bath.energies.iter().enumerate() {
            labels.push((e - probe_field, k, 0));
            labels.push((e + probe_field, k, 1));
        }
        labels.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut vectors = Mat::<f64>::zeros(2 * dim_b, 2 * dim_b);
        for (col, &(_, k, s)) in labels.iter().enumerate() {
            for r in 0..dim_b {
                vectors[((r << 1) | s, col)] = bath.vectors[(r, k)];
            }
        }
        Ok(EigenSystem {
            basis,
            energies: labels.iter().map(|l| l.0).collect(),
            vectors,
        })
    }
}

pub(crate) fn gemm(lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(lhs.nrows(), rhs.ncols());
    faer::linalg::matmul::matmul(out.as_mut(), faer::Accum::Replace, lhs, rhs, 1.0, Par::Seq);
    out
}

fn fix_phases(vectors: &mut Mat<f64>) {
    for j in 0..vectors.ncols() {
        let mut pivot = 0.0f64;
        for i in 0..vectors.nrows() {
            let v = vectors[(i, j)];
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        if pivot < 0.0 {
            for i in 0..vectors.nrows() {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
}

/// Full eigendecomposition. Dense kernels run sequentially; each eigenvector
/// is signed so that its largest-magnitude component is positive.
pub fn diagonalize(h: &HamiltonianMatrix) -> Result<EigenSystem> {
    faer::set_global_parallelism(Par::Seq);
    let dense = h.to_dense();
    let evd = dense
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenSolver)?;
    drop(dense);
    let energies: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    let mut vectors = evd.U().to_owned();
    drop(evd);
    fix_phases(&mut vectors);
    Ok(EigenSystem {
        basis: h.basis().clone(),
        energies,
        vectors,
    })
}

/// Ascending eigenvalues only.
pub fn eigenvalues(h: &HamiltonianMatrix) -> Result<Vec<f64>> {
    symmetric_eigenvalues(h.to_dense().as_ref())
}

/// Ascending eigenvalues of a dense real symmetric matrix (lower triangle read).
pub fn symmetric_eigenvalues(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    faer::set_global_parallelism(Par::Seq);
    m.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::EigenSolver)
}

pub fn spectral_width(energies: &[f64]) -> f64 {
    match (energies.first(), energies.last()) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => 0.0,
    }
}

/// Fraction-of-levels window, e.g. the central 60% is `[0.2, 0.8)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SpectralWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for SpectralWindow {
    fn default() -> Self {
        Self { lo: 0.2, hi: 0.8 }
    }
}

impl SpectralWindow {
    pub const ALL: SpectralWindow = SpectralWindow { lo: 0.0, hi: 1.0 };

    fn select<'a>(&self, energies: &'a [f64]) -> Result<&'a [f64]> {
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "bad spectral window {self:?}"
            )));
        }
        let n = energies.len();
        let a = (self.lo * n as f64).floor() as usize;
        let b = ((self.hi * n as f64).ceil() as usize).min(n);
        Ok(&energies[a..b])
    }
}

/// Spacings below this fraction of the spectral width count as degeneracies.
pub const DEGENERACY_TOL: f64 = 1e-12;
/// Number of neighbouring spacings in the local unfolding average.
pub const UNFOLDING_WINDOW: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct LevelStatistics {
    /// Unfolded spacings, mean exactly one.
    pub spacings: Vec<f64>,
    pub r_values: Vec<f64>,
    pub mean_r: f64,
    /// Degenerate spacings dropped before unfolding.
    pub excluded_spacings: usize,
    /// Triplets dropped from the ratio average.
    pub excluded_triplets: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub bin_centers: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpacingReport {
    pub stats: LevelStatistics,
    pub histogram: Histogram,
    pub ks_poisson: f64,
    pub ks_wigner_dyson: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RStatistic {
    pub mean_r: f64,
    pub n_ratios: usize,
    pub excluded_triplets: usize,
}

pub fn poisson_cdf(s: f64) -> f64 {
    1.0 - (-s).exp()
}

pub fn wigner_dyson_cdf(s: f64) -> f64 {
    1.0 - (-PI * s * s / 4.0).exp()
}

pub fn poisson_pdf(s: f64) -> f64 {
    (-s).exp()
}

pub fn wigner_dyson_pdf(s: f64) -> f64 {
    PI / 2.0 * s * (-PI * s * s / 4.0).exp()
}

/// One-sample Kolmogorov–Smirnov distance.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn raw_spacings(levels: &[f64], width: f64) -> (Vec<f64>, usize) {
    let tol = DEGENERACY_TOL * width;
    let mut kept = Vec::with_capacity(levels.len());
    let mut excluded = 0;
    for w in levels.windows(2) {
        let s = w[1] - w[0];
        if s < tol {
            excluded += 1;
        } else {
            kept.push(s);
        }
    }
    (kept, excluded)
}

/// Spacings divided by a sliding local mean over `UNFOLDING_WINDOW` spacings,
/// then rescaled to unit mean.
pub fn unfold(raw: &[f64]) -> Vec<f64> {
    let n = raw.len();
    if n == 0 {
        return Vec::new();
    }
    let half = UNFOLDING_WINDOW / 2;
    let mut prefix = vec![0.0; n + 1];
    for (i, s) in raw.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s;
    }
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let span = UNFOLDING_WINDOW.min(n);
            let start = i.saturating_sub(half).min(n - span);
            let local = (prefix[start + span] - prefix[start]) / span as f64;
            raw[i] / local
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    out.iter_mut().for_each(|s| *s /= mean);
    out
}

fn ratios(levels: &[f64], width: f64) -> (Vec<f64>, usize) {
    let tol = DEGENERACY_TOL * width;
    let mut r = Vec::with_capacity(levels.len());
    let mut excluded = 0;
    for w in levels.windows(3) {
        let (a, b) = (w[1] - w[0], w[2] - w[1]);
        if a < tol || b < tol {
            excluded += 1;
            continue;
        }
        r.push(a.min(b) / a.max(b));
    }
    (r, excluded)
}

/// Spacing ratio average over the window; no unfolding needed.
pub fn r_statistic(energies: &[f64], window: SpectralWindow) -> Result<RStatistic> {
    let levels = window.select(energies)?;
    if levels.len() < 3 {
        return Err(Error::TooFewLevels {
            needed: 3,
            got: levels.len(),
        });
    }
    let (r, excluded) = ratios(levels, spectral_width(energies));
    if excluded > 0 {
        log::warn!("{excluded} degenerate level triplets excluded from <r>");
    }
    if r.is_empty() {
        return Err(Error::TooFewLevels { needed: 3, got: 0 });
    }
    Ok(RStatistic {
        mean_r: r.iter().sum::<f64>() / r.len() as f64,
        n_ratios: r.len(),
        excluded_triplets: excluded,
    })
}

pub const MIN_LEVELS_FOR_SPACINGS: usize = 100;

pub fn level_spacing_distribution(
    energies: &[f64],
    window: SpectralWindow,
    bins: usize,
) -> Result<SpacingReport> {
    let levels = window.select(energies)?;
    if levels.len() < MIN_LEVELS_FOR_SPACINGS {
        return Err(Error::TooFewLevels {
            needed: MIN_LEVELS_FOR_SPACINGS,
            got: levels.len(),
        });
    }
    if bins == 0 {
        return Err(Error::InvalidParams(
            "histogram needs at least one bin".into(),
        ));
    }
    let width = spectral_width(energies);
    let (raw, excluded_spacings) = raw_spacings(levels, width);
    if excluded_spacings > 0 {
        log::warn!("{excluded_spacings} degenerate spacings excluded before unfolding");
    }
    let spacings = unfold(&raw);
    let (r_values, excluded_triplets) = ratios(levels, width);
    let mean_r = r_values.iter().sum::<f64>() / r_values.len().max(1) as f64;

    let s_max = 4.0;
    let bin_width = s_max / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in &spacings {
        if s < s_max {
            counts[(s / bin_width) as usize] += 1;
        }
    }
    let total = spacings.len() as f64;
    let histogram = Histogram {
        bin_centers: (0..bins).map(|k| (k as f64 + 0.5) * bin_width).collect(),
        density: counts
            .iter()
            .map(|&c| c as f64 / (total * bin_width))
            .collect(),
    };
    Ok(SpacingReport {
        ks_poisson: ks_distance(&spacings, poisson_cdf),
        ks_wigner_dyson: ks_distance(&spacings, wigner_dyson_cdf),
        stats: LevelStatistics {
            spacings,
            r_values,
            mean_r,
            excluded_spacings,
            excluded_triplets,
        },
        histogram,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DosEstimate {
    pub energy: f64,
    /// States per unit energy.
    pub value: f64,
    pub bandwidth: f64,
}

/// Gaussian kernel density `Σ_μ K_σ(E0 - E_μ)`; by default
/// `σ = width / sqrt(dim)`.
pub fn dos_at_energy(energies: &[f64], e0: f64, bandwidth: Option<f64>) -> Result<DosEstimate> {
    let (lo, hi) = match (energies.first(), energies.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::TooFewLevels { needed: 1, got: 0 }),
    };
    if !(lo..=hi).contains(&e0) {
        return Err(Error::EnergyOutOfRange { energy: e0, lo, hi });
    }
    let sigma = bandwidth.unwrap_or((hi - lo) / (energies.len() as f64).sqrt());
    if !(sigma > 0.0) {
        return Err(Error::InvalidParams(format!(
            "kernel bandwidth {sigma} must be positive"
        )));
    }
    Ok(DosEstimate {
        energy: e0,
        value: kde(energies, e0, sigma),
        bandwidth: sigma,
    })
}

pub(crate) fn kde(energies: &[f64], e0: f64, sigma: f64) -> f64 {
    let norm = 1.0 / ((2.0 * PI).sqrt() * sigma);
    energies
        .iter()
        .map(|&e| {
            let x = (e0 - e) / sigma;
            if x.abs() > 40.0 {
                0.0
            } else {
                norm * (-0.5 * x * x).exp()
            }
        })
        .sum()
}
