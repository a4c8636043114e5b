//! Time evolution in the eigenbasis and time-domain observables.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{partial_trace, StateVector};
use crate::models::HamiltonianMatrix;
use crate::spectra::{gemm, EigenSystem};
use crate::C64;

/// Strictly increasing, non-negative sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("no time points".into()));
        }
        if !(points[0] >= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "first time {} is negative",
                points[0]
            )));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid(format!(
                "times not increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    /// `n` equally spaced points on `[t0, t1]`, both ends included.
    pub fn linear(t0: f64, t1: f64, n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::InvalidGrid("no time points".into())),
            1 => Self::new(vec![t0]),
            _ => {
                let h = (t1 - t0) / (n - 1) as f64;
                Self::new((0..n).map(|k| t0 + k as f64 * h).collect())
            }
        }
    }

    /// `n` logarithmically spaced points on `[t0, t1]`, `t0 > 0`.
    pub fn logarithmic(t0: f64, t1: f64, n: usize) -> Result<Self> {
        if !(t0 > 0.0 && t1 > t0) || n < 2 {
            return Err(Error::InvalidGrid(format!(
                "log grid needs 0 < {t0} < {t1} and n ≥ 2"
            )));
        }
        let (a, b) = (t0.ln(), t1.ln());
        let h = (b - a) / (n - 1) as f64;
        Self::new((0..n).map(|k| (a + k as f64 * h).exp()).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservableTrace {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub tag: String,
}

impl ObservableTrace {
    pub fn times(&self) -> &[f64] {
        self.grid.points()
    }
}

fn phase(energy: f64, t: f64) -> C64 {
    C64::from_polar(1.0, -energy * t)
}

pub(crate) fn check_normalized(psi: &StateVector) -> Result<()> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParams(format!("state norm {norm} is not 1")));
    }
    Ok(())
}

/// `ψ(t) = Σ_μ a_μ e^{-iE_μ t} |ψ_μ⟩`.
pub fn propagate(es: &EigenSystem, psi0: &StateVector, t: f64) -> Result<StateVector> {
    check_normalized(psi0)?;
    let a = es.coefficients(psi0)?;
    let b: Vec<C64> = a
        .iter()
        .zip(es.energies())
        .map(|(a, &e)| a * phase(e, t))
        .collect();
    StateVector::from_amplitudes(es.basis().clone(), es.to_computational(&b))
}

/// `⟨ψ|O|ψ⟩`; the imaginary part must vanish.
pub fn expval(psi: &StateVector, op: &HamiltonianMatrix) -> Result<f64> {
    psi.check_same_basis(op.basis())?;
    let value = op.quadratic_form(psi.amplitudes());
    let scale = op.max_abs_entry().max(1.0);
    if value.im.abs() > 1e-10 * scale {
        return Err(Error::NotHermitian {
            deviation: value.im.abs(),
        });
    }
    Ok(value.re)
}

const BATCH: usize = 128;

/// Visits `ψ(t_k)` in the computational basis for every time, in order.
/// Columns of the eigenvector matrix are multiplied in blocks of times.
pub(crate) fn for_each_state(
    es: &EigenSystem,
    coeffs: &[C64],
    times: &[f64],
    mut visit: impl FnMut(usize, &[C64]),
) {
    let dim = es.dim();
    let populated: Vec<usize> = (0..dim).filter(|&mu| coeffs[mu].norm_sqr() > 0.0).collect();
    let v_sub;
    let v = if populated.len() < dim / 2 {
        v_sub = Mat::<f64>::from_fn(dim, populated.len(), |i, j| es.vectors()[(i, populated[j])]);
        v_sub.as_ref()
    } else {
        es.vectors()
    };
    let cols: Vec<usize> = if populated.len() < dim / 2 {
        populated
    } else {
        (0..dim).collect()
    };
    let energies = es.energies();
    let mut psi = vec![C64::new(0.0, 0.0); dim];
    for (block, chunk) in times.chunks(BATCH).enumerate() {
        let re = Mat::<f64>::from_fn(cols.len(), chunk.len(), |j, k| {
            (coeffs[cols[j]] * phase(energies[cols[j]], chunk[k])).re
        });
        let im = Mat::<f64>::from_fn(cols.len(), chunk.len(), |j, k| {
            (coeffs[cols[j]] * phase(energies[cols[j]], chunk[k])).im
        });
        let out_re = gemm(v, re.as_ref());
        let out_im = gemm(v, im.as_ref());
        for k in 0..chunk.len() {
            for (i, p) in psi.iter_mut().enumerate() {
                *p = C64::new(out_re[(i, k)], out_im[(i, k)]);
            }
            visit(block * BATCH + k, &psi);
        }
    }
}

pub fn expectation_trace(
    es: &EigenSystem,
    psi0: &StateVector,
    op: &HamiltonianMatrix,
    grid: &TimeGrid,
) -> Result<ObservableTrace> {
    psi0.check_same_basis(op.basis())?;
    check_normalized(psi0)?;
    let a = es.coefficients(psi0)?;
    let mut values = vec![0.0; grid.len()];
    for_each_state(es, &a, grid.points(), |k, psi| {
        values[k] = op.quadratic_form(psi).re
    });
    Ok(ObservableTrace {
        grid: grid.clone(),
        values,
        tag: op.tag().to_string(),
    })
}

/// `F(t) = |Σ_μ |a_μ|² e^{-iE_μ t}|²`.
pub fn survival_probability(
    es: &EigenSystem,
    psi0: &StateVector,
    grid: &TimeGrid,
) -> Result<ObservableTrace> {
    check_normalized(psi0)?;
    let p: Vec<f64> = es
        .coefficients(psi0)?
        .iter()
        .map(|a| a.norm_sqr())
        .collect();
    let values = grid
        .points()
        .iter()
        .map(|&t| {
            p.iter()
                .zip(es.energies())
                .map(|(p, &e)| phase(e, t) * p)
                .sum::<C64>()
                .norm_sqr()
        })
        .collect();
    Ok(ObservableTrace {
        grid: grid.clone(),
        values,
        tag: "survival".into(),
    })
}

/// Von Neumann entropy (natural log) of the kept sites along the trajectory.
pub fn entropy_trace(
    es: &EigenSystem,
    psi0: &StateVector,
    grid: &TimeGrid,
    kept_sites: &[usize],
) -> Result<ObservableTrace> {
    let a = es.coefficients(psi0)?;
    let basis = es.basis().clone();
    // validates the bipartition before any evolution work
    partial_trace(psi0, kept_sites)?;
    let mut values = vec![0.0; grid.len()];
    let mut failure = None;
    for_each_state(es, &a, grid.points(), |k, psi| {
        let state = StateVector::from_amplitudes(basis.clone(), psi.to_vec());
        match state
            .and_then(|s| partial_trace(&s, kept_sites))
            .and_then(|r| r.von_neumann_entropy())
        {
            Ok(s) => values[k] = s,
            Err(e) => failure = failure.take().or(Some(e)),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ObservableTrace {
        grid: grid.clone(),
        values,
        tag: format!("entropy{kept_sites:?}"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FluctuationMode {
    /// Time average of `(⟨O(t)⟩ - Ō)²`.
    #[default]
    TemporalVariance,
    /// Time average of `⟨O²(t)⟩ - ⟨O(t)⟩²`.
    QuantumVariance,
    /// Exact infinite-time limit of the temporal variance, no sampling
    /// (see [`infinite_time_averages`]).
    ClosedForm,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationResult {
    pub mode: FluctuationMode,
    pub value: f64,
    pub horizon: f64,
    /// `Σ_{μ≠ν} p_μ p_ν O_μν²`, reported in temporal-variance mode only.
    pub closed_form: Option<f64>,
}

pub const DEFAULT_FLUCTUATION_SAMPLES: usize = 4096;

/// Trapezoidal mean over a uniform grid.
pub fn trapezoid_mean(values: &[f64]) -> f64 {
    match values.len() {
        0 => f64::NAN,
        1 => values[0],
        n => {
            let interior: f64 = values[1..n - 1].iter().sum();
            (interior + 0.5 * (values[0] + values[n - 1])) / (n - 1) as f64
        }
    }
}

/// `2π D(E)` with `D` the mean level density over the whole spectrum.
pub fn mean_heisenberg_time(es: &EigenSystem) -> f64 {
    let width = es.spectral_width();
    if width > 0.0 {
        2.0 * PI * (es.dim() as f64 - 1.0) / width
    } else {
        f64::INFINITY
    }
}

pub fn long_time_fluctuations(
    es: &EigenSystem,
    psi0: &StateVector,
    op: &HamiltonianMatrix,
    mode: FluctuationMode,
    horizon: f64,
    n_samples: usize,
) -> Result<FluctuationResult> {
    if !(horizon > 0.0) || n_samples < 2 {
        return Err(Error::InvalidGrid(format!(
            "fluctuation average needs T > 0 and ≥ 2 samples (T={horizon}, n={n_samples})"
        )));
    }
    psi0.check_same_basis(op.basis())?;
    check_normalized(psi0)?;
    if mode == FluctuationMode::ClosedForm {
        return Ok(FluctuationResult {
            mode,
            value: infinite_time_averages(es, psi0, op)?.fluctuation,
            horizon: f64::INFINITY,
            closed_form: None,
        });
    }
    let a = es.coefficients(psi0)?;
    if horizon < 10.0 * mean_heisenberg_time(es) / (2.0 * PI) {
        log::warn!(
            "averaging horizon {horizon} is short compared with the inverse mean level spacing"
        );
    }
    let grid = TimeGrid::linear(0.0, horizon, n_samples)?;
    let squared = matches!(mode, FluctuationMode::QuantumVariance).then(|| op.square());
    let mut first = vec![0.0; n_samples];
    let mut second = vec![0.0; n_samples];
    for_each_state(es, &a, grid.points(), |k, psi| {
        first[k] = op.quadratic_form(psi).re;
        if let Some(sq) = &squared {
            second[k] = sq.quadratic_form(psi).re;
        }
    });
    let (value, closed_form) = match mode {
        FluctuationMode::TemporalVariance => {
            let mean = trapezoid_mean(&first);
            let dev: Vec<f64> = first.iter().map(|x| (x - mean).powi(2)).collect();
            let p: Vec<f64> = a.iter().map(|a| a.norm_sqr()).collect();
            (
                trapezoid_mean(&dev),
                Some(closed_form_fluctuation(es, &p, op)?),
            )
        }
        FluctuationMode::QuantumVariance => {
            let var: Vec<f64> = first
                .iter()
                .zip(&second)
                .map(|(x, x2)| x2 - x * x)
                .collect();
            (trapezoid_mean(&var), None)
        }
        FluctuationMode::ClosedForm => unreachable!("handled above"),
    };
    Ok(FluctuationResult {
        mode,
        value,
        horizon,
        closed_form,
    })
}

/// `O_μμ = ⟨ψ_μ|O|ψ_μ⟩` for every eigenstate.
pub fn eigen_diagonal(es: &EigenSystem, op: &HamiltonianMatrix) -> Result<Vec<f64>> {
    if **es.basis() != **op.basis() {
        return Err(Error::BasisMismatch(
            "operator and eigensystem bases differ".into(),
        ));
    }
    let v = es.vectors();
    let ov = op.apply_dense(v);
    Ok((0..es.dim())
        .map(|mu| (0..es.dim()).map(|i| v[(i, mu)] * ov[(i, mu)]).sum())
        .collect())
}

/// Dense `Vᵀ O V`.
pub fn eigenbasis_matrix(es: &EigenSystem, op: &HamiltonianMatrix) -> Result<Mat<f64>> {
    if **es.basis() != **op.basis() {
        return Err(Error::BasisMismatch(
            "operator and eigensystem bases differ".into(),
        ));
    }
    let ov = op.apply_dense(es.vectors());
    Ok(gemm(es.vectors().transpose(), ov.as_ref()))
}

/// `Σ_μ |a_μ|² O_μμ`.
pub fn diagonal_ensemble_mean(
    es: &EigenSystem,
    psi0: &StateVector,
    op: &HamiltonianMatrix,
) -> Result<f64> {
    let a = es.coefficients(psi0)?;
    let diag = eigen_diagonal(es, op)?;
    Ok(a.iter().zip(&diag).map(|(a, d)| a.norm_sqr() * d).sum())
}

/// `Σ_{μ≠ν} p_μ p_ν O_μν²` evaluated as `Tr(OρOρ) - Σ_μ p_μ² O_μμ²` with
/// `ρ = V diag(p) Vᵀ` the diagonal ensemble in the computational basis.
pub fn closed_form_fluctuation(
    es: &EigenSystem,
    populations: &[f64],
    op: &HamiltonianMatrix,
) -> Result<f64> {
    if populations.len() != es.dim() {
        return Err(Error::BasisMismatch("population vector length".into()));
    }
    let v = es.vectors();
    let dim = es.dim();
    let weighted = Mat::<f64>::from_fn(dim, dim, |i, mu| v[(i, mu)] * populations[mu]);
    let rho = gemm(weighted.as_ref(), v.transpose());
    drop(weighted);
    let total = if op.is_diagonal() {
        let s = op.diagonal();
        let mut acc = 0.0;
        for j in 0..dim {
            for i in 0..dim {
                acc += s[i] * s[j] * rho[(i, j)] * rho[(i, j)];
            }
        }
        acc
    } else {
        let o_rho = op.apply_dense(rho.as_ref());
        let mut acc = 0.0;
        for j in 0..dim {
            for i in 0..dim {
                acc += o_rho[(i, j)] * o_rho[(j, i)];
            }
        }
        acc
    };
    let diag = eigen_diagonal(es, op)?;
    let self_terms: f64 = populations
        .iter()
        .zip(&diag)
        .map(|(p, d)| (p * d).powi(2))
        .sum();
    Ok((total - self_terms).max(0.0))
}

/// Bohr frequencies closer than this fraction of the spectral width are
/// treated as equal.
pub const GAP_RESOLUTION: f64 = 1e-10;

/// Eigenstates with smaller overlap are left out of the infinite-time sums.
const NEGLIGIBLE_AMPLITUDE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfiniteTimeAverages {
    /// Time average of `⟨O(t)⟩`.
    pub mean: f64,
    /// Time average of `(⟨O(t)⟩ - mean)²`.
    pub fluctuation: f64,
}

/// Exact `T → ∞` mean and temporal variance of `⟨O(t)⟩`.
///
/// Writing `⟨O(t)⟩ = Σ_ω A_ω e^{-iωt}`, each `A_ω` collects `a_μ* a_ν O_μν`
/// over every pair with `E_ν - E_μ = ω`. Pairs inside a degenerate level feed
/// the mean, and pairs sharing a gap add coherently before squaring. Without
/// either kind of degeneracy this reduces to [`diagonal_ensemble_mean`] and
/// [`closed_form_fluctuation`]. Memory grows as the square of the number of
/// populated eigenstates.
pub fn infinite_time_averages(
    es: &EigenSystem,
    psi0: &StateVector,
    op: &HamiltonianMatrix,
) -> Result<InfiniteTimeAverages> {
    psi0.check_same_basis(op.basis())?;
    if **es.basis() != **op.basis() {
        return Err(Error::BasisMismatch(
            "operator and eigensystem bases differ".into(),
        ));
    }
    let a = es.coefficients(psi0)?;
    let kept: Vec<usize> = (0..es.dim())
        .filter(|&mu| a[mu].norm() > NEGLIGIBLE_AMPLITUDE)
        .collect();
    let o = {
        let v = es.vectors();
        let sub = Mat::<f64>::from_fn(es.dim(), kept.len(), |i, k| v[(i, kept[k])]);
        let o_sub = op.apply_dense(sub.as_ref());
        gemm(sub.transpose(), o_sub.as_ref())
    };
    let e = es.energies();
    let tol = GAP_RESOLUTION * es.spectral_width();
    let mut mean = 0.0;
    let mut pairs: Vec<(f64, C64)> =
        Vec::with_capacity(kept.len() * kept.len().saturating_sub(1) / 2);
    for (k, &mu) in kept.iter().enumerate() {
        mean += a[mu].norm_sqr() * o[(k, k)];
        for (l, &nu) in kept.iter().enumerate().skip(k + 1) {
            let z = a[mu].conj() * a[nu] * o[(k, l)];
            let omega = e[nu] - e[mu];
            if omega <= tol {
                mean += 2.0 * z.re;
            } else {
                pairs.push((omega, z));
            }
        }
    }
    drop(o);
    pairs.sort_unstable_by(|x, y| x.0.total_cmp(&y.0));
    let mut fluctuation = 0.0;
    let mut group = C64::new(0.0, 0.0);
    let mut last = f64::NEG_INFINITY;
    for &(omega, z) in &pairs {
        if omega - last > tol {
            fluctuation += 2.0 * group.norm_sqr();
            group = C64::new(0.0, 0.0);
        }
        group += z;
        last = omega;
    }
    fluctuation += 2.0 * group.norm_sqr();
    Ok(InfiniteTimeAverages { mean, fluctuation })
}
