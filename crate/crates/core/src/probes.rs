//! Probe-qubit witnesses of ergodicity: quantum Fisher information dynamics
//! and the fluctuation-dissipation relation.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{
    check_normalized, eigen_diagonal, eigenbasis_matrix, ObservableTrace, TimeGrid,
};
use crate::hilbert::StateVector;
use crate::models::HamiltonianMatrix;
use crate::spectra::{diagonalize, gemm, DosEstimate, EigenSystem};
use crate::C64;

/// `∂_λ H` together with its eigenbasis matrix `O_μν`.
#[derive(Debug, Clone)]
pub struct GeneratorObservable {
    operator: HamiltonianMatrix,
    eigen: Mat<f64>,
}

impl GeneratorObservable {
    pub fn new(es: &EigenSystem, operator: HamiltonianMatrix) -> Result<Self> {
        let dev = operator.hermiticity_error();
        if dev > crate::models::HERMITICITY_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let eigen = eigenbasis_matrix(es, &operator)?;
        Ok(Self { operator, eigen })
    }

    pub fn operator(&self) -> &HamiltonianMatrix {
        &self.operator
    }

    pub fn eigenbasis_elements(&self) -> MatRef<'_, f64> {
        self.eigen.as_ref()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QfiTrace {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl QfiTrace {
    pub fn times(&self) -> &[f64] {
        self.grid.points()
    }
}

/// Pairs closer than this (relative to the spectral scale) use the exact
/// small-gap form instead of the divided difference.
const NEAR_DEGENERATE: f64 = 1e-7;
const QFI_BATCH: usize = 128;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `F_Q(t) = 4(⟨v|v⟩ - |⟨ψ(t)|v⟩|²)` with the derivative state
/// `v_μ = -(K b(t))_μ + e^{-iE_μ t}(K a)_μ`, `K_μν = O_μν / (E_μ - E_ν)` and
/// `b_ν = a_ν e^{-iE_ν t}`. Close pairs, including `μ = ν`, are summed directly.
pub fn qfi_trace(
    es: &EigenSystem,
    psi0: &StateVector,
    generator: &GeneratorObservable,
    grid: &TimeGrid,
) -> Result<QfiTrace> {
    check_normalized(psi0)?;
    let a = es.coefficients(psi0)?;
    let dim = es.dim();
    let energies = es.energies();
    let o = generator.eigenbasis_elements();
    if o.nrows() != dim {
        return Err(Error::BasisMismatch(
            "generator was built for another eigensystem".into(),
        ));
    }
    let scale = es.spectral_width().max(1.0);
    let tol = NEAR_DEGENERATE * scale;

    // close pairs: energies are sorted, so only runs of neighbours qualify
    let mut close: Vec<(usize, usize, f64)> = Vec::new();
    for mu in 0..dim {
        let mut nu = mu;
        while nu > 0 && energies[mu] - energies[nu - 1] < tol {
            nu -= 1;
        }
        while nu < dim && energies[nu] - energies[mu] < tol {
            if o[(mu, nu)] != 0.0 {
                close.push((mu, nu, o[(mu, nu)]));
            }
            nu += 1;
        }
    }
    let k = Mat::<f64>::from_fn(dim, dim, |mu, nu| {
        let gap = energies[mu] - energies[nu];
        if gap.abs() < tol {
            0.0
        } else {
            o[(mu, nu)] / gap
        }
    });
    let ka = {
        let re = Mat::<f64>::from_fn(dim, 1, |nu, _| a[nu].re);
        let im = Mat::<f64>::from_fn(dim, 1, |nu, _| a[nu].im);
        let (kr, ki) = (gemm(k.as_ref(), re.as_ref()), gemm(k.as_ref(), im.as_ref()));
        (0..dim)
            .map(|mu| C64::new(kr[(mu, 0)], ki[(mu, 0)]))
            .collect::<Vec<_>>()
    };

    let mut values = Vec::with_capacity(grid.len());
    let mut v = vec![C64::new(0.0, 0.0); dim];
    for chunk in grid.points().chunks(QFI_BATCH) {
        let b = |nu: usize, t: f64| a[nu] * C64::from_polar(1.0, -energies[nu] * t);
        let re = Mat::<f64>::from_fn(dim, chunk.len(), |nu, j| b(nu, chunk[j]).re);
        let im = Mat::<f64>::from_fn(dim, chunk.len(), |nu, j| b(nu, chunk[j]).im);
        let kr = gemm(k.as_ref(), re.as_ref());
        let ki = gemm(k.as_ref(), im.as_ref());
        for (j, &t) in chunk.iter().enumerate() {
            for mu in 0..dim {
                let rot = C64::from_polar(1.0, -energies[mu] * t);
                v[mu] = rot * ka[mu] - C64::new(kr[(mu, j)], ki[(mu, j)]);
            }
            for &(mu, nu, o_mn) in &close {
                let theta = 0.5 * (energies[mu] - energies[nu]);
                let factor = C64::new(0.0, -t)
                    * C64::from_polar(1.0, -energies[mu] * t + theta * t)
                    * (o_mn * sinc(theta * t));
                v[mu] += factor * a[nu];
            }
            let mut norm2 = 0.0;
            let mut overlap = C64::new(0.0, 0.0);
            for mu in 0..dim {
                norm2 += v[mu].norm_sqr();
                overlap += b(mu, t).conj() * v[mu];
            }
            values.push(4.0 * (norm2 - overlap.norm_sqr()));
        }
    }
    Ok(QfiTrace {
        grid: grid.clone(),
        values,
    })
}

/// Literal triple-sum evaluation, `O(dim³)` per time. Kept as an oracle.
pub mod reference {
    use super::*;

    pub fn qfi_triple_sum(energies: &[f64], coeffs: &[C64], o: MatRef<'_, f64>, t: f64) -> f64 {
        let dim = energies.len();
        let theta = |m: usize, n: usize| 0.5 * (energies[m] - energies[n]);
        let mut first = C64::new(0.0, 0.0);
        for mu in 0..dim {
            for nu in 0..dim {
                let pre = coeffs[mu].conj() * coeffs[nu] * C64::from_polar(1.0, theta(mu, nu) * t);
                let mut inner = 0.0;
                for rho in 0..dim {
                    inner += o[(mu, rho)]
                        * o[(rho, nu)]
                        * sinc(theta(mu, rho) * t)
                        * sinc(theta(rho, nu) * t);
                }
                first += pre * inner;
            }
        }
        let mut second = C64::new(0.0, 0.0);
        for mu in 0..dim {
            for nu in 0..dim {
                second += coeffs[mu].conj()
                    * coeffs[nu]
                    * C64::from_polar(1.0, theta(mu, nu) * t)
                    * (o[(mu, nu)] * sinc(theta(mu, nu) * t));
            }
        }
        4.0 * t * t * (first.re - second.norm_sqr())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoschmidtReport {
    /// `4(1 - F_ε)/ε²` per time point.
    pub echo_estimate: Vec<f64>,
    pub qfi: Vec<f64>,
    /// Largest `|echo - qfi| / max(qfi, 1e-5)`.
    pub max_relative_deviation: f64,
}

/// Step for the central-difference generator `∂_λ H`.
const GENERATOR_STEP: f64 = 1e-4;

/// Compares the derivative-state QFI with the fidelity between evolutions
/// under `H(λ)` and `H(λ + ε)`.
pub fn loschmidt_qfi_check<F>(
    builder: F,
    lambda: f64,
    epsilon: f64,
    psi0: &StateVector,
    grid: &TimeGrid,
) -> Result<LoschmidtReport>
where
    F: Fn(f64) -> Result<HamiltonianMatrix>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "ε = {epsilon} must be positive"
        )));
    }
    let h = builder(lambda)?;
    let shifted = builder(lambda + epsilon)?;
    let derivative = HamiltonianMatrix::linear_combination(&[
        (0.5 / GENERATOR_STEP, &builder(lambda + GENERATOR_STEP)?),
        (-0.5 / GENERATOR_STEP, &builder(lambda - GENERATOR_STEP)?),
    ])?;
    let es = diagonalize(&h)?;
    let es_shifted = diagonalize(&shifted)?;
    let qfi = qfi_trace(&es, psi0, &GeneratorObservable::new(&es, derivative)?, grid)?.values;

    let a = es.coefficients(psi0)?;
    let a_shifted = es_shifted.coefficients(psi0)?;
    let mut echo_estimate = Vec::with_capacity(grid.len());
    for &t in grid.points() {
        let evolve = |es: &EigenSystem, a: &[C64]| {
            let b: Vec<C64> = a
                .iter()
                .zip(es.energies())
                .map(|(a, &e)| a * C64::from_polar(1.0, -e * t))
                .collect();
            es.to_computational(&b)
        };
        let x = evolve(&es, &a);
        let y = evolve(&es_shifted, &a_shifted);
        // 1 - |⟨x|y⟩|² = ‖y - ⟨x|y⟩x‖² for unit vectors, without cancellation
        let overlap: C64 = x.iter().zip(&y).map(|(x, y)| x.conj() * y).sum();
        let infidelity: f64 = x
            .iter()
            .zip(&y)
            .map(|(x, y)| (y - overlap * x).norm_sqr())
            .sum();
        echo_estimate.push(4.0 * infidelity / (epsilon * epsilon));
    }
    let max_relative_deviation = echo_estimate
        .iter()
        .zip(&qfi)
        .map(|(e, q)| (e - q).abs() / q.abs().max(1e-5))
        .fold(0.0, f64::max);
    Ok(LoschmidtReport {
        echo_estimate,
        qfi,
        max_relative_deviation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitModel {
    /// `αt + βt²`
    LinearPlusQuadratic,
    /// `γt²`
    QuadraticOnly,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: FitModel,
    /// `[α, β]` or `[γ]`.
    pub coefficients: Vec<f64>,
    pub r2: f64,
    pub r2_adjusted: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    /// The unconstrained linear coefficient came out negative and was pinned to zero.
    pub alpha_clamped: bool,
}

impl FitReport {
    pub fn alpha(&self) -> Option<f64> {
        (self.model == FitModel::LinearPlusQuadratic).then(|| self.coefficients[0])
    }

    pub fn quadratic(&self) -> f64 {
        *self.coefficients.last().expect("fit has coefficients")
    }
}

pub const MIN_FIT_POINTS: usize = 10;

fn r_squared(y: &[f64], fitted: &[f64], params: usize) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(v, f)| (v - f).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    let adj = 1.0 - (1.0 - r2) * (n - 1.0) / (n - params as f64 - 1.0);
    (r2, adj)
}

/// Least-squares fits through the origin of `αt + βt²` (with `α ≥ 0`) and of
/// `γt²` over the points with `t` in `window`.
pub fn fit_qfi_regimes(trace: &QfiTrace, window: (f64, f64)) -> Result<(FitReport, FitReport)> {
    let (t, y): (Vec<f64>, Vec<f64>) = trace
        .times()
        .iter()
        .zip(&trace.values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, y)| (*t, *y))
        .unzip();
    if t.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} points in window, need {MIN_FIT_POINTS}",
            t.len()
        )));
    }
    let t_scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if t_scale == 0.0 {
        return Err(Error::Fit("degenerate design: all times are zero".into()));
    }
    let s: Vec<f64> = t.iter().map(|v| v / t_scale).collect();
    let (mut s2, mut s3, mut s4, mut sy, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (s, y) in s.iter().zip(&y) {
        s2 += s * s;
        s3 += s * s * s;
        s4 += s * s * s * s;
        sy += s * y;
        s2y += s * s * y;
    }
    let quad_coeff = s2y / s4;
    let quad_fit: Vec<f64> = s.iter().map(|s| quad_coeff * s * s).collect();
    let (qr2, qadj) = r_squared(&y, &quad_fit, 1);
    let quadratic = FitReport {
        model: FitModel::QuadraticOnly,
        coefficients: vec![quad_coeff / (t_scale * t_scale)],
        r2: qr2,
        r2_adjusted: qadj,
        window,
        n_points: t.len(),
        alpha_clamped: false,
    };

    let det = s2 * s4 - s3 * s3;
    if det.abs() < 1e-12 * s2 * s4 {
        return Err(Error::Fit("degenerate design matrix".into()));
    }
    let mut alpha = (sy * s4 - s2y * s3) / det;
    let mut beta = (s2 * s2y - s3 * sy) / det;
    let clamped = alpha < 0.0;
    if clamped {
        alpha = 0.0;
        beta = quad_coeff;
    }
    let lin_fit: Vec<f64> = s.iter().map(|s| alpha * s + beta * s * s).collect();
    let (lr2, ladj) = r_squared(&y, &lin_fit, 2);
    let linear = FitReport {
        model: FitModel::LinearPlusQuadratic,
        coefficients: vec![alpha / t_scale, beta / (t_scale * t_scale)],
        r2: lr2,
        r2_adjusted: ladj,
        window,
        n_points: t.len(),
        alpha_clamped: clamped,
    };
    Ok((linear, quadratic))
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub linear_quadratic: FitReport,
    pub quadratic: FitReport,
    /// `α/β` from the first pass over the whole trace.
    pub initial_tau: Option<f64>,
    /// `α/β` after refitting on `[t_min, 5τ]`.
    pub tau: Option<f64>,
}

impl RegimeReport {
    /// `R²_adj(αt + βt²) - R²_adj(γt²)`.
    pub fn r2_gap(&self) -> f64 {
        self.linear_quadratic.r2_adjusted - self.quadratic.r2_adjusted
    }
}

/// A linear term this small against `βt` at the window end is rounding noise.
const NEGLIGIBLE_LINEAR: f64 = 1e-9;

fn has_crossover(alpha: f64, beta: f64, t_end: f64) -> bool {
    alpha > NEGLIGIBLE_LINEAR * beta.abs() * t_end && beta > 0.0
}

fn fitted_tau(fit: &FitReport) -> Option<f64> {
    let (alpha, beta) = (fit.coefficients[0], fit.coefficients[1]);
    has_crossover(alpha, beta, fit.window.1).then(|| alpha / beta)
}

/// Fits over the trace minus its first 1% of points, then refits once on
/// `[t_min, 5τ]` when a crossover `τ = α/β` exists.
pub fn detect_regimes(trace: &QfiTrace) -> Result<RegimeReport> {
    let times = trace.times();
    let skip = times.len() / 100;
    let t_min = times[skip.min(times.len() - 1)];
    let t_end = *times.last().expect("grid is nonempty");
    let (lq, q) = fit_qfi_regimes(trace, (t_min, t_end))?;
    let initial_tau = fitted_tau(&lq);
    if let Some(tau) = initial_tau {
        let upper = (5.0 * tau).min(t_end);
        if let Ok((lq2, q2)) = fit_qfi_regimes(trace, (t_min, upper)) {
            let tau2 = fitted_tau(&lq2);
            return Ok(RegimeReport {
                linear_quadratic: lq2,
                quadratic: q2,
                initial_tau,
                tau: tau2,
            });
        }
    }
    Ok(RegimeReport {
        linear_quadratic: lq,
        quadratic: q,
        initial_tau,
        tau: initial_tau,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Crossover {
    pub tau: f64,
    pub dos: f64,
    /// `τ / D(E)`.
    pub ratio: f64,
}

pub fn crossover_from_fit(fit: &FitReport, dos: &DosEstimate) -> Result<Crossover> {
    let alpha = fit
        .alpha()
        .ok_or_else(|| Error::CrossoverUndefined("fit has no linear term".into()))?;
    let beta = fit.quadratic();
    if !has_crossover(alpha, beta, fit.window.1) {
        return Err(Error::CrossoverUndefined(format!(
            "α = {alpha}, β = {beta}"
        )));
    }
    let tau = alpha / beta;
    Ok(Crossover {
        tau,
        dos: dos.value,
        ratio: tau / dos.value,
    })
}

/// Linear-to-quadratic crossover time of a QFI trace and its ratio to `D(E)`.
pub fn heisenberg_crossover(trace: &QfiTrace, dos: &DosEstimate) -> Result<Crossover> {
    crossover_from_fit(&detect_regimes(trace)?.linear_quadratic, dos)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub gamma: f64,
    pub initial: f64,
    pub asymptote: f64,
    pub t_fit: f64,
    /// Root-mean-square residual over the fit window.
    pub rms_residual: f64,
    /// False when the trace never came within 5% of its long-time mean and
    /// the whole trace was used.
    pub relaxed: bool,
}

/// Fraction of the initial deviation that counts as relaxed.
const RELAXED_FRACTION: f64 = 0.05;

/// Fits `O_∞ + (O_0 - O_∞) e^{-Γt}` to the trace with `O_0` pinned to the first
/// sample. The window ends at three times the first approach to within 5% of
/// the initial deviation from `long_time_mean`. For fixed `Γ` the best `O_∞` is
/// linear, so the search runs over `ln Γ` alone.
pub fn decay_rate(trace: &ObservableTrace, long_time_mean: f64) -> Result<DecayFit> {
    let t = trace.times();
    let y = &trace.values;
    if t.len() < 3 {
        return Err(Error::Fit("decay fit needs at least three samples".into()));
    }
    let o0 = y[0];
    let amplitude = (o0 - long_time_mean).abs();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if amplitude <= 1e-10 * scale || y.iter().all(|v| (v - o0).abs() <= 1e-12 * scale) {
        return Err(Error::Fit("trace shows no decay".into()));
    }
    let crossing = t
        .iter()
        .zip(y)
        .find(|(_, v)| (*v - long_time_mean).abs() <= RELAXED_FRACTION * amplitude)
        .map(|(t, _)| *t);
    let relaxed = crossing.is_some();
    let t_fit = crossing.map_or(*t.last().unwrap(), |c| (3.0 * c).min(*t.last().unwrap()));
    let n = t.iter().take_while(|&&s| s <= t_fit).count().max(3);
    let (t, y) = (&t[..n], &y[..n]);

    // residual after eliminating the asymptote for a given rate
    let profile = |log_gamma: f64| -> (f64, f64) {
        let g = log_gamma.exp();
        let (mut num, mut den) = (0.0, 0.0);
        for (&s, &v) in t.iter().zip(y) {
            let w = 1.0 - (-g * s).exp();
            num += w * (v - o0 * (1.0 - w));
            den += w * w;
        }
        let o_inf = if den > 0.0 { num / den } else { long_time_mean };
        let sse = t
            .iter()
            .zip(y)
            .map(|(&s, &v)| {
                let e = (-g * s).exp();
                (v - (o_inf + (o0 - o_inf) * e)).powi(2)
            })
            .sum();
        (sse, o_inf)
    };
    let span = t[n - 1] - t[0];
    let dt_min = t
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let (lo, hi) = (
        (0.01 / span.max(1e-300)).ln(),
        (10.0 / dt_min.max(1e-300)).ln(),
    );
    let steps = 200;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=steps {
        let x = lo + (hi - lo) * k as f64 / steps as f64;
        let (sse, _) = profile(x);
        if sse < best.0 {
            best = (sse, x);
        }
    }
    let h = (hi - lo) / steps as f64;
    let (mut a, mut b) = (best.1 - h, best.1 + h);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if profile(c).0 < profile(d).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let log_gamma = 0.5 * (a + b);
    let (sse, asymptote) = profile(log_gamma);
    let gamma = log_gamma.exp();
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::Fit(format!("non-positive decay rate {gamma}")));
    }
    Ok(DecayFit {
        gamma,
        initial: o0,
        asymptote,
        t_fit: t[n - 1],
        rms_residual: (sse / n as f64).sqrt(),
        relaxed,
    })
}

/// Weights defining the average over uncoupled eigenstates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum ShellWeighting {
    /// `w_α = |⟨φ_α|ψ0⟩|²`.
    #[default]
    InitialPopulations,
    /// Uniform over uncoupled states with `|E_α - E| ≤ half_width`, where `E`
    /// is the energy of the initial state under the full Hamiltonian.
    EnergyShell { half_width: f64 },
}

/// `mean(O²) - mean(O)²` over the diagonal elements `O_αα` in the uncoupled
/// eigenbasis.
pub fn microcanonical_variance(
    es0: &EigenSystem,
    es: &EigenSystem,
    psi0: &StateVector,
    op: &HamiltonianMatrix,
    weighting: ShellWeighting,
) -> Result<f64> {
    if **es0.basis() != **es.basis() {
        return Err(Error::BasisMismatch(
            "uncoupled and full eigensystems differ".into(),
        ));
    }
    let diag = eigen_diagonal(es0, op)?;
    let weights: Vec<f64> = match weighting {
        ShellWeighting::InitialPopulations => es0
            .coefficients(psi0)?
            .iter()
            .map(|c| c.norm_sqr())
            .collect(),
        ShellWeighting::EnergyShell { half_width } => {
            let energy: f64 = es
                .coefficients(psi0)?
                .iter()
                .zip(es.energies())
                .map(|(c, e)| c.norm_sqr() * e)
                .sum();
            let inside: Vec<f64> = es0
                .energies()
                .iter()
                .map(|e| {
                    if (e - energy).abs() <= half_width {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            if inside.iter().all(|&w| w == 0.0) {
                return Err(Error::InvalidParams(format!(
                    "no uncoupled states within {half_width} of E = {energy}"
                )));
            }
            inside
        }
    };
    let total: f64 = weights.iter().sum();
    let mean: f64 = weights.iter().zip(&diag).map(|(w, d)| w * d).sum::<f64>() / total;
    let mean_sq: f64 = weights
        .iter()
        .zip(&diag)
        .map(|(w, d)| w * d * d)
        .sum::<f64>()
        / total;
    Ok((mean_sq - mean * mean).max(0.0))
}

/// `δ² = χ ΔO² / (4π D Γ)`.
pub fn fdt_predict(delta_o2: f64, dos: f64, gamma: f64, chi: f64) -> Result<f64> {
    for (name, v) in [("ΔO²", delta_o2), ("D(E)", dos), ("Γ", gamma), ("χ", chi)] {
        if !(v > 0.0) {
            return Err(Error::InvalidParams(format!(
                "{name} = {v} must be positive"
            )));
        }
    }
    Ok(chi * fdt_abscissa(delta_o2, dos, gamma))
}

/// `ΔO² / (4π D Γ)`.
pub fn fdt_abscissa(delta_o2: f64, dos: f64, gamma: f64) -> f64 {
    delta_o2 / (4.0 * PI * dos * gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdtRecord {
    pub scenario: String,
    pub n: usize,
    pub scan_value: f64,
    pub seed: u64,
    pub delta2: f64,
    pub gamma: f64,
    pub dos: f64,
    pub delta_o2: f64,
    pub predicted_delta2: f64,
    pub chi_used: f64,
}

impl FdtRecord {
    pub fn abscissa(&self) -> f64 {
        fdt_abscissa(self.delta_o2, self.dos, self.gamma)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChiFit {
    pub chi: f64,
    /// RMS of `δ²/(χ x) - 1` over the records.
    pub rms_relative_residual: f64,
    pub max_relative_residual: f64,
    pub n_records: usize,
}

fn check_records(records: &[FdtRecord]) -> Result<Vec<(f64, f64)>> {
    if records.len() < 3 {
        return Err(Error::Fit(format!(
            "{} FDT records, need at least 3",
            records.len()
        )));
    }
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.abscissa(), r.delta2)).collect();
    if pts
        .iter()
        .any(|(x, y)| !(x.is_finite() && y.is_finite() && *x > 0.0))
    {
        return Err(Error::Fit(
            "FDT records contain non-positive or non-finite values".into(),
        ));
    }
    Ok(pts)
}

/// Slope through the origin of measured `δ²` against `ΔO²/(4πDΓ)`.
pub fn fit_chi(records: &[FdtRecord]) -> Result<ChiFit> {
    let pts = check_records(records)?;
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let chi = sxy / sxx;
    let rel: Vec<f64> = pts.iter().map(|(x, y)| y / (chi * x) - 1.0).collect();
    Ok(ChiFit {
        chi,
        rms_relative_residual: (rel.iter().map(|r| r * r).sum::<f64>() / rel.len() as f64).sqrt(),
        max_relative_residual: rel.iter().fold(0.0f64, |m, r| m.max(r.abs())),
        n_records: pts.len(),
    })
}

/// Ordinary least-squares slope of `ln δ²` against `ln(ΔO²/(4πDΓ))`.
pub fn loglog_slope(records: &[FdtRecord]) -> Result<f64> {
    let pts = check_records(records)?;
    if pts.iter().any(|(_, y)| *y <= 0.0) {
        return Err(Error::Fit(
            "log-log slope needs positive fluctuations".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::Fit("abscissae do not vary".into()));
    }
    Ok(logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{diagonal_ensemble_mean, expectation_trace};
    use crate::hilbert::{config_from_ket, SpinBasis};
    use crate::models::{build_spin_chain, identity, sigma_z, uncoupled_factors, SpinChainParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn one_spin() -> Arc<SpinBasis> {
        Arc::new(SpinBasis::full(1).unwrap())
    }

    fn sigma_x_one() -> HamiltonianMatrix {
        let mut m = Mat::<f64>::zeros(2, 2);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        HamiltonianMatrix::from_dense(one_spin(), &m, "sx").unwrap()
    }

    fn random_state(basis: Arc<SpinBasis>, rng: &mut ChaCha8Rng) -> StateVector {
        let amps = (0..basis.dim())
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        StateVector::normalized(basis, amps).unwrap()
    }

    /// `|↑_x⟩ ⊗ |1010…⟩` on the chain.
    fn probe_x_state(es: &EigenSystem) -> StateVector {
        let n = es.basis().n_sites();
        let bath: u64 = (0..n - 1)
            .filter(|k| k % 2 == 0)
            .map(|k| 1u64 << (k + 1))
            .sum();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![c(0.0, 0.0); es.dim()];
        amps[bath as usize] = c(s, 0.0);
        amps[(bath | 1) as usize] = c(s, 0.0);
        StateVector::from_amplitudes(es.basis().clone(), amps).unwrap()
    }

    fn chain(n: usize, w: f64) -> (SpinChainParams, EigenSystem) {
        let p = SpinChainParams {
            n,
            w,
            disorder_seed: 4,
            contact: 2.max(n / 2),
            ..Default::default()
        };
        let es = diagonalize(&build_spin_chain(&p).unwrap()).unwrap();
        (p, es)
    }

    #[test]
    fn qfi_of_identity_generator_vanishes() {
        let (_, es) = chain(5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = random_state(es.basis().clone(), &mut rng);
        let gen = GeneratorObservable::new(&es, identity(es.basis())).unwrap();
        let grid = TimeGrid::linear(0.0, 50.0, 30).unwrap();
        let q = qfi_trace(&es, &psi, &gen, &grid).unwrap();
        assert!(q.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn two_level_qfi() {
        let h = HamiltonianMatrix::from_diagonal(one_spin(), vec![-1.0, 1.0], "z").unwrap();
        let es = diagonalize(&h).unwrap();
        let ground = es.eigenstate(0).unwrap();
        let gen = GeneratorObservable::new(&es, sigma_x_one()).unwrap();
        let grid = TimeGrid::linear(0.0, 10.0, 101).unwrap();
        let q = qfi_trace(&es, &ground, &gen, &grid).unwrap();
        for (t, v) in q.times().iter().zip(&q.values) {
            assert!((v - 4.0 * t.sin().powi(2)).abs() < 1e-12, "t={t}: {v}");
        }
    }

    #[test]
    fn generator_cache_reconstructs_operator() {
        let (_, es) = chain(5, 1.0);
        let op = sigma_z(es.basis(), 1).unwrap();
        let gen = GeneratorObservable::new(&es, op.clone()).unwrap();
        let v = es.vectors();
        let back = gemm(gemm(v, gen.eigenbasis_elements()).as_ref(), v.transpose());
        let dense = op.to_dense();
        for i in 0..es.dim() {
            for j in 0..es.dim() {
                assert!((back[(i, j)] - dense[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn short_time_limit_is_variance() {
        let (_, es) = chain(6, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = sigma_z(es.basis(), 1).unwrap();
        let gen = GeneratorObservable::new(&es, op.clone()).unwrap();
        let t = 1e-3;
        for state in [
            probe_x_state(&es),
            random_state(es.basis().clone(), &mut rng),
        ] {
            let q = qfi_trace(&es, &state, &gen, &TimeGrid::new(vec![t]).unwrap())
                .unwrap()
                .values[0];
            let mean = crate::evolve::expval(&state, &op).unwrap();
            let var = 1.0 - mean * mean;
            assert!(
                (q / (t * t) - 4.0 * var).abs() < 1e-4 * 4.0 * var,
                "{} vs {}",
                q / (t * t),
                4.0 * var
            );
        }
        // a σ^z eigenstate carries no first-order information
        let z = StateVector::basis_state(es.basis().clone(), config_from_ket("110100").unwrap())
            .unwrap();
        let q = qfi_trace(&es, &z, &gen, &TimeGrid::new(vec![t]).unwrap())
            .unwrap()
            .values[0];
        assert!(q / (t * t) < 1e-5);
    }

    #[test]
    fn derivative_state_matches_triple_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, w) in [(4, 0.0), (5, 2.0), (6, 0.5)] {
            let (_, es) = chain(n, w);
            let psi = random_state(es.basis().clone(), &mut rng);
            let op = sigma_z(es.basis(), 1).unwrap();
            let gen = GeneratorObservable::new(&es, op).unwrap();
            let grid = TimeGrid::new(vec![0.0, 0.37, 2.0, 15.0, 120.0]).unwrap();
            let q = qfi_trace(&es, &psi, &gen, &grid).unwrap();
            let a = es.coefficients(&psi).unwrap();
            for (t, v) in grid.points().iter().zip(&q.values) {
                let oracle =
                    reference::qfi_triple_sum(es.energies(), &a, gen.eigenbasis_elements(), *t);
                assert!(
                    (v - oracle).abs() <= 1e-8 * oracle.abs().max(1e-12),
                    "t={t}: {v} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn degenerate_spectrum_uses_direct_terms() {
        // probe decoupled: every level is paired with its flipped-probe partner only through B
        let p = SpinChainParams {
            n: 4,
            b: 0.0,
            jz_sb: 0.0,
            jx_sb: 0.0,
            contact: 3,
            ..Default::default()
        };
        let es = diagonalize(&build_spin_chain(&p).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = random_state(es.basis().clone(), &mut rng);
        let gen = GeneratorObservable::new(&es, sigma_z(es.basis(), 1).unwrap()).unwrap();
        let grid = TimeGrid::new(vec![0.5, 3.0, 40.0]).unwrap();
        let q = qfi_trace(&es, &psi, &gen, &grid).unwrap();
        let a = es.coefficients(&psi).unwrap();
        for (t, v) in grid.points().iter().zip(&q.values) {
            let oracle =
                reference::qfi_triple_sum(es.energies(), &a, gen.eigenbasis_elements(), *t);
            assert!(
                (v - oracle).abs() <= 1e-8 * oracle.abs().max(1e-12),
                "t={t}: {v} vs {oracle}"
            );
        }
    }

    #[test]
    fn loschmidt_two_level() {
        let basis = one_spin();
        let builder = |lambda: f64| {
            let mut m = Mat::<f64>::zeros(2, 2);
            m[(0, 0)] = -1.0;
            m[(1, 1)] = 1.0;
            m[(0, 1)] = lambda;
            m[(1, 0)] = lambda;
            HamiltonianMatrix::from_dense(basis.clone(), &m, "h")
        };
        let psi = StateVector::basis_state(basis.clone(), 0).unwrap();
        let grid = TimeGrid::linear(0.0, 3.0, 31).unwrap();
        let report = loschmidt_qfi_check(builder, 0.0, 1e-5, &psi, &grid).unwrap();
        assert!(report.qfi[0].abs() < 1e-12 && report.echo_estimate[0].abs() < 1e-12);
        for ((t, e), q) in grid
            .points()
            .iter()
            .zip(&report.echo_estimate)
            .zip(&report.qfi)
        {
            assert!((q - 4.0 * t.sin().powi(2)).abs() < 1e-9);
            assert!((e - q).abs() < 1e-3 * q.max(1e-5));
        }
    }

    #[test]
    fn qfi_growth_laws() {
        let (_, es) = chain(6, 0.0);
        let psi = probe_x_state(&es);
        let gen = GeneratorObservable::new(&es, sigma_z(es.basis(), 1).unwrap()).unwrap();
        let width = es.spectral_width();
        let short = TimeGrid::logarithmic(1e-4 / width, 1e-2 / width, 20).unwrap();
        let q = qfi_trace(&es, &psi, &gen, &short).unwrap();
        let records: Vec<(f64, f64)> = q
            .times()
            .iter()
            .zip(&q.values)
            .map(|(t, v)| (t.ln(), v.ln()))
            .collect();
        let n = records.len() as f64;
        let mx = records.iter().map(|r| r.0).sum::<f64>() / n;
        let my = records.iter().map(|r| r.1).sum::<f64>() / n;
        let slope = records.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum::<f64>()
            / records.iter().map(|r| (r.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - 2.0).abs() < 0.02, "short-time slope {slope}");

        let t_h = crate::evolve::mean_heisenberg_time(&es);
        let long = TimeGrid::new(vec![1e3 * t_h, 1e4 * t_h]).unwrap();
        let q = qfi_trace(&es, &psi, &gen, &long).unwrap();
        let (a, b) = (
            q.values[0] / long.points()[0].powi(2),
            q.values[1] / long.points()[1].powi(2),
        );
        assert!(((b - a) / a).abs() < 0.05, "{a} -> {b}");
    }

    fn synthetic(values: impl Fn(f64) -> f64) -> QfiTrace {
        let grid = TimeGrid::linear(0.0, 20.0, 201).unwrap();
        let values = grid.points().iter().map(|&t| values(t)).collect();
        QfiTrace { grid, values }
    }

    #[test]
    fn exact_model_recovery() {
        let trace = synthetic(|t| 3.0 * t + 0.5 * t * t);
        let (lq, q) = fit_qfi_regimes(&trace, (0.0, 20.0)).unwrap();
        assert!((lq.coefficients[0] - 3.0).abs() < 1e-10);
        assert!((lq.coefficients[1] - 0.5).abs() < 1e-10);
        assert!((lq.r2_adjusted - 1.0).abs() < 1e-10);
        assert!(q.r2_adjusted < lq.r2_adjusted);

        let pure = synthetic(|t| 0.1 * t * t);
        let (lq, q) = fit_qfi_regimes(&pure, (0.0, 20.0)).unwrap();
        assert!((lq.r2_adjusted - q.r2_adjusted).abs() < 1e-9);
        assert!((q.coefficients[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn negative_linear_term_is_clamped() {
        let trace = synthetic(|t| -0.5 * t + 0.2 * t * t);
        let (lq, q) = fit_qfi_regimes(&trace, (0.0, 20.0)).unwrap();
        assert!(lq.alpha_clamped);
        assert_eq!(lq.coefficients[0], 0.0);
        assert_eq!(lq.coefficients[1], q.coefficients[0]);
        assert!(lq.r2_adjusted <= 1.0);
    }

    #[test]
    fn fit_window_validation() {
        let trace = synthetic(|t| t);
        assert!(matches!(
            fit_qfi_regimes(&trace, (0.0, 0.5)),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn crossover_examples() {
        let dos = DosEstimate {
            energy: 0.0,
            value: 50.0,
            bandwidth: 1.0,
        };
        let fit = FitReport {
            model: FitModel::LinearPlusQuadratic,
            coefficients: vec![10.0, 0.1],
            r2: 1.0,
            r2_adjusted: 1.0,
            window: (0.0, 1.0),
            n_points: 10,
            alpha_clamped: false,
        };
        let c = crossover_from_fit(&fit, &dos).unwrap();
        assert!((c.tau - 100.0).abs() < 1e-12);
        assert!((c.ratio - 2.0).abs() < 1e-12);
        let pure = synthetic(|t| 0.3 * t * t);
        assert!(matches!(
            heisenberg_crossover(&pure, &dos),
            Err(Error::CrossoverUndefined(_))
        ));

        let mixed = synthetic(|t| 2.0 * t + 0.4 * t * t);
        let report = detect_regimes(&mixed).unwrap();
        assert!((report.tau.unwrap() - 5.0).abs() < 1e-9);
        assert!((heisenberg_crossover(&mixed, &dos).unwrap().tau - 5.0).abs() < 1e-9);
    }

    fn exp_trace(gamma: f64, o0: f64, o_inf: f64) -> ObservableTrace {
        let grid = TimeGrid::linear(0.0, 60.0, 601).unwrap();
        let values = grid
            .points()
            .iter()
            .map(|&t| o_inf + (o0 - o_inf) * (-gamma * t).exp())
            .collect();
        ObservableTrace {
            grid,
            values,
            tag: "synthetic".into(),
        }
    }

    #[test]
    fn exact_exponential_decay() {
        let fit = decay_rate(&exp_trace(0.25, 1.0, 0.2), 0.2).unwrap();
        assert!((fit.gamma - 0.25).abs() < 1e-6, "{}", fit.gamma);
        assert!((fit.asymptote - 0.2).abs() < 1e-6);
        assert!(fit.relaxed);
        // an imperfect long-time mean only moves the window
        let fit = decay_rate(&exp_trace(0.25, 1.0, 0.2), 0.21).unwrap();
        assert!((fit.gamma - 0.25).abs() < 1e-6);
    }

    #[test]
    fn constant_trace_rejected() {
        let grid = TimeGrid::linear(0.0, 10.0, 50).unwrap();
        let trace = ObservableTrace {
            grid,
            values: vec![0.7; 50],
            tag: "flat".into(),
        };
        assert!(matches!(decay_rate(&trace, 0.7), Err(Error::Fit(_))));
    }

    #[test]
    fn ergodic_chain_decay() {
        let p = SpinChainParams {
            n: 9,
            ..Default::default()
        };
        let es = diagonalize(&build_spin_chain(&p).unwrap()).unwrap();
        let bath_es = diagonalize(&uncoupled_factors(&p).unwrap().1).unwrap();
        let mid = bath_es.dim() / 2;
        let bath_state: Vec<C64> = (0..bath_es.dim())
            .map(|i| c(bath_es.vectors()[(i, mid)], 0.0))
            .collect();
        let mut amps = vec![c(0.0, 0.0); es.dim()];
        for (b, v) in bath_state.iter().enumerate() {
            amps[(b << 1) | 1] = *v;
        }
        let psi = StateVector::from_amplitudes(es.basis().clone(), amps).unwrap();
        let op = sigma_z(es.basis(), 1).unwrap();
        let grid = TimeGrid::linear(0.0, 40.0, 401).unwrap();
        let trace = expectation_trace(&es, &psi, &op, &grid).unwrap();
        let mean = diagonal_ensemble_mean(&es, &psi, &op).unwrap();
        let fit = decay_rate(&trace, mean).unwrap();
        assert!(fit.gamma > 0.0);
        assert!(
            fit.rms_residual < 0.1 * (trace.values[0] - mean).abs(),
            "{fit:?}"
        );
    }

    #[test]
    fn microcanonical_examples() {
        let p = SpinChainParams {
            n: 5,
            ..Default::default()
        };
        let es = diagonalize(&build_spin_chain(&p).unwrap()).unwrap();
        let (field, bath) = uncoupled_factors(&p).unwrap();
        let es0 = EigenSystem::with_probe_spin(field, &diagonalize(&bath).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let psi = random_state(es.basis().clone(), &mut rng);
        let id = identity(es.basis());
        let w = ShellWeighting::InitialPopulations;
        assert!(
            microcanonical_variance(&es0, &es, &psi, &id, w)
                .unwrap()
                .abs()
                < 1e-12
        );

        let sz = sigma_z(es.basis(), 1).unwrap();
        let single = es0.eigenstate(9).unwrap();
        assert!(
            microcanonical_variance(&es0, &es, &single, &sz, w)
                .unwrap()
                .abs()
                < 1e-12
        );

        // probe along x: equal weight on both probe sectors
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bath_col = 3;
        let mut amps = vec![c(0.0, 0.0); es.dim()];
        let bath_es = diagonalize(&uncoupled_factors(&p).unwrap().1).unwrap();
        for b in 0..bath_es.dim() {
            let v = bath_es.vectors()[(b, bath_col)];
            amps[b << 1] = c(s * v, 0.0);
            amps[(b << 1) | 1] = c(s * v, 0.0);
        }
        let x_state = StateVector::from_amplitudes(es.basis().clone(), amps).unwrap();
        let v = microcanonical_variance(&es0, &es, &x_state, &sz, w).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");

        // a shell wide enough to hold every state weighs both probe sectors equally
        let shell = ShellWeighting::EnergyShell { half_width: 1e6 };
        let all = microcanonical_variance(&es0, &es, &x_state, &sz, shell).unwrap();
        assert!((all - 1.0).abs() < 1e-12, "{all}");
        let empty = ShellWeighting::EnergyShell { half_width: 1e-9 };
        assert!(microcanonical_variance(&es0, &es, &x_state, &sz, empty).is_err());
    }

    #[test]
    fn fdt_arithmetic() {
        let base = fdt_predict(1.0, 100.0, 0.1, 1.0).unwrap();
        assert!((base - 1.0 / (40.0 * PI)).abs() < 1e-15);
        assert!((fdt_predict(1.0, 200.0, 0.1, 1.0).unwrap() - base / 2.0).abs() < 1e-15);
        assert!((fdt_predict(1.0, 100.0, 0.1, 5.5).unwrap() - 5.5 * base).abs() < 1e-15);
        assert!(fdt_predict(0.0, 100.0, 0.1, 1.0).is_err());
        assert!(fdt_predict(1.0, -1.0, 0.1, 1.0).is_err());
    }

    fn record(delta_o2: f64, dos: f64, gamma: f64, delta2: f64) -> FdtRecord {
        FdtRecord {
            scenario: "synthetic".into(),
            n: 0,
            scan_value: 0.0,
            seed: 0,
            delta2,
            gamma,
            dos,
            delta_o2,
            predicted_delta2: 0.0,
            chi_used: 1.0,
        }
    }

    #[test]
    fn chi_fit_recovers_synthetic_prefactors() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let inputs: Vec<(f64, f64, f64)> = (0..12)
            .map(|_| {
                (
                    rng.random_range(0.2..1.0),
                    rng.random_range(10.0..1000.0),
                    rng.random_range(0.01..0.5),
                )
            })
            .collect();
        let exact: Vec<FdtRecord> = inputs
            .iter()
            .map(|&(o, d, g)| record(o, d, g, fdt_predict(o, d, g, 1.0).unwrap()))
            .collect();
        let fit = fit_chi(&exact).unwrap();
        assert!((fit.chi - 1.0).abs() < 1e-10);
        assert!((loglog_slope(&exact).unwrap() - 1.0).abs() < 1e-10);

        let noise = Normal::new(0.0, 0.05).unwrap();
        let noisy: Vec<FdtRecord> = inputs
            .iter()
            .map(|&(o, d, g)| {
                let y = fdt_predict(o, d, g, 5.5).unwrap() * (1.0 + noise.sample(&mut rng));
                record(o, d, g, y)
            })
            .collect();
        let fit = fit_chi(&noisy).unwrap();
        assert!((fit.chi - 5.5).abs() < 0.3, "{}", fit.chi);
        assert!(fit_chi(&noisy[..2]).is_err());
    }
}
