//! Quick internal consistency checks, run by `ergoprobe selftest`.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::evolve::{closed_form_fluctuation, long_time_fluctuations, FluctuationMode, TimeGrid};
use crate::hilbert::StateVector;
use crate::models::{build_spin_chain, sigma_z, HamiltonianMatrix, SpinChainParams};
use crate::probes::{qfi_trace, reference::qfi_triple_sum, GeneratorObservable};
use crate::spectra::{diagonalize, r_statistic, SpectralWindow};
use crate::C64;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, target: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: (value - target).abs() <= tol,
        detail: format!("got {value:.6}, expected {target:.6} ± {tol}"),
    }
}

fn poisson_r() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut e = 0.0;
    let levels: Vec<f64> = (0..100_000)
        .map(|_| {
            e -= (1.0 - rng.random::<f64>()).ln();
            e
        })
        .collect();
    let r = r_statistic(&levels, SpectralWindow::ALL)?;
    Ok(check("poisson_r", r.mean_r, 0.386, 0.005))
}

fn goe_r() -> Result<CheckResult> {
    let dim = 600;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut a = Mat::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let x: f64 = rng.sample(StandardNormal);
            let v = if i == j {
                x * std::f64::consts::SQRT_2
            } else {
                x
            };
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let eig = crate::spectra::symmetric_eigenvalues(a.as_ref())?;
    let r = r_statistic(&eig, SpectralWindow::default())?;
    Ok(check("goe_r", r.mean_r, 0.5307, 0.02))
}

fn chain_inputs() -> Result<(HamiltonianMatrix, StateVector)> {
    let p = SpinChainParams {
        n: 6,
        contact: 3,
        w: 1.0,
        disorder_seed: 7,
        ..Default::default()
    };
    let h = build_spin_chain(&p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let amps: Vec<C64> = (0..h.dim())
        .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let psi = StateVector::normalized(h.basis().clone(), amps)?;
    Ok((h, psi))
}

fn qfi_against_triple_sum() -> Result<CheckResult> {
    let (h, psi) = chain_inputs()?;
    let es = diagonalize(&h)?;
    let gen = GeneratorObservable::new(&es, sigma_z(h.basis(), 1)?)?;
    let grid = TimeGrid::new(vec![0.3, 2.0, 11.0])?;
    let trace = qfi_trace(&es, &psi, &gen, &grid)?;
    let coeffs = es.coefficients(&psi)?;
    let mut worst = 0.0f64;
    for (t, q) in grid.points().iter().zip(&trace.values) {
        let oracle = qfi_triple_sum(es.energies(), &coeffs, gen.eigenbasis_elements(), *t);
        worst = worst.max((q - oracle).abs() / oracle.abs().max(1e-12));
    }
    Ok(check("qfi_vs_triple_sum", worst, 0.0, 1e-8))
}

fn fluctuation_closed_form() -> Result<CheckResult> {
    let (h, psi) = chain_inputs()?;
    let es = diagonalize(&h)?;
    let op = sigma_z(h.basis(), 1)?;
    let pops: Vec<f64> = es
        .coefficients(&psi)?
        .iter()
        .map(|a| a.norm_sqr())
        .collect();
    let closed = closed_form_fluctuation(&es, &pops, &op)?;
    let width = es.spectral_width();
    let gap = es
        .energies()
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 1e-9 * width)
        .fold(f64::INFINITY, f64::min);
    let horizon = 400.0 * 2.0 * std::f64::consts::PI / gap;
    let r = long_time_fluctuations(
        &es,
        &psi,
        &op,
        FluctuationMode::TemporalVariance,
        horizon,
        20_000,
    )?;
    Ok(check(
        "fluctuation_closed_form",
        r.value / closed,
        1.0,
        0.05,
    ))
}

/// Runs all checks; an `Err` means a check could not run at all.
pub fn selftest() -> Result<Vec<CheckResult>> {
    Ok(vec![
        poisson_r()?,
        goe_r()?,
        qfi_against_triple_sum()?,
        fluctuation_closed_form()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in selftest().unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
