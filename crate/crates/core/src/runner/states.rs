//! Initial states for each scenario.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{InitialStateSpec, ReferenceHamiltonian};
use crate::error::{Error, Result};
use crate::hilbert::{config_from_ket, BasisKind, SpinBasis, StateVector};
use crate::spectra::EigenSystem;
use crate::C64;

/// What a state constructor may need; eigensystems are optional because not
/// every scenario computes them.
#[derive(Clone, Copy)]
pub struct StateInputs<'a> {
    pub basis: &'a Arc<SpinBasis>,
    pub full: Option<&'a EigenSystem>,
    pub uncoupled: Option<&'a EigenSystem>,
    /// Bath-only eigensystem on sites `2..=N`.
    pub bath: Option<&'a EigenSystem>,
    pub realization_seed: u64,
}

/// `|↑↓↑↓…⟩` (site 1 up), or the partner starting with site 2 when `shifted`.
pub fn neel_config(n_sites: usize, shifted: bool) -> u64 {
    let offset = usize::from(shifted);
    (0..n_sites)
        .filter(|k| (k + offset) % 2 == 0)
        .map(|k| 1u64 << k)
        .sum()
}

fn missing(what: &str) -> Error {
    Error::InvalidParams(format!("initial state needs the {what} eigensystem"))
}

fn nearest_level(es: &EigenSystem, fraction: f64) -> usize {
    let e = es.energies();
    let target = e[0] + fraction * (e[e.len() - 1] - e[0]);
    let mut best = 0;
    for (i, &v) in e.iter().enumerate() {
        if (v - target).abs() < (e[best] - target).abs() {
            best = i;
        }
    }
    best
}

fn probe_times_bath(inputs: &StateInputs, fraction: f64, probe: [f64; 2]) -> Result<StateVector> {
    let bath = inputs.bath.ok_or_else(|| missing("bath"))?;
    if inputs.basis.kind() != BasisKind::Full
        || bath.basis().n_sites() + 1 != inputs.basis.n_sites()
    {
        return Err(Error::BasisMismatch(
            "probe ⊗ bath states need a full spin-chain basis".into(),
        ));
    }
    let col = nearest_level(bath, fraction);
    let v = bath.vectors();
    let mut amps = vec![C64::new(0.0, 0.0); inputs.basis.dim()];
    for b in 0..bath.dim() {
        for (s, &p) in probe.iter().enumerate() {
            amps[(b << 1) | s] = C64::new(p * v[(b, col)], 0.0);
        }
    }
    StateVector::from_amplitudes(inputs.basis.clone(), amps)
}

pub fn make_initial_state(spec: &InitialStateSpec, inputs: &StateInputs) -> Result<StateVector> {
    let basis = inputs.basis;
    let n = basis.n_sites();
    match spec {
        InitialStateSpec::ProbeUpXBathEigenstate {
            bath_energy_fraction,
        } => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            probe_times_bath(inputs, *bath_energy_fraction, [s, s])
        }
        InitialStateSpec::ProbeUpZBathEigenstate {
            bath_energy_fraction,
        } => probe_times_bath(inputs, *bath_energy_fraction, [0.0, 1.0]),
        InitialStateSpec::EigenstateIndex { index, reference } => {
            let es = match reference {
                ReferenceHamiltonian::Uncoupled => {
                    inputs.uncoupled.ok_or_else(|| missing("uncoupled"))?
                }
                ReferenceHamiltonian::Full => inputs.full.ok_or_else(|| missing("full"))?,
            };
            if *index >= es.dim() {
                return Err(Error::InvalidParams(format!(
                    "eigenstate index {index} beyond dimension {}",
                    es.dim()
                )));
            }
            es.eigenstate(*index)
        }
        InitialStateSpec::NeelZ2 => StateVector::basis_state(basis.clone(), neel_config(n, false)),
        InitialStateSpec::NeelZ2Prime => {
            StateVector::basis_state(basis.clone(), neel_config(n, true))
        }
        InitialStateSpec::AllDown => StateVector::basis_state(basis.clone(), 0),
        InitialStateSpec::ProductConfig { ket } => {
            if ket.chars().count() != n {
                return Err(Error::InvalidParams(format!(
                    "ket {ket:?} does not have {n} sites"
                )));
            }
            StateVector::basis_state(basis.clone(), config_from_ket(ket)?)
        }
        InitialStateSpec::RandomEigenSuperposition { count, seed } => {
            let es = inputs.full.ok_or_else(|| missing("full"))?;
            if *count == 0 || *count > es.dim() {
                return Err(Error::InvalidParams(format!(
                    "superposition of {count} of {} states",
                    es.dim()
                )));
            }
            let neel = basis
                .index_of(neel_config(n, false))
                .ok_or_else(|| Error::InvalidParams("Néel configuration not in basis".into()))?;
            let v = es.vectors();
            let mut order: Vec<usize> = (0..es.dim()).collect();
            order.sort_by(|&a, &b| {
                v[(neel, a)]
                    .abs()
                    .total_cmp(&v[(neel, b)].abs())
                    .then(a.cmp(&b))
            });
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(inputs.realization_seed));
            let mut coeffs = vec![C64::new(0.0, 0.0); es.dim()];
            for &mu in &order[..*count] {
                coeffs[mu] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            StateVector::normalized(basis.clone(), es.to_computational(&coeffs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{inner, ket_label};
    use crate::models::{
        build_pxp, build_spin_chain, uncoupled_factors, PxpParams, SpinChainParams,
    };
    use crate::spectra::diagonalize;

    #[test]
    fn neel_labels() {
        assert_eq!(ket_label(neel_config(4, false), 4), "1010");
        assert_eq!(ket_label(neel_config(5, true), 5), "01010");
    }

    #[test]
    fn neel_in_constrained_basis() {
        let basis = Arc::new(SpinBasis::constrained(4).unwrap());
        let inputs = StateInputs {
            basis: &basis,
            full: None,
            uncoupled: None,
            bath: None,
            realization_seed: 0,
        };
        let psi = make_initial_state(&InitialStateSpec::NeelZ2, &inputs).unwrap();
        let idx = basis.index_of(config_from_ket("1010").unwrap()).unwrap();
        assert_eq!(psi.amplitudes()[idx], C64::new(1.0, 0.0));
        assert!((psi.norm() - 1.0).abs() < 1e-15);
        assert!(make_initial_state(
            &InitialStateSpec::ProductConfig { ket: "11".into() },
            &inputs
        )
        .is_err());
    }

    #[test]
    fn eigenstate_index_and_random_superposition() {
        let p = PxpParams {
            n: 8,
            b: 0.4,
            ..Default::default()
        };
        let h = build_pxp(&p).unwrap();
        let es = diagonalize(&h).unwrap();
        let inputs = StateInputs {
            basis: h.basis(),
            full: Some(&es),
            uncoupled: None,
            bath: None,
            realization_seed: 3,
        };
        let ground = make_initial_state(
            &InitialStateSpec::EigenstateIndex {
                index: 0,
                reference: ReferenceHamiltonian::Full,
            },
            &inputs,
        )
        .unwrap();
        let e0 = crate::evolve::expval(&ground, &h).unwrap();
        assert!((e0 - es.energies()[0]).abs() < 1e-10);
        assert!(make_initial_state(
            &InitialStateSpec::EigenstateIndex {
                index: 0,
                reference: ReferenceHamiltonian::Uncoupled
            },
            &inputs
        )
        .is_err());

        let spec = InitialStateSpec::RandomEigenSuperposition {
            count: 10,
            seed: 42,
        };
        let a = make_initial_state(&spec, &inputs).unwrap();
        let b = make_initial_state(&spec, &inputs).unwrap();
        assert_eq!(a.amplitudes(), b.amplitudes());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let other = StateInputs {
            realization_seed: 4,
            ..inputs
        };
        assert_ne!(
            make_initial_state(&spec, &other).unwrap().amplitudes(),
            a.amplitudes()
        );
        // only low-overlap eigenstates are populated
        let neel = StateVector::basis_state(h.basis().clone(), neel_config(8, false)).unwrap();
        assert!(inner(&neel, &a).unwrap().norm() < 0.1);
    }

    #[test]
    fn probe_bath_states() {
        let p = SpinChainParams {
            n: 6,
            ..Default::default()
        };
        let h = build_spin_chain(&p).unwrap();
        let bath = diagonalize(&uncoupled_factors(&p).unwrap().1).unwrap();
        let inputs = StateInputs {
            basis: h.basis(),
            full: None,
            uncoupled: None,
            bath: Some(&bath),
            realization_seed: 0,
        };
        let x = make_initial_state(
            &InitialStateSpec::ProbeUpXBathEigenstate {
                bath_energy_fraction: 0.5,
            },
            &inputs,
        )
        .unwrap();
        assert!((x.norm() - 1.0).abs() < 1e-12);
        let sx = crate::hilbert::apply_pauli(&x, 1, crate::hilbert::Pauli::X).unwrap();
        assert!((inner(&x, &sx).unwrap().re - 1.0).abs() < 1e-12);
        let z = make_initial_state(
            &InitialStateSpec::ProbeUpZBathEigenstate {
                bath_energy_fraction: 0.0,
            },
            &inputs,
        )
        .unwrap();
        let sz = crate::models::sigma_z(h.basis(), 1).unwrap();
        assert!((crate::evolve::expval(&z, &sz).unwrap() - 1.0).abs() < 1e-12);
        let missing_bath = StateInputs {
            bath: None,
            ..inputs
        };
        assert!(make_initial_state(
            &InitialStateSpec::ProbeUpZBathEigenstate {
                bath_energy_fraction: 0.5
            },
            &missing_bath
        )
        .is_err());
    }
}
