use std::sync::Arc;

use ergoprobe::evolve::{propagate, survival_probability, TimeGrid};
use ergoprobe::hilbert::{apply_pauli, inner, partial_trace, Pauli, SpinBasis, StateVector};
use ergoprobe::models::{
    build_pxp, build_spin_chain, DisorderRealization, PxpParams, SpinChainParams,
};
use ergoprobe::probes::{fdt_predict, fit_chi, qfi_trace, FdtRecord, GeneratorObservable};
use ergoprobe::spectra::{diagonalize, dos_at_energy, r_statistic, unfold, SpectralWindow};
use ergoprobe::C64;
use proptest::prelude::*;

fn amplitudes(dim: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim)
        .prop_filter("nonzero", |v| {
            v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3)
        })
        .prop_map(|v| v.into_iter().map(|(re, im)| C64::new(re, im)).collect())
}

fn state(n: usize) -> impl Strategy<Value = StateVector> {
    amplitudes(1 << n).prop_map(move |a| {
        StateVector::normalized(Arc::new(SpinBasis::full(n).unwrap()), a).unwrap()
    })
}

fn chain_params() -> impl Strategy<Value = SpinChainParams> {
    (
        4usize..=6,
        0.0f64..4.0,
        0.0f64..0.8,
        0.0f64..0.5,
        any::<u64>(),
    )
        .prop_map(|(n, w, jx_sb, jz_sb, seed)| SpinChainParams {
            n,
            w,
            jx_sb,
            jz_sb,
            contact: 3,
            disorder_seed: seed,
            ..Default::default()
        })
}

fn levels() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..3.0, 30..200).prop_map(|gaps| {
        gaps.iter()
            .scan(0.0, |e, g| {
                *e += g;
                Some(*e)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inner_product_is_conjugate_symmetric(a in state(4), b in state(4)) {
        let ab = inner(&a, &b).unwrap();
        let ba = inner(&b, &a).unwrap();
        prop_assert!((ab - ba.conj()).norm() < 1e-14);
    }

    #[test]
    fn pauli_algebra(psi in state(4), site in 1usize..=4) {
        let xy = apply_pauli(&apply_pauli(&psi, site, Pauli::Y).unwrap(), site, Pauli::X).unwrap();
        let z = apply_pauli(&psi, site, Pauli::Z).unwrap();
        let zz = apply_pauli(&z, site, Pauli::Z).unwrap();
        for k in 0..psi.amplitudes().len() {
            prop_assert!((xy.amplitudes()[k] - C64::new(0.0, 1.0) * z.amplitudes()[k]).norm() < 1e-12);
            prop_assert!((zz.amplitudes()[k] - psi.amplitudes()[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn reduced_state_is_a_density_matrix(psi in state(5), mask in 1u32..31) {
        let kept: Vec<usize> = (1..=5).filter(|s| mask & (1 << (s - 1)) != 0).collect();
        let rho = partial_trace(&psi, &kept).unwrap();
        prop_assert!(rho.hermiticity_error() < 1e-12);
        prop_assert!((rho.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
        prop_assert!(rho.eigenvalues().unwrap().iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn constrained_basis_is_filtered_full_basis(n in 1usize..=12) {
        let full = SpinBasis::full(n).unwrap();
        let expected: Vec<u64> = full.states().iter().copied().filter(|s| s & (s >> 1) == 0).collect();
        let constrained = SpinBasis::constrained(n).unwrap();
        prop_assert_eq!(constrained.states(), &expected[..]);
    }

    #[test]
    fn builders_are_hermitian(p in chain_params(), b in 0.0f64..1.0, n in 3usize..=10) {
        prop_assert!(build_spin_chain(&p).unwrap().hermiticity_error() < 1e-12);
        let pxp = build_pxp(&PxpParams { n, b, ..Default::default() }).unwrap();
        prop_assert!(pxp.hermiticity_error() < 1e-12);
    }

    #[test]
    fn disorder_within_bounds(seed in any::<u64>(), w in 0.0f64..10.0, n in 3usize..=14) {
        let d = DisorderRealization::draw(seed, n, w);
        prop_assert_eq!(d.fields.len(), n);
        prop_assert!(d.fields.iter().all(|f| f.abs() <= w));
        prop_assert_eq!(d, DisorderRealization::draw(seed, n, w));
    }

    #[test]
    fn r_statistic_is_affine_invariant(e in levels(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let moved: Vec<f64> = e.iter().map(|x| a * x + b).collect();
        let r0 = r_statistic(&e, SpectralWindow::ALL).unwrap();
        let r1 = r_statistic(&moved, SpectralWindow::ALL).unwrap();
        prop_assert!((r0.mean_r - r1.mean_r).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r0.mean_r));
    }

    #[test]
    fn unfolded_spacings_have_unit_mean(e in levels()) {
        let s = unfold(&e);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dos_is_non_negative(e in levels(), frac in 0.0f64..=1.0) {
        let x = e[0] + frac * (e[e.len() - 1] - e[0]);
        prop_assert!(dos_at_energy(&e, x, None).unwrap().value >= 0.0);
    }

    #[test]
    fn fdt_round_trip(
        entries in prop::collection::vec((1e-3f64..1.0, 1e-2f64..10.0, 1.0f64..1e4), 3..12),
        chi in 0.1f64..10.0,
    ) {
        let records: Vec<FdtRecord> = entries
            .iter()
            .enumerate()
            .map(|(k, &(d_o2, gamma, dos))| FdtRecord {
                scenario: "synthetic".into(),
                n: 8,
                scan_value: k as f64,
                seed: k as u64,
                delta2: fdt_predict(d_o2, dos, gamma, chi).unwrap(),
                gamma,
                dos,
                delta_o2: d_o2,
                predicted_delta2: 0.0,
                chi_used: 1.0,
            })
            .collect();
        prop_assert!((fit_chi(&records).unwrap().chi - chi).abs() < 1e-10 * chi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dynamics_invariants(p in chain_params(), amps in amplitudes(64), t in 0.0f64..50.0) {
        let p = SpinChainParams { n: 6, ..p };
        let h = build_spin_chain(&p).unwrap();
        let es = diagonalize(&h).unwrap();
        let psi = StateVector::normalized(h.basis().clone(), amps).unwrap();
        prop_assert!((propagate(&es, &psi, t).unwrap().norm() - 1.0).abs() < 1e-12);

        let forward = survival_probability(&es, &psi, &TimeGrid::new(vec![t]).unwrap()).unwrap();
        let neg = propagate(&es, &psi, -t).unwrap();
        let backward = inner(&psi, &neg).unwrap().norm_sqr();
        prop_assert!((forward.values[0] - backward).abs() < 1e-12);

        let sz = ergoprobe::models::sigma_z(h.basis(), 1).unwrap();
        let gen = GeneratorObservable::new(&es, sz).unwrap();
        let grid = TimeGrid::new(vec![0.0, t.max(1e-3), 2.0 * t + 1.0]).unwrap();
        let q = qfi_trace(&es, &psi, &gen, &grid).unwrap();
        prop_assert!(q.values[0].abs() < 1e-9);
        prop_assert!(q.values.iter().all(|&v| v >= -1e-9));
    }
}
