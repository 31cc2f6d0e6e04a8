use faer::Mat;
use photonic_cluster::entangle::negativity;
use photonic_cluster::linalg::{self, c, CMat, C64};
use photonic_cluster::measure::{deconvolve, signal_moments, MomentTable, NoiseMoments};
use photonic_cluster::noise::{amplitude_damping, decoherence_step, phase_damping, Coherence, KrausChannel};
use photonic_cluster::ptomo::{
    choi_from_chi, choi_min_eigenvalue, chi_from_choi, input_states, process_fidelity, solve_chi,
    trace_preservation_residuals,
};
use photonic_cluster::{DensityMatrix, Mpo, SiteLabel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn photons(n: usize) -> Vec<SiteLabel> {
    (1..=n).map(SiteLabel::Photon).collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kraus operators of a random channel on dimension `d` from a Stinespring unitary.
fn random_channel(d: usize, env: usize, seed: u64) -> Vec<CMat> {
    let u = linalg::random_unitary(d * env, &mut rng(seed));
    (0..env)
        .map(|k| Mat::from_fn(d, d, |i, j| u[(i + d * k, j)]))
        .collect()
}

fn random_isometry(seed: u64) -> CMat {
    let u = linalg::random_unitary(16, &mut rng(seed));
    Mat::from_fn(16, 4, |i, j| u[(i, j)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stinespring_channels_are_complete(seed in any::<u64>(), env in 1usize..5) {
        let ch = KrausChannel::new(random_channel(3, env, seed)).unwrap();
        prop_assert!(ch.completeness_error() < 1e-10);
        let rho = linalg::random_density(3, 3, &mut rng(seed ^ 1));
        let out = ch.apply(&rho);
        prop_assert!((linalg::trace(&out).re - 1.0).abs() < 1e-10);
        prop_assert!(linalg::eigvalsh(&out).unwrap()[0] > -1e-10);
    }

    #[test]
    fn decoherence_channels_are_complete(
        t in 0.0f64..5e4,
        t1e in 1.0f64..100.0,
        t1f in 1.0f64..100.0,
        r in 0.1f64..2.0,
    ) {
        let ad = amplitude_damping(t, t1e, t1f).unwrap();
        prop_assert!(ad.completeness_error() < 1e-12);
        let s = Coherence { t1_e: t1e, t1_f: t1f, t2s_ge: r * t1e, t2s_ef: r * t1f };
        let pd = phase_damping(t, (s.t1_e, s.t2s_ge), (s.t1_f, s.t2s_ef)).unwrap();
        prop_assert!(pd.completeness_error() < 1e-12);
        let step = decoherence_step(t, &s).unwrap();
        prop_assert!(step.completeness_error() < 1e-12);
    }

    #[test]
    fn partial_trace_keeps_unit_trace(seed in any::<u64>(), rank in 1usize..8) {
        let rho = DensityMatrix::new(photons(3), linalg::random_density(8, rank, &mut rng(seed))).unwrap();
        let red = rho.partial_trace(&[SiteLabel::Photon(2)]).unwrap();
        prop_assert!((linalg::trace(red.data()).re - 1.0).abs() < 1e-12);
        prop_assert!(red.purity() <= 1.0 + 1e-12);
    }

    #[test]
    fn two_qubit_negativity_is_bounded(seed in any::<u64>(), rank in 1usize..5) {
        let rho = DensityMatrix::new(photons(2), linalg::random_density(4, rank, &mut rng(seed))).unwrap();
        let n = negativity(&rho, &[SiteLabel::Photon(1)]).unwrap();
        prop_assert!((0.0..=0.5 + 1e-12).contains(&n));
    }

    #[test]
    fn product_states_have_zero_negativity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = linalg::random_density(2, 2, &mut r);
        let b = linalg::random_density(2, 2, &mut r);
        let rho = DensityMatrix::new(photons(2), linalg::kron_sites(&[&a, &b])).unwrap();
        prop_assert!(negativity(&rho, &[SiteLabel::Photon(1)]).unwrap() < 1e-10);
    }

    #[test]
    fn moment_convolution_round_trip(seed in any::<u64>(), nbar in 0.0f64..3.0, modes in 1usize..3) {
        let d = 1 << modes;
        let rho = DensityMatrix::new(photons(modes), linalg::random_density(d, d, &mut rng(seed))).unwrap();
        let exact = MomentTable::exact(&rho, 1, 0.0).unwrap();
        let noise = vec![NoiseMoments::analytic(nbar, 1); modes];
        let back = deconvolve(&signal_moments(&exact, &noise), &noise).unwrap();
        for e in &exact.entries {
            let m = back.mean(&e.index).unwrap();
            prop_assert!((m - e.mean).norm() < 1e-9, "{:?}: {} vs {}", e.index, m, e.mean);
        }
    }

    #[test]
    fn dense_mpo_round_trip(seed in any::<u64>(), rank in 1usize..4) {
        let rho = DensityMatrix::new(photons(3), linalg::random_density(8, rank, &mut rng(seed))).unwrap();
        let mpo = Mpo::from_dense(&rho, 256, 1e-14).unwrap();
        let back = mpo.to_dense().unwrap();
        prop_assert!(linalg::max_abs_diff(back.data(), rho.data()) < 1e-10);
    }

    #[test]
    fn choi_chi_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let chi = Mat::from_fn(256, 16, |_, _| linalg::random_complex(&mut r));
        let map = photonic_cluster::ptomo::ProcessMap { chi };
        let back = chi_from_choi(&choi_from_chi(&map)).unwrap();
        prop_assert!(linalg::max_abs_diff(&back.chi, &map.chi) < 1e-10);
    }

    #[test]
    fn isometric_maps_are_physical(seed in any::<u64>()) {
        let v = random_isometry(seed);
        let inputs = input_states();
        let outputs: Vec<CMat> = inputs.iter().map(|rho| &v * rho * v.adjoint()).collect();
        let map = solve_chi(&inputs, &outputs).unwrap();
        let choi = choi_from_chi(&map);
        prop_assert!(trace_preservation_residuals(&choi).iter().all(|r| *r < 1e-9));
        prop_assert!(choi_min_eigenvalue(&choi).unwrap() > -1e-9);
        prop_assert!((process_fidelity(&choi, &choi).unwrap() - 1.0).abs() < 1e-8);
        let probe = linalg::random_density(4, 4, &mut rng(seed ^ 7));
        let expected = &v * &probe * v.adjoint();
        prop_assert!(linalg::max_abs_diff(&map.apply(&probe), &expected) < 1e-9);
    }
}

#[test]
fn ghz_negativity_is_one_half() {
    let mut psi = [C64::new(0.0, 0.0); 4];
    psi[0] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    psi[3] = psi[0];
    let m = Mat::from_fn(4, 4, |i, j| psi[i] * psi[j].conj());
    let rho = DensityMatrix::new(photons(2), m).unwrap();
    assert!((negativity(&rho, &[SiteLabel::Photon(1)]).unwrap() - 0.5).abs() < 1e-12);
}
