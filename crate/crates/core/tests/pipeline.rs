use photonic_cluster::emitter::{simulate_dense, simulate_mpo, simulate_trajectories, ProtocolSpec};
use photonic_cluster::entangle::{localizable_entanglement, LeOptions};
use photonic_cluster::graph::{ideal_cluster_mps, ideal_cluster_state, local_energies, LadderGraph};
use photonic_cluster::linalg;
use photonic_cluster::measure::{extract_moments, sample_heterodyne, DetectionConfig, MomentTable, NoiseReference};
use photonic_cluster::noise::NoiseModel;
use photonic_cluster::tomo::{local_rdms_from_state, mle_from_moments, reconstruct_mpo, MleOptions, ReconOptions};
use photonic_cluster::SiteLabel;

fn spec(n: usize, preset: &str) -> ProtocolSpec {
    ProtocolSpec::full(n, NoiseModel::preset(preset).unwrap())
}

#[test]
fn dense_and_mpo_engines_agree_under_noise() {
    let s = spec(2, "all_errors");
    let dense = simulate_dense(&s).unwrap();
    let mpo = simulate_mpo(&s).unwrap().to_dense().unwrap();
    assert!(linalg::max_abs_diff(dense.data(), mpo.data()) < 1e-9);
}

#[test]
fn trajectory_average_converges_to_dense() {
    let s = spec(2, "decoherence_only");
    let dense = simulate_dense(&s).unwrap();
    let ens = simulate_trajectories(&s, 4000, 99).unwrap();
    let avg = ens.mean_photonic_density().unwrap();
    assert!(avg.trace_distance(&dense).unwrap() < 0.05);
}

#[test]
fn ideal_emission_gives_unit_energies_and_half_ebit() {
    let s = spec(3, "ideal");
    let g = LadderGraph::new(3).unwrap();
    let mpo = simulate_mpo(&s).unwrap();
    assert!((mpo.fidelity(&ideal_cluster_mps(&g)).unwrap() - 1.0).abs() < 1e-10);
    for e in local_energies(&mpo, &g).unwrap() {
        assert!(e.abs() < 1e-10);
    }
    let le = localizable_entanglement(&mpo, &LeOptions::default()).unwrap();
    assert!((le.mean - 0.5).abs() < 1e-10);
}

#[test]
fn noise_lowers_cluster_fidelity() {
    let g = LadderGraph::new(2).unwrap();
    let target = ideal_cluster_state(&g);
    let deco = simulate_dense(&spec(2, "decoherence_only")).unwrap().fidelity(&target).unwrap();
    let all = simulate_dense(&spec(2, "all_errors")).unwrap().fidelity(&target).unwrap();
    assert!(all < deco && deco < 1.0);
}

#[test]
fn sampled_moments_feed_mle() {
    let rho = simulate_dense(&spec(2, "ideal")).unwrap();
    let keep = [SiteLabel::Photon(1), SiteLabel::Photon(2)];
    let rdm = rho.partial_trace(&keep).unwrap();
    let cfg = DetectionConfig {
        eta: 0.5,
        shots: 200_000,
        ..DetectionConfig::default()
    };
    let shots = sample_heterodyne(&rdm, &cfg, 3).unwrap();
    let nbar = cfg.noise_photons();
    let table = extract_moments(&shots, &keep, cfg.scale, &NoiseReference::Analytic { nbar }, 1).unwrap();
    let exact = MomentTable::exact(&rdm, 1, 0.0).unwrap();
    for e in &exact.entries {
        let m = table.mean(&e.index).unwrap();
        assert!((m - e.mean).norm() < 0.1, "{:?}: {m} vs {}", e.index, e.mean);
    }
    let fit = mle_from_moments(&table, &MleOptions::default()).unwrap();
    assert!(fit.state.uhlmann_fidelity(&rdm).unwrap() > 0.9);
}

#[test]
fn exact_rdms_reconstruct_the_ideal_cluster() {
    let g = LadderGraph::new(3).unwrap();
    let mpo = simulate_mpo(&spec(3, "ideal")).unwrap();
    let rdms = local_rdms_from_state(&mpo, &g).unwrap();
    let report = reconstruct_mpo(&rdms, &ReconOptions::default()).unwrap();
    assert!(report.mpo.fidelity(&ideal_cluster_mps(&g)).unwrap() > 0.99);
}
