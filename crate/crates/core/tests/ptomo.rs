use faer::Mat;
use photonic_cluster::graph::{ideal_cluster_mps, LadderGraph};
use photonic_cluster::linalg::{self, c, CMat, C64, ONE, ZERO};
use photonic_cluster::mpo::Truncation;
use photonic_cluster::noise::NoiseModel;
use photonic_cluster::ptomo::*;

/// Ideal cycle as a qubit isometry: H on both sources, CZ, then emission
/// into a fresh photon per source.
fn ideal_isometry(process: Process) -> CMat {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = CMat::zeros(16, 4);
    for x in 0..4usize {
        // column x of (H ⊗ H) followed by CZ
        for y in 0..4usize {
            let sign = |a: usize, b: usize| if a & b == 1 { -1.0 } else { 1.0 };
            let amp = h * sign(x & 1, y & 1) * h * sign(x >> 1, y >> 1) * if y == 3 { -1.0 } else { 1.0 };
            let (src, ph) = match process {
                Process::P1 => (y, y),
                Process::P2 => (0, y),
            };
            v[(src + 4 * ph, x)] += c(amp, 0.0);
        }
    }
    v
}

fn ideal_choi(process: Process) -> CMat {
    let v = ideal_isometry(process);
    let mut choi = CMat::zeros(64, 64);
    for a in 0..4 {
        for b in 0..4 {
            for x in 0..16 {
                for y in 0..16 {
                    choi[(a + 4 * x, b + 4 * y)] = v[(x, a)] * v[(y, b)].conj();
                }
            }
        }
    }
    choi
}

fn exact() -> TomographyConfig {
    TomographyConfig::default()
}

#[test]
fn zero_noise_matches_analytic_isometry() {
    for p in [Process::P1, Process::P2] {
        let m = run_process_tomography(p, &NoiseModel::Ideal, &exact()).unwrap();
        let choi = choi_from_chi(&m);
        let oracle = ideal_choi(p);
        assert!(linalg::max_abs_diff(&choi, &oracle) < 1e-8, "{p:?}");
        let f = process_fidelity(&choi, &oracle).unwrap();
        assert!((f - 1.0).abs() < 1e-8, "{p:?} F={f}");
        assert!(trace_preservation_residuals(&choi).iter().all(|r| *r < 1e-8));
    }
}

#[test]
fn noisy_maps_are_physical() {
    let noise = NoiseModel::preset("all_errors").unwrap();
    for p in [Process::P1, Process::P2] {
        let choi = choi_from_chi(&run_process_tomography(p, &noise, &exact()).unwrap());
        assert!(choi_min_eigenvalue(&choi).unwrap() > -1e-8);
        assert!(trace_preservation_residuals(&choi).iter().all(|r| *r < 1e-8));
        let f = process_fidelity(&ideal_choi(p), &choi).unwrap();
        assert!(f > 0.8 && f < 0.99, "{p:?} F={f}");
    }
}

#[test]
fn perturbed_map_fails_trace_test() {
    let mut m = run_process_tomography(Process::P1, &NoiseModel::Ideal, &exact()).unwrap();
    // identity-output coefficient of an X input
    m.chi[(0, 1)] += c(0.1, 0.0);
    let r = trace_preservation_residuals(&choi_from_chi(&m));
    assert!(r.iter().cloned().fold(0.0, f64::max) > 0.05);
}

#[test]
fn chained_zero_noise_maps_give_cluster() {
    let p1 = run_process_tomography(Process::P1, &NoiseModel::Ideal, &exact()).unwrap();
    let p2 = run_process_tomography(Process::P2, &NoiseModel::Ideal, &exact()).unwrap();
    for n in 1..=4 {
        let mpo = chain_maps(&p1, &p2, n, Truncation::default()).unwrap();
        let f = mpo.fidelity(&ideal_cluster_mps(&LadderGraph::new(n).unwrap())).unwrap();
        assert!(f >= 1.0 - 1e-8, "n={n} F={f}");
    }
}

#[test]
fn chi_json_round_trip() {
    let m = run_process_tomography(Process::P2, &NoiseModel::preset("all_errors").unwrap(), &exact()).unwrap();
    let text = serde_json::to_string(&m.to_json(Some(Process::P2))).unwrap();
    let back = ProcessMap::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert!(linalg::max_abs_diff(&back.chi, &m.chi) < 1e-15);
}

#[test]
fn maximally_mixed_input_gives_identity_coefficient() {
    let m = run_process_tomography(Process::P1, &NoiseModel::Ideal, &exact()).unwrap();
    let mixed: CMat = Mat::from_fn(4, 4, |i, j| if i == j { c(0.25, 0.0) } else { ZERO });
    let out = m.apply(&mixed);
    let tr: C64 = (0..16).map(|i| out[(i, i)]).sum();
    assert!((tr - ONE).norm() < 1e-10);
}
