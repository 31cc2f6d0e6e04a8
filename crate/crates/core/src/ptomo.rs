//! Process tomography of single emission cycles, Choi matrices, and
//! chaining of process maps into multi-photon states.
//!
//! A process map takes the two source qubits to the sources plus the two
//! photons emitted in the cycle. It is stored as a real-linear map `χ` on
//! Pauli coefficients: an input `ρ = ¼ Σ r_mn σ_m⊗σ_n` with
//! `r_mn = tr(ρ σ_m⊗σ_n)` goes to `p = χ r`, where
//! `p_ijkl = tr(ρ' σ_i⊗σ_j⊗σ_k⊗σ_l)` on `[S1, S2, P1, P2]` (S1 least
//! significant). The Choi matrix is `C = Σ_ab |a⟩⟨b| ⊗ χ(|a⟩⟨b|)`, indexed
//! `input + 4·output` and left unnormalized (`tr C = 4`), so that
//! trace preservation reads `tr[C (σ_i⊗σ_j ⊗ 1)] = 4 δ_i0 δ_j0`.

use faer::Mat;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emitter::{self, cycle_schedule, finish_chain, Boundary, CycleGates};
use crate::error::{Error, Result};
use crate::graph;
use crate::linalg::{self, c, CMat, C64, ONE, ZERO};
use crate::measure::{self, DetectionConfig, DetectionMode, MomentTable, NoiseMoments};
use crate::mpo::{self, Mpo, Truncation, TruncationReport};
use crate::noise::{Emission, NoiseModel};
use crate::sites::{self, SiteLabel};
use crate::state::DensityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    /// H, CPHASE, CNOT emission.
    P1,
    /// H, CPHASE, SWAP emission.
    P2,
}

impl Process {
    pub fn gates(self) -> CycleGates {
        CycleGates {
            cphase: true,
            emission: match self {
                Process::P1 => Emission::Cnot,
                Process::P2 => Emission::Swap,
            },
        }
    }
}

impl std::str::FromStr for Process {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p1" => Ok(Process::P1),
            "p2" => Ok(Process::P2),
            other => Err(Error::param("process", format!("unknown process {other:?}"))),
        }
    }
}

/// How the qutrit sources are read out as qubits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceReadout {
    /// Projective readout that registers `|f⟩` as `|e⟩`.
    #[default]
    Ideal,
    /// Runs with a source found in `|f⟩` are discarded.
    DiscardLeaked,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MeasurementModel {
    /// Output states taken directly from the simulation.
    Exact,
    /// Sources measured projectively in X/Y/Z, photons by heterodyne
    /// detection; `shots` runs per source-basis setting.
    Sampled { shots: usize, eta: f64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyConfig {
    pub readout: SourceReadout,
    pub measurement: MeasurementModel,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        TomographyConfig {
            readout: SourceReadout::Ideal,
            measurement: MeasurementModel::Exact,
        }
    }
}

/// Pauli-basis process map from 2 to 4 qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessMap {
    /// `256 × 16`, rows `i + 4j + 16k + 64l`, columns `m + 4n`.
    pub chi: CMat,
}

/// Row-major complex matrix in JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChiJson {
    pub process: Option<Process>,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<[f64; 2]>>,
}

impl ProcessMap {
    pub fn to_json(&self, process: Option<Process>) -> ChiJson {
        ChiJson {
            process,
            rows: self.chi.nrows(),
            cols: self.chi.ncols(),
            data: (0..self.chi.nrows())
                .map(|i| (0..self.chi.ncols()).map(|j| [self.chi[(i, j)].re, self.chi[(i, j)].im]).collect())
                .collect(),
        }
    }

    pub fn from_json(j: &ChiJson) -> Result<Self> {
        if j.rows != 256 || j.cols != 16 || j.data.len() != 256 || j.data.iter().any(|r| r.len() != 16) {
            return Err(Error::DimensionMismatch {
                expected: 256 * 16,
                got: j.data.iter().map(|r| r.len()).sum(),
            });
        }
        Ok(ProcessMap {
            chi: Mat::from_fn(256, 16, |i, k| c(j.data[i][k][0], j.data[i][k][1])),
        })
    }

    /// Applies the map to a (not necessarily Hermitian) 4×4 operator.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let r: Vec<C64> = (0..16).map(|mn| trace_with(rho, &pauli_string(mn, 2))).collect();
        let mut out = CMat::zeros(16, 16);
        for p in 0..256 {
            let coef: C64 = (0..16).map(|mn| self.chi[(p, mn)] * r[mn]).sum();
            if coef.norm() > 0.0 {
                out = &out + &linalg::scale(&pauli_string(p, 4), coef / 16.0);
            }
        }
        out
    }
}

/// Pauli string with per-qubit labels in base-4 digits of `index`,
/// qubit 0 least significant.
pub fn pauli_string(index: usize, qubits: usize) -> CMat {
    let ops: Vec<CMat> = (0..qubits).map(|q| linalg::pauli((index >> (2 * q)) & 3)).collect();
    let refs: Vec<&CMat> = ops.iter().collect();
    linalg::kron_sites(&refs)
}

/// `tr(a b)`.
fn trace_with(a: &CMat, b: &CMat) -> C64 {
    let mut s = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

/// The sixteen product inputs `{|g⟩, |+⟩, (|g⟩ − i|e⟩)/√2, |e⟩}^{⊗2}`,
/// input `a1 + 4·a2` with S1 first.
pub fn input_states() -> Vec<CMat> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let single = [
        [ONE, ZERO],
        [c(h, 0.0), c(h, 0.0)],
        [c(h, 0.0), c(0.0, -h)],
        [ZERO, ONE],
    ];
    let mut out = Vec::with_capacity(16);
    for a2 in 0..4 {
        for a1 in 0..4 {
            let v: Vec<C64> = (0..4).map(|x| single[a1][x & 1] * single[a2][x >> 1]).collect();
            out.push(Mat::from_fn(4, 4, |i, j| v[i] * v[j].conj()));
        }
    }
    out
}

/// Embeds a two-qubit source operator into the qutrit pair.
fn embed_sources(rho: &CMat) -> CMat {
    let map = |x: usize| (x & 1) + 3 * (x >> 1);
    let mut out = CMat::zeros(9, 9);
    for i in 0..4 {
        for j in 0..4 {
            out[(map(i), map(j))] = rho[(i, j)];
        }
    }
    out
}

/// Restricts `[S1, S2, P1, P2]` with qutrit sources to qubits.
fn restrict(joint: &DensityMatrix, readout: SourceReadout) -> Result<CMat> {
    let m = joint.data();
    // qutrit level → (qubit level, Kraus branch)
    let branches: &[(usize, usize, usize)] = match readout {
        SourceReadout::Ideal => &[(0, 0, 0), (1, 1, 0), (2, 1, 1)],
        SourceReadout::DiscardLeaked => &[(0, 0, 0), (1, 1, 0)],
    };
    let full = |s1: usize, s2: usize, p: usize| s1 + 3 * s2 + 9 * p;
    let mut out = CMat::zeros(16, 16);
    for &(a1, q1, k1) in branches {
        for &(b1, r1, l1) in branches {
            if k1 != l1 {
                continue;
            }
            for &(a2, q2, k2) in branches {
                for &(b2, r2, l2) in branches {
                    if k2 != l2 {
                        continue;
                    }
                    for p in 0..4 {
                        for pp in 0..4 {
                            out[(q1 + 2 * q2 + 4 * p, r1 + 2 * r2 + 4 * pp)] += m[(full(a1, a2, p), full(b1, b2, pp))];
                        }
                    }
                }
            }
        }
    }
    let tr = linalg::trace(&out).re;
    if tr <= 1e-12 {
        return Err(Error::ZeroProbability);
    }
    Ok(linalg::hermitian_part(&linalg::scale(&out, c(1.0 / tr, 0.0))))
}

/// Simulated output of one cycle for a two-qubit source input.
pub fn cycle_output(process: Process, noise: &NoiseModel, input: &CMat, readout: SourceReadout) -> Result<CMat> {
    let sched = cycle_schedule(process.gates(), noise)?;
    let joint = emitter::evolve_dense(&sched, &embed_sources(input))?;
    restrict(&joint, readout)
}

/// Eigenbasis rotation for measuring a source in basis `b` (1 = X, 2 = Y, 3 = Z):
/// rows are the `+1` and `−1` eigenvectors (as bras).
fn basis_bras(b: usize) -> [[C64; 2]; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match b {
        1 => [[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]],
        2 => [[c(h, 0.0), c(0.0, -h)], [c(h, 0.0), c(0.0, h)]],
        _ => [[ONE, ZERO], [ZERO, ONE]],
    }
}

/// Finite-statistics tomography of a 4-qubit output: projective Pauli
/// readout of the sources and heterodyne moments of the photons, followed
/// by linear inversion and projection onto density matrices.
fn sampled_state(sigma: &CMat, shots: usize, eta: f64, seed: u64) -> Result<CMat> {
    let noise = vec![NoiseMoments::analytic(1.0 / eta - 1.0, 1); 2];
    let order = measure::multi_indices(2, 1);
    let cfg_base = DetectionConfig {
        eta,
        scale: ONE,
        shots: 1,
        mode: DetectionMode::ShotSampling,
    };
    // sums[(P1, P2)][K] and contribution counts
    let mut sums = vec![vec![ZERO; order.len()]; 16];
    let mut counts = [0usize; 16];
    for setting in 0..9usize {
        let (b1, b2) = (1 + setting % 3, 1 + setting / 3);
        let (u1, u2) = (basis_bras(b1), basis_bras(b2));
        // conditional photon operators for the four source outcomes
        let mut cond = Vec::with_capacity(4);
        for o in 0..4usize {
            let (o1, o2) = (o & 1, o >> 1);
            let bra = |x: usize| u1[o1][x & 1] * u2[o2][x >> 1];
            let m = Mat::from_fn(4, 4, |p, pp| {
                let mut s = ZERO;
                for x in 0..4 {
                    for y in 0..4 {
                        s += bra(x) * sigma[(x + 4 * p, y + 4 * pp)] * bra(y).conj();
                    }
                }
                s
            });
            cond.push(m);
        }
        let probs: Vec<f64> = cond.iter().map(|m| linalg::trace(m).re.max(0.0)).collect();
        let mut rng = emitter::shot_rng(seed, setting as u64);
        let mut n_o = [0usize; 4];
        let total: f64 = probs.iter().sum();
        for _ in 0..shots {
            let mut u = rng.random::<f64>() * total;
            let mut pick = 3;
            for (k, p) in probs.iter().enumerate() {
                if u < *p {
                    pick = k;
                    break;
                }
                u -= p;
            }
            n_o[pick] += 1;
        }
        for o in 0..4usize {
            if n_o[o] == 0 {
                continue;
            }
            let rho_p = DensityMatrix::from_channel_output(sites::photons(1..=2), linalg::scale(&cond[o], c(1.0 / probs[o], 0.0)))?;
            let cfg = DetectionConfig {
                shots: n_o[o],
                ..cfg_base
            };
            let het = measure::sample_heterodyne(&rho_p, &cfg, seed ^ ((setting as u64) << 40) ^ ((o as u64) << 36))?;
            let lam = |bit: usize| if bit == 0 { 1.0 } else { -1.0 };
            for s in 0..het.shots() {
                let g: Vec<Vec<C64>> = het
                    .shot(s)
                    .iter()
                    .zip(&noise)
                    .map(|(x, nm)| measure::per_shot_estimators(*x, nm, 1))
                    .collect();
                for (k, idx) in order.iter().enumerate() {
                    let v = g[0][idx[0] as usize * 2 + idx[1] as usize] * g[1][idx[2] as usize * 2 + idx[3] as usize];
                    for (p1, l1) in [(0usize, 1.0), (b1, lam(o & 1))] {
                        for (p2, l2) in [(0usize, 1.0), (b2, lam(o >> 1))] {
                            sums[p1 + 4 * p2][k] += v * (l1 * l2);
                        }
                    }
                }
            }
        }
        for p1 in [0usize, b1] {
            for p2 in [0usize, b2] {
                counts[p1 + 4 * p2] += shots;
            }
        }
    }
    let mut out = CMat::zeros(16, 16);
    for pp in 0..16 {
        let entries = order
            .iter()
            .enumerate()
            .map(|(k, idx)| measure::MomentEntry {
                index: idx.clone(),
                mean: sums[pp][k] / counts[pp] as f64,
                variance: 0.0,
            })
            .collect();
        let table = MomentTable {
            modes: sites::photons(1..=2),
            max_order: 1,
            entries,
        };
        let tau = crate::tomo::mle::linear_inversion(&table, 2)?;
        let sp = pauli_string(pp, 2);
        out = &out + &linalg::scale(&linalg::kron(&tau, &sp), c(0.25, 0.0));
    }
    linalg::project_density(&linalg::hermitian_part(&out))
}

/// Reconstructs the process map of one cycle from the sixteen inputs.
pub fn run_process_tomography(process: Process, noise: &NoiseModel, cfg: &TomographyConfig) -> Result<ProcessMap> {
    let inputs = input_states();
    let outputs: Vec<CMat> = inputs
        .par_iter()
        .enumerate()
        .map(|(a, rho)| {
            let exact = cycle_output(process, noise, rho, cfg.readout)?;
            match cfg.measurement {
                MeasurementModel::Exact => Ok(exact),
                MeasurementModel::Sampled { shots, eta, seed } => {
                    if shots == 0 || !(eta > 0.0 && eta <= 1.0) {
                        return Err(Error::param("measurement", "needs shots ≥ 1 and eta in (0, 1]"));
                    }
                    sampled_state(&exact, shots, eta, seed.wrapping_add(a as u64 * 0x9E37_79B9))
                }
            }
        })
        .collect::<Result<_>>()?;
    solve_chi(&inputs, &outputs)
}

/// `χ = P R⁻¹` from input and output Pauli coefficients.
pub fn solve_chi(inputs: &[CMat], outputs: &[CMat]) -> Result<ProcessMap> {
    if inputs.len() != 16 || outputs.len() != 16 {
        return Err(Error::param("inputs", "sixteen input/output pairs are required"));
    }
    let r = Mat::from_fn(16, 16, |mn, a| trace_with(&inputs[a], &pauli_string(mn, 2)));
    let strings: Vec<CMat> = (0..256).map(|p| pauli_string(p, 4)).collect();
    let p = Mat::from_fn(256, 16, |ijkl, a| trace_with(&outputs[a], &strings[ijkl]));
    let sv = mpo::svd(&r)?;
    let smin = sv.s.last().copied().unwrap_or(0.0);
    if smin < 1e-10 * sv.s[0] {
        return Err(Error::Numerical("input states are not informationally complete".into()));
    }
    let inv = Mat::from_fn(16, 16, |i, j| {
        (0..16).map(|k| sv.vh[(k, i)].conj() * (1.0 / sv.s[k]) * sv.u[(j, k)].conj()).sum::<C64>()
    });
    Ok(ProcessMap { chi: &p * &inv })
}

/// `C = Σ_ab |a⟩⟨b| ⊗ χ(|a⟩⟨b|)`, indexed `input + 4·output`.
pub fn choi_from_chi(map: &ProcessMap) -> CMat {
    let mut choi = CMat::zeros(64, 64);
    for a in 0..4 {
        for b in 0..4 {
            let mut e = CMat::zeros(4, 4);
            e[(a, b)] = ONE;
            let out = map.apply(&e);
            for x in 0..16 {
                for y in 0..16 {
                    choi[(a + 4 * x, b + 4 * y)] = out[(x, y)];
                }
            }
        }
    }
    choi
}

/// Inverse of [`choi_from_chi`].
pub fn chi_from_choi(choi: &CMat) -> Result<ProcessMap> {
    if choi.nrows() != 64 || choi.ncols() != 64 {
        return Err(Error::DimensionMismatch {
            expected: 64,
            got: choi.nrows(),
        });
    }
    let block = |a: usize, b: usize| Mat::from_fn(16, 16, |x, y| choi[(a + 4 * x, b + 4 * y)]);
    let strings: Vec<CMat> = (0..256).map(|p| pauli_string(p, 4)).collect();
    let mut chi = CMat::zeros(256, 16);
    for mn in 0..16 {
        let s = pauli_string(mn, 2);
        let mut out = CMat::zeros(16, 16);
        for a in 0..4 {
            for b in 0..4 {
                if s[(a, b)] != ZERO {
                    out = &out + &linalg::scale(&block(a, b), s[(a, b)]);
                }
            }
        }
        for (p, st) in strings.iter().enumerate() {
            chi[(p, mn)] = trace_with(&out, st) / 4.0;
        }
    }
    Ok(ProcessMap { chi })
}

/// The sixteen values `tr[C (σ_i⊗σ_j ⊗ 1)] − 4 δ_i0 δ_j0`, index `i + 4j`.
pub fn trace_preservation_residuals(choi: &CMat) -> Vec<f64> {
    (0..16)
        .map(|ij| {
            let s = pauli_string(ij, 2);
            let mut v = ZERO;
            for a in 0..4 {
                for b in 0..4 {
                    if s[(b, a)] == ZERO {
                        continue;
                    }
                    for x in 0..16 {
                        v += choi[(a + 4 * x, b + 4 * x)] * s[(b, a)];
                    }
                }
            }
            (v - if ij == 0 { c(4.0, 0.0) } else { ZERO }).norm()
        })
        .collect()
}

/// Smallest eigenvalue of the Hermitian part of a Choi matrix.
pub fn choi_min_eigenvalue(choi: &CMat) -> Result<f64> {
    Ok(linalg::eigvalsh(&linalg::hermitian_part(choi))?[0])
}

/// `(tr √(√A B √A))²` between trace-normalized Choi matrices.
pub fn process_fidelity(a: &CMat, b: &CMat) -> Result<f64> {
    let na = linalg::scale(&linalg::hermitian_part(a), c(1.0 / linalg::trace(a).re, 0.0));
    let nb = linalg::scale(&linalg::hermitian_part(b), c(1.0 / linalg::trace(b).re, 0.0));
    linalg::uhlmann_fidelity(&na, &nb)
}

/// Applies `n − 1` copies of `p1` and one `p2` to `|gg⟩⟨gg|`, emitting a
/// photon pair per application, and traces out the sources.
pub fn chain_maps(p1: &ProcessMap, p2: &ProcessMap, n: usize, trunc: Truncation) -> Result<Mpo> {
    if n == 0 {
        return Err(Error::param("n", "at least one cycle is required"));
    }
    let mut boundary = Boundary::ground();
    let mut chain = Vec::new();
    let mut report = TruncationReport::default();
    let mut rel_sq = 0.0;
    let budget_sq = trunc.eps * trunc.eps / (2 * n).max(2) as f64;
    let to_qubits = |b: &CMat| Mat::from_fn(4, 4, |i, j| b[((i & 1) + 3 * (i >> 1), (j & 1) + 3 * (j >> 1))]);
    for k in 1..=n {
        let map = if k < n { p1 } else { p2 };
        let (pa, pb) = (2 * k - 1, 2 * k);
        // register becomes [S1, S2, Pa, Pb]: qutrit sources, photons appended
        boundary.blocks = boundary
            .blocks
            .par_iter()
            .map(|b| {
                let out = map.apply(&to_qubits(b));
                let mut big = CMat::zeros(36, 36);
                for x in 0..16 {
                    for y in 0..16 {
                        let ix = (x & 1) + 3 * ((x >> 1) & 1) + 9 * (x >> 2);
                        let iy = (y & 1) + 3 * ((y >> 1) & 1) + 9 * (y >> 2);
                        big[(ix, iy)] = out[(x, y)];
                    }
                }
                big
            })
            .collect();
        boundary.register = vec![SiteLabel::Source(1), SiteLabel::Source(2), SiteLabel::Photon(pa), SiteLabel::Photon(pb)];
        let norm_sq = boundary.frobenius_sq();
        let mut tail = 0.0;
        let t = boundary.peel(&[pa, pb], trunc, budget_sq * norm_sq, &mut report, &mut tail)?;
        rel_sq += tail / norm_sq;
        chain.extend(t);
    }
    let mpo = finish_chain(boundary, chain, sites::photons(1..=2 * n), trunc, rel_sq, &mut report)?;
    graph::apply_frame_mpo(&mpo, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_informationally_complete() {
        let inputs = input_states();
        let outs: Vec<CMat> = inputs.iter().map(|r| linalg::kron(r, &linalg::identity(4))).collect();
        assert!(solve_chi(&inputs, &outs).is_ok());
    }

    #[test]
    fn choi_round_trip() {
        let m = run_process_tomography(Process::P1, &NoiseModel::preset("all_errors").unwrap(), &TomographyConfig::default()).unwrap();
        let choi = choi_from_chi(&m);
        let back = chi_from_choi(&choi).unwrap();
        assert!(linalg::max_abs_diff(&back.chi, &m.chi) < 1e-10);
        assert!(trace_preservation_residuals(&choi).iter().all(|r| *r < 1e-8));
        assert!((process_fidelity(&choi, &choi).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_embedding_is_maximally_entangled() {
        // χ(ρ) = ρ ⊗ |00⟩⟨00|
        let inputs = input_states();
        let vac = {
            let mut v = CMat::zeros(4, 4);
            v[(0, 0)] = ONE;
            v
        };
        let outs: Vec<CMat> = inputs.iter().map(|r| linalg::kron(&vac, r)).collect();
        let m = solve_chi(&inputs, &outs).unwrap();
        let choi = choi_from_chi(&m);
        let mut phi = vec![ZERO; 64];
        for a in 0..4 {
            phi[a + 4 * a] = c(0.5, 0.0);
        }
        let target = Mat::from_fn(64, 64, |i, j| phi[i] * phi[j].conj());
        let f = process_fidelity(&choi, &target).unwrap();
        assert!((f - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ideal_chain_is_cluster() {
        let cfg = TomographyConfig::default();
        let p1 = run_process_tomography(Process::P1, &NoiseModel::Ideal, &cfg).unwrap();
        let p2 = run_process_tomography(Process::P2, &NoiseModel::Ideal, &cfg).unwrap();
        for n in 1..=3 {
            let mpo = chain_maps(&p1, &p2, n, Truncation::default()).unwrap();
            let g = graph::LadderGraph::new(n).unwrap();
            let f = mpo.fidelity(&graph::ideal_cluster_mps(&g)).unwrap();
            assert!((f - 1.0).abs() < 1e-8, "n={n} f={f}");
        }
    }
}
