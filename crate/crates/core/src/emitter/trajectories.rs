use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{build_circuit, Op, ProtocolSpec, Schedule};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, LocalIndex, C64, ONE, ZERO};
use crate::sites::{self, SiteLabel};
use crate::state::{DensityMatrix, PureState};

/// Pure-state trajectories of the full register `[S1, S2, P1, ...]`.
#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    register: Vec<SiteLabel>,
    states: Vec<Vec<C64>>,
    pub seed: u64,
}

/// Per-shot generator: one ChaCha stream per shot index.
pub fn shot_rng(seed: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng
}

fn run_shot(sched: &Schedule, rng: &mut ChaCha8Rng) -> Result<(Vec<SiteLabel>, Vec<C64>)> {
    let mut register = vec![SiteLabel::Source(1), SiteLabel::Source(2)];
    let mut psi = vec![ZERO; 9];
    psi[0] = ONE;
    for op in &sched.ops {
        match op {
            Op::Gate { targets, unitary, .. } => {
                let pos = sites::positions(&register, targets)?;
                let idx = LocalIndex::new(&sites::dims_of(&register), &pos);
                let n = psi.len();
                linalg::apply_left_cols(&mut psi, n, &idx, unitary);
            }
            Op::Channel { target, channel, .. } => {
                let pos = sites::positions(&register, &[*target])?;
                let idx = LocalIndex::new(&sites::dims_of(&register), &pos);
                let d = idx.local_dim();
                // local reduced state gives all branch weights at once
                let mut loc = Mat::<C64>::zeros(d, d);
                for &b in &idx.bases {
                    for i in 0..d {
                        let x = psi[b + idx.offs[i]];
                        for j in 0..d {
                            loc[(i, j)] += x * psi[b + idx.offs[j]].conj();
                        }
                    }
                }
                let weights: Vec<f64> = channel
                    .ops()
                    .iter()
                    .map(|k| linalg::trace(&(&(k * &loc) * k.adjoint())).re.max(0.0))
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = weights.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = k;
                        break;
                    }
                    u -= w;
                }
                let n = psi.len();
                linalg::apply_left_cols(&mut psi, n, &idx, &channel.ops()[pick]);
                let norm = psi.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::Numerical("trajectory collapsed to zero norm".into()));
                }
                psi.iter_mut().for_each(|x| *x /= norm);
            }
            Op::Emit(p) => {
                register.push(SiteLabel::Photon(*p));
                psi.resize(2 * psi.len(), ZERO);
            }
            Op::EndCycle(_) => {}
        }
    }
    Ok((register, psi))
}

/// Unravels every Kraus channel by sampling one branch with Born weights.
pub fn simulate_trajectories(spec: &ProtocolSpec, shots: usize, seed: u64) -> Result<TrajectoryEnsemble> {
    if shots == 0 {
        return Err(Error::param("shots", "at least one trajectory is required"));
    }
    let sched = build_circuit(spec)?;
    let runs: Result<Vec<(Vec<SiteLabel>, Vec<C64>)>> = (0..shots)
        .into_par_iter()
        .map(|k| run_shot(&sched, &mut shot_rng(seed, k as u64)))
        .collect();
    let runs = runs?;
    let register = runs[0].0.clone();
    Ok(TrajectoryEnsemble {
        register,
        states: runs.into_iter().map(|r| r.1).collect(),
        seed,
    })
}

impl TrajectoryEnsemble {
    pub fn shots(&self) -> usize {
        self.states.len()
    }

    pub fn register(&self) -> &[SiteLabel] {
        &self.register
    }

    pub fn state(&self, k: usize) -> Result<PureState> {
        PureState::new(self.register.clone(), self.states[k].clone())
    }

    /// Per-trajectory photonic fidelity `⟨φ| tr_S |ψ⟩⟨ψ| |φ⟩`.
    pub fn photonic_fidelities(&self, target: &PureState) -> Result<Vec<f64>> {
        let photons: Vec<SiteLabel> = self.register[2..].to_vec();
        let t = target.reorder(&photons)?;
        let phi = t.amplitudes();
        Ok(self
            .states
            .par_iter()
            .map(|psi| {
                (0..9)
                    .map(|s| {
                        phi.iter()
                            .enumerate()
                            .map(|(x, a)| a.conj() * psi[s + 9 * x])
                            .sum::<C64>()
                            .norm_sqr()
                    })
                    .sum()
            })
            .collect())
    }

    /// Mean photonic fidelity and its standard error.
    pub fn mean_fidelity(&self, target: &PureState) -> Result<(f64, f64)> {
        let f = self.photonic_fidelities(target)?;
        Ok(mean_stderr(&f))
    }

    /// Ensemble-averaged photonic density matrix.
    pub fn mean_photonic_density(&self) -> Result<DensityMatrix> {
        let dp = self.states[0].len() / 9;
        let chunks: Vec<CMat> = self
            .states
            .par_chunks(256)
            .map(|chunk| {
                let mut m = Mat::<C64>::zeros(dp, dp);
                for psi in chunk {
                    for s in 0..9 {
                        for x in 0..dp {
                            let a = psi[s + 9 * x];
                            if a == ZERO {
                                continue;
                            }
                            for y in 0..dp {
                                m[(x, y)] += a * psi[s + 9 * y].conj();
                            }
                        }
                    }
                }
                m
            })
            .collect();
        let acc = chunks.into_iter().fold(Mat::<C64>::zeros(dp, dp), |a, b| a + b);
        let m: CMat = linalg::scale(&acc, linalg::c(1.0 / self.shots() as f64, 0.0));
        DensityMatrix::from_channel_output(self.register[2..].to_vec(), m)
    }
}

pub(crate) fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ideal_cluster_state, LadderGraph};
    use crate::noise::NoiseModel;

    #[test]
    fn noiseless_trajectories_are_identical() {
        let spec = ProtocolSpec::full(2, NoiseModel::Ideal);
        let ens = simulate_trajectories(&spec, 8, 1).unwrap();
        let g = LadderGraph::new(2).unwrap();
        for f in ens.photonic_fidelities(&ideal_cluster_state(&g)).unwrap() {
            assert!((f - 1.0).abs() < 1e-12);
        }
        let a = ens.state(0).unwrap();
        let b = ens.state(7).unwrap();
        assert!((a.overlap(&b).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_ensemble() {
        let spec = ProtocolSpec::full(2, NoiseModel::preset("all_errors").unwrap());
        let a = simulate_trajectories(&spec, 64, 42).unwrap();
        let b = simulate_trajectories(&spec, 64, 42).unwrap();
        assert_eq!(a.states, b.states);
        let c = simulate_trajectories(&spec, 64, 43).unwrap();
        assert_ne!(a.states, c.states);
    }
}
