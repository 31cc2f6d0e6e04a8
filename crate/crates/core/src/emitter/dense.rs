use faer::Mat;

use super::{build_circuit, Op, ProtocolSpec, Schedule};
use crate::error::{Error, Result};
use crate::graph;
use crate::linalg::{self, CMat, LocalIndex, C64, ONE};
use crate::sites::{self, SiteLabel};
use crate::state::DensityMatrix;

/// Largest rung count handled by the dense simulator.
pub const MAX_DENSE_RUNGS: usize = 4;

/// Appends a photon in |0⟩ as the most significant factor.
fn extend_with_vacuum(rho: &CMat) -> CMat {
    let d = rho.nrows();
    let mut out = Mat::<C64>::zeros(2 * d, 2 * d);
    out.submatrix_mut(0, 0, d, d).copy_from(rho);
    out
}

/// Evolves `[S1, S2, P1, ...]` through the schedule and returns the joint state.
pub fn simulate_dense_full(spec: &ProtocolSpec) -> Result<DensityMatrix> {
    if spec.photons() > 2 * MAX_DENSE_RUNGS {
        return Err(Error::Capacity(format!(
            "dense simulation supports at most {} photons, requested {}",
            2 * MAX_DENSE_RUNGS,
            spec.photons()
        )));
    }
    let sched = build_circuit(spec)?;
    let mut ground = Mat::<C64>::zeros(9, 9);
    ground[(0, 0)] = ONE;
    evolve_dense(&sched, &ground)
}

/// Runs a schedule from the source state `sources` (9×9 on `[S1, S2]`) and
/// returns the joint state of sources and photons.
pub fn evolve_dense(sched: &Schedule, sources: &CMat) -> Result<DensityMatrix> {
    if sources.nrows() != 9 || sources.ncols() != 9 {
        return Err(Error::DimensionMismatch {
            expected: 9,
            got: sources.nrows(),
        });
    }
    let mut register = vec![SiteLabel::Source(1), SiteLabel::Source(2)];
    let mut rho = sources.clone();
    let tr0 = linalg::trace(&rho).re;
    for op in &sched.ops {
        match op {
            Op::Gate { targets, unitary, .. } => {
                let pos = sites::positions(&register, targets)?;
                let idx = LocalIndex::new(&sites::dims_of(&register), &pos);
                linalg::conjugate_blocks(&mut rho, &idx, unitary);
            }
            Op::Channel { target, channel, .. } => {
                let pos = sites::positions(&register, &[*target])?;
                let idx = LocalIndex::new(&sites::dims_of(&register), &pos);
                linalg::apply_kraus_blocks(&mut rho, &idx, channel.ops());
            }
            Op::Emit(p) => {
                register.push(SiteLabel::Photon(*p));
                rho = extend_with_vacuum(&rho);
            }
            Op::EndCycle(_) => {
                let tr = linalg::trace(&rho).re;
                if (tr - tr0).abs() > 1e-9 {
                    return Err(Error::Numerical(format!("trace drifted to {tr}")));
                }
            }
        }
    }
    DensityMatrix::from_channel_output(register, rho)
}

/// Photonic state of the protocol (sources traced out, frame applied).
pub fn simulate_dense(spec: &ProtocolSpec) -> Result<DensityMatrix> {
    let full = simulate_dense_full(spec)?;
    let photons = full.partial_trace(&spec.photon_sites())?;
    graph::apply_frame_dense(&photons, spec.photons() / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emitter::Variant;
    use crate::graph::{ideal_cluster_state, LadderGraph};
    use crate::noise::NoiseModel;

    #[test]
    fn ideal_two_rungs_is_cluster() {
        let spec = ProtocolSpec::full(2, NoiseModel::Ideal);
        let rho = simulate_dense(&spec).unwrap();
        let g = LadderGraph::new(2).unwrap();
        let f = rho.fidelity(&ideal_cluster_state(&g)).unwrap();
        assert!((f - 1.0).abs() < 1e-10, "fidelity {f}");
    }

    #[test]
    fn ideal_sources_return_to_ground() {
        let spec = ProtocolSpec::full(2, NoiseModel::Ideal);
        let full = simulate_dense_full(&spec).unwrap();
        let src = full.partial_trace(&[SiteLabel::Source(1), SiteLabel::Source(2)]).unwrap();
        assert!((src.data()[(0, 0)].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_error_for_large_n() {
        let spec = ProtocolSpec::full(5, NoiseModel::Ideal);
        assert!(matches!(simulate_dense(&spec), Err(Error::Capacity(_))));
    }

    #[test]
    fn bell_cnot_state() {
        for src in [1u8, 2] {
            let spec = ProtocolSpec {
                n: 2,
                variant: Variant::BellCnot(src),
                noise: NoiseModel::Ideal,
            };
            let rho = simulate_dense(&spec).unwrap();
            let m = rho.data();
            for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
                assert!((m[(i, j)].re - 0.5).abs() < 1e-12);
            }
        }
    }
}
