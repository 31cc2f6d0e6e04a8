use faer::Mat;

use super::{build_circuit, Op, ProtocolSpec};
use crate::error::{Error, Result};
use crate::graph;
use crate::linalg::{self, CMat, LocalIndex, C64, ONE};
use crate::mpo::{truncated_svd, Mpo, Tensor3, Truncation, TruncationReport};
use crate::sites::{self, SiteLabel};

/// Joint operator of the sources and not-yet-final photons, one matrix per
/// value of the bond to the already emitted chain.
pub(crate) struct Boundary {
    pub register: Vec<SiteLabel>,
    pub blocks: Vec<CMat>,
}

impl Boundary {
    pub fn ground() -> Self {
        let mut b = Mat::<C64>::zeros(9, 9);
        b[(0, 0)] = ONE;
        Boundary {
            register: vec![SiteLabel::Source(1), SiteLabel::Source(2)],
            blocks: vec![b],
        }
    }

    pub fn apply_unitary(&mut self, targets: &[SiteLabel], u: &CMat) -> Result<()> {
        let pos = sites::positions(&self.register, targets)?;
        let idx = LocalIndex::new(&sites::dims_of(&self.register), &pos);
        for b in &mut self.blocks {
            linalg::conjugate_blocks(b, &idx, u);
        }
        Ok(())
    }

    pub fn apply_kraus(&mut self, target: SiteLabel, ops: &[CMat]) -> Result<()> {
        let pos = sites::positions(&self.register, &[target])?;
        let idx = LocalIndex::new(&sites::dims_of(&self.register), &pos);
        for b in &mut self.blocks {
            linalg::apply_kraus_blocks(b, &idx, ops);
        }
        Ok(())
    }

    pub fn emit(&mut self, p: usize) {
        self.register.push(SiteLabel::Photon(p));
        for b in &mut self.blocks {
            let d = b.nrows();
            let mut out = Mat::<C64>::zeros(2 * d, 2 * d);
            out.submatrix_mut(0, 0, d, d).copy_from(&*b);
            *b = out;
        }
    }

    /// Splits the finished photons (in order) off into chain tensors.
    pub fn peel(
        &mut self,
        photons: &[usize],
        trunc: Truncation,
        budget_sq: f64,
        report: &mut TruncationReport,
        discarded: &mut f64,
    ) -> Result<Vec<Tensor3>> {
        let mut out = Vec::with_capacity(photons.len());
        for &p in photons {
            let label = SiteLabel::Photon(p);
            let k = self
                .register
                .iter()
                .position(|s| *s == label)
                .ok_or(Error::UnknownSite(label))?;
            let dims = sites::dims_of(&self.register);
            let rest: Vec<usize> = (0..self.register.len()).filter(|&i| i != k).collect();
            let ro = LocalIndex::new(&dims, &rest).offs;
            let po = LocalIndex::new(&dims, &[k]).offs;
            let dr = ro.len();
            let dl = self.blocks.len();
            // rows (l, q = 2k + b), columns (a, a') of the remaining register
            let m = Mat::from_fn(dl * 4, dr * dr, |row, col| {
                let (l, q) = (row / 4, row % 4);
                let (kk, bb) = (q / 2, q % 2);
                let (a, a2) = (col / dr, col % dr);
                self.blocks[l][(ro[a] + po[kk], ro[a2] + po[bb])]
            });
            let (sv, tail, needed) = truncated_svd(&m, budget_sq, trunc.max_bond)?;
            *discarded += tail;
            report.required_bond = report.required_bond.max(needed);
            report.capped |= needed > trunc.max_bond;
            out.push(Tensor3::from_left_matrix(&sv.u, 4));
            let rank = sv.s.len();
            self.blocks = (0..rank)
                .map(|r| Mat::from_fn(dr, dr, |a, a2| sv.vh[(r, a * dr + a2)] * sv.s[r]))
                .collect();
            self.register.remove(k);
        }
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.blocks.iter().map(|b| linalg::frobenius(b).powi(2)).sum()
    }
}

/// MPO simulation with the default truncation.
pub fn simulate_mpo(spec: &ProtocolSpec) -> Result<Mpo> {
    Ok(simulate_mpo_with(spec, Truncation::default())?.0)
}

/// Sequential simulation that moves each finished photon into the MPO
/// chain; `trunc.eps` bounds the relative Frobenius error of the final state.
pub fn simulate_mpo_with(spec: &ProtocolSpec, trunc: Truncation) -> Result<(Mpo, TruncationReport)> {
    let sched = build_circuit(spec)?;
    let mut boundary = Boundary::ground();
    let mut chain: Vec<Tensor3> = Vec::new();
    let mut report = TruncationReport::default();
    let mut rel_sq = 0.0;
    let splits = spec.photons().max(2) as f64;
    let budget_sq = trunc.eps * trunc.eps / splits;
    for op in &sched.ops {
        match op {
            Op::Gate { targets, unitary, .. } => boundary.apply_unitary(targets, unitary)?,
            Op::Channel { target, channel, .. } => boundary.apply_kraus(*target, channel.ops())?,
            Op::Emit(p) => boundary.emit(*p),
            Op::EndCycle(ps) => {
                // the chain is left-canonical, so Frobenius norms live in the boundary
                let norm_sq = boundary.frobenius_sq();
                let mut tail = 0.0;
                let t = boundary.peel(ps, trunc, budget_sq * norm_sq, &mut report, &mut tail)?;
                rel_sq += tail / norm_sq;
                chain.extend(t);
            }
        }
    }
    let mpo = finish_chain(boundary, chain, spec.photon_sites(), trunc, rel_sq, &mut report)?;
    let mpo = graph::apply_frame_mpo(&mpo, spec.photons() / 2)?;
    Ok((mpo, report))
}

/// Traces the sources into the last chain tensor, normalizes and compresses.
pub(crate) fn finish_chain(
    boundary: Boundary,
    mut chain: Vec<Tensor3>,
    sites: Vec<SiteLabel>,
    trunc: Truncation,
    rel_sq: f64,
    report: &mut TruncationReport,
) -> Result<Mpo> {
    // trace out the sources into the last tensor
    let d = boundary.register.iter().map(|s| s.dim()).product::<usize>();
    let v: Vec<C64> = boundary
        .blocks
        .iter()
        .map(|b| (0..d).map(|i| b[(i, i)]).sum())
        .collect();
    let last = chain.pop().ok_or_else(|| Error::Numerical("no photons emitted".into()))?;
    let col = Mat::from_fn(v.len(), 1, |i, _| v[i]);
    chain.push(last.mul_right(&col));
    let mut mpo = Mpo::new(sites, chain, trunc)?;
    let tr = mpo.trace();
    // trace error is not bounded by the Frobenius truncation error; only catch gross failures
    if (tr - ONE).norm() > 1e-3 {
        return Err(Error::Numerical(format!("MPO trace {tr} differs from 1")));
    }
    mpo.normalize()?;
    let final_rep = mpo.compress(trunc)?;
    report.relative_error = (rel_sq + final_rep.relative_error.powi(2)).sqrt();
    report.required_bond = report.required_bond.max(final_rep.required_bond);
    report.capped |= final_rep.capped;
    mpo.set_truncation_error(report.relative_error);
    Ok(mpo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emitter::simulate_dense;
    use crate::graph::{ideal_cluster_mps, stabilizer_expectations, LadderGraph};
    use crate::noise::NoiseModel;

    #[test]
    fn ideal_mpo_is_cluster() {
        let g = LadderGraph::new(3).unwrap();
        let mpo = simulate_mpo(&ProtocolSpec::full(3, NoiseModel::Ideal)).unwrap();
        let f = mpo.fidelity(&ideal_cluster_mps(&g)).unwrap();
        assert!((f - 1.0).abs() < 1e-10);
        for e in stabilizer_expectations(&mpo, &g).unwrap() {
            assert!((e - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn noisy_mpo_matches_dense() {
        let spec = ProtocolSpec::full(2, NoiseModel::preset("all_errors").unwrap());
        let dense = simulate_dense(&spec).unwrap();
        let mpo = simulate_mpo(&spec).unwrap().to_dense().unwrap();
        assert!(linalg::max_abs_diff(dense.data(), mpo.data()) < 1e-10);
    }
}
