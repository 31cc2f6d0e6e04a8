//! Dense states and operators on labelled registers.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, LocalIndex, C64, ZERO};
use crate::sites::{self, SiteLabel};

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const EIG_TOL: f64 = -1e-9;

/// Offsets of every basis state of the sub-register `pos` inside `dims`.
pub(crate) fn sub_offsets(dims: &[usize], pos: &[usize]) -> Vec<usize> {
    LocalIndex::new(dims, pos).offs
}

fn complement(n: usize, pos: &[usize]) -> Vec<usize> {
    (0..n).filter(|k| !pos.contains(k)).collect()
}

/// A square operator on a labelled register, not necessarily physical.
#[derive(Clone, Debug)]
pub struct SiteOperator {
    sites: Vec<SiteLabel>,
    data: CMat,
}

impl SiteOperator {
    pub fn new(sites: Vec<SiteLabel>, data: CMat) -> Result<Self> {
        sites::check_sites(&sites)?;
        let d = sites::total_dim(&sites);
        if data.nrows() != d || data.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.nrows(),
            });
        }
        Ok(SiteOperator { sites, data })
    }

    pub fn sites(&self) -> &[SiteLabel] {
        &self.sites
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }

    pub fn into_data(self) -> CMat {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.data)
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::eigvalsh(&self.data)
    }

    pub fn trace_norm(&self) -> Result<f64> {
        linalg::trace_norm_hermitian(&self.data)
    }

    /// Partial trace onto `keep`, in the order given.
    pub fn partial_trace(&self, keep: &[SiteLabel]) -> Result<SiteOperator> {
        let kp = sites::positions(&self.sites, keep)?;
        let dims = sites::dims_of(&self.sites);
        let tp = complement(self.sites.len(), &kp);
        let ko = sub_offsets(&dims, &kp);
        let to = sub_offsets(&dims, &tp);
        let dk = ko.len();
        let data = Mat::from_fn(dk, dk, |i, j| {
            let (a, b) = (ko[i], ko[j]);
            to.iter().map(|&t| self.data[(a + t, b + t)]).sum()
        });
        Ok(SiteOperator {
            sites: keep.to_vec(),
            data,
        })
    }

    /// Transposes the indices of the sites in `part`.
    pub fn partial_transpose(&self, part: &[SiteLabel]) -> Result<SiteOperator> {
        let pp = sites::positions(&self.sites, part)?;
        let dims = sites::dims_of(&self.sites);
        let st = linalg::strides(&dims);
        let d = self.dim();
        let pd: Vec<usize> = (0..d)
            .map(|x| pp.iter().map(|&p| ((x / st[p]) % dims[p]) * st[p]).sum())
            .collect();
        let data = Mat::from_fn(d, d, |r, col| {
            let r0 = r - pd[r] + pd[col];
            let c0 = col - pd[col] + pd[r];
            self.data[(r0, c0)]
        });
        Ok(SiteOperator {
            sites: self.sites.clone(),
            data,
        })
    }

    /// Same operator with the sites listed in a different order.
    pub fn reorder(&self, order: &[SiteLabel]) -> Result<SiteOperator> {
        if order.len() != self.sites.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sites.len(),
                got: order.len(),
            });
        }
        let pos = sites::positions(&self.sites, order)?;
        let dims = sites::dims_of(&self.sites);
        let map = sub_offsets(&dims, &pos);
        let d = self.dim();
        let data = Mat::from_fn(d, d, |i, j| self.data[(map[i], map[j])]);
        Ok(SiteOperator {
            sites: order.to_vec(),
            data,
        })
    }

    /// `tr(ρ · O)` for a local operator `op` on `targets`.
    pub fn expectation_local(&self, targets: &[SiteLabel], op: &CMat) -> Result<C64> {
        let red = self.partial_trace(targets)?;
        if op.nrows() != red.dim() {
            return Err(Error::DimensionMismatch {
                expected: red.dim(),
                got: op.nrows(),
            });
        }
        Ok(linalg::trace(&(op * &red.data)))
    }
}

/// A validated density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug)]
pub struct DensityMatrix(SiteOperator);

impl DensityMatrix {
    pub fn new(sites: Vec<SiteLabel>, data: CMat) -> Result<Self> {
        let op = SiteOperator::new(sites, data)?;
        let herm = linalg::hermiticity_error(&op.data);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (error {herm:.2e})")));
        }
        let tr = op.trace();
        if (tr - c(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = op.eigenvalues()?.first().copied().unwrap_or(0.0);
        if min < EIG_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(DensityMatrix(op))
    }

    /// Wraps data produced by a trace-preserving pipeline; symmetrizes and
    /// renormalizes away rounding drift.
    pub fn from_channel_output(sites: Vec<SiteLabel>, data: CMat) -> Result<Self> {
        let mut data = linalg::hermitian_part(&data);
        let tr = linalg::trace(&data).re;
        if (tr - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!("trace drifted to {tr}")));
        }
        data = linalg::scale(&data, c(1.0 / tr, 0.0));
        Ok(DensityMatrix(SiteOperator::new(sites, data)?))
    }

    pub fn maximally_mixed(sites: Vec<SiteLabel>) -> Result<Self> {
        let d = sites::total_dim(&sites);
        let data = linalg::scale(&linalg::identity(d), c(1.0 / d as f64, 0.0));
        Ok(DensityMatrix(SiteOperator::new(sites, data)?))
    }

    pub fn from_pure(psi: &PureState) -> Self {
        let d = psi.amps.len();
        let data = Mat::from_fn(d, d, |i, j| psi.amps[i] * psi.amps[j].conj());
        DensityMatrix(SiteOperator {
            sites: psi.sites.clone(),
            data,
        })
    }

    pub fn sites(&self) -> &[SiteLabel] {
        &self.0.sites
    }

    pub fn data(&self) -> &CMat {
        &self.0.data
    }

    pub fn as_operator(&self) -> &SiteOperator {
        &self.0
    }

    pub fn into_data(self) -> CMat {
        self.0.data
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn partial_trace(&self, keep: &[SiteLabel]) -> Result<DensityMatrix> {
        Ok(DensityMatrix(self.0.partial_trace(keep)?))
    }

    pub fn partial_transpose(&self, part: &[SiteLabel]) -> Result<SiteOperator> {
        self.0.partial_transpose(part)
    }

    pub fn reorder(&self, order: &[SiteLabel]) -> Result<DensityMatrix> {
        Ok(DensityMatrix(self.0.reorder(order)?))
    }

    pub fn purity(&self) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for j in 0..d {
            for i in 0..d {
                s += self.0.data[(i, j)].norm_sqr();
            }
        }
        s
    }

    /// `⟨ψ|ρ|ψ⟩`; the target must live on the same ordered sites.
    pub fn fidelity(&self, target: &PureState) -> Result<f64> {
        if target.sites != self.0.sites {
            let t = target.reorder(&self.0.sites)?;
            return self.fidelity(&t);
        }
        let v = &target.amps;
        let d = v.len();
        let mut acc = ZERO;
        for j in 0..d {
            if v[j] == ZERO {
                continue;
            }
            let mut col = ZERO;
            for (i, vi) in v.iter().enumerate() {
                col += vi.conj() * self.0.data[(i, j)];
            }
            acc += col * v[j];
        }
        Ok(acc.re.clamp(0.0, 1.0))
    }

    pub fn expectation_local(&self, targets: &[SiteLabel], op: &CMat) -> Result<C64> {
        self.0.expectation_local(targets, op)
    }

    /// Mixed-state fidelity `(tr sqrt(sqrt(ρ) σ sqrt(ρ)))²`.
    pub fn uhlmann_fidelity(&self, other: &DensityMatrix) -> Result<f64> {
        let o = other.reorder(self.sites())?;
        linalg::uhlmann_fidelity(self.data(), o.data())
    }

    /// Trace distance `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        let o = other.reorder(self.sites())?;
        let diff = self.data() - o.data();
        Ok(0.5 * linalg::trace_norm_hermitian(&diff)?)
    }

    pub fn to_json(&self) -> DenseJson {
        DenseJson::from_parts(self.sites(), self.data())
    }

    pub fn from_json(j: &DenseJson) -> Result<Self> {
        let (sites, data) = j.to_parts()?;
        DensityMatrix::new(sites, data)
    }
}

/// Serialized dense matrix: row-major nested `[re, im]` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseJson {
    pub sites: Vec<SiteLabel>,
    pub data: Vec<Vec<[f64; 2]>>,
}

impl DenseJson {
    pub fn from_parts(sites: &[SiteLabel], m: &CMat) -> Self {
        let data = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
            .collect();
        DenseJson {
            sites: sites.to_vec(),
            data,
        }
    }

    pub fn to_parts(&self) -> Result<(Vec<SiteLabel>, CMat)> {
        let d = self.data.len();
        if self.data.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidState("matrix rows have unequal lengths".into()));
        }
        let m = Mat::from_fn(d, d, |i, j| c(self.data[i][j][0], self.data[i][j][1]));
        Ok((self.sites.clone(), m))
    }
}

/// Normalized state vector on a labelled register.
#[derive(Clone, Debug)]
pub struct PureState {
    sites: Vec<SiteLabel>,
    amps: Vec<C64>,
}

impl PureState {
    pub fn new(sites: Vec<SiteLabel>, amps: Vec<C64>) -> Result<Self> {
        sites::check_sites(&sites)?;
        let d = sites::total_dim(&sites);
        if amps.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: amps.len(),
            });
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("state norm {norm} differs from 1")));
        }
        Ok(PureState { sites, amps })
    }

    /// Normalizes before validating; fails on the zero vector.
    pub fn normalized(sites: Vec<SiteLabel>, mut amps: Vec<C64>) -> Result<Self> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroProbability);
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        PureState::new(sites, amps)
    }

    /// Computational basis product state; `digits[k]` is the level of site k.
    pub fn basis(sites: Vec<SiteLabel>, digits: &[usize]) -> Result<Self> {
        let dims = sites::dims_of(&sites);
        let st = linalg::strides(&dims);
        let mut amps = vec![ZERO; sites::total_dim(&sites)];
        let idx: usize = digits.iter().zip(&st).map(|(d, s)| d * s).sum();
        amps[idx] = c(1.0, 0.0);
        PureState::new(sites, amps)
    }

    pub fn sites(&self) -> &[SiteLabel] {
        &self.sites
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn overlap(&self, other: &PureState) -> Result<C64> {
        let o = other.reorder(&self.sites)?;
        Ok(self.amps.iter().zip(&o.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn apply_local(&mut self, targets: &[SiteLabel], op: &CMat) -> Result<()> {
        let pos = sites::positions(&self.sites, targets)?;
        let idx = LocalIndex::new(&sites::dims_of(&self.sites), &pos);
        if op.nrows() != idx.local_dim() {
            return Err(Error::DimensionMismatch {
                expected: idx.local_dim(),
                got: op.nrows(),
            });
        }
        let n = self.amps.len();
        linalg::apply_left_cols(&mut self.amps, n, &idx, op);
        Ok(())
    }

    pub fn expectation_local(&self, targets: &[SiteLabel], op: &CMat) -> Result<C64> {
        let mut w = self.clone();
        w.apply_local(targets, op)?;
        Ok(self.amps.iter().zip(&w.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn reorder(&self, order: &[SiteLabel]) -> Result<PureState> {
        if order.len() != self.sites.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sites.len(),
                got: order.len(),
            });
        }
        let pos = sites::positions(&self.sites, order)?;
        let map = sub_offsets(&sites::dims_of(&self.sites), &pos);
        Ok(PureState {
            sites: order.to_vec(),
            amps: map.iter().map(|&m| self.amps[m]).collect(),
        })
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sites::photons;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bell() -> PureState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        PureState::new(photons(1..=2), vec![c(h, 0.0), ZERO, ZERO, c(h, 0.0)]).unwrap()
    }

    #[test]
    fn bell_half_trace_is_mixed() {
        let r = bell().to_density().partial_trace(&[SiteLabel::Photon(1)]).unwrap();
        assert!((r.data()[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((r.data()[(1, 1)].re - 0.5).abs() < 1e-15);
        assert!(r.data()[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn keep_all_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = DensityMatrix::new(photons(1..=3), linalg::random_density(8, 3, &mut rng)).unwrap();
        let r = rho.partial_trace(&photons(1..=3)).unwrap();
        assert!(linalg::max_abs_diff(r.data(), rho.data()) < 1e-15);
    }

    #[test]
    fn trace_out_second_photon_by_index_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = linalg::random_density(4, 4, &mut rng);
        let rho = DensityMatrix::new(photons(1..=2), m.clone()).unwrap();
        let r = rho.partial_trace(&[SiteLabel::Photon(1)]).unwrap();
        // P1 is the low bit: index = a + 2 b
        for a in 0..2 {
            for a2 in 0..2 {
                let want = m[(a, a2)] + m[(a + 2, a2 + 2)];
                assert!((r.data()[(a, a2)] - want).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn bell_partial_transpose_spectrum() {
        let pt = bell().to_density().partial_transpose(&[SiteLabel::Photon(1)]).unwrap();
        let ev = pt.eigenvalues().unwrap();
        assert!((ev[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_transpose_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = linalg::random_density(2, 2, &mut rng);
        let b = linalg::random_density(3, 3, &mut rng);
        let s = vec![SiteLabel::Photon(1), SiteLabel::Source(1)];
        let rho = SiteOperator::new(s.clone(), linalg::kron(&b, &a)).unwrap();
        let pt = rho.partial_transpose(&[SiteLabel::Photon(1)]).unwrap();
        let want = linalg::kron(&b, &a.transpose().to_owned());
        assert!(linalg::max_abs_diff(pt.data(), &want) < 1e-15);
        let none = rho.partial_transpose(&[]).unwrap();
        assert!(linalg::max_abs_diff(none.data(), rho.data()) < 1e-15);
    }

    #[test]
    fn unknown_site_errors() {
        let rho = bell().to_density();
        assert!(matches!(
            rho.partial_trace(&[SiteLabel::Photon(3)]),
            Err(Error::UnknownSite(_))
        ));
    }

    #[test]
    fn fidelity_cases() {
        let b = bell();
        assert!((b.to_density().fidelity(&b).unwrap() - 1.0).abs() < 1e-14);
        let mm = DensityMatrix::maximally_mixed(photons(1..=3)).unwrap();
        let t = PureState::basis(photons(1..=3), &[1, 0, 1]).unwrap();
        assert!((mm.fidelity(&t).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn reorder_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = vec![SiteLabel::Source(1), SiteLabel::Photon(1), SiteLabel::Photon(2)];
        let rho = DensityMatrix::new(s.clone(), linalg::random_density(12, 2, &mut rng)).unwrap();
        let o = vec![SiteLabel::Photon(2), SiteLabel::Source(1), SiteLabel::Photon(1)];
        let back = rho.reorder(&o).unwrap().reorder(&s).unwrap();
        assert!(linalg::max_abs_diff(back.data(), rho.data()) < 1e-15);
        let r1 = rho.reorder(&o).unwrap().partial_trace(&[SiteLabel::Photon(2)]).unwrap();
        let r2 = rho.partial_trace(&[SiteLabel::Photon(2)]).unwrap();
        assert!(linalg::max_abs_diff(r1.data(), r2.data()) < 1e-15);
    }
}
