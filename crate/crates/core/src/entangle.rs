//! Negativity and localizable entanglement of ladder cluster states.

use faer::Mat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Basis, LadderGraph};
use crate::linalg::{self, c, CMat, C64, ONE, ZERO};
use crate::mpo::Mpo;
use crate::sites::SiteLabel;
use crate::state::DensityMatrix;

/// Values of negativity below this are reported as zero.
pub const NEGATIVITY_FLOOR: f64 = 1e-10;

/// `(‖ρ^{T_A}‖₁ − 1)/2` for the bipartition `part | rest`.
pub fn negativity(rho: &DensityMatrix, part: &[SiteLabel]) -> Result<f64> {
    if part.is_empty() || part.len() >= rho.sites().len() {
        return Err(Error::param("part", "bipartition needs both sides non-empty"));
    }
    let pt = rho.partial_transpose(part)?;
    let tn = linalg::trace_norm_hermitian(&linalg::hermitian_part(pt.data()))?;
    let n = (tn - 1.0) / 2.0;
    Ok(if n < NEGATIVITY_FLOOR { 0.0 } else { n })
}

/// Measurement assignment for one corner-to-corner path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionPlan {
    pub endpoints: (usize, usize),
    /// Full vertex sequence from the first to the second endpoint.
    pub path: Vec<usize>,
    /// Vertices measured in Z.
    pub complement: Vec<usize>,
}

impl ProjectionPlan {
    /// X-measured vertices (path interior), ascending.
    pub fn x_set(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.path[1..self.path.len() - 1].to_vec();
        v.sort_unstable();
        v
    }

    /// Basis of every vertex other than the endpoints, in vertex order.
    pub fn bases(&self, num_vertices: usize) -> Vec<(usize, Basis)> {
        let x = self.x_set();
        (1..=num_vertices)
            .filter(|v| *v != self.endpoints.0 && *v != self.endpoints.1)
            .map(|v| (v, if x.contains(&v) { Basis::X } else { Basis::Z }))
            .collect()
    }
}

/// All shortest paths between the diagonal corners `P_1` and `P_2n`; each
/// stays on one row and switches rows once, so there are `n` of them.
pub fn enumerate_paths(g: &LadderGraph) -> Vec<ProjectionPlan> {
    let n = g.n;
    let (a, b) = (1, g.num_vertices());
    (1..=n)
        .map(|k| {
            let mut path: Vec<usize> = (1..=k).map(|col| LadderGraph::vertex_at(col, 0)).collect();
            path.extend((k..=n).map(|col| LadderGraph::vertex_at(col, 1)));
            let complement = g.vertices().filter(|v| !path.contains(v)).collect();
            ProjectionPlan {
                endpoints: (a, b),
                path,
                complement,
            }
        })
        .collect()
}

/// Projector `|v⟩⟨v|` for outcome `negative` of a Pauli basis.
fn projector(basis: Basis, negative: bool) -> CMat {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let v = match (basis, negative) {
        (Basis::Z, false) => [ONE, ZERO],
        (Basis::Z, true) => [ZERO, ONE],
        (Basis::X, false) => [c(h, 0.0), c(h, 0.0)],
        (Basis::X, true) => [c(h, 0.0), c(-h, 0.0)],
    };
    Mat::from_fn(2, 2, |i, j| v[i] * v[j].conj())
}

/// Per-site transfer matrices `Σ_{kb} A[:, kb, :] O[b, k]` for the MPO.
struct Transfers<'a> {
    mpo: &'a Mpo,
    /// `[site][basis][outcome]`, endpoints left empty.
    proj: Vec<Vec<[CMat; 2]>>,
    /// Traced right environment at the left bond of each site (plus a 1 at the end).
    right: Vec<Vec<C64>>,
}

fn transfer(t: &crate::mpo::Tensor3, o: &CMat) -> CMat {
    Mat::from_fn(t.dl, t.dr, |l, r| {
        let mut s = ZERO;
        for k in 0..2 {
            for b in 0..2 {
                s += t.at(l, 2 * k + b, r) * o[(b, k)];
            }
        }
        s
    })
}

impl<'a> Transfers<'a> {
    fn new(mpo: &'a Mpo) -> Result<Self> {
        let n = mpo.len();
        if n < 2 {
            return Err(Error::param("state", "need at least two photons"));
        }
        for (i, s) in mpo.sites().iter().enumerate() {
            if *s != SiteLabel::Photon(i + 1) {
                return Err(Error::param("state", "sites must be P1..PN in order"));
            }
        }
        let t = mpo.tensors();
        let proj = (0..n)
            .into_par_iter()
            .map(|j| {
                if j == 0 || j == n - 1 {
                    return Vec::new();
                }
                [Basis::X, Basis::Z]
                    .iter()
                    .map(|&b| [transfer(&t[j], &projector(b, false)), transfer(&t[j], &projector(b, true))])
                    .collect()
            })
            .collect();
        let mut right = vec![Vec::new(); n + 1];
        right[n] = vec![ONE];
        for j in (0..n).rev() {
            let tr = transfer(&t[j], &linalg::identity(2));
            let next = &right[j + 1];
            let v: Vec<C64> = (0..tr.nrows())
                .map(|l| (0..tr.ncols()).map(|r| tr[(l, r)] * next[r]).sum())
                .collect();
            right[j] = v;
        }
        Ok(Transfers { mpo, proj, right })
    }

    fn total_trace(&self) -> C64 {
        self.right[0][0]
    }

    /// Left state with the first endpoint open: 4 rows (fused ket/bra index).
    fn start(&self) -> CMat {
        let t = &self.mpo.tensors()[0];
        Mat::from_fn(4, t.dr, |q, r| t.at(0, q, r))
    }

    fn weight(&self, left: &CMat, site: usize) -> C64 {
        let r = &self.right[site];
        (0..left.ncols()).map(|a| (left[(0, a)] + left[(3, a)]) * r[a]).sum()
    }

    fn step(&self, left: &CMat, site: usize, basis: Basis, negative: bool) -> CMat {
        let b = match basis {
            Basis::X => 0,
            Basis::Z => 1,
        };
        left * &self.proj[site][b][negative as usize]
    }

    /// Closes the chain with the last endpoint open; returns the unnormalized
    /// 2-qubit operator on `[P_1, P_N]`.
    fn finish(&self, left: &CMat) -> CMat {
        let t = self.mpo.tensors().last().expect("non-empty");
        let mut m = Mat::<C64>::zeros(4, 4);
        for q1 in 0..4 {
            for qn in 0..4 {
                let mut s = ZERO;
                for a in 0..t.dl {
                    s += left[(q1, a)] * t.at(a, qn, 0);
                }
                let (k1, b1, kn, bn) = (q1 / 2, q1 % 2, qn / 2, qn % 2);
                m[(k1 + 2 * kn, b1 + 2 * bn)] = s;
            }
        }
        m
    }
}

fn two_qubit_state(m: CMat, n: usize) -> Result<(DensityMatrix, C64)> {
    let tr = linalg::trace(&m);
    if tr.norm() < 1e-300 {
        return Err(Error::ZeroProbability);
    }
    let rho = linalg::hermitian_part(&linalg::scale(&m, ONE / tr));
    Ok((
        DensityMatrix::from_channel_output(vec![SiteLabel::Photon(1), SiteLabel::Photon(n)], rho)?,
        tr,
    ))
}

fn endpoint_negativity(rho: &DensityMatrix) -> Result<f64> {
    negativity(rho, &[SiteLabel::Photon(1)])
}

/// Projects every non-endpoint photon per `plan` with the given outcomes
/// (`true` = −1 eigenvalue, in vertex order) and returns the normalized
/// endpoint state and its Born probability.
pub fn project_and_reduce(state: &Mpo, plan: &ProjectionPlan, outcomes: &[bool]) -> Result<(DensityMatrix, f64)> {
    let n = state.len();
    if plan.endpoints != (1, n) {
        return Err(Error::param("plan", "endpoints must be the first and last photon"));
    }
    if outcomes.len() != n - 2 {
        return Err(Error::DimensionMismatch {
            expected: n - 2,
            got: outcomes.len(),
        });
    }
    let tf = Transfers::new(state)?;
    let mut left = tf.start();
    for ((v, basis), &o) in plan.bases(n).into_iter().zip(outcomes) {
        left = tf.step(&left, v - 1, basis, o);
    }
    let (rho, w) = two_qubit_state(tf.finish(&left), n)?;
    let p = (w / tf.total_trace()).re;
    if p <= 0.0 {
        return Err(Error::ZeroProbability);
    }
    Ok((rho, p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSampling {
    /// Outcomes drawn from their Born distribution.
    Born,
    /// Outcomes drawn uniformly and reweighted by their Born probability.
    Uniform,
    /// Every outcome string, weighted by probability.
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeOptions {
    pub samples: usize,
    pub seed: u64,
    pub sampling: OutcomeSampling,
    /// Switch to exhaustive enumeration when `2^(N−2)` does not exceed this.
    pub exhaustive_limit: usize,
}

impl Default for LeOptions {
    fn default() -> Self {
        LeOptions {
            samples: 1024,
            seed: 0,
            sampling: OutcomeSampling::Born,
            exhaustive_limit: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub path_id: usize,
    pub path: Vec<usize>,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Total Born probability of the evaluated outcomes (1 when exhaustive).
    pub probability_sum: f64,
    /// Outcomes skipped for having zero probability.
    pub zero_probability: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeResult {
    pub photons: usize,
    pub paths: Vec<PathResult>,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
    pub sampling: OutcomeSampling,
}

const ZERO_PROB: f64 = 1e-14;

fn sample_rng(seed: u64, path: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((path as u64) << 32) | sample as u64);
    rng
}

/// One sampled outcome string; returns `(negativity, importance weight)`.
fn sample_once(tf: &Transfers, bases: &[(usize, Basis)], uniform: bool, rng: &mut ChaCha8Rng) -> Result<Option<(f64, f64)>> {
    let n = tf.mpo.len();
    let mut left = tf.start();
    let mut weight = 1.0;
    let mut w_prev = tf.weight(&left, 1).re;
    for &(v, basis) in bases {
        let site = v - 1;
        let cand = [tf.step(&left, site, basis, false), tf.step(&left, site, basis, true)];
        let p0 = tf.weight(&cand[0], site + 1).re.max(0.0);
        let p1 = tf.weight(&cand[1], site + 1).re.max(0.0);
        let tot = p0 + p1;
        if !(tot > ZERO_PROB * w_prev.abs()) {
            return Ok(None);
        }
        let (pick, q) = if uniform {
            let pick = rng.random::<f64>() < 0.5;
            (pick, 0.5)
        } else {
            let pick = rng.random::<f64>() * tot >= p0;
            (pick, if pick { p1 / tot } else { p0 / tot })
        };
        let p = if pick { p1 } else { p0 } / tot;
        if p <= ZERO_PROB {
            return Ok(None);
        }
        weight *= p / q;
        let s = if pick { p1 } else { p0 };
        left = linalg::scale(&cand[pick as usize], c(1.0 / s, 0.0));
        w_prev = 1.0;
    }
    let (rho, _) = two_qubit_state(tf.finish(&left), n)?;
    Ok(Some((endpoint_negativity(&rho)?, weight)))
}

fn exhaustive(tf: &Transfers, bases: &[(usize, Basis)]) -> Result<(f64, f64, f64, usize)> {
    let n = tf.mpo.len();
    let total = tf.total_trace().re;
    // depth-first over outcome strings; each frame keeps the unnormalized left state
    let mut stack = vec![(tf.start(), 0usize)];
    let (mut sum, mut sumsq, mut psum, mut zero) = (0.0, 0.0, 0.0, 0usize);
    while let Some((left, depth)) = stack.pop() {
        if depth == bases.len() {
            let m = tf.finish(&left);
            let p = linalg::trace(&m).re / total;
            if p <= ZERO_PROB {
                zero += 1;
                continue;
            }
            let (rho, _) = two_qubit_state(m, n)?;
            let neg = endpoint_negativity(&rho)?;
            sum += p * neg;
            sumsq += p * neg * neg;
            psum += p;
            continue;
        }
        let (v, basis) = bases[depth];
        for o in [true, false] {
            let next = tf.step(&left, v - 1, basis, o);
            if tf.weight(&next, v).re / total <= ZERO_PROB {
                zero += 1usize << (bases.len() - depth - 1);
                continue;
            }
            stack.push((next, depth + 1));
        }
    }
    let mean = sum / psum;
    Ok((mean, (sumsq / psum - mean * mean).max(0.0), psum, zero))
}

/// Mean endpoint negativity over all corner-to-corner paths, with the
/// remaining photons projected in X (path) or Z (elsewhere).
pub fn localizable_entanglement(state: &Mpo, opts: &LeOptions) -> Result<LeResult> {
    let n = state.len();
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::param("state", "needs 2n photons with n ≥ 2"));
    }
    if opts.samples == 0 {
        return Err(Error::param("samples", "must be positive"));
    }
    let g = LadderGraph::new(n / 2)?;
    let tf = Transfers::new(state)?;
    let exhaustive_mode = match opts.sampling {
        OutcomeSampling::Exhaustive => true,
        OutcomeSampling::Born => n <= 12 && (1usize << (n - 2)) <= opts.exhaustive_limit,
        OutcomeSampling::Uniform => false,
    };
    let plans = enumerate_paths(&g);
    let paths = plans
        .par_iter()
        .enumerate()
        .map(|(id, plan)| -> Result<PathResult> {
            let bases = plan.bases(n);
            if exhaustive_mode {
                let (mean, _var, psum, zero) = exhaustive(&tf, &bases)?;
                let count = (1usize << (n - 2)) - zero;
                return Ok(PathResult {
                    path_id: id,
                    path: plan.path.clone(),
                    mean,
                    stderr: 0.0,
                    samples: count,
                    probability_sum: psum,
                    zero_probability: zero,
                });
            }
            let uniform = opts.sampling == OutcomeSampling::Uniform;
            let draws: Vec<Option<(f64, f64)>> = (0..opts.samples)
                .into_par_iter()
                .map(|k| sample_once(&tf, &bases, uniform, &mut sample_rng(opts.seed, id, k)))
                .collect::<Result<_>>()?;
            let ok: Vec<(f64, f64)> = draws.iter().flatten().copied().collect();
            let zero = draws.len() - ok.len();
            let wsum: f64 = ok.iter().map(|x| x.1).sum();
            if ok.is_empty() || wsum <= 0.0 {
                return Err(Error::ZeroProbability);
            }
            let mean = ok.iter().map(|(v, w)| v * w).sum::<f64>() / wsum;
            let m = ok.len() as f64;
            // self-normalized estimator; reduces to the sample standard error for Born sampling
            let var = ok.iter().map(|(v, w)| (w * (v - mean)).powi(2)).sum::<f64>() / (wsum / m).powi(2) / (m * (m - 1.0).max(1.0));
            Ok(PathResult {
                path_id: id,
                path: plan.path.clone(),
                mean,
                stderr: var.sqrt(),
                samples: ok.len(),
                probability_sum: if uniform { wsum / m } else { 1.0 },
                zero_probability: zero,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = paths.len() as f64;
    let mean = paths.iter().map(|p| p.mean).sum::<f64>() / k;
    let stderr = paths.iter().map(|p| p.stderr * p.stderr).sum::<f64>().sqrt() / k;
    Ok(LeResult {
        photons: n,
        samples: paths.iter().map(|p| p.samples).sum(),
        paths,
        mean,
        stderr,
        seed: opts.seed,
        sampling: if exhaustive_mode {
            OutcomeSampling::Exhaustive
        } else {
            opts.sampling
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{graph_projection_oracle, ideal_cluster_mps, ideal_cluster_state};
    use crate::sites::photons;

    fn bell() -> DensityMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = crate::PureState::new(photons(1..=2), vec![c(h, 0.0), ZERO, ZERO, c(h, 0.0)]).unwrap();
        psi.to_density()
    }

    #[test]
    fn bell_negativity_is_half() {
        assert!((negativity(&bell(), &photons(1..=1)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn werner_negativity_matches_eigen_oracle() {
        let p = 0.5;
        let b = bell();
        let rho = linalg::hermitian_part(&(linalg::scale(b.data(), c(p, 0.0)) + linalg::scale(&linalg::identity(4), c((1.0 - p) / 4.0, 0.0))));
        let rho = DensityMatrix::new(photons(1..=2), rho).unwrap();
        // ρ^{T_A} has eigenvalues (1+p)/4 (×3) and (1−3p)/4
        let expected = ((3.0 * p - 1.0) / 4.0_f64).max(0.0);
        assert!((negativity(&rho, &photons(1..=1)).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn path_counts() {
        for n in 1..=6 {
            let g = LadderGraph::new(n).unwrap();
            let ps = enumerate_paths(&g);
            assert_eq!(ps.len(), n);
            for p in &ps {
                assert_eq!(p.path.len(), n + 1);
                assert!(p.path.windows(2).all(|w| g.is_edge(w[0], w[1])));
            }
        }
    }

    #[test]
    fn projection_matches_graph_rules() {
        let g = LadderGraph::new(3).unwrap();
        let mpo = ideal_cluster_mps(&g).to_mpo();
        for plan in enumerate_paths(&g) {
            for bits in 0..16u32 {
                let outcomes: Vec<bool> = (0..4).map(|i| (bits >> i) & 1 == 1).collect();
                let (rho, p) = project_and_reduce(&mpo, &plan, &outcomes).unwrap();
                let bases = plan.bases(6);
                let x: Vec<usize> = bases.iter().filter(|b| b.1 == Basis::X).map(|b| b.0).collect();
                let z: Vec<usize> = bases.iter().filter(|b| b.1 == Basis::Z).map(|b| b.0).collect();
                let pairs: Vec<(usize, bool)> = bases.iter().map(|b| b.0).zip(outcomes.iter().copied()).collect();
                let oracle = graph_projection_oracle(&g, &x, &z, &pairs).unwrap();
                assert!((p - oracle.probability).abs() < 1e-12);
                assert!(linalg::max_abs_diff(rho.data(), oracle.state.data()) < 1e-10);
                assert!((endpoint_negativity(&rho).unwrap() - 0.5).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dense_projection_cross_check() {
        let g = LadderGraph::new(2).unwrap();
        let psi = ideal_cluster_state(&g);
        let rho = crate::linalg::random_density(16, 3, &mut ChaCha8Rng::seed_from_u64(5));
        let rho = linalg::hermitian_part(&(linalg::scale(psi.to_density().data(), c(0.7, 0.0)) + linalg::scale(&rho, c(0.3, 0.0))));
        let dm = DensityMatrix::new(g.sites(), rho).unwrap();
        let mpo = Mpo::from_dense(&dm, 64, 1e-14).unwrap();
        let plan = &enumerate_paths(&g)[0];
        let outcomes = [true, false];
        let (r, p) = project_and_reduce(&mpo, plan, &outcomes).unwrap();
        let mut ops = Vec::new();
        for ((v, basis), &o) in plan.bases(4).iter().zip(&outcomes) {
            ops.push((*v, projector(*basis, o)));
        }
        let mut m = dm.data().clone();
        for (v, pr) in &ops {
            let idx = linalg::LocalIndex::new(&[2, 2, 2, 2], &[v - 1]);
            m = linalg::conjugate_local(&m, &idx, pr);
        }
        let full = DensityMatrix::from_channel_output(g.sites(), linalg::scale(&m, c(1.0 / linalg::trace(&m).re, 0.0))).unwrap();
        let red = full.partial_trace(&[SiteLabel::Photon(1), SiteLabel::Photon(4)]).unwrap();
        assert!((p - linalg::trace(&m).re).abs() < 1e-9);
        assert!(linalg::max_abs_diff(r.data(), red.data()) < 1e-9);
    }

    #[test]
    fn ideal_le_is_half_sampled_and_exhaustive() {
        for n in [2, 3, 7] {
            let g = LadderGraph::new(n).unwrap();
            let mpo = ideal_cluster_mps(&g).to_mpo();
            let r = localizable_entanglement(&mpo, &LeOptions { samples: 64, ..Default::default() }).unwrap();
            assert!((r.mean - 0.5).abs() < 1e-9, "n={n}: {}", r.mean);
            for p in &r.paths {
                if r.sampling == OutcomeSampling::Exhaustive {
                    assert!((p.probability_sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn dephased_state_has_no_le() {
        let g = LadderGraph::new(2).unwrap();
        let psi = ideal_cluster_state(&g).to_density();
        let diag = Mat::from_fn(16, 16, |i, j| if i == j { psi.data()[(i, j)] } else { ZERO });
        let dm = DensityMatrix::new(g.sites(), diag).unwrap();
        let mpo = Mpo::from_dense(&dm, 64, 1e-14).unwrap();
        let r = localizable_entanglement(&mpo, &LeOptions::default()).unwrap();
        assert_eq!(r.mean, 0.0);
    }
}
