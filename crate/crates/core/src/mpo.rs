//! Matrix product states and operators on photonic qubit chains.
//!
//! An MPO tensor `W[l, k, b, r]` is stored as a three-leg tensor with a
//! fused physical index `q = 2k + b`, which lets states and operators share
//! the same canonicalization and compression code.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, C64, ONE, ZERO};
use crate::sites::SiteLabel;
use crate::state::{DensityMatrix, PureState, SiteOperator};

/// Three-leg tensor `T[l, q, r]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    pub dl: usize,
    pub d: usize,
    pub dr: usize,
    pub data: Vec<C64>,
}

impl Tensor3 {
    pub fn zeros(dl: usize, d: usize, dr: usize) -> Self {
        Tensor3 {
            dl,
            d,
            dr,
            data: vec![ZERO; dl * d * dr],
        }
    }

    #[inline]
    pub fn at(&self, l: usize, q: usize, r: usize) -> C64 {
        self.data[(l * self.d + q) * self.dr + r]
    }

    #[inline]
    pub fn at_mut(&mut self, l: usize, q: usize, r: usize) -> &mut C64 {
        &mut self.data[(l * self.d + q) * self.dr + r]
    }

    /// `(l q) × r` matrix view.
    pub fn left_matrix(&self) -> CMat {
        Mat::from_fn(self.dl * self.d, self.dr, |i, j| self.data[i * self.dr + j])
    }

    /// `l × (q r)` matrix view.
    pub fn right_matrix(&self) -> CMat {
        let w = self.d * self.dr;
        Mat::from_fn(self.dl, w, |i, j| self.data[i * w + j])
    }

    pub fn from_left_matrix(m: &CMat, d: usize) -> Self {
        let dl = m.nrows() / d;
        let dr = m.ncols();
        let mut data = Vec::with_capacity(m.nrows() * dr);
        for i in 0..m.nrows() {
            for j in 0..dr {
                data.push(m[(i, j)]);
            }
        }
        Tensor3 { dl, d, dr, data }
    }

    pub fn from_right_matrix(m: &CMat, d: usize) -> Self {
        let dl = m.nrows();
        let dr = m.ncols() / d;
        let mut data = Vec::with_capacity(dl * m.ncols());
        for i in 0..dl {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Tensor3 { dl, d, dr, data }
    }

    /// Multiplies the right bond by `m` (`dr × k`).
    pub fn mul_right(&self, m: &CMat) -> Self {
        let p = &self.left_matrix() * m;
        Tensor3::from_left_matrix(&p, self.d)
    }

    /// Multiplies the left bond by `m` (`k × dl`).
    pub fn mul_left(&self, m: &CMat) -> Self {
        let p = m * &self.right_matrix();
        Tensor3::from_right_matrix(&p, self.d)
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }
}

/// Truncation limits for SVD compression.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Truncation {
    pub max_bond: usize,
    pub eps: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            max_bond: 256,
            eps: 1e-10,
        }
    }
}

/// Outcome of a compression sweep.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct TruncationReport {
    /// Estimated relative Frobenius error `‖A − A'‖ / ‖A‖`.
    pub relative_error: f64,
    /// Largest bond that `eps` alone would have required.
    pub required_bond: usize,
    /// Whether `max_bond` was the binding constraint somewhere.
    pub capped: bool,
}

impl TruncationReport {
    pub fn merge(&mut self, other: &TruncationReport) {
        self.relative_error = (self.relative_error.powi(2) + other.relative_error.powi(2)).sqrt();
        self.required_bond = self.required_bond.max(other.required_bond);
        self.capped |= other.capped;
    }
}

/// Chooses how many singular values to keep; returns (rank, discarded weight, rank eps alone needs).
pub(crate) fn choose_rank(s: &[f64], budget_sq: f64, max_bond: usize) -> (usize, f64, usize) {
    let mut tail = 0.0;
    let mut keep = s.len();
    while keep > 1 {
        let w = s[keep - 1] * s[keep - 1];
        if tail + w > budget_sq {
            break;
        }
        tail += w;
        keep -= 1;
    }
    let needed = keep;
    if keep > max_bond {
        tail += s[max_bond..keep].iter().map(|x| x * x).sum::<f64>();
        keep = max_bond;
    }
    (keep, tail, needed)
}

pub(crate) struct SplitSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub vh: CMat,
}

pub(crate) fn svd(m: &CMat) -> Result<SplitSvd> {
    let sv = m
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let sd = sv.S().column_vector();
    let s = (0..sd.nrows()).map(|i| sd[i].re).collect();
    Ok(SplitSvd {
        u: sv.U().to_owned(),
        s,
        vh: sv.V().adjoint().to_owned(),
    })
}

/// Truncated SVD `m ≈ U diag(s) Vh` with the rank chosen by `choose_rank`.
pub(crate) fn truncated_svd(
    m: &CMat,
    budget_sq: f64,
    max_bond: usize,
) -> Result<(SplitSvd, f64, usize)> {
    let full = svd(m)?;
    let (k, tail, needed) = choose_rank(&full.s, budget_sq, max_bond);
    let u = full.u.subcols(0, k).to_owned();
    let vh = full.vh.subrows(0, k).to_owned();
    Ok((
        SplitSvd {
            u,
            s: full.s[..k].to_vec(),
            vh,
        },
        tail,
        needed,
    ))
}

fn chain_norm_sq(tensors: &[Tensor3]) -> f64 {
    // <A|A> via transfer matrices
    let mut env = linalg::identity(1);
    for t in tensors {
        let mut next = Mat::<C64>::zeros(t.dr, t.dr);
        for q in 0..t.d {
            let a = Mat::from_fn(t.dl, t.dr, |l, r| t.at(l, q, r));
            next += &(a.adjoint() * &env) * &a;
        }
        env = next;
    }
    env[(0, 0)].re
}

/// Right-canonicalizes then compresses left to right; the chain ends
/// left-canonical with the norm on the last tensor.
pub(crate) fn compress_chain(tensors: &mut [Tensor3], trunc: Truncation) -> Result<TruncationReport> {
    let n = tensors.len();
    let mut report = TruncationReport::default();
    if n == 0 {
        return Ok(report);
    }
    for j in (1..n).rev() {
        let m = tensors[j].right_matrix();
        let sv = svd(&m)?;
        let smax = sv.s.first().copied().unwrap_or(0.0);
        let k = sv.s.iter().filter(|&&x| x > smax * 1e-15).count().max(1);
        let vh = sv.vh.subrows(0, k).to_owned();
        let us = Mat::from_fn(m.nrows(), k, |i, a| sv.u[(i, a)] * sv.s[a]);
        tensors[j] = Tensor3::from_right_matrix(&vh, tensors[j].d);
        tensors[j - 1] = tensors[j - 1].mul_right(&us);
    }
    let norm_sq = chain_norm_sq(&tensors[..1]);
    let budget = trunc.eps * trunc.eps * norm_sq / ((n.max(2) - 1) as f64);
    let mut discarded = 0.0;
    for j in 0..n - 1 {
        let m = tensors[j].left_matrix();
        let (sv, tail, needed) = truncated_svd(&m, budget, trunc.max_bond)?;
        discarded += tail;
        report.required_bond = report.required_bond.max(needed);
        report.capped |= needed > trunc.max_bond;
        let k = sv.s.len();
        let svh = Mat::from_fn(k, sv.vh.ncols(), |a, r| sv.vh[(a, r)] * sv.s[a]);
        tensors[j] = Tensor3::from_left_matrix(&sv.u, tensors[j].d);
        tensors[j + 1] = tensors[j + 1].mul_left(&svh);
    }
    report.relative_error = if norm_sq > 0.0 {
        (discarded / norm_sq).sqrt()
    } else {
        0.0
    };
    Ok(report)
}

/// Matrix product state on photonic qubits.
#[derive(Clone, Debug)]
pub struct Mps {
    sites: Vec<SiteLabel>,
    tensors: Vec<Tensor3>,
}

impl Mps {
    pub fn new(sites: Vec<SiteLabel>, tensors: Vec<Tensor3>) -> Result<Self> {
        validate_chain(&sites, &tensors, 2)?;
        Ok(Mps { sites, tensors })
    }

    pub fn sites(&self) -> &[SiteLabel] {
        &self.sites
    }

    pub fn tensors(&self) -> &[Tensor3] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn max_bond(&self) -> usize {
        self.tensors.iter().map(|t| t.dr.max(t.dl)).max().unwrap_or(1)
    }

    pub fn norm_sq(&self) -> f64 {
        chain_norm_sq(&self.tensors)
    }

    pub fn to_pure(&self) -> Result<PureState> {
        let mut acc = vec![ONE];
        let mut width = 1usize;
        for t in &self.tensors {
            let mut next = vec![ZERO; width * 2 * t.dr];
            // acc index: p * dl + l  ->  next index: (p + width q) * dr + r
            for p in 0..width {
                for l in 0..t.dl {
                    let a = acc[p * t.dl + l];
                    if a == ZERO {
                        continue;
                    }
                    for q in 0..2 {
                        for r in 0..t.dr {
                            next[(p + width * q) * t.dr + r] += a * t.at(l, q, r);
                        }
                    }
                }
            }
            acc = next;
            width *= 2;
        }
        PureState::normalized(self.sites.clone(), acc)
    }

    /// `⟨ψ| ⊗_j O_j |ψ⟩` with `None` meaning identity.
    pub fn expectation_product(&self, ops: &[Option<CMat>]) -> Result<C64> {
        if ops.len() != self.tensors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.tensors.len(),
                got: ops.len(),
            });
        }
        let mut env = linalg::identity(1);
        for (t, op) in self.tensors.iter().zip(ops) {
            let mut next = Mat::<C64>::zeros(t.dr, t.dr);
            let mats: Vec<CMat> = (0..2)
                .map(|q| Mat::from_fn(t.dl, t.dr, |l, r| t.at(l, q, r)))
                .collect();
            for k in 0..2 {
                for b in 0..2 {
                    let w = match op {
                        Some(o) => o[(k, b)],
                        None if k == b => ONE,
                        None => ZERO,
                    };
                    if w == ZERO {
                        continue;
                    }
                    next += linalg::scale(&(&(mats[k].adjoint() * &env) * &mats[b]), w);
                }
            }
            env = next;
        }
        Ok(env[(0, 0)])
    }

    /// `|ψ⟩⟨ψ|` as an MPO.
    pub fn to_mpo(&self) -> Mpo {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let (dl, dr) = (t.dl * t.dl, t.dr * t.dr);
                let mut w = Tensor3::zeros(dl, 4, dr);
                for l in 0..t.dl {
                    for l2 in 0..t.dl {
                        for k in 0..2 {
                            for b in 0..2 {
                                for r in 0..t.dr {
                                    for r2 in 0..t.dr {
                                        *w.at_mut(l * t.dl + l2, 2 * k + b, r * t.dr + r2) =
                                            t.at(l, k, r) * t.at(l2, b, r2).conj();
                                    }
                                }
                            }
                        }
                    }
                }
                w
            })
            .collect();
        Mpo {
            sites: self.sites.clone(),
            tensors,
            max_bond: self.max_bond().pow(2),
            eps: 0.0,
            truncation_error: 0.0,
        }
    }
}

fn validate_chain(sites: &[SiteLabel], tensors: &[Tensor3], d: usize) -> Result<()> {
    crate::sites::check_sites(sites)?;
    if sites.len() != tensors.len() {
        return Err(Error::DimensionMismatch {
            expected: sites.len(),
            got: tensors.len(),
        });
    }
    if let Some(s) = sites.iter().find(|s| !s.is_photon()) {
        return Err(Error::param("sites", format!("{s} is not a photonic qubit")));
    }
    for (j, t) in tensors.iter().enumerate() {
        if t.d != d || t.data.len() != t.dl * t.d * t.dr {
            return Err(Error::InvalidState(format!("malformed tensor at site {j}")));
        }
        let left = if j == 0 { 1 } else { tensors[j - 1].dr };
        if t.dl != left {
            return Err(Error::DimensionMismatch {
                expected: left,
                got: t.dl,
            });
        }
    }
    if tensors.last().is_some_and(|t| t.dr != 1) {
        return Err(Error::InvalidState("right boundary bond must be 1".into()));
    }
    Ok(())
}

/// Density operator on a chain of photonic qubits.
#[derive(Clone, Debug)]
pub struct Mpo {
    sites: Vec<SiteLabel>,
    tensors: Vec<Tensor3>,
    max_bond: usize,
    eps: f64,
    truncation_error: f64,
}

impl Mpo {
    /// Wraps fused-index tensors `W[l, 2k+b, r]`.
    pub fn new(sites: Vec<SiteLabel>, tensors: Vec<Tensor3>, trunc: Truncation) -> Result<Self> {
        validate_chain(&sites, &tensors, 4)?;
        if trunc.max_bond == 0 || trunc.eps < 0.0 {
            return Err(Error::param("truncation", "max_bond must be positive and eps non-negative"));
        }
        Ok(Mpo {
            sites,
            tensors,
            max_bond: trunc.max_bond,
            eps: trunc.eps,
            truncation_error: 0.0,
        })
    }

    pub fn sites(&self) -> &[SiteLabel] {
        &self.sites
    }

    pub fn tensors(&self) -> &[Tensor3] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn truncation(&self) -> Truncation {
        Truncation {
            max_bond: self.max_bond,
            eps: self.eps,
        }
    }

    /// Accumulated relative truncation error of the operations that built this MPO.
    pub fn truncation_error(&self) -> f64 {
        self.truncation_error
    }

    pub(crate) fn set_truncation_error(&mut self, e: f64) {
        self.truncation_error = e;
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors.iter().take(self.len().saturating_sub(1)).map(|t| t.dr).collect()
    }

    pub fn max_bond_used(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Decomposes a dense qubit density matrix by sequential SVDs.
    pub fn from_dense(rho: &DensityMatrix, max_bond: usize, eps: f64) -> Result<Self> {
        Mpo::from_operator(rho.as_operator(), Truncation { max_bond, eps })
    }

    pub fn from_operator(op: &SiteOperator, trunc: Truncation) -> Result<Self> {
        let sites = op.sites().to_vec();
        if let Some(s) = sites.iter().find(|s| !s.is_photon()) {
            return Err(Error::param("sites", format!("{s} is not a photonic qubit")));
        }
        let n = sites.len();
        let d = op.dim();
        let m = op.data();
        // fused little-endian index p = Σ_j (2 k_j + b_j) 4^j
        let total = d * d;
        let mut vec = vec![ZERO; total];
        for k in 0..d {
            for b in 0..d {
                let mut p = 0usize;
                let mut w = 1usize;
                for j in 0..n {
                    p += (2 * ((k >> j) & 1) + ((b >> j) & 1)) * w;
                    w *= 4;
                }
                vec[p] = m[(k, b)];
            }
        }
        let norm_sq: f64 = vec.iter().map(|x| x.norm_sqr()).sum();
        let budget = trunc.eps * trunc.eps * norm_sq / ((n.max(2) - 1) as f64);
        let mut tensors = Vec::with_capacity(n);
        let mut discarded = 0.0;
        let mut required = 1;
        let mut rest = Mat::from_fn(1, total, |_, j| vec[j]);
        for _ in 0..n.saturating_sub(1) {
            let r = rest.nrows();
            let cols = rest.ncols() / 4;
            let mat = Mat::from_fn(r * 4, cols, |i, j| rest[(i / 4, (i % 4) + 4 * j)]);
            let (sv, tail, needed) = truncated_svd(&mat, budget, trunc.max_bond)?;
            discarded += tail;
            required = required.max(needed);
            tensors.push(Tensor3::from_left_matrix(&sv.u, 4));
            let k = sv.s.len();
            rest = Mat::from_fn(k, cols, |a, j| sv.vh[(a, j)] * sv.s[a]);
        }
        if n > 0 {
            let r = rest.nrows();
            let mat = Mat::from_fn(r * 4, 1, |i, _| rest[(i / 4, i % 4)]);
            tensors.push(Tensor3::from_left_matrix(&mat, 4));
        }
        let err = if norm_sq > 0.0 {
            (discarded / norm_sq).sqrt()
        } else {
            0.0
        };
        if required > trunc.max_bond && err > trunc.eps {
            return Err(Error::BondOverflow {
                required,
                max_bond: trunc.max_bond,
                error: err,
            });
        }
        let mut mpo = Mpo::new(sites, tensors, trunc)?;
        mpo.truncation_error = err;
        Ok(mpo)
    }

    /// Reduced operator on the given chain positions (ascending), as a
    /// dense matrix in the order of `positions`.
    pub fn reduced_positions(&self, positions: &[usize]) -> Result<CMat> {
        if positions.windows(2).any(|w| w[0] >= w[1]) || positions.iter().any(|&p| p >= self.len()) {
            return Err(Error::param("positions", "must be ascending and in range"));
        }
        let mut acc = linalg::identity(1);
        let mut width = 1usize;
        let mut next_keep = positions.iter().peekable();
        for (j, t) in self.tensors.iter().enumerate() {
            if next_keep.peek() == Some(&&j) {
                next_keep.next();
                let mut next = Mat::<C64>::zeros(width * 4, t.dr);
                for q in 0..4 {
                    let a = Mat::from_fn(t.dl, t.dr, |l, r| t.at(l, q, r));
                    let prod = &acc * &a;
                    for p in 0..width {
                        for r in 0..t.dr {
                            next[(p + width * q, r)] = prod[(p, r)];
                        }
                    }
                }
                acc = next;
                width *= 4;
            } else {
                let tr = Mat::from_fn(t.dl, t.dr, |l, r| t.at(l, 0, r) + t.at(l, 3, r));
                acc = &acc * &tr;
            }
        }
        let m = positions.len();
        let d = 1usize << m;
        Ok(Mat::from_fn(d, d, |k, b| {
            let mut p = 0usize;
            let mut w = 1usize;
            for j in 0..m {
                p += (2 * ((k >> j) & 1) + ((b >> j) & 1)) * w;
                w *= 4;
            }
            acc[(p, 0)]
        }))
    }

    /// Reduced density matrix on a subset of sites.
    pub fn reduced(&self, keep: &[SiteLabel]) -> Result<DensityMatrix> {
        let pos = crate::sites::positions(&self.sites, keep)?;
        let mut sorted: Vec<(usize, SiteLabel)> = pos.iter().copied().zip(keep.iter().copied()).collect();
        sorted.sort();
        let ps: Vec<usize> = sorted.iter().map(|x| x.0).collect();
        let labels: Vec<SiteLabel> = sorted.iter().map(|x| x.1).collect();
        let m = self.reduced_positions(&ps)?;
        let rho = DensityMatrix::from_channel_output(labels, m)?;
        rho.reorder(keep)
    }

    pub fn to_operator(&self) -> Result<SiteOperator> {
        let all: Vec<usize> = (0..self.len()).collect();
        SiteOperator::new(self.sites.clone(), self.reduced_positions(&all)?)
    }

    pub fn to_dense(&self) -> Result<DensityMatrix> {
        let op = self.to_operator()?;
        DensityMatrix::from_channel_output(self.sites.clone(), op.into_data())
    }

    pub fn trace(&self) -> C64 {
        let mut v = linalg::identity(1);
        for t in &self.tensors {
            let tr = Mat::from_fn(t.dl, t.dr, |l, r| t.at(l, 0, r) + t.at(l, 3, r));
            v = &v * &tr;
        }
        v[(0, 0)]
    }

    pub fn normalize(&mut self) -> Result<()> {
        let tr = self.trace();
        if tr.norm() < 1e-300 {
            return Err(Error::Numerical("MPO has zero trace".into()));
        }
        if let Some(last) = self.tensors.last_mut() {
            last.scale(ONE / tr);
        }
        Ok(())
    }

    /// `tr(ρ ⊗_j O_j)` with `None` meaning identity.
    pub fn expectation_product(&self, ops: &[Option<CMat>]) -> Result<C64> {
        if ops.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: ops.len(),
            });
        }
        let mut v = linalg::identity(1);
        for (t, op) in self.tensors.iter().zip(ops) {
            let tr = Mat::from_fn(t.dl, t.dr, |l, r| match op {
                None => t.at(l, 0, r) + t.at(l, 3, r),
                Some(o) => {
                    let mut s = ZERO;
                    for k in 0..2 {
                        for b in 0..2 {
                            s += t.at(l, 2 * k + b, r) * o[(b, k)];
                        }
                    }
                    s
                }
            });
            v = &v * &tr;
        }
        Ok(v[(0, 0)])
    }

    /// `⟨ψ|ρ|ψ⟩` by bond-by-bond contraction.
    pub fn fidelity(&self, target: &Mps) -> Result<f64> {
        if target.sites() != self.sites() {
            return Err(Error::param("target", "site lists differ"));
        }
        // env[a][l][a'] with a from ψ*, l from ρ, a' from ψ
        let mut env = vec![ONE];
        let (mut da, mut dw) = (1usize, 1usize);
        for (w, p) in self.tensors.iter().zip(target.tensors()) {
            let (na, nw) = (p.dr, w.dr);
            // t1[a2][k][l][a'] = Σ_a conj(ψ[a,k,a2]) env[a][l][a']
            let mut t1 = vec![ZERO; na * 2 * dw * da];
            for a in 0..da {
                for k in 0..2 {
                    for a2 in 0..na {
                        let x = p.at(a, k, a2).conj();
                        if x == ZERO {
                            continue;
                        }
                        for l in 0..dw {
                            for ap in 0..da {
                                t1[((a2 * 2 + k) * dw + l) * da + ap] += x * env[(a * dw + l) * da + ap];
                            }
                        }
                    }
                }
            }
            // t2[a2][b][l2][a'] = Σ_{k,l} t1[a2][k][l][a'] W[l,2k+b,l2]
            let mut t2 = vec![ZERO; na * 2 * nw * da];
            for a2 in 0..na {
                for k in 0..2 {
                    for l in 0..dw {
                        for b in 0..2 {
                            for l2 in 0..nw {
                                let x = w.at(l, 2 * k + b, l2);
                                if x == ZERO {
                                    continue;
                                }
                                for ap in 0..da {
                                    t2[((a2 * 2 + b) * nw + l2) * da + ap] +=
                                        x * t1[((a2 * 2 + k) * dw + l) * da + ap];
                                }
                            }
                        }
                    }
                }
            }
            // env'[a2][l2][a2'] = Σ_{b,a'} t2[a2][b][l2][a'] ψ[a',b,a2']
            let mut next = vec![ZERO; na * nw * na];
            for a2 in 0..na {
                for b in 0..2 {
                    for l2 in 0..nw {
                        for ap in 0..da {
                            let x = t2[((a2 * 2 + b) * nw + l2) * da + ap];
                            if x == ZERO {
                                continue;
                            }
                            for a2p in 0..na {
                                next[(a2 * nw + l2) * na + a2p] += x * p.at(ap, b, a2p);
                            }
                        }
                    }
                }
            }
            env = next;
            da = na;
            dw = nw;
        }
        let norm = target.norm_sq();
        Ok((env[0].re / norm).clamp(0.0, 1.0))
    }

    /// SVD compression in place.
    pub fn compress(&mut self, trunc: Truncation) -> Result<TruncationReport> {
        let report = compress_chain(&mut self.tensors, trunc)?;
        self.max_bond = trunc.max_bond;
        self.eps = trunc.eps;
        self.truncation_error = (self.truncation_error.powi(2) + report.relative_error.powi(2)).sqrt();
        Ok(report)
    }

    pub fn to_json(&self) -> MpoJson {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                (0..t.dl)
                    .map(|l| {
                        (0..2)
                            .map(|k| {
                                (0..2)
                                    .map(|b| {
                                        (0..t.dr)
                                            .map(|r| {
                                                let x = t.at(l, 2 * k + b, r);
                                                [x.re, x.im]
                                            })
                                            .collect()
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        MpoJson {
            sites: self.sites.clone(),
            tensors,
            max_bond: self.max_bond,
            eps: self.eps,
            truncation_error: Some(self.truncation_error),
        }
    }

    pub fn from_json(j: &MpoJson) -> Result<Self> {
        let mut tensors = Vec::with_capacity(j.tensors.len());
        for (s, t) in j.tensors.iter().enumerate() {
            let dl = t.len();
            let dr = t.first().and_then(|x| x.first()).and_then(|x| x.first()).map_or(0, |x| x.len());
            let bad = || Error::InvalidState(format!("tensor {s} has ragged or non-qubit shape"));
            let mut ten = Tensor3::zeros(dl, 4, dr);
            for (l, tl) in t.iter().enumerate() {
                if tl.len() != 2 {
                    return Err(bad());
                }
                for (k, tk) in tl.iter().enumerate() {
                    if tk.len() != 2 {
                        return Err(bad());
                    }
                    for (b, tb) in tk.iter().enumerate() {
                        if tb.len() != dr {
                            return Err(bad());
                        }
                        for (r, x) in tb.iter().enumerate() {
                            *ten.at_mut(l, 2 * k + b, r) = c(x[0], x[1]);
                        }
                    }
                }
            }
            tensors.push(ten);
        }
        let mut mpo = Mpo::new(
            j.sites.clone(),
            tensors,
            Truncation {
                max_bond: j.max_bond,
                eps: j.eps,
            },
        )?;
        mpo.truncation_error = j.truncation_error.unwrap_or(0.0);
        Ok(mpo)
    }
}

/// Serialized MPO; tensor index order `(l, k, b, r)`, complex as `[re, im]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpoJson {
    pub sites: Vec<SiteLabel>,
    #[allow(clippy::type_complexity)]
    pub tensors: Vec<Vec<Vec<Vec<Vec<[f64; 2]>>>>>,
    pub max_bond: usize,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation_error: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sites::photons;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ghz(n: usize) -> PureState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut v = vec![ZERO; 1 << n];
        v[0] = c(h, 0.0);
        v[(1 << n) - 1] = c(h, 0.0);
        PureState::new(photons(1..=n), v).unwrap()
    }

    #[test]
    fn product_state_has_unit_bonds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = linalg::random_density(2, 2, &mut rng);
        let b = linalg::random_density(2, 1, &mut rng);
        let cc = linalg::random_density(2, 2, &mut rng);
        let m = linalg::kron_sites(&[&a, &b, &cc]);
        let rho = DensityMatrix::new(photons(1..=3), m).unwrap();
        let mpo = Mpo::from_dense(&rho, 16, 1e-12).unwrap();
        assert_eq!(mpo.bond_dims(), vec![1, 1]);
    }

    #[test]
    fn ghz_round_trip() {
        let rho = ghz(4).to_density();
        let mpo = Mpo::from_dense(&rho, 16, 1e-12).unwrap();
        let back = mpo.to_dense().unwrap();
        assert!(linalg::max_abs_diff(back.data(), rho.data()) < 1e-12);
        assert!(mpo.max_bond_used() <= 4);
        assert!((mpo.trace() - ONE).norm() < 1e-12);
    }

    #[test]
    fn overflow_reports_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rho = DensityMatrix::new(photons(1..=4), linalg::random_density(16, 16, &mut rng)).unwrap();
        match Mpo::from_dense(&rho, 2, 1e-8) {
            Err(Error::BondOverflow { error, required, .. }) => {
                assert!(error > 1e-8);
                assert!(required > 2);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn reduced_matches_dense_partial_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = DensityMatrix::new(photons(1..=4), linalg::random_density(16, 3, &mut rng)).unwrap();
        let mpo = Mpo::from_dense(&rho, 256, 0.0).unwrap();
        let keep = [SiteLabel::Photon(4), SiteLabel::Photon(2)];
        let a = mpo.reduced(&keep).unwrap();
        let b = rho.partial_trace(&keep).unwrap();
        assert!(linalg::max_abs_diff(a.data(), b.data()) < 1e-12);
    }

    #[test]
    fn compression_keeps_state() {
        let rho = ghz(5).to_density();
        let mut mpo = Mpo::from_dense(&rho, 64, 0.0).unwrap();
        let rep = mpo.compress(Truncation { max_bond: 64, eps: 1e-12 }).unwrap();
        assert!(rep.relative_error < 1e-12);
        let back = mpo.to_dense().unwrap();
        assert!(linalg::max_abs_diff(back.data(), rho.data()) < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let rho = ghz(3).to_density();
        let mpo = Mpo::from_dense(&rho, 8, 1e-12).unwrap();
        let s = serde_json::to_string(&mpo.to_json()).unwrap();
        let back = Mpo::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
        let d = back.to_dense().unwrap();
        assert!(linalg::max_abs_diff(d.data(), rho.data()) < 1e-15);
    }
}
