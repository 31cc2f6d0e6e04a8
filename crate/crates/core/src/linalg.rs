//! Small dense linear-algebra helpers on top of `faer`.

use faer::{Mat, Side};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Builds a matrix from row slices.
pub fn from_rows(rows: &[&[C64]]) -> CMat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn identity(n: usize) -> CMat {
    Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}

/// Pauli matrices indexed 0..4 as I, X, Y, Z.
pub fn pauli(k: usize) -> CMat {
    match k {
        0 => identity(2),
        1 => from_rows(&[&[ZERO, ONE], &[ONE, ZERO]]),
        2 => from_rows(&[&[ZERO, -I], &[I, ZERO]]),
        3 => from_rows(&[&[ONE, ZERO], &[ZERO, -ONE]]),
        _ => panic!("pauli index {k} out of range"),
    }
}

pub fn hadamard() -> CMat {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    from_rows(&[&[c(h, 0.0), c(h, 0.0)], &[c(h, 0.0), c(-h, 0.0)]])
}

/// Standard Kronecker product; `a` carries the more significant index.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Kronecker product in site order: the first operator acts on the least
/// significant index.
pub fn kron_sites(ops: &[&CMat]) -> CMat {
    let mut acc = identity(1);
    for op in ops {
        acc = kron(op, &acc);
    }
    acc
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint().to_owned()
}

pub fn trace(m: &CMat) -> C64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn frobenius(m: &CMat) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.nrows(), b.nrows());
    assert_eq!(a.ncols(), b.ncols());
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

pub fn hermiticity_error(m: &CMat) -> f64 {
    let mut e: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..=j.min(m.nrows().saturating_sub(1)) {
            e = e.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    e
}

pub fn hermitian_part(m: &CMat) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

pub fn scale(m: &CMat, s: C64) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let h = hermitian_part(m);
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..s.nrows()).map(|i| s[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn eigvalsh(m: &CMat) -> Result<Vec<f64>> {
    Ok(eigh(m)?.0)
}

/// Rebuilds `U diag(f(λ)) U†`.
pub fn spectral_map(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vecs.nrows();
    let w: Vec<f64> = vals.iter().map(|&v| f(v)).collect();
    let scaled = Mat::from_fn(n, vals.len(), |i, k| vecs[(i, k)] * w[k]);
    &scaled * vecs.adjoint()
}

pub fn sqrt_psd(m: &CMat) -> Result<CMat> {
    let (vals, vecs) = eigh(m)?;
    Ok(spectral_map(&vals, &vecs, |v| v.max(0.0).sqrt()))
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm_hermitian(m: &CMat) -> Result<f64> {
    Ok(eigvalsh(m)?.iter().map(|v| v.abs()).sum())
}

/// Uhlmann fidelity `(tr sqrt(sqrt(A) B sqrt(A)))^2` of two density operators.
pub fn uhlmann_fidelity(a: &CMat, b: &CMat) -> Result<f64> {
    let sa = sqrt_psd(a)?;
    let inner = &(&sa * b) * &sa;
    let vals = eigvalsh(&inner)?;
    let f: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((f * f).min(1.0))
}

/// Euclidean projection of a real vector onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Closest (Frobenius) unit-trace positive semidefinite matrix.
pub fn project_density(m: &CMat) -> Result<CMat> {
    let (vals, vecs) = eigh(m)?;
    let p = project_simplex(&vals);
    let n = vecs.nrows();
    let scaled = Mat::from_fn(n, p.len(), |i, k| vecs[(i, k)] * p[k]);
    Ok(hermitian_part(&(&scaled * vecs.adjoint())))
}

/// Precomputed index tables for applying an operator to a subset of the
/// tensor factors of a register.
#[derive(Clone, Debug)]
pub struct LocalIndex {
    /// Offset of each local basis state, in the operator's own ordering.
    pub offs: Vec<usize>,
    /// Register indices whose target digits are all zero.
    pub bases: Vec<usize>,
}

pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(dims.len());
    let mut acc = 1;
    for &d in dims {
        s.push(acc);
        acc *= d;
    }
    s
}

impl LocalIndex {
    pub fn new(dims: &[usize], targets: &[usize]) -> Self {
        let st = strides(dims);
        let total: usize = dims.iter().product();
        let dop: usize = targets.iter().map(|&t| dims[t]).product();
        let offs = (0..dop)
            .map(|o| {
                let mut rem = o;
                let mut off = 0;
                for &t in targets {
                    off += (rem % dims[t]) * st[t];
                    rem /= dims[t];
                }
                off
            })
            .collect();
        let bases = (0..total)
            .filter(|&r| targets.iter().all(|&t| (r / st[t]).is_multiple_of(dims[t])))
            .collect();
        LocalIndex { offs, bases }
    }

    pub fn local_dim(&self) -> usize {
        self.offs.len()
    }
}

/// Applies `op` from the left to every column of a column-major buffer.
pub fn apply_left_cols(data: &mut [C64], nrows: usize, idx: &LocalIndex, op: &CMat) {
    let d = idx.local_dim();
    debug_assert_eq!(op.nrows(), d);
    let mut buf = vec![ZERO; d];
    let opv: Vec<C64> = (0..d * d).map(|k| op[(k / d, k % d)]).collect();
    for col in data.chunks_mut(nrows) {
        for &b in &idx.bases {
            for (o, slot) in buf.iter_mut().enumerate() {
                *slot = col[b + idx.offs[o]];
            }
            for o in 0..d {
                let row = &opv[o * d..(o + 1) * d];
                let mut acc = ZERO;
                for (x, y) in row.iter().zip(&buf) {
                    acc += x * y;
                }
                col[b + idx.offs[o]] = acc;
            }
        }
    }
}

/// `op · m` with `op` acting on the listed factors.
pub fn apply_left(m: &mut CMat, idx: &LocalIndex, op: &CMat) {
    let nrows = m.nrows();
    for j in 0..m.ncols() {
        let col = m.col_as_slice_mut(j);
        apply_left_cols(col, nrows, idx, op);
    }
}

/// `op · m · op†` with `op` acting on the listed factors.
pub fn conjugate_local(m: &CMat, idx: &LocalIndex, op: &CMat) -> CMat {
    let mut a = m.clone();
    apply_left(&mut a, idx, op);
    let mut b = dagger(&a);
    apply_left(&mut b, idx, op);
    dagger(&b)
}

/// In place `ρ → Σ_k K_k ρ K_k†` for operators on the indexed factors,
/// processing one `d × d` block at a time.
pub fn apply_kraus_blocks(m: &mut CMat, idx: &LocalIndex, ops: &[CMat]) {
    let d = idx.local_dim();
    if ops.len() == 1 {
        return conjugate_blocks(m, idx, &ops[0]);
    }
    let sup = superoperator(ops);
    let mut blk = vec![ZERO; d * d];
    let mut out = vec![ZERO; d * d];
    for &cb in &idx.bases {
        for &rb in &idx.bases {
            for a in 0..d {
                for b in 0..d {
                    blk[a * d + b] = m[(rb + idx.offs[a], cb + idx.offs[b])];
                }
            }
            for (o, slot) in out.iter_mut().enumerate() {
                let mut acc = ZERO;
                for (x, y) in blk.iter().enumerate() {
                    acc += sup[(o, x)] * y;
                }
                *slot = acc;
            }
            for a in 0..d {
                for b in 0..d {
                    m[(rb + idx.offs[a], cb + idx.offs[b])] = out[a * d + b];
                }
            }
        }
    }
}

/// Superoperator `S[(a,b),(a',b')] = Σ_k K[a,a'] conj(K[b,b'])` acting on
/// row-major vectorized operators.
pub fn superoperator(ops: &[CMat]) -> CMat {
    let d = ops[0].nrows();
    Mat::from_fn(d * d, d * d, |o, x| {
        let (a, b) = (o / d, o % d);
        let (a2, b2) = (x / d, x % d);
        ops.iter().map(|k| k[(a, a2)] * k[(b, b2)].conj()).sum()
    })
}

/// In place `ρ → U ρ U†` for `U` on the indexed factors.
pub fn conjugate_blocks(m: &mut CMat, idx: &LocalIndex, u: &CMat) {
    let d = idx.local_dim();
    let mut blk = vec![ZERO; d * d];
    let mut tmp = vec![ZERO; d * d];
    let uv: Vec<C64> = (0..d * d).map(|k| u[(k / d, k % d)]).collect();
    for &cb in &idx.bases {
        for &rb in &idx.bases {
            for a in 0..d {
                for b in 0..d {
                    blk[a * d + b] = m[(rb + idx.offs[a], cb + idx.offs[b])];
                }
            }
            // tmp = U · blk
            for a in 0..d {
                for b in 0..d {
                    let mut acc = ZERO;
                    for k in 0..d {
                        acc += uv[a * d + k] * blk[k * d + b];
                    }
                    tmp[a * d + b] = acc;
                }
            }
            // blk = tmp · U†
            for a in 0..d {
                for b in 0..d {
                    let mut acc = ZERO;
                    for k in 0..d {
                        acc += tmp[a * d + k] * uv[b * d + k].conj();
                    }
                    m[(rb + idx.offs[a], cb + idx.offs[b])] = acc;
                }
            }
        }
    }
}

/// Embeds a local operator into the full register.
pub fn embed(op: &CMat, dims: &[usize], targets: &[usize]) -> CMat {
    let idx = LocalIndex::new(dims, targets);
    let total: usize = dims.iter().product();
    let d = idx.local_dim();
    let mut out = Mat::zeros(total, total);
    for &b in &idx.bases {
        for i in 0..d {
            for j in 0..d {
                out[(b + idx.offs[i], b + idx.offs[j])] = op[(i, j)];
            }
        }
    }
    out
}

pub fn random_complex<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Random density matrix from a Ginibre matrix of the given rank.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> CMat {
    let g = Mat::from_fn(dim, rank.max(1), |_, _| random_complex(rng));
    let m = &g * g.adjoint();
    let t = trace(&m).re;
    hermitian_part(&scale(&m, c(1.0 / t, 0.0)))
}

/// Haar-random unitary via QR of a Ginibre matrix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g = Mat::from_fn(dim, dim, |_, _| random_complex(rng));
    let qr = g.qr();
    let q = qr.compute_Q();
    let r = qr.R();
    Mat::from_fn(dim, dim, |i, j| {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        q[(i, j)] * ph
    })
}

pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<C64> {
    let mut v: Vec<C64> = (0..dim).map(|_| random_complex(rng)).collect();
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}
