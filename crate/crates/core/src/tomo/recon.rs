//! Maximum-likelihood reconstruction of a chain state from local rdms.
//!
//! The state is kept as a locally purified chain `ρ = X X†`, where every
//! site of `X` carries a physical index `k` and an ancilla index `a`
//! (fused `q = 2k + a`). Positivity is therefore exact throughout. The data
//! enter through the outcome probabilities of a tetrahedral SIC measurement
//! on each support. Each sweep visits every support and multiplies the
//! block of `X` by `1 + τ(A − 1)`, where `A` is the positive operator that
//! maps the current reduced state onto the data (`A ρ_S A = σ_S`). A sweep
//! is kept only if the total log-likelihood increases; otherwise `τ` is
//! halved.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rdms::RdmSet;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, C64, ZERO};
use crate::mpo::{self, Mpo, Tensor3, Truncation};
use crate::sites::SiteLabel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconOptions {
    /// Bond cap of the output MPO; the purification uses `⌊√max_bond⌋`.
    pub max_bond: usize,
    pub eps: f64,
    pub max_iter: usize,
    /// Stop when a sweep improves the log-likelihood by less than this.
    pub tol: f64,
    /// Residual above which overlapping rdms are reported as incompatible.
    pub compat_tolerance: f64,
}

impl Default for ReconOptions {
    fn default() -> Self {
        ReconOptions {
            max_bond: 200,
            eps: 1e-8,
            max_iter: 500,
            tol: 1e-10,
            compat_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructionReport {
    #[serde(skip)]
    pub mpo: Mpo,
    /// Log-likelihood after every accepted sweep, relative to its maximum
    /// (`Σ f ln f`), so values approach 0 from below.
    pub log_likelihood: Vec<f64>,
    pub bond_dims: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub compatibility_residual: f64,
    /// Trace distance between each input rdm and the reconstruction's.
    pub fit_residuals: Vec<f64>,
    pub truncation_error: f64,
    pub warnings: Vec<String>,
}

/// Tetrahedral SIC effects `(I + n·σ)/4` for one qubit.
fn sic_qubit() -> Vec<CMat> {
    let s = 1.0 / 3f64.sqrt();
    let dirs = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
    dirs.iter()
        .map(|n| {
            let mut m = linalg::identity(2);
            for (k, nk) in n.iter().enumerate() {
                m = &m + &linalg::scale(&linalg::pauli(k + 1), c(*nk, 0.0));
            }
            linalg::scale(&m, c(0.25, 0.0))
        })
        .collect()
}

/// Product SIC effects on `m` qubits, little-endian.
fn sic_effects(m: usize) -> Vec<CMat> {
    let one = sic_qubit();
    let mut out = vec![linalg::identity(1)];
    for _ in 0..m {
        out = one
            .iter()
            .flat_map(|e| out.iter().map(move |o| linalg::kron(e, o)))
            .collect();
    }
    out
}

fn probabilities(rho: &CMat, effects: &[CMat]) -> Vec<f64> {
    effects
        .iter()
        .map(|e| {
            let mut s = ZERO;
            for i in 0..rho.nrows() {
                for j in 0..rho.ncols() {
                    s += rho[(i, j)] * e[(j, i)];
                }
            }
            s.re
        })
        .collect()
}

/// One data term: a support and its target outcome frequencies.
struct Term {
    /// Chain positions, ascending.
    positions: Vec<usize>,
    freqs: Vec<f64>,
    /// `Σ f ln f`.
    entropy: f64,
    target: CMat,
}

/// The positive operator `A` with `A ρ A = σ`:
/// `σ^{1/2} (σ^{1/2} ρ σ^{1/2})^{-1/2} σ^{1/2}`.
fn geometric_map(rho: &CMat, sigma: &CMat) -> Result<CMat> {
    let s = linalg::sqrt_psd(sigma)?;
    let m = linalg::hermitian_part(&(&(&s * rho) * &s));
    let (vals, vecs) = linalg::eigh(&m)?;
    let top = vals.last().copied().unwrap_or(0.0).max(0.0);
    let inv = linalg::spectral_map(&vals, &vecs, |x| if x > top * 1e-12 { 1.0 / x.sqrt() } else { 0.0 });
    Ok(linalg::hermitian_part(&(&(&s * &inv) * &s)))
}

/// Locally purified chain with a movable orthogonality centre.
#[derive(Clone)]
struct Purified {
    t: Vec<Tensor3>,
    center: usize,
}

/// Contracted block of consecutive sites `first..=last`, `d = 4^m` with the
/// first site most significant.
struct Block {
    first: usize,
    m: usize,
    t: Tensor3,
}

impl Purified {
    fn maximally_mixed(n: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let site = Tensor3 {
            dl: 1,
            d: 4,
            dr: 1,
            // X[k, a] = δ_ka / √2
            data: vec![c(h, 0.0), ZERO, ZERO, c(h, 0.0)],
        };
        Purified {
            t: vec![site; n],
            center: 0,
        }
    }

    fn move_center(&mut self, to: usize) -> Result<()> {
        while self.center < to {
            let j = self.center;
            let sv = mpo::svd(&self.t[j].left_matrix())?;
            let k = sv.s.len();
            let svh = Mat::from_fn(k, sv.vh.ncols(), |a, r| sv.vh[(a, r)] * sv.s[a]);
            self.t[j] = Tensor3::from_left_matrix(&sv.u, 4);
            self.t[j + 1] = self.t[j + 1].mul_left(&svh);
            self.center += 1;
        }
        while self.center > to {
            let j = self.center;
            let sv = mpo::svd(&self.t[j].right_matrix())?;
            let k = sv.s.len();
            let us = Mat::from_fn(sv.u.nrows(), k, |i, a| sv.u[(i, a)] * sv.s[a]);
            self.t[j] = Tensor3::from_right_matrix(&sv.vh, 4);
            self.t[j - 1] = self.t[j - 1].mul_right(&us);
            self.center -= 1;
        }
        Ok(())
    }

    fn block(&mut self, first: usize, last: usize) -> Result<Block> {
        if self.center < first || self.center > last {
            self.move_center(first)?;
        }
        let mut acc = self.t[first].clone();
        for j in first + 1..=last {
            let prod = &acc.left_matrix() * &self.t[j].right_matrix();
            acc = Tensor3 {
                dl: acc.dl,
                d: acc.d * 4,
                dr: self.t[j].dr,
                data: (0..prod.nrows())
                    .flat_map(|i| (0..prod.ncols()).map(move |k| (i, k)))
                    .map(|(i, k)| prod[(i, k)])
                    .collect(),
            };
        }
        Ok(Block {
            first,
            m: last - first + 1,
            t: acc,
        })
    }

    /// Splits a block back into sites with SVD truncation; the centre ends
    /// on the block's last site. Returns the discarded weight.
    fn store(&mut self, mut b: Block, max_bond: usize, budget_sq: f64) -> Result<f64> {
        let mut discarded = 0.0;
        for j in b.first..b.first + b.m - 1 {
            let rest = b.t.d / 4;
            let cols = rest * b.t.dr;
            let m = Mat::from_fn(b.t.dl * 4, cols, |i, k| b.t.data[i * cols + k]);
            let (sv, tail, _) = mpo::truncated_svd(&m, budget_sq, max_bond)?;
            discarded += tail;
            let k = sv.s.len();
            self.t[j] = Tensor3::from_left_matrix(&sv.u, 4);
            let svh = Mat::from_fn(k, cols, |a, r| sv.vh[(a, r)] * sv.s[a]);
            b.t = Tensor3 {
                dl: k,
                d: rest,
                dr: b.t.dr,
                data: (0..k).flat_map(|a| (0..cols).map(move |r| (a, r))).map(|(a, r)| svh[(a, r)]).collect(),
            };
        }
        let last = b.first + b.m - 1;
        self.t[last] = b.t;
        self.center = last;
        Ok(discarded)
    }

    fn to_mpo(&self, sites: Vec<SiteLabel>, trunc: Truncation) -> Result<Mpo> {
        let tensors = self
            .t
            .iter()
            .map(|x| {
                let (dl, dr) = (x.dl, x.dr);
                let mut w = Tensor3::zeros(dl * dl, 4, dr * dr);
                for l in 0..dl {
                    for lp in 0..dl {
                        for r in 0..dr {
                            for rp in 0..dr {
                                for k in 0..2 {
                                    for kp in 0..2 {
                                        let mut s = ZERO;
                                        for a in 0..2 {
                                            s += x.at(l, 2 * k + a, r) * x.at(lp, 2 * kp + a, rp).conj();
                                        }
                                        *w.at_mut(l * dl + lp, 2 * k + kp, r * dr + rp) = s;
                                    }
                                }
                            }
                        }
                    }
                }
                w
            })
            .collect();
        Mpo::new(sites, tensors, trunc)
    }
}

/// Index bookkeeping for applying support operators inside a block.
struct BlockIndex {
    /// Block indices whose support-physical bits are all zero.
    bases: Vec<usize>,
    /// Offset contributed by each support-physical index.
    add: Vec<usize>,
}

impl BlockIndex {
    fn new(m: usize, rel: &[usize]) -> Self {
        let d = 1usize << (2 * m);
        let weight = |pos: usize| 1usize << (2 * (m - 1 - pos));
        let ks = 1usize << rel.len();
        let add: Vec<usize> = (0..ks)
            .map(|k| {
                rel.iter()
                    .enumerate()
                    .filter(|(j, _)| (k >> j) & 1 == 1)
                    .map(|(_, &p)| 2 * weight(p))
                    .sum()
            })
            .collect();
        let kidx: Vec<usize> = (0..d)
            .map(|q| {
                rel.iter()
                    .enumerate()
                    .map(|(j, &p)| ((q / weight(p) / 2) & 1) << j)
                    .sum()
            })
            .collect();
        let bases = (0..d).filter(|&q| kidx[q] == 0).collect();
        BlockIndex { bases, add }
    }

    /// `ρ_S = M M†` with `M[k, (l, base, r)]`.
    fn reduced(&self, b: &Block) -> CMat {
        let t = &b.t;
        let ks = self.add.len();
        let cols = t.dl * self.bases.len() * t.dr;
        let mut mm = Mat::<C64>::zeros(ks, cols);
        let mut col = 0;
        for l in 0..t.dl {
            for &base in &self.bases {
                for r in 0..t.dr {
                    for k in 0..ks {
                        mm[(k, col)] = t.at(l, base + self.add[k], r);
                    }
                    col += 1;
                }
            }
        }
        &mm * mm.adjoint()
    }

    fn apply(&self, b: &mut Block, op: &CMat) {
        let t = &mut b.t;
        let ks = self.add.len();
        let mut buf = vec![ZERO; ks];
        for l in 0..t.dl {
            for &base in &self.bases {
                for r in 0..t.dr {
                    for (k, slot) in buf.iter_mut().enumerate() {
                        *slot = t.at(l, base + self.add[k], r);
                    }
                    for k in 0..ks {
                        let mut s = ZERO;
                        for (kp, v) in buf.iter().enumerate() {
                            s += op[(k, kp)] * v;
                        }
                        *t.at_mut(l, base + self.add[k], r) = s;
                    }
                }
            }
        }
    }
}

const MAX_STEP: f64 = 1.0;

struct Fitter {
    terms: Vec<Term>,
    effects: Vec<CMat>,
    max_dx: usize,
    budget_sq: f64,
}

impl Fitter {
    fn span(term: &Term) -> (usize, usize) {
        (term.positions[0], *term.positions.last().expect("non-empty"))
    }

    fn term_rho(&self, x: &mut Purified, term: &Term) -> Result<(Block, BlockIndex, CMat)> {
        let (a, b) = Self::span(term);
        let blk = x.block(a, b)?;
        let rel: Vec<usize> = term.positions.iter().map(|p| p - a).collect();
        let idx = BlockIndex::new(blk.m, &rel);
        let rho = idx.reduced(&blk);
        Ok((blk, idx, rho))
    }

    fn term_loglik(&self, rho: &CMat, term: &Term) -> f64 {
        let tr = linalg::trace(rho).re;
        let p = probabilities(rho, &self.effects);
        term.freqs
            .iter()
            .zip(&p)
            .filter(|(f, _)| **f > 0.0)
            .map(|(f, q)| f * (q / tr).max(1e-300).ln())
            .sum::<f64>()
            - term.entropy
    }

    /// Log-likelihood relative to its maximum, plus the reduced states.
    fn evaluate(&self, x: &mut Purified) -> Result<(f64, Vec<CMat>)> {
        let mut total = 0.0;
        let mut rhos = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let (blk, _, rho) = self.term_rho(x, term)?;
            drop(blk);
            total += self.term_loglik(&rho, term);
            rhos.push(rho);
        }
        Ok((total, rhos))
    }

    fn sweep(&self, x: &mut Purified, step: f64) -> Result<f64> {
        let mut discarded = 0.0;
        for term in &self.terms {
            let (mut blk, idx, rho) = self.term_rho(x, term)?;
            let tr = linalg::trace(&rho).re;
            let d = rho.nrows();
            let r = geometric_map(&linalg::scale(&rho, c(1.0 / tr, 0.0)), &term.target)?;
            let a = &linalg::identity(d) + &linalg::scale(&(&r - &linalg::identity(d)), c(step, 0.0));
            idx.apply(&mut blk, &a);
            let norm = blk.t.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::Numerical("reconstruction collapsed to zero".into()));
            }
            blk.t.scale(c(1.0 / norm, 0.0));
            discarded += x.store(blk, self.max_dx, self.budget_sq)?;
        }
        Ok(discarded)
    }
}

/// Reconstructs the most likely chain state consistent with `rdms`.
pub fn reconstruct_mpo(rdms: &RdmSet, opts: &ReconOptions) -> Result<ReconstructionReport> {
    if opts.max_bond == 0 || opts.max_iter == 0 {
        return Err(Error::param("options", "max_bond and max_iter must be positive"));
    }
    let n_sites = 2 * rdms.n;
    let sites: Vec<SiteLabel> = crate::sites::photons(1..=n_sites);
    let trunc = Truncation {
        max_bond: opts.max_bond,
        eps: opts.eps,
    };
    let compat = rdms.compatibility_residual()?;
    let mut warnings = Vec::new();
    if compat > opts.compat_tolerance {
        warnings.push(format!("overlapping rdms disagree by trace distance {compat:.3e}"));
    }
    if rdms.n == 1 {
        let e = &rdms.entries[0];
        let rho = e.rdm.reorder(&sites)?;
        let mpo = Mpo::from_dense(&rho, opts.max_bond, opts.eps)?;
        return Ok(ReconstructionReport {
            bond_dims: mpo.bond_dims(),
            truncation_error: mpo.truncation_error(),
            mpo,
            log_likelihood: vec![0.0],
            iterations: 0,
            converged: true,
            compatibility_residual: compat,
            fit_residuals: vec![0.0; rdms.entries.len()],
            warnings,
        });
    }
    let mut terms = Vec::new();
    let mut m_sup = 0;
    for e in &rdms.entries {
        let mut order: Vec<(usize, SiteLabel)> = e
            .support
            .iter()
            .map(|s| match s {
                SiteLabel::Photon(p) => Ok((p - 1, *s)),
                other => Err(Error::UnknownSite(*other)),
            })
            .collect::<Result<_>>()?;
        order.sort();
        let labels: Vec<SiteLabel> = order.iter().map(|o| o.1).collect();
        let rho = e.rdm.reorder(&labels)?;
        if m_sup != 0 && m_sup != labels.len() {
            return Err(Error::param("rdms", "all supports must have the same size"));
        }
        m_sup = labels.len();
        terms.push((order.iter().map(|o| o.0).collect::<Vec<_>>(), rho));
    }
    let effects = sic_effects(m_sup);
    let terms: Vec<Term> = terms
        .into_par_iter()
        .map(|(positions, rho)| {
            let freqs: Vec<f64> = probabilities(rho.data(), &effects).into_iter().map(|p| p.max(0.0)).collect();
            let entropy = freqs.iter().filter(|f| **f > 0.0).map(|f| f * f.ln()).sum();
            Term {
                positions,
                freqs,
                entropy,
                target: rho.data().clone(),
            }
        })
        .collect();
    let mut terms = terms;
    terms.sort_by_key(|t| (t.positions[0], *t.positions.last().expect("non-empty")));
    let max_dx = ((opts.max_bond as f64).sqrt().floor() as usize).max(1);
    let fitter = Fitter {
        terms,
        effects,
        max_dx,
        budget_sq: opts.eps * opts.eps / n_sites as f64,
    };

    let mut x = Purified::maximally_mixed(n_sites);
    let (mut ll, _) = fitter.evaluate(&mut x)?;
    let mut trace = vec![ll];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut discarded_total = 0.0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut cand = x.clone();
        let discarded = fitter.sweep(&mut cand, step)?;
        let (ll_new, _) = fitter.evaluate(&mut cand)?;
        if ll_new >= ll {
            let gain = ll_new - ll;
            x = cand;
            ll = ll_new;
            discarded_total += discarded;
            trace.push(ll);
            step = (step * 1.5).min(MAX_STEP);
            if gain < opts.tol {
                converged = true;
                break;
            }
        } else {
            step /= 2.0;
            if step < 1e-4 {
                converged = true;
                break;
            }
        }
    }
    let (_, rhos) = fitter.evaluate(&mut x)?;
    let mut mpo = x.to_mpo(sites, trunc)?;
    mpo.normalize()?;
    let rep = mpo.compress(trunc)?;
    mpo.normalize()?;
    let fit_residuals = rdms
        .entries
        .iter()
        .map(|e| {
            let mine = mpo.reduced(&e.support)?;
            mine.trace_distance(&e.rdm)
        })
        .collect::<Result<Vec<_>>>()?;
    drop(rhos);
    if !converged {
        warnings.push(format!("stopped after {iterations} sweeps without meeting the tolerance"));
    }
    Ok(ReconstructionReport {
        bond_dims: mpo.bond_dims(),
        truncation_error: (discarded_total + rep.relative_error.powi(2)).sqrt(),
        mpo,
        log_likelihood: trace,
        iterations,
        converged,
        compatibility_residual: compat,
        fit_residuals,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ideal_cluster_mps, ideal_cluster_state, LadderGraph};
    use crate::tomo::local_rdms_from_state;

    #[test]
    fn sic_effects_sum_to_identity() {
        for m in 1..=2 {
            let e = sic_effects(m);
            let mut s = CMat::zeros(1 << m, 1 << m);
            for x in &e {
                s = &s + x;
            }
            assert!(linalg::max_abs_diff(&s, &linalg::identity(1 << m)) < 1e-14);
        }
    }

    #[test]
    fn block_round_trip_preserves_state() {
        let mut x = Purified::maximally_mixed(4);
        let blk = x.block(1, 3).unwrap();
        let before = blk.t.data.clone();
        x.store(blk, 16, 0.0).unwrap();
        let again = x.block(1, 3).unwrap();
        let diff: f64 = before.iter().zip(&again.t.data).map(|(a, b)| (a - b).norm()).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn ideal_rung_pair_reconstructs() {
        let g = LadderGraph::new(2).unwrap();
        let rho = ideal_cluster_state(&g).to_density();
        let set = local_rdms_from_state(&rho, &g).unwrap();
        let rep = reconstruct_mpo(&set, &ReconOptions::default()).unwrap();
        let f = rep.mpo.fidelity(&ideal_cluster_mps(&g)).unwrap();
        assert!(f > 0.99, "fidelity {f}");
        assert!(rep.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
    }
}
