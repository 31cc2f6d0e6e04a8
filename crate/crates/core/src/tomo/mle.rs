use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, C64, ONE, ZERO};
use crate::measure::MomentTable;
use crate::state::DensityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Stop when a step moves ρ by less than this (Frobenius).
    pub tol: f64,
    /// Rotate each mode so that `ρ(0, 2^(i−1))` is real and non-negative.
    pub phase_convention: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iter: 5000,
            tol: 1e-12,
            phase_convention: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub state: DensityMatrix,
    /// Weighted squared residual `Σ |⟨O⟩_ρ − m|² / var`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `Π_k a_k†^{s_k} a_k^{t_k}` on qubit-truncated modes, little-endian.
pub fn moment_operator(index: &[u8]) -> CMat {
    let ops: Vec<CMat> = index
        .chunks(2)
        .map(|p| {
            let mut m = CMat::zeros(2, 2);
            match (p[0], p[1]) {
                (0, 0) => {
                    m[(0, 0)] = ONE;
                    m[(1, 1)] = ONE;
                }
                (1, 0) => m[(1, 0)] = ONE,
                (0, 1) => m[(0, 1)] = ONE,
                (1, 1) => m[(1, 1)] = ONE,
                _ => {}
            }
            m
        })
        .collect();
    let refs: Vec<&CMat> = ops.iter().collect();
    linalg::kron_sites(&refs)
}

struct Problem {
    ops: Vec<CMat>,
    data: Vec<C64>,
    weights: Vec<f64>,
}

impl Problem {
    fn residuals(&self, rho: &CMat) -> Vec<C64> {
        self.ops
            .iter()
            .zip(&self.data)
            .map(|(o, m)| {
                let mut s = ZERO;
                for i in 0..o.nrows() {
                    for j in 0..o.ncols() {
                        if o[(i, j)] != ZERO {
                            s += rho[(j, i)] * o[(i, j)];
                        }
                    }
                }
                s - m
            })
            .collect()
    }

    fn objective(&self, r: &[C64]) -> f64 {
        r.iter().zip(&self.weights).map(|(x, w)| w * x.norm_sqr()).sum()
    }

    /// Hermitian `G` with `df = tr(G dρ)`.
    fn gradient(&self, r: &[C64]) -> CMat {
        let d = self.ops[0].nrows();
        let mut g = CMat::zeros(d, d);
        for ((o, x), w) in self.ops.iter().zip(r).zip(&self.weights) {
            for i in 0..d {
                for j in 0..d {
                    let v = o[(i, j)];
                    if v != ZERO {
                        // tr(dρ O) = Σ dρ_ji O_ij
                        g[(i, j)] += v * x.conj() * *w;
                        g[(j, i)] += v.conj() * *x * *w;
                    }
                }
            }
        }
        g
    }
}

/// Linear inversion: `ρ_xy = tr(ρ |y⟩⟨x|)` with `|0⟩⟨0| = 1 − a†a`.
pub(crate) fn linear_inversion(table: &MomentTable, m: usize) -> Result<CMat> {
    let d = 1usize << m;
    let mut rho = CMat::zeros(d, d);
    for x in 0..d {
        for y in 0..d {
            let zeros: Vec<usize> = (0..m).filter(|k| (x >> k) & 1 == 0 && (y >> k) & 1 == 0).collect();
            let mut acc = ZERO;
            for sub in 0..(1usize << zeros.len()) {
                let mut idx = vec![0u8; 2 * m];
                let mut sign = 1.0;
                for k in 0..m {
                    let (xb, yb) = ((x >> k) & 1, (y >> k) & 1);
                    let (s, t) = match (yb, xb) {
                        (1, 0) => (1, 0),
                        (0, 1) => (0, 1),
                        (1, 1) => (1, 1),
                        _ => {
                            let pos = zeros.iter().position(|&z| z == k).expect("zero mode");
                            if (sub >> pos) & 1 == 1 {
                                sign = -sign;
                                (1, 1)
                            } else {
                                (0, 0)
                            }
                        }
                    };
                    idx[2 * k] = s;
                    idx[2 * k + 1] = t;
                }
                let v = table
                    .mean(&idx)
                    .ok_or_else(|| Error::InvalidState(format!("moment table lacks {idx:?}")))?;
                acc += v * sign;
            }
            rho[(x, y)] = acc;
        }
    }
    Ok(linalg::hermitian_part(&rho))
}

fn apply_phase_convention(rho: &CMat, m: usize) -> CMat {
    let d = rho.nrows();
    let mut phases = vec![ONE; m];
    for (k, ph) in phases.iter_mut().enumerate() {
        let v = rho[(0, 1 << k)];
        if v.norm() > 1e-14 {
            *ph = v / v.norm();
        }
    }
    // U = ⊗ diag(1, φ_k) maps ρ_0b to ρ_0b · conj(φ_k)
    let diag: Vec<C64> = (0..d)
        .map(|x| {
            (0..m)
                .filter(|k| (x >> k) & 1 == 1)
                .fold(ONE, |acc, k| acc * phases[k])
        })
        .collect();
    CMat::from_fn(d, d, |i, j| rho[(i, j)] * diag[i] * diag[j].conj())
}

/// Weighted least-squares fit of a density matrix to a moment table, by
/// accelerated projected gradient descent from the projected linear
/// inversion.
pub fn mle_from_moments(table: &MomentTable, opts: &MleOptions) -> Result<MleResult> {
    let m = table.modes.len();
    if m == 0 || m > crate::measure::MAX_MODES {
        return Err(Error::param("table", "needs 1..4 modes"));
    }
    let asym = table.conjugation_asymmetry();
    if asym > 1e-6 {
        return Err(Error::InvalidState(format!("moment table is not conjugation-symmetric ({asym:.2e})")));
    }
    let used: Vec<_> = table.entries.iter().filter(|e| e.index.iter().all(|&v| v <= 1)).collect();
    if used.len() != 1 << (2 * m) {
        return Err(Error::InvalidState("moment table is incomplete".into()));
    }
    let max_var = used.iter().map(|e| e.variance).fold(0.0, f64::max);
    let floor = if max_var > 0.0 { max_var * 1e-9 } else { 1.0 };
    let prob = Problem {
        ops: used.iter().map(|e| moment_operator(&e.index)).collect(),
        data: used.iter().map(|e| e.mean).collect(),
        weights: used.iter().map(|e| 1.0 / (e.variance + floor)).collect(),
    };
    let mut rho = linalg::project_density(&linear_inversion(table, m)?)?;
    let mut f = prob.objective(&prob.residuals(&rho));
    let mut y = rho.clone();
    let mut tk: f64 = 1.0;
    let mut step = 1.0 / prob.weights.iter().sum::<f64>();
    let mut iterations = 0;
    let mut converged = f == 0.0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let ry = prob.residuals(&y);
        let fy = prob.objective(&ry);
        let g = prob.gradient(&ry);
        let (next, fnext) = loop {
            let cand = linalg::project_density(&(&y - &linalg::scale(&g, c(step, 0.0))))?;
            let diff = &cand - &y;
            let lin = (0..diff.nrows())
                .flat_map(|i| (0..diff.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| (g[(j, i)] * diff[(i, j)]).re)
                .sum::<f64>();
            let fc = prob.objective(&prob.residuals(&cand));
            let bound = fy + lin + linalg::frobenius(&diff).powi(2) / (2.0 * step);
            if fc <= bound + 1e-15 * fy.abs().max(1.0) || step < 1e-30 {
                break (cand, fc);
            }
            step /= 2.0;
        };
        let moved = linalg::frobenius(&(&next - &rho));
        // restart momentum when the objective goes up
        let tnext = if fnext > f { 1.0 } else { (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0 };
        let beta = if fnext > f { 0.0 } else { (tk - 1.0) / tnext };
        y = &next + &linalg::scale(&(&next - &rho), c(beta, 0.0));
        rho = next;
        f = fnext;
        tk = tnext;
        step *= 1.5;
        if moved < opts.tol {
            converged = true;
        }
    }
    if opts.phase_convention {
        rho = apply_phase_convention(&rho, m);
    }
    let state = DensityMatrix::from_channel_output(table.modes.clone(), rho)?;
    let objective = prob.objective(&prob.residuals(state.data()));
    Ok(MleResult {
        state,
        objective,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MomentTable;
    use crate::sites::photons;
    use rand::SeedableRng;

    #[test]
    fn linear_inversion_recovers_random_state() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let rho = linalg::random_density(8, 8, &mut rng);
        let dm = DensityMatrix::new(photons(1..=3), rho.clone()).unwrap();
        let t = MomentTable::exact(&dm, 1, 0.0).unwrap();
        let back = linear_inversion(&t, 3).unwrap();
        assert!(linalg::max_abs_diff(&back, &rho) < 1e-12);
    }

    #[test]
    fn maximally_mixed_fit() {
        let dm = DensityMatrix::maximally_mixed(photons(1..=2)).unwrap();
        let t = MomentTable::exact(&dm, 1, 0.01).unwrap();
        let r = mle_from_moments(&t, &MleOptions::default()).unwrap();
        assert!(linalg::max_abs_diff(r.state.data(), dm.data()) < 1e-10);
    }

    #[test]
    fn phase_convention_makes_coherences_real() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let rho = linalg::random_density(4, 4, &mut rng);
        let out = apply_phase_convention(&rho, 2);
        for k in 0..2 {
            let v = out[(0, 1 << k)];
            assert!(v.im.abs() < 1e-14 && v.re >= 0.0);
        }
    }

    #[test]
    fn noisy_moments_give_physical_state() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pure = linalg::random_density(4, 1, &mut rng);
        let dm = DensityMatrix::new(photons(1..=2), pure).unwrap();
        let mut t = MomentTable::exact(&dm, 1, 1e-3).unwrap();
        // perturb symmetric pairs consistently
        for e in t.entries.iter_mut() {
            if e.index.iter().any(|&v| v > 0) && e.index.chunks(2).all(|p| p[0] == p[1]) {
                e.mean += c(0.05, 0.0);
            }
        }
        let r = mle_from_moments(&t, &MleOptions::default()).unwrap();
        let ev = r.state.as_operator().eigenvalues().unwrap();
        assert!(ev[0] > -1e-12);
        assert!((linalg::trace(r.state.data()).re - 1.0).abs() < 1e-12);
    }
}
