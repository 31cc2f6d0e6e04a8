//! Qutrit decoherence channels, coherent gate errors and leakage for the
//! two source qutrits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, C64, I, ONE, ZERO};

/// Lifetimes and dephasing times of one source qutrit, in µs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coherence {
    pub t1_e: f64,
    pub t1_f: f64,
    pub t2s_ge: f64,
    pub t2s_ef: f64,
}

/// Gate durations in ns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Durations {
    pub single_qubit: f64,
    pub cphase: f64,
    /// f0↔e1 exchange of the controlled emission, per source.
    pub cnot: [f64; 2],
    /// e0↔g1 exchange of the final emission, per source.
    pub swap: [f64; 2],
    pub cycle: f64,
}

impl Default for Durations {
    fn default() -> Self {
        Durations {
            single_qubit: 128.0,
            cphase: 173.0,
            cnot: [110.0, 106.0],
            swap: [186.0, 240.0],
            cycle: 650.0,
        }
    }
}

impl Durations {
    pub fn scaled(&self, f: f64) -> Self {
        Durations {
            single_qubit: self.single_qubit * f,
            cphase: self.cphase * f,
            cnot: [self.cnot[0] * f, self.cnot[1] * f],
            swap: [self.swap[0] * f, self.swap[1] * f],
            cycle: self.cycle * f,
        }
    }
}

/// Device error parameters. Angles are in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sources: [Coherence; 2],
    pub gamma_h: f64,
    pub gamma_pi: f64,
    pub gamma_cz: f64,
    pub l_cz: f64,
    pub l_pi: f64,
    pub phi_leak: f64,
    pub durations: Durations,
}

impl NoiseParams {
    /// Measured device values with the calibrated error parameters.
    pub fn device_default() -> Self {
        NoiseParams {
            sources: [
                Coherence {
                    t1_e: 27.0,
                    t1_f: 16.0,
                    t2s_ge: 22.0,
                    t2s_ef: 12.0,
                },
                Coherence {
                    t1_e: 22.0,
                    t1_f: 4.0,
                    t2s_ge: 23.0,
                    t2s_ef: 6.0,
                },
            ],
            gamma_h: 0.25f64.to_radians(),
            gamma_pi: 0.25f64.to_radians(),
            gamma_cz: 0.5f64.to_radians(),
            l_cz: 0.02,
            l_pi: 0.01,
            phi_leak: 0.0,
            durations: Durations::default(),
        }
    }

    /// Device coherence times with all coherent errors and leakage off.
    pub fn decoherence_only() -> Self {
        NoiseParams {
            gamma_h: 0.0,
            gamma_pi: 0.0,
            gamma_cz: 0.0,
            l_cz: 0.0,
            l_pi: 0.0,
            ..NoiseParams::device_default()
        }
    }

    /// Checks hard constraints; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        for (k, s) in self.sources.iter().enumerate() {
            for (name, v) in [("t1_e", s.t1_e), ("t1_f", s.t1_f), ("t2s_ge", s.t2s_ge), ("t2s_ef", s.t2s_ef)] {
                if !(v > 0.0) {
                    return Err(Error::param(format!("sources[{k}].{name}"), "must be positive"));
                }
            }
            if s.t2s_ge > 2.0 * s.t1_e {
                warnings.push(format!("S{}: T2*_ge exceeds 2 T1_e", k + 1));
            }
            if s.t2s_ef > 2.0 * s.t1_f {
                warnings.push(format!("S{}: T2*_ef exceeds 2 T1_f", k + 1));
            }
        }
        for (name, l) in [("l_cz", self.l_cz), ("l_pi", self.l_pi)] {
            check_leakage(name, l)?;
        }
        for (name, g) in [("gamma_h", self.gamma_h), ("gamma_pi", self.gamma_pi), ("gamma_cz", self.gamma_cz)] {
            if !(g.abs() < std::f64::consts::PI) {
                return Err(Error::param(name, "under-rotation must satisfy |gamma| < pi"));
            }
        }
        let d = &self.durations;
        let all = [d.single_qubit, d.cphase, d.cnot[0], d.cnot[1], d.swap[0], d.swap[1], d.cycle];
        if all.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::param("durations", "all durations must be positive"));
        }
        Ok(warnings)
    }
}

fn check_leakage(name: &str, l: f64) -> Result<()> {
    if !(0.0..=0.25).contains(&l) {
        return Err(Error::param(name, format!("leakage {l} outside [0, 0.25]")));
    }
    Ok(())
}

/// Either a perfect device or the parametrized error model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Ideal,
    Device(NoiseParams),
}

impl NoiseModel {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ideal" => Ok(NoiseModel::Ideal),
            "decoherence_only" => Ok(NoiseModel::Device(NoiseParams::decoherence_only())),
            "all_errors" | "default" => Ok(NoiseModel::Device(NoiseParams::device_default())),
            other => Err(Error::param("noise preset", format!("unknown preset {other:?}"))),
        }
    }

    pub fn durations(&self) -> Durations {
        match self {
            NoiseModel::Ideal => Durations::default(),
            NoiseModel::Device(p) => p.durations,
        }
    }

    pub fn params(&self) -> Option<&NoiseParams> {
        match self {
            NoiseModel::Ideal => None,
            NoiseModel::Device(p) => Some(p),
        }
    }
}

/// Completely positive map given by Kraus operators.
#[derive(Clone, Debug)]
pub struct KrausChannel {
    ops: Vec<CMat>,
}

impl KrausChannel {
    pub fn new(ops: Vec<CMat>) -> Result<Self> {
        let d = ops.first().map_or(0, |m| m.nrows());
        if d == 0 || ops.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::param("kraus", "operators must be non-empty and equally sized"));
        }
        Ok(KrausChannel { ops })
    }

    pub fn identity(d: usize) -> Self {
        KrausChannel {
            ops: vec![linalg::identity(d)],
        }
    }

    pub fn ops(&self) -> &[CMat] {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.ops[0].nrows()
    }

    /// `‖Σ M†M − I‖_max`.
    pub fn completeness_error(&self) -> f64 {
        let d = self.dim();
        let mut acc = faer::Mat::<C64>::zeros(d, d);
        for m in &self.ops {
            acc += m.adjoint() * m;
        }
        linalg::max_abs_diff(&acc, &linalg::identity(d))
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &KrausChannel) -> KrausChannel {
        let mut ops = Vec::with_capacity(self.ops.len() * first.ops.len());
        for a in &self.ops {
            for b in &first.ops {
                let p = a * b;
                if linalg::frobenius(&p) > 1e-15 {
                    ops.push(p);
                }
            }
        }
        if ops.is_empty() {
            ops.push(faer::Mat::zeros(self.dim(), self.dim()));
        }
        KrausChannel { ops }
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        let d = rho.nrows();
        let mut out = faer::Mat::<C64>::zeros(d, d);
        for m in &self.ops {
            out += &(m * rho) * m.adjoint();
        }
        out
    }

    /// Choi matrix `Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|)` with the input on the low index.
    pub fn choi(&self) -> CMat {
        let d = self.dim();
        let mut ch = faer::Mat::<C64>::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let mut e = faer::Mat::<C64>::zeros(d, d);
                e[(i, j)] = ONE;
                let out = self.apply(&e);
                for a in 0..d {
                    for b in 0..d {
                        ch[(i + d * a, j + d * b)] = out[(a, b)];
                    }
                }
            }
        }
        ch
    }

    pub fn is_identity(&self) -> bool {
        self.ops.len() == 1 && linalg::max_abs_diff(&self.ops[0], &linalg::identity(self.dim())) == 0.0
    }
}

fn diag3(a: f64, b: f64, cc: f64) -> CMat {
    faer::Mat::from_fn(3, 3, |i, j| {
        if i != j {
            ZERO
        } else {
            c([a, b, cc][i], 0.0)
        }
    })
}

fn single_entry3(i: usize, j: usize, v: f64) -> CMat {
    let mut m = faer::Mat::<C64>::zeros(3, 3);
    m[(i, j)] = c(v, 0.0);
    m
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::param("t", format!("duration {t} must be non-negative")));
    }
    Ok(())
}

/// Decay probabilities `p = 1 − exp(−t/T1)` for e→g and f→e (t in ns, T1 in µs).
pub fn ad_probabilities(t_ns: f64, t1_e: f64, t1_f: f64) -> (f64, f64) {
    let t = t_ns * 1e-3;
    (1.0 - (-t / t1_e).exp(), 1.0 - (-t / t1_f).exp())
}

/// Pure-dephasing probability `p = 1 − exp(t/T1) exp(−2t/T2*)` (t in ns, times in µs).
pub fn pd_probability(t_ns: f64, t1: f64, t2s: f64) -> f64 {
    let t = t_ns * 1e-3;
    1.0 - (t / t1 - 2.0 * t / t2s).exp()
}

/// Qutrit amplitude damping over `t_ns`.
pub fn amplitude_damping(t_ns: f64, t1_e: f64, t1_f: f64) -> Result<KrausChannel> {
    check_time(t_ns)?;
    let (peg, pfe) = ad_probabilities(t_ns, t1_e, t1_f);
    KrausChannel::new(vec![
        diag3(1.0, (1.0 - peg).sqrt(), (1.0 - pfe).sqrt()),
        single_entry3(0, 1, peg.sqrt()),
        single_entry3(1, 2, pfe.sqrt()),
    ])
}

/// Qutrit phase damping over `t_ns` for the e level `(T1_e, T2*_ge)` and
/// the f level `(T1_f, T2*_ef)`.
pub fn phase_damping(t_ns: f64, e: (f64, f64), f: (f64, f64)) -> Result<KrausChannel> {
    check_time(t_ns)?;
    let pe = pd_probability(t_ns, e.0, e.1);
    let pf = pd_probability(t_ns, f.0, f.1);
    for (p, name, pair) in [(pe, "(T1_e, T2*_ge)", e), (pf, "(T1_f, T2*_ef)", f)] {
        if p < -1e-15 {
            return Err(Error::param(
                name,
                format!("T2* = {} exceeds 2 T1 = {} giving negative dephasing probability", pair.1, 2.0 * pair.0),
            ));
        }
    }
    let (pe, pf) = (pe.clamp(0.0, 1.0), pf.clamp(0.0, 1.0));
    KrausChannel::new(vec![
        diag3(1.0, (1.0 - pe).sqrt(), (1.0 - pf).sqrt()),
        single_entry3(1, 1, pe.sqrt()),
        single_entry3(2, 2, pf.sqrt()),
    ])
}

/// Amplitude damping followed by phase damping.
pub fn decoherence_step(t_ns: f64, s: &Coherence) -> Result<KrausChannel> {
    let ad = amplitude_damping(t_ns, s.t1_e, s.t1_f)?;
    let pd = phase_damping(t_ns, (s.t1_e, s.t2s_ge), (s.t1_f, s.t2s_ef))?;
    Ok(pd.after(&ad))
}

/// `(π − γ)` rotation about `(X+Z)/√2` on {g, e} with the global phase `i`
/// removed; |f⟩ untouched.
pub fn imperfect_hadamard(gamma: f64) -> CMat {
    let (s, co) = ((gamma / 2.0).sin(), (gamma / 2.0).cos());
    let h = std::f64::consts::FRAC_1_SQRT_2 * co;
    let d = I * s;
    let mut m = linalg::identity(3);
    m[(0, 0)] = d + h;
    m[(0, 1)] = c(h, 0.0);
    m[(1, 0)] = c(h, 0.0);
    m[(1, 1)] = d - h;
    m
}

/// `(π − γ)` rotation about x in the {e, f} manifold, global phase `i`
/// removed; |g⟩ untouched.
pub fn imperfect_pi_ef(gamma: f64) -> CMat {
    let (s, co) = ((gamma / 2.0).sin(), (gamma / 2.0).cos());
    let mut m = linalg::identity(3);
    m[(1, 1)] = I * s;
    m[(2, 2)] = I * s;
    m[(1, 2)] = c(co, 0.0);
    m[(2, 1)] = c(co, 0.0);
    m
}

/// Index of `|s1 s2⟩` in the two-qutrit register `[S1, S2]`.
fn idx2(s1: usize, s2: usize) -> usize {
    s1 + 3 * s2
}

/// Sideband CPHASE: a `(2π − γ)` rotation on |ee⟩↔|fg⟩ followed by the
/// leakage exchange between the same states. Acts on `[S1, S2]`.
pub fn imperfect_cphase(gamma: f64, leak: f64, phi: f64) -> Result<CMat> {
    check_leakage("l_cz", leak)?;
    let (ee, fg) = (idx2(1, 1), idx2(2, 0));
    let (s, co) = ((gamma / 2.0).sin(), (gamma / 2.0).cos());
    // rotation block in basis (ee, fg)
    let rot = [[c(-co, 0.0), -I * s], [-I * s, c(-co, 0.0)]];
    let a = c((1.0 - 4.0 * leak).sqrt(), 0.0);
    let b = C64::from_polar((4.0 * leak).sqrt(), phi);
    let lk = [[a, -b.conj()], [b, a]];
    let mut blk = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            blk[i][j] = lk[i][0] * rot[0][j] + lk[i][1] * rot[1][j];
        }
    }
    let mut u = linalg::identity(9);
    let ix = [ee, fg];
    for i in 0..2 {
        for j in 0..2 {
            u[(ix[i], ix[j])] = blk[i][j];
        }
    }
    Ok(u)
}

/// The two source–photon exchanges used for emission.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    /// f0↔e1, preceded by a π_ef pulse.
    Cnot,
    /// e0↔g1.
    Swap,
}

/// Exchange unitary on `[source, photon]` (index `s + 3p`). The leakage
/// exchange applies to the CNOT core; the SWAP core is ideal.
pub fn emission_exchange(kind: Emission, leak: f64, phi: f64) -> Result<CMat> {
    check_leakage("l_pi", leak)?;
    let (lo, hi, leak) = match kind {
        Emission::Cnot => (2, 1 + 3, leak), // f0 ↔ e1
        Emission::Swap => (1, 3, 0.0),
    };
    let a = c((1.0 - 4.0 * leak).sqrt(), 0.0);
    let b = C64::from_polar((4.0 * leak).sqrt(), phi);
    let mut u = linalg::identity(6);
    // |lo⟩ → a|hi⟩ + b|lo⟩,  |hi⟩ → a|lo⟩ − b*|hi⟩
    u[(hi, lo)] = a;
    u[(lo, lo)] = b;
    u[(lo, hi)] = a;
    u[(hi, hi)] = -b.conj();
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ad_zero_time_is_identity() {
        let ch = amplitude_damping(0.0, 27.0, 16.0).unwrap();
        assert!(linalg::max_abs_diff(&ch.ops()[0], &linalg::identity(3)) < 1e-15);
        assert!(ch.completeness_error() < 1e-15);
    }

    #[test]
    fn ad_long_time_goes_to_ground() {
        let ch = amplitude_damping(1e9, 27.0, 16.0).unwrap();
        let out = ch.apply(&diag3(0.0, 1.0, 0.0));
        assert!((out[(0, 0)].re - 1.0).abs() < 1e-9);
        // the cited Kraus set has no direct f→g branch: f reaches g in two applications
        let once = ch.apply(&diag3(0.0, 0.0, 1.0));
        assert!((once[(1, 1)].re - 1.0).abs() < 1e-9);
        assert!((ch.apply(&once)[(0, 0)].re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pd_rejects_t2_above_twice_t1() {
        let e = phase_damping(650.0, (10.0, 25.0), (16.0, 12.0)).unwrap_err();
        assert!(e.to_string().contains("T1_e"));
        let ch = phase_damping(650.0, (10.0, 20.0), (16.0, 32.0)).unwrap();
        assert!(linalg::max_abs_diff(&ch.ops()[0], &linalg::identity(3)) < 1e-15);
    }

    #[test]
    fn negative_time_rejected() {
        assert!(amplitude_damping(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn hadamard_limits() {
        let h = imperfect_hadamard(0.0);
        let mut want = linalg::identity(3);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        want[(0, 0)] = c(s, 0.0);
        want[(0, 1)] = c(s, 0.0);
        want[(1, 0)] = c(s, 0.0);
        want[(1, 1)] = c(-s, 0.0);
        assert!(linalg::max_abs_diff(&h, &want) < 1e-15);
    }

    #[test]
    fn cphase_ideal_is_cz() {
        let u = imperfect_cphase(0.0, 0.0, 0.3).unwrap();
        for s1 in 0..2 {
            for s2 in 0..2 {
                let i = idx2(s1, s2);
                let want = if s1 == 1 && s2 == 1 { -1.0 } else { 1.0 };
                assert!((u[(i, i)] - c(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn exchange_moves_excitation() {
        let u = emission_exchange(Emission::Cnot, 0.0, 0.0).unwrap();
        assert_eq!(u[(4, 2)], ONE);
        assert_eq!(u[(2, 4)], ONE);
        let s = emission_exchange(Emission::Swap, 0.2, 1.0).unwrap();
        assert_eq!(s[(3, 1)], ONE);
        assert_eq!(s[(1, 3)], ONE);
    }

    #[test]
    fn presets_validate() {
        assert!(NoiseParams::device_default().validate().unwrap().is_empty());
        assert!(NoiseModel::preset("bogus").is_err());
    }
}
