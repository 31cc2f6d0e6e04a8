//! Heterodyne detection of photonic modes with added amplifier noise, and
//! inversion of measured signal moments to normally ordered mode moments.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emitter::shot_rng;
use crate::error::{Error, Result};
use crate::linalg::{self, c, C64, ONE, ZERO};
use crate::sites::SiteLabel;
use crate::state::DensityMatrix;

pub const MAX_MODES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    ShotSampling,
    AnalyticMoments { snr: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub eta: f64,
    /// Complex gain applied to every recorded sample.
    pub scale: C64,
    pub shots: usize,
    pub mode: DetectionMode,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            eta: 0.25,
            scale: ONE,
            shots: 100_000,
            mode: DetectionMode::ShotSampling,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::param("eta", "quantum efficiency must lie in (0, 1]"));
        }
        if self.shots == 0 {
            return Err(Error::param("shots", "at least one shot is required"));
        }
        if self.scale.norm() == 0.0 {
            return Err(Error::param("scale", "gain must be non-zero"));
        }
        if let DetectionMode::AnalyticMoments { snr } = self.mode {
            if !(snr > 0.0) {
                return Err(Error::param("snr", "must be positive"));
            }
        }
        Ok(())
    }

    /// Added noise photons per mode, `1/η − 1`.
    pub fn noise_photons(&self) -> f64 {
        1.0 / self.eta - 1.0
    }
}

/// Recorded complex samples, shot-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeterodyneShots {
    pub modes: usize,
    pub samples: Vec<C64>,
}

impl HeterodyneShots {
    pub fn shots(&self) -> usize {
        self.samples.len() / self.modes.max(1)
    }

    pub fn shot(&self, k: usize) -> &[C64] {
        &self.samples[k * self.modes..(k + 1) * self.modes]
    }

    /// Writes little-endian f64 `I, Q` pairs per mode per shot, plus a JSON
    /// sidecar at `<path>.json`.
    pub fn write(&self, path: &Path, header: &ShotHeader) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for s in &self.samples {
            f.write_all(&s.re.to_le_bytes())?;
            f.write_all(&s.im.to_le_bytes())?;
        }
        f.flush()?;
        let side = sidecar_path(path);
        std::fs::write(side, serde_json::to_string_pretty(header)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<(Self, ShotHeader)> {
        let header: ShotHeader = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != header.shots * header.modes * 16 {
            return Err(Error::InvalidState(format!(
                "shot file holds {} bytes, header implies {}",
                bytes.len(),
                header.shots * header.modes * 16
            )));
        }
        let samples = bytes
            .chunks_exact(16)
            .map(|ch| {
                let re = f64::from_le_bytes(ch[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(ch[8..].try_into().expect("8 bytes"));
                c(re, im)
            })
            .collect();
        Ok((
            HeterodyneShots {
                modes: header.modes,
                samples,
            },
            header,
        ))
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

/// Metadata stored next to binary shot records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotHeader {
    pub format: String,
    pub modes: usize,
    pub shots: usize,
    pub labels: Vec<SiteLabel>,
    pub eta: f64,
    pub scale: C64,
    pub seed: u64,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re * s, im * s)
}

/// Draws heterodyne outcomes: Husimi-Q samples of `rdm`, plus Gaussian
/// noise of `1/η − 1` photons per mode, times the gain.
pub fn sample_heterodyne(rdm: &DensityMatrix, cfg: &DetectionConfig, seed: u64) -> Result<HeterodyneShots> {
    cfg.validate()?;
    let m = rdm.sites().len();
    if m > MAX_MODES {
        return Err(Error::Capacity(format!("at most {MAX_MODES} modes, got {m}")));
    }
    if let Some(s) = rdm.sites().iter().find(|s| !s.is_photon()) {
        return Err(Error::param("rdm", format!("{s} is not a photonic mode")));
    }
    let rho = rdm.data();
    let d = 1usize << m;
    let lmax = linalg::eigvalsh(rho)?.last().copied().unwrap_or(1.0).max(1e-300);
    let env_max = 4.0 / 0.5f64.exp().sqrt();
    let nbar = cfg.noise_photons();
    let shots: Vec<Vec<C64>> = (0..cfg.shots)
        .into_par_iter()
        .map(|k| {
            let mut rng = shot_rng(seed, k as u64);
            let mut alpha = vec![ZERO; m];
            let mut u = vec![ZERO; d];
            loop {
                let mut env = 1.0;
                let mut norm_u = 1.0;
                for a in alpha.iter_mut() {
                    *a = gaussian(&mut rng, 2.0);
                    let x = a.norm_sqr();
                    env *= (1.0 + x) * 2.0 * (-x / 2.0).exp() / env_max;
                    norm_u *= 1.0 + x;
                }
                for (x, slot) in u.iter_mut().enumerate() {
                    let mut v = ONE;
                    for (b, a) in alpha.iter().enumerate() {
                        if (x >> b) & 1 == 1 {
                            v *= a;
                        }
                    }
                    *slot = v;
                }
                let mut quad = ZERO;
                for j in 0..d {
                    let mut col = ZERO;
                    for i in 0..d {
                        col += u[i].conj() * rho[(i, j)];
                    }
                    quad += col * u[j];
                }
                let accept = (quad.re / (lmax * norm_u)).clamp(0.0, 1.0) * env;
                if rng.random::<f64>() < accept {
                    break;
                }
            }
            alpha
                .into_iter()
                .map(|a| (a + gaussian(&mut rng, nbar)) * cfg.scale)
                .collect()
        })
        .collect();
    Ok(HeterodyneShots {
        modes: m,
        samples: shots.into_iter().flatten().collect(),
    })
}

/// Moments `⟨h*^p h^q⟩` of the total added noise of one mode (vacuum plus
/// amplifier), `p, q ≤ max_order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMoments {
    pub max_order: usize,
    /// Row-major `(max_order+1)²` table indexed `p * (max_order+1) + q`.
    pub table: Vec<C64>,
}

impl NoiseMoments {
    /// Circular Gaussian noise with `1 + n̄` photons: `⟨h*^p h^q⟩ = δ_pq p! (1+n̄)^p`.
    pub fn analytic(nbar: f64, max_order: usize) -> Self {
        let w = max_order + 1;
        let mut table = vec![ZERO; w * w];
        let mut fact = 1.0;
        for p in 0..w {
            if p > 0 {
                fact *= p as f64;
            }
            table[p * w + p] = c(fact * (1.0 + nbar).powi(p as i32), 0.0);
        }
        NoiseMoments { max_order, table }
    }

    /// Empirical moments from vacuum-input samples of one mode, in units of `scale`.
    pub fn from_vacuum(samples: impl Iterator<Item = C64>, scale: C64, max_order: usize) -> Self {
        let w = max_order + 1;
        let mut table = vec![ZERO; w * w];
        let mut n = 0usize;
        for s in samples {
            let s = s / scale;
            let sc = s.conj();
            for p in 0..w {
                for q in 0..w {
                    table[p * w + q] += sc.powu(p as u32) * s.powu(q as u32);
                }
            }
            n += 1;
        }
        table.iter_mut().for_each(|x| *x /= n.max(1) as f64);
        NoiseMoments { max_order, table }
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> C64 {
        self.table[p * (self.max_order + 1) + q]
    }
}

/// Noise reference for the deconvolution.
#[derive(Clone, Debug)]
pub enum NoiseReference {
    Analytic { nbar: f64 },
    /// Vacuum-input shots recorded through the same chain.
    Vacuum(HeterodyneShots),
}

impl NoiseReference {
    fn per_mode(&self, modes: usize, max_order: usize, scale: C64) -> Result<Vec<NoiseMoments>> {
        match self {
            NoiseReference::Analytic { nbar } => Ok(vec![NoiseMoments::analytic(*nbar, max_order); modes]),
            NoiseReference::Vacuum(v) => {
                if v.modes != modes {
                    return Err(Error::DimensionMismatch {
                        expected: modes,
                        got: v.modes,
                    });
                }
                Ok((0..modes)
                    .map(|k| NoiseMoments::from_vacuum((0..v.shots()).map(|s| v.shot(s)[k]), scale, max_order))
                    .collect())
            }
        }
    }
}

/// One entry of a moment table: `⟨Π_k a_k†^{s_k} a_k^{t_k}⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    /// `[s_1, t_1, s_2, t_2, ...]`.
    pub index: Vec<u8>,
    pub mean: C64,
    pub variance: f64,
}

/// Normally ordered joint moments of up to four modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub modes: Vec<SiteLabel>,
    pub max_order: usize,
    pub entries: Vec<MomentEntry>,
}

/// All multi-indices with per-mode orders ≤ `max_order`, ordered by total order.
pub fn multi_indices(modes: usize, max_order: usize) -> Vec<Vec<u8>> {
    let w = max_order + 1;
    let count = w.pow(2 * modes as u32);
    let mut out: Vec<Vec<u8>> = (0..count)
        .map(|mut x| {
            (0..2 * modes)
                .map(|_| {
                    let v = (x % w) as u8;
                    x /= w;
                    v
                })
                .collect()
        })
        .collect();
    out.sort_by_key(|k| (k.iter().map(|&v| v as usize).sum::<usize>(), k.clone()));
    out
}

fn binom(n: u8, k: u8) -> f64 {
    match (n, k) {
        (_, 0) => 1.0,
        (n, k) if k == n => 1.0,
        (2, 1) => 2.0,
        (n, k) => {
            let mut r = 1.0;
            for i in 0..k {
                r *= (n - i) as f64 / (i + 1) as f64;
            }
            r
        }
    }
}

impl MomentTable {
    pub fn get(&self, index: &[u8]) -> Option<&MomentEntry> {
        self.entries.iter().find(|e| e.index == index)
    }

    pub fn mean(&self, index: &[u8]) -> Option<C64> {
        self.get(index).map(|e| e.mean)
    }

    /// Exact moments of a qubit-truncated state.
    pub fn exact(rdm: &DensityMatrix, max_order: usize, variance: f64) -> Result<Self> {
        let m = rdm.sites().len();
        if m > MAX_MODES {
            return Err(Error::Capacity(format!("at most {MAX_MODES} modes, got {m}")));
        }
        let rho = rdm.data();
        let d = 1usize << m;
        let entries = multi_indices(m, max_order)
            .into_iter()
            .map(|idx| {
                let mut mean = ZERO;
                for x in 0..d {
                    for y in 0..d {
                        let mut w = ONE;
                        for k in 0..m {
                            let (s, t) = (idx[2 * k], idx[2 * k + 1]);
                            let (bx, by) = ((x >> k) & 1, (y >> k) & 1);
                            // ⟨x| a†^s a^t |y⟩ on a qubit
                            let ok = match (s, t) {
                                (0, 0) => bx == by,
                                (1, 0) => bx == 1 && by == 0,
                                (0, 1) => bx == 0 && by == 1,
                                (1, 1) => bx == 1 && by == 1,
                                _ => false,
                            };
                            if !ok {
                                w = ZERO;
                                break;
                            }
                        }
                        if w != ZERO {
                            mean += rho[(y, x)] * w;
                        }
                    }
                }
                MomentEntry {
                    index: idx,
                    mean,
                    variance,
                }
            })
            .collect();
        Ok(MomentTable {
            modes: rdm.sites().to_vec(),
            max_order,
            entries,
        })
    }

    /// Largest violation of `m(s,t,…) = conj(m(t,s,…))`.
    pub fn conjugation_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for e in &self.entries {
            let swapped: Vec<u8> = e.index.chunks(2).flat_map(|p| [p[1], p[0]]).collect();
            if let Some(o) = self.get(&swapped) {
                worst = worst.max((e.mean - o.mean.conj()).norm());
            }
        }
        worst
    }

    /// `g² = ⟨a†²a²⟩ / ⟨a†a⟩²` of a single-mode order-2 table.
    pub fn g2(&self) -> Result<f64> {
        if self.modes.len() != 1 || self.max_order < 2 {
            return Err(Error::param("table", "g2 needs a single-mode table of order 2"));
        }
        let n = self.mean(&[1, 1]).expect("present").re;
        let n2 = self.mean(&[2, 2]).expect("present").re;
        Ok(n2 / (n * n))
    }
}

/// Noise-free signal moments implied by photon moments (forward model).
pub fn signal_moments(photon: &MomentTable, noise: &[NoiseMoments]) -> MomentTable {
    let entries = photon
        .entries
        .iter()
        .map(|e| {
            let mut mean = ZERO;
            for j in &photon.entries {
                if let Some(w) = binomial_weight(&e.index, &j.index, noise) {
                    mean += w * j.mean;
                }
            }
            MomentEntry {
                index: e.index.clone(),
                mean,
                variance: 0.0,
            }
        })
        .collect();
    MomentTable {
        modes: photon.modes.clone(),
        max_order: photon.max_order,
        entries,
    }
}

/// `Π_k C(s_k,i_k) C(t_k,j_k) μ_k(s_k−i_k, t_k−j_k)` or `None` when `j ⊄ k`.
fn binomial_weight(outer: &[u8], inner: &[u8], noise: &[NoiseMoments]) -> Option<C64> {
    let mut w = ONE;
    for (k, nm) in noise.iter().enumerate() {
        let (s, t) = (outer[2 * k], outer[2 * k + 1]);
        let (i, j) = (inner[2 * k], inner[2 * k + 1]);
        if i > s || j > t {
            return None;
        }
        w *= nm.get((s - i) as usize, (t - j) as usize) * (binom(s, i) * binom(t, j));
    }
    Some(w)
}

/// Inverts signal moments to photon moments by triangular back-substitution.
pub fn deconvolve(signal: &MomentTable, noise: &[NoiseMoments]) -> Result<MomentTable> {
    if noise.len() != signal.modes.len() {
        return Err(Error::DimensionMismatch {
            expected: signal.modes.len(),
            got: noise.len(),
        });
    }
    let order = multi_indices(signal.modes.len(), signal.max_order);
    let mut solved: BTreeMap<Vec<u8>, C64> = BTreeMap::new();
    for idx in &order {
        let sig = signal
            .mean(idx)
            .ok_or_else(|| Error::InvalidState(format!("missing signal moment {idx:?}")))?;
        let mut acc = sig;
        for (j, v) in &solved {
            if let Some(w) = binomial_weight(idx, j, noise) {
                acc -= w * v;
            }
        }
        let diag = binomial_weight(idx, idx, noise).expect("diagonal exists");
        if diag.norm() < 1e-300 {
            return Err(Error::Numerical("singular deconvolution system".into()));
        }
        solved.insert(idx.clone(), acc / diag);
    }
    let entries = order
        .into_iter()
        .map(|idx| MomentEntry {
            mean: solved[&idx],
            variance: signal.get(&idx).map_or(0.0, |e| e.variance),
            index: idx,
        })
        .collect();
    Ok(MomentTable {
        modes: signal.modes.clone(),
        max_order: signal.max_order,
        entries,
    })
}

/// Per-shot unbiased estimators `g_k(s,t)` of one mode's photon moments.
pub(crate) fn per_shot_estimators(s: C64, noise: &NoiseMoments, max_order: usize) -> Vec<C64> {
    let w = max_order + 1;
    let mut g = vec![ZERO; w * w];
    let sc = s.conj();
    for tot in 0..=2 * max_order {
        for p in 0..w {
            if tot < p || tot - p >= w {
                continue;
            }
            let q = tot - p;
            let mut v = sc.powu(p as u32) * s.powu(q as u32);
            for i in 0..=p {
                for j in 0..=q {
                    if i == p && j == q {
                        continue;
                    }
                    v -= g[i * w + j] * noise.get(p - i, q - j) * (binom(p as u8, i as u8) * binom(q as u8, j as u8));
                }
            }
            g[p * w + q] = v;
        }
    }
    g
}

/// Estimates photon moments and their variances from recorded shots.
pub fn extract_moments(
    shots: &HeterodyneShots,
    labels: &[SiteLabel],
    scale: C64,
    noise: &NoiseReference,
    max_order: usize,
) -> Result<MomentTable> {
    let m = shots.modes;
    if labels.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: labels.len(),
        });
    }
    if m > MAX_MODES {
        return Err(Error::Capacity(format!("at most {MAX_MODES} modes, got {m}")));
    }
    if scale.norm() == 0.0 {
        return Err(Error::param("scale", "gain must be non-zero"));
    }
    let nm = noise.per_mode(m, max_order, scale)?;
    let order = multi_indices(m, max_order);
    let w = max_order + 1;
    let n = shots.shots();
    // fixed chunks summed in order keep results independent of thread scheduling
    const CHUNK: usize = 4096;
    let partial: Vec<(Vec<C64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s1 = vec![ZERO; order.len()];
            let mut s2 = vec![0.0; order.len()];
            for k in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let gs: Vec<Vec<C64>> = shots
                    .shot(k)
                    .iter()
                    .zip(&nm)
                    .map(|(x, nmk)| per_shot_estimators(x / scale, nmk, max_order))
                    .collect();
                for (e, idx) in order.iter().enumerate() {
                    let mut v = ONE;
                    for (mode, g) in gs.iter().enumerate() {
                        v *= g[idx[2 * mode] as usize * w + idx[2 * mode + 1] as usize];
                    }
                    s1[e] += v;
                    s2[e] += v.norm_sqr();
                }
            }
            (s1, s2)
        })
        .collect();
    let mut sum = vec![ZERO; order.len()];
    let mut sumsq = vec![0.0; order.len()];
    for (a, b) in partial {
        sum.iter_mut().zip(&a).for_each(|(x, y)| *x += y);
        sumsq.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
    }
    let nf = n as f64;
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(e, idx)| {
            let mean = sum[e] / nf;
            let var = if n > 1 {
                ((sumsq[e] - nf * mean.norm_sqr()) / (nf - 1.0)).max(0.0) / nf
            } else {
                0.0
            };
            MomentEntry {
                index: idx,
                mean,
                variance: var,
            }
        })
        .collect();
    Ok(MomentTable {
        modes: labels.to_vec(),
        max_order,
        entries,
    })
}

/// Moments of `rdm` as seen through the detection chain, without sampling:
/// exact means, with uniform variance `1/snr`. The signal moments are
/// generated by the forward model and inverted, so this exercises the
/// deconvolution on exact input.
pub fn analytic_moments(rdm: &DensityMatrix, cfg: &DetectionConfig, max_order: usize) -> Result<MomentTable> {
    cfg.validate()?;
    let snr = match cfg.mode {
        DetectionMode::AnalyticMoments { snr } => snr,
        DetectionMode::ShotSampling => return Err(Error::param("mode", "analytic mode required")),
    };
    let exact = MomentTable::exact(rdm, max_order, 1.0 / snr)?;
    let noise = vec![NoiseMoments::analytic(cfg.noise_photons(), max_order); rdm.sites().len()];
    let sig = signal_moments(&exact, &noise);
    let mut out = deconvolve(&sig, &noise)?;
    out.entries.iter_mut().for_each(|e| e.variance = 1.0 / snr);
    Ok(out)
}

/// Gain that makes a nominal single-photon reference carry exactly one
/// photon, given vacuum shots through the same chain. The gain is returned
/// real and positive.
pub fn calibrate_scale(reference: &HeterodyneShots, vacuum: &HeterodyneShots) -> Result<C64> {
    if reference.modes != 1 || vacuum.modes != 1 {
        return Err(Error::param("reference", "calibration uses single-mode records"));
    }
    let power = |s: &HeterodyneShots| s.samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / s.shots() as f64;
    let p = power(reference) - power(vacuum);
    if !(p > 0.0) {
        return Err(Error::param("reference", "reference carries no power above the noise floor"));
    }
    Ok(c(p.sqrt(), 0.0))
}
