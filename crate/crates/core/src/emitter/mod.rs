//! The sequential two-source emission protocol and its simulators.

mod dense;
mod mpo;
mod trajectories;

pub use dense::{evolve_dense, simulate_dense, simulate_dense_full};
pub(crate) use mpo::{finish_chain, Boundary};
pub use mpo::{simulate_mpo, simulate_mpo_with};
pub use trajectories::{shot_rng, simulate_trajectories, TrajectoryEnsemble};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LadderGraph;
use crate::linalg::CMat;
use crate::mpo::{Mpo, TruncationReport};
use crate::noise::{self, Emission, KrausChannel, NoiseModel};
use crate::sites::SiteLabel;
use crate::state::DensityMatrix;

/// Which gates run in one emission cycle. Every cycle starts with a
/// Hadamard on each active source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleGates {
    pub cphase: bool,
    pub emission: Emission,
}

/// Protocol variants: the full ladder, reduced entangler sets, and the
/// two-photon Bell-state circuits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FullCluster,
    PartialEntanglers(Vec<CycleGates>),
    /// Two photons from one source (1 or 2) via CNOT then SWAP.
    BellCnot(u8),
    /// CPHASE between the sources, then simultaneous SWAP emission.
    BellCphase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub n: usize,
    pub variant: Variant,
    pub noise: NoiseModel,
}

impl ProtocolSpec {
    pub fn full(n: usize, noise: NoiseModel) -> Self {
        ProtocolSpec {
            n,
            variant: Variant::FullCluster,
            noise,
        }
    }

    /// Number of emitted photons.
    pub fn photons(&self) -> usize {
        match self.variant {
            Variant::BellCnot(_) | Variant::BellCphase => 2,
            _ => 2 * self.n,
        }
    }

    pub fn photon_sites(&self) -> Vec<SiteLabel> {
        crate::sites::photons(1..=self.photons())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "at least one emission cycle is required"));
        }
        if let NoiseModel::Device(p) = &self.noise {
            p.validate()?;
        }
        match &self.variant {
            Variant::FullCluster => Ok(()),
            Variant::PartialEntanglers(c) => {
                if c.len() != self.n {
                    return Err(Error::param(
                        "variant",
                        format!("{} cycle entries given for n = {}", c.len(), self.n),
                    ));
                }
                if c.last().map(|g| g.emission) != Some(Emission::Swap) {
                    return Err(Error::param("variant", "the final cycle must emit by SWAP"));
                }
                Ok(())
            }
            Variant::BellCnot(s) => {
                if !matches!(s, 1 | 2) {
                    return Err(Error::param("variant", "Bell CNOT source must be 1 or 2"));
                }
                if self.n != 2 {
                    return Err(Error::param("n", "Bell CNOT circuit has two cycles (n = 2)"));
                }
                Ok(())
            }
            Variant::BellCphase => {
                if self.n != 1 {
                    return Err(Error::param("n", "Bell CPHASE circuit has one cycle (n = 1)"));
                }
                Ok(())
            }
        }
    }

    /// The ladder whose cluster state this protocol targets.
    pub fn graph(&self) -> Result<LadderGraph> {
        LadderGraph::new(self.photons() / 2)
    }
}

/// Gate-by-gate sequences of the six-photon build-up figure.
pub fn fig2_variant(label: char) -> Result<Vec<CycleGates>> {
    let cyc = |cphase, emission| CycleGates { cphase, emission };
    match label {
        'a' => Ok(vec![
            cyc(true, Emission::Swap),
            cyc(false, Emission::Swap),
            cyc(false, Emission::Swap),
        ]),
        'c' => Ok(vec![
            cyc(true, Emission::Cnot),
            cyc(true, Emission::Swap),
            cyc(false, Emission::Swap),
        ]),
        'e' => Ok(vec![
            cyc(true, Emission::Cnot),
            cyc(true, Emission::Cnot),
            cyc(true, Emission::Swap),
        ]),
        other => Err(Error::param("variant", format!("unknown build-up panel {other:?}"))),
    }
}

/// One scheduled operation.
#[derive(Clone, Debug)]
pub enum Op {
    Gate {
        name: &'static str,
        targets: Vec<SiteLabel>,
        unitary: CMat,
    },
    Channel {
        target: SiteLabel,
        duration_ns: f64,
        channel: KrausChannel,
    },
    /// A fresh photonic mode in |0⟩ joins the register.
    Emit(usize),
    /// The listed photons are final and will not be touched again.
    EndCycle(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct Schedule {
    pub ops: Vec<Op>,
    pub photons: usize,
    pub cycles: usize,
    pub total_ns: f64,
}

impl Schedule {
    /// Gate names in order, with simultaneous gates joined by `⊗`.
    pub fn gate_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut joinable = false;
        for op in &self.ops {
            match op {
                Op::Gate { name, .. } => {
                    if joinable && out.last().is_some_and(|l| l.split('⊗').next() == Some(name)) {
                        let last = out.last_mut().expect("non-empty");
                        last.push('⊗');
                        last.push_str(name);
                    } else {
                        out.push((*name).to_string());
                    }
                    joinable = true;
                }
                Op::Emit(_) => {}
                _ => joinable = false,
            }
        }
        out
    }

    pub fn channels(&self) -> impl Iterator<Item = &KrausChannel> {
        self.ops.iter().filter_map(|op| match op {
            Op::Channel { channel, .. } => Some(channel),
            _ => None,
        })
    }
}

struct Builder<'a> {
    noise: &'a NoiseModel,
    ops: Vec<Op>,
    cycle_used: f64,
}

const S: [SiteLabel; 2] = [SiteLabel::Source(1), SiteLabel::Source(2)];

impl Builder<'_> {
    fn gate(&mut self, name: &'static str, targets: Vec<SiteLabel>, unitary: CMat) {
        self.ops.push(Op::Gate {
            name,
            targets,
            unitary,
        });
    }

    /// Decoherence of both sources over `t` ns.
    fn decohere(&mut self, t: f64) -> Result<()> {
        self.cycle_used += t;
        if let NoiseModel::Device(p) = self.noise {
            if t > 0.0 {
                for (k, s) in S.iter().enumerate() {
                    let channel = noise::decoherence_step(t, &p.sources[k])?;
                    self.ops.push(Op::Channel {
                        target: *s,
                        duration_ns: t,
                        channel,
                    });
                }
            }
        }
        Ok(())
    }

    fn idle(&mut self, cycle: f64) -> Result<()> {
        let rest = cycle - self.cycle_used;
        if rest < -1e-9 {
            return Err(Error::param(
                "durations",
                format!("gates take {:.1} ns, longer than the {cycle} ns cycle", self.cycle_used),
            ));
        }
        let used = self.cycle_used;
        self.decohere(rest.max(0.0))?;
        self.cycle_used = used;
        Ok(())
    }

    fn gamma(&self) -> (f64, f64, f64, f64, f64, f64) {
        match self.noise {
            NoiseModel::Ideal => (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            NoiseModel::Device(p) => (p.gamma_h, p.gamma_pi, p.gamma_cz, p.l_cz, p.l_pi, p.phi_leak),
        }
    }
}

/// Expands a protocol into its ordered gate and channel schedule.
pub fn build_circuit(spec: &ProtocolSpec) -> Result<Schedule> {
    spec.validate()?;
    build_unchecked(spec)
}

/// Schedule of a single emission cycle producing photons 1 and 2, with no
/// constraint on the emission kind.
pub fn cycle_schedule(gates: CycleGates, noise: &NoiseModel) -> Result<Schedule> {
    if let NoiseModel::Device(p) = noise {
        p.validate()?;
    }
    build_unchecked(&ProtocolSpec {
        n: 1,
        variant: Variant::PartialEntanglers(vec![gates]),
        noise: noise.clone(),
    })
}

fn build_unchecked(spec: &ProtocolSpec) -> Result<Schedule> {
    let dur = spec.noise.durations();
    let mut b = Builder {
        noise: &spec.noise,
        ops: Vec::new(),
        cycle_used: 0.0,
    };
    let (g_h, g_pi, g_cz, l_cz, l_pi, phi) = b.gamma();
    let hadamard = noise::imperfect_hadamard(g_h);
    let pi_ef = noise::imperfect_pi_ef(g_pi);
    let cnot = noise::emission_exchange(Emission::Cnot, l_pi, phi)?;
    let swap = noise::emission_exchange(Emission::Swap, 0.0, phi)?;
    let cz = noise::imperfect_cphase(g_cz, l_cz, phi)?;

    let cycles: Vec<CycleGates> = match &spec.variant {
        Variant::FullCluster => (1..=spec.n)
            .map(|k| CycleGates {
                cphase: true,
                emission: if k < spec.n { Emission::Cnot } else { Emission::Swap },
            })
            .collect(),
        Variant::PartialEntanglers(c) => c.clone(),
        Variant::BellCphase => vec![CycleGates {
            cphase: true,
            emission: Emission::Swap,
        }],
        Variant::BellCnot(_) => Vec::new(),
    };

    if let Variant::BellCnot(src) = spec.variant {
        let k = (src - 1) as usize;
        let s = S[k];
        let p1 = SiteLabel::Photon(1);
        let p2 = SiteLabel::Photon(2);
        b.gate("H", vec![s], hadamard.clone());
        b.decohere(dur.single_qubit)?;
        b.gate("PI_EF", vec![s], pi_ef.clone());
        b.decohere(dur.single_qubit)?;
        b.ops.push(Op::Emit(1));
        b.gate("CNOT", vec![s, p1], cnot.clone());
        b.decohere(dur.cnot[k])?;
        b.idle(dur.cycle)?;
        b.ops.push(Op::EndCycle(vec![1]));
        b.cycle_used = 0.0;
        b.ops.push(Op::Emit(2));
        b.gate("SWAP", vec![s, p2], swap.clone());
        b.decohere(dur.swap[k])?;
        b.idle(dur.cycle)?;
        b.ops.push(Op::EndCycle(vec![2]));
    } else {
        for (k, cyc) in cycles.iter().enumerate() {
            b.cycle_used = 0.0;
            let (pa, pb) = (2 * k + 1, 2 * k + 2);
            b.gate("H", vec![S[0]], hadamard.clone());
            b.gate("H", vec![S[1]], hadamard.clone());
            b.decohere(dur.single_qubit)?;
            if cyc.cphase {
                b.gate("CPHASE", vec![S[0], S[1]], cz.clone());
                b.decohere(dur.cphase)?;
            }
            match cyc.emission {
                Emission::Cnot => {
                    b.gate("PI_EF", vec![S[0]], pi_ef.clone());
                    b.gate("PI_EF", vec![S[1]], pi_ef.clone());
                    b.decohere(dur.single_qubit)?;
                    b.ops.push(Op::Emit(pa));
                    b.ops.push(Op::Emit(pb));
                    b.gate("CNOT", vec![S[0], SiteLabel::Photon(pa)], cnot.clone());
                    b.gate("CNOT", vec![S[1], SiteLabel::Photon(pb)], cnot.clone());
                    b.decohere(dur.cnot[0].max(dur.cnot[1]))?;
                }
                Emission::Swap => {
                    b.ops.push(Op::Emit(pa));
                    b.ops.push(Op::Emit(pb));
                    b.gate("SWAP", vec![S[0], SiteLabel::Photon(pa)], swap.clone());
                    b.gate("SWAP", vec![S[1], SiteLabel::Photon(pb)], swap.clone());
                    b.decohere(dur.swap[0].max(dur.swap[1]))?;
                }
            }
            b.idle(dur.cycle)?;
            b.ops.push(Op::EndCycle(vec![pa, pb]));
        }
    }
    let ncycles = b.ops.iter().filter(|o| matches!(o, Op::EndCycle(_))).count();
    Ok(Schedule {
        ops: b.ops,
        photons: spec.photons(),
        cycles: ncycles,
        total_ns: ncycles as f64 * dur.cycle,
    })
}

/// Photonic output of a simulation.
#[derive(Clone, Debug)]
pub enum SimState {
    Dense(DensityMatrix),
    Mpo(Mpo),
    Trajectories(TrajectoryEnsemble),
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub state: SimState,
    pub wall_clock_s: f64,
    pub seed: Option<u64>,
    pub truncation: TruncationReport,
}

/// Runs the selected simulator with timing metadata.
pub fn run(spec: &ProtocolSpec, mode: SimMode) -> Result<SimResult> {
    let t0 = std::time::Instant::now();
    let (state, seed, truncation) = match mode {
        SimMode::Dense => (SimState::Dense(simulate_dense(spec)?), None, TruncationReport::default()),
        SimMode::Mpo(tr) => {
            let (m, rep) = simulate_mpo_with(spec, tr)?;
            (SimState::Mpo(m), None, rep)
        }
        SimMode::Trajectories { shots, seed } => (
            SimState::Trajectories(simulate_trajectories(spec, shots, seed)?),
            Some(seed),
            TruncationReport::default(),
        ),
    };
    Ok(SimResult {
        state,
        wall_clock_s: t0.elapsed().as_secs_f64(),
        seed,
        truncation,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum SimMode {
    Dense,
    Mpo(crate::mpo::Truncation),
    Trajectories { shots: usize, seed: u64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rung_schedule() {
        let s = build_circuit(&ProtocolSpec::full(1, NoiseModel::Ideal)).unwrap();
        assert_eq!(s.gate_names(), vec!["H⊗H", "CPHASE", "SWAP⊗SWAP"]);
        assert_eq!(s.photons, 2);
    }

    #[test]
    fn two_rung_schedule() {
        let s = build_circuit(&ProtocolSpec::full(2, NoiseModel::preset("all_errors").unwrap())).unwrap();
        assert_eq!(
            s.gate_names(),
            vec!["H⊗H", "CPHASE", "PI_EF⊗PI_EF", "CNOT⊗CNOT", "H⊗H", "CPHASE", "SWAP⊗SWAP"]
        );
        assert_eq!(s.photons, 4);
        assert_eq!(s.cycles, 2);
    }

    #[test]
    fn total_time_is_cycles_times_period() {
        let s = build_circuit(&ProtocolSpec::full(10, NoiseModel::preset("all_errors").unwrap())).unwrap();
        assert!((s.total_ns - 6500.0).abs() < 1e-9);
        let per_source: f64 = s
            .ops
            .iter()
            .filter_map(|o| match o {
                Op::Channel {
                    target: SiteLabel::Source(1),
                    duration_ns,
                    ..
                } => Some(*duration_ns),
                _ => None,
            })
            .sum();
        assert!((per_source - 6500.0).abs() < 1e-6);
    }

    #[test]
    fn overlong_gates_rejected() {
        let mut p = crate::noise::NoiseParams::device_default();
        p.durations.cycle = 300.0;
        let spec = ProtocolSpec::full(2, NoiseModel::Device(p));
        assert!(build_circuit(&spec).is_err());
    }

    #[test]
    fn partial_variant_checks_length() {
        let spec = ProtocolSpec {
            n: 2,
            variant: Variant::PartialEntanglers(fig2_variant('a').unwrap()),
            noise: NoiseModel::Ideal,
        };
        assert!(spec.validate().is_err());
    }
}
