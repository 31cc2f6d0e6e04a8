//! One function per subcommand. Each writes its artifacts through
//! [`Outputs`] and returns a short human-readable summary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use photonic_cluster::emitter::{self, ProtocolSpec, SimMode, SimState, Variant};
use photonic_cluster::entangle::{localizable_entanglement, negativity, LeOptions, LeResult};
use photonic_cluster::graph::{
    edge_bulk_means, ideal_cluster_mps, ideal_cluster_state, local_energies, stabilizer_expectations, LadderGraph,
};
use photonic_cluster::measure::{
    analytic_moments, extract_moments, sample_heterodyne, DetectionMode, MomentTable, NoiseReference, ShotHeader,
};
use photonic_cluster::mpo::{Mpo, MpoJson};
use photonic_cluster::noise::NoiseModel;
use photonic_cluster::ptomo::{
    chain_maps, choi_from_chi, choi_min_eigenvalue, process_fidelity, run_process_tomography,
    trace_preservation_residuals, ChiJson, Process, ProcessMap, TomographyConfig,
};
use photonic_cluster::sites::SiteLabel;
use photonic_cluster::state::{DenseJson, DensityMatrix};
use photonic_cluster::tomo::{
    local_rdms_from_state, mle_from_moments, reconstruct_mpo, support, LocalSource, MleOptions, Rdm, RdmSet,
};

use crate::config::{photon_counts, ExperimentConfig, Method, VariantName};
use crate::error::{CliError, Result};
use crate::manifest::Outputs;

/// A photonic state read from disk.
pub enum LoadedState {
    Dense(DensityMatrix),
    Mpo(Mpo),
}

impl LoadedState {
    pub fn photons(&self) -> usize {
        match self {
            LoadedState::Dense(d) => d.sites().len(),
            LoadedState::Mpo(m) => m.len(),
        }
    }

    fn to_mpo(&self, cfg: &ExperimentConfig) -> Result<Mpo> {
        match self {
            LoadedState::Mpo(m) => Ok(m.clone()),
            LoadedState::Dense(d) => Ok(Mpo::from_dense(d, cfg.protocol.max_bond, cfg.protocol.eps)?),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Reads `mpo.json` or dense `state.json` content.
pub fn load_state(path: &Path) -> Result<LoadedState> {
    let text = read_text(path)?;
    if let Ok(j) = serde_json::from_str::<MpoJson>(&text) {
        return Ok(LoadedState::Mpo(Mpo::from_json(&j)?));
    }
    let j: DenseJson = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: neither an MPO nor a dense state: {e}", path.display())))?;
    Ok(LoadedState::Dense(DensityMatrix::from_json(&j)?))
}

pub fn load_chi(path: &Path) -> Result<(ProcessMap, Option<Process>)> {
    let j: ChiJson = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Config(format!("{}: not a process map: {e}", path.display())))?;
    Ok((ProcessMap::from_json(&j)?, j.process))
}

fn ladder_for(photons: usize) -> Result<LadderGraph> {
    if photons < 2 || !photons.is_multiple_of(2) {
        return Err(CliError::Config(format!("state has {photons} photons; a 2×n ladder needs an even count")));
    }
    Ok(LadderGraph::new(photons / 2)?)
}

fn simulate_full(n: usize, noise: NoiseModel, cfg: &ExperimentConfig) -> Result<Mpo> {
    let spec = ProtocolSpec::full(n, noise);
    Ok(emitter::simulate_mpo_with(&spec, cfg.protocol.truncation())?.0)
}

fn le_options(cfg: &ExperimentConfig) -> Result<LeOptions> {
    cfg.entanglement.to_core(cfg.seed)
}

#[derive(Serialize)]
struct StateSummary {
    photons: usize,
    fidelity_to_cluster: Option<f64>,
    stabilizers: Option<Vec<f64>>,
    negativity_p1_p2: Option<f64>,
    bond_dims: Option<Vec<usize>>,
    truncation_error: Option<f64>,
}

fn dense_summary(rho: &DensityMatrix, spec: &ProtocolSpec) -> Result<StateSummary> {
    let full = matches!(spec.variant, Variant::FullCluster | Variant::PartialEntanglers(_)) && spec.n >= 1;
    let (fid, stabs) = if full {
        let g = LadderGraph::new(spec.photons() / 2)?;
        (
            Some(rho.fidelity(&ideal_cluster_state(&g))?),
            Some(stabilizer_expectations(rho, &g)?),
        )
    } else {
        (None, None)
    };
    let neg = if spec.photons() == 2 {
        Some(negativity(rho, &[SiteLabel::Photon(1)])?)
    } else {
        None
    };
    Ok(StateSummary {
        photons: spec.photons(),
        fidelity_to_cluster: fid,
        stabilizers: stabs,
        negativity_p1_p2: neg,
        bond_dims: None,
        truncation_error: None,
    })
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let spec = cfg.protocol_spec()?;
    let mode = match cfg.protocol.method {
        Method::Dense => SimMode::Dense,
        Method::Mpo => SimMode::Mpo(cfg.protocol.truncation()),
        Method::Trajectories => SimMode::Trajectories {
            shots: cfg.protocol.shots,
            seed: cfg.seed,
        },
    };
    let res = emitter::run(&spec, mode)?;
    match res.state {
        SimState::Dense(rho) => {
            out.write_json("state.json", &rho.to_json())?;
            let s = dense_summary(&rho, &spec)?;
            out.write_json("summary.json", &s)?;
            Ok(format!("dense state of {} photons{}", s.photons, fid_note(s.fidelity_to_cluster)))
        }
        SimState::Mpo(mpo) => {
            out.write_json("mpo.json", &mpo.to_json())?;
            let (fid, stabs) = if spec.variant == Variant::FullCluster {
                let g = LadderGraph::new(spec.n)?;
                (Some(mpo.fidelity(&ideal_cluster_mps(&g))?), Some(stabilizer_expectations(&mpo, &g)?))
            } else {
                (None, None)
            };
            let s = StateSummary {
                photons: spec.photons(),
                fidelity_to_cluster: fid,
                stabilizers: stabs,
                negativity_p1_p2: None,
                bond_dims: Some(mpo.bond_dims()),
                truncation_error: Some(res.truncation.relative_error),
            };
            out.write_json("summary.json", &s)?;
            Ok(format!("MPO of {} photons, max bond {}{}", s.photons, mpo.max_bond_used(), fid_note(fid)))
        }
        SimState::Trajectories(ens) => {
            let mut summary = json!({ "photons": spec.photons(), "shots": ens.shots(), "seed": cfg.seed });
            if spec.variant == Variant::FullCluster {
                let (f, se) = ens.mean_fidelity(&ideal_cluster_state(&LadderGraph::new(spec.n)?))?;
                summary["fidelity_to_cluster"] = json!(f);
                summary["fidelity_stderr"] = json!(se);
            }
            if spec.photons() <= 8 {
                out.write_json("state.json", &ens.mean_photonic_density()?.to_json())?;
            }
            out.write_json("summary.json", &summary)?;
            Ok(format!("{} trajectories of {} photons", ens.shots(), spec.photons()))
        }
    }
}

fn fid_note(f: Option<f64>) -> String {
    f.map(|f| format!(", fidelity {f:.4}")).unwrap_or_default()
}

/// Source of a photonic state for the analysis subcommands: a file, or a
/// fresh MPO simulation of the configured protocol.
fn state_or_simulate(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<LoadedState> {
    match path {
        Some(p) => load_state(p),
        None => {
            let spec = cfg.protocol_spec()?;
            if spec.variant != Variant::FullCluster {
                return Err(CliError::Config("protocol.variant: analysis needs the full_cluster variant".into()));
            }
            Ok(LoadedState::Mpo(emitter::simulate_mpo_with(&spec, cfg.protocol.truncation())?.0))
        }
    }
}

fn rdm_of(state: &LoadedState, keep: &[SiteLabel]) -> Result<DensityMatrix> {
    Ok(match state {
        LoadedState::Dense(d) => d.reduced_to(keep)?,
        LoadedState::Mpo(m) => m.reduced_to(keep)?,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VertexMoments {
    pub vertex: usize,
    pub support: Vec<SiteLabel>,
    pub table: MomentTable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentFile {
    pub n: usize,
    pub eta: f64,
    pub shots: usize,
    pub seed: u64,
    pub mode: String,
    pub vertices: Vec<VertexMoments>,
}

pub fn measure(cfg: &ExperimentConfig, state: Option<&Path>, save_shots: bool, out: &mut Outputs) -> Result<String> {
    let st = state_or_simulate(cfg, state)?;
    let g = ladder_for(st.photons())?;
    let det = cfg.detection.to_core()?;
    let mut vertices = Vec::new();
    for v in g.vertices() {
        let keep: Vec<SiteLabel> = support(&g, v)?.into_iter().map(SiteLabel::Photon).collect();
        let rdm = rdm_of(&st, &keep)?;
        let table = match det.mode {
            DetectionMode::AnalyticMoments { .. } => analytic_moments(&rdm, &det, cfg.detection.max_order)?,
            DetectionMode::ShotSampling => {
                let seed = cfg.seed.wrapping_add(v as u64 * 0x1_0000_0001);
                let shots = sample_heterodyne(&rdm, &det, seed)?;
                if save_shots {
                    let path = out.dir().join(format!("shots_v{v}.bin"));
                    let header = ShotHeader {
                        format: "f64le-iq".into(),
                        modes: keep.len(),
                        shots: det.shots,
                        labels: keep.clone(),
                        eta: det.eta,
                        scale: det.scale,
                        seed,
                    };
                    shots.write(&path, &header)?;
                    out.record_existing(&path)?;
                    out.record_existing(&out.dir().join(format!("shots_v{v}.bin.json")))?;
                }
                let noise = NoiseReference::Analytic {
                    nbar: det.noise_photons(),
                };
                extract_moments(&shots, &keep, det.scale, &noise, cfg.detection.max_order)?
            }
        };
        vertices.push(VertexMoments {
            vertex: v,
            support: keep,
            table,
        });
    }
    let file = MomentFile {
        n: g.n,
        eta: det.eta,
        shots: det.shots,
        seed: cfg.seed,
        mode: match det.mode {
            DetectionMode::ShotSampling => "shot_sampling".into(),
            DetectionMode::AnalyticMoments { .. } => "analytic".into(),
        },
        vertices,
    };
    out.write_json("moments.json", &file)?;
    Ok(format!("moment tables for {} vertices of a 2×{} ladder", file.vertices.len(), g.n))
}

pub fn reconstruct(cfg: &ExperimentConfig, moments: Option<&Path>, state: Option<&Path>, out: &mut Outputs) -> Result<String> {
    let rdms = match moments {
        Some(p) => {
            let file: MomentFile = serde_json::from_str(&read_text(p)?)
                .map_err(|e| CliError::Config(format!("{}: not a moment file: {e}", p.display())))?;
            let entries = file
                .vertices
                .iter()
                .map(|vm| {
                    let fit = mle_from_moments(&vm.table, &MleOptions::default())?;
                    Ok(Rdm {
                        vertex: vm.vertex,
                        support: vm.support.clone(),
                        rdm: fit.state,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            RdmSet::new(file.n, entries)?
        }
        None => {
            let st = state_or_simulate(cfg, state)?;
            let g = ladder_for(st.photons())?;
            match &st {
                LoadedState::Dense(d) => local_rdms_from_state(d, &g)?,
                LoadedState::Mpo(m) => local_rdms_from_state(m, &g)?,
            }
        }
    };
    out.write_json("rdms.json", &rdms)?;
    let report = reconstruct_mpo(&rdms, &cfg.reconstruction.to_core())?;
    out.write_json("mpo.json", &report.mpo.to_json())?;
    let g = LadderGraph::new(rdms.n)?;
    let fid = report.mpo.fidelity(&ideal_cluster_mps(&g))?;
    let mut summary = serde_json::to_value(&report).map_err(|e| CliError::Output(e.to_string()))?;
    summary["fidelity_to_cluster"] = json!(fid);
    out.write_json("reconstruction.json", &summary)?;
    Ok(format!(
        "reconstructed 2×{} state: fidelity {fid:.4}, {} sweeps, converged {}",
        rdms.n, report.iterations, report.converged
    ))
}

fn le_rows(r: &LeResult) -> Vec<Vec<String>> {
    r.paths
        .iter()
        .map(|p| {
            vec![
                p.path_id.to_string(),
                p.path.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
                p.mean.to_string(),
                p.stderr.to_string(),
                p.samples.to_string(),
                p.probability_sum.to_string(),
            ]
        })
        .collect()
}

pub fn entanglement(cfg: &ExperimentConfig, mpo: Option<&Path>, out: &mut Outputs) -> Result<String> {
    let st = state_or_simulate(cfg, mpo)?;
    let m = st.to_mpo(cfg)?;
    let r = localizable_entanglement(&m, &le_options(cfg)?)?;
    out.write_json("le.json", &r)?;
    out.write_csv(
        "le_paths.csv",
        &["path_id", "path", "mean", "stderr", "samples", "probability_sum"],
        &le_rows(&r),
    )?;
    Ok(format!("LE = {:.6} ± {:.6} over {} paths", r.mean, r.stderr, r.paths.len()))
}

#[derive(Serialize)]
struct ProcessSummary {
    process: Process,
    choi_fidelity_to_ideal: f64,
    choi_min_eigenvalue: f64,
    max_trace_residual: f64,
}

fn process_summary(process: Process, map: &ProcessMap) -> Result<ProcessSummary> {
    let ideal = run_process_tomography(process, &NoiseModel::Ideal, &TomographyConfig::default())?;
    let choi = choi_from_chi(map);
    Ok(ProcessSummary {
        process,
        choi_fidelity_to_ideal: process_fidelity(&choi_from_chi(&ideal), &choi)?,
        choi_min_eigenvalue: choi_min_eigenvalue(&choi)?,
        max_trace_residual: trace_preservation_residuals(&choi).into_iter().fold(0.0, f64::max),
    })
}

pub fn processtomo(cfg: &ExperimentConfig, file: Option<&Path>, out: &mut Outputs) -> Result<String> {
    let p = cfg.process.process;
    let map = run_process_tomography(p, &cfg.noise.model()?, &cfg.process.to_core(cfg.seed))?;
    let name = file.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("chi.json"));
    out.write_json(&name, &map.to_json(Some(p)))?;
    let s = process_summary(p, &map)?;
    out.write_json("processtomo.json", &s)?;
    Ok(format!(
        "{p:?}: Choi fidelity {:.4}, min eigenvalue {:.2e}, max TP residual {:.1e}",
        s.choi_fidelity_to_ideal, s.choi_min_eigenvalue, s.max_trace_residual
    ))
}

fn maps_for(cfg: &ExperimentConfig, p1: Option<&Path>, p2: Option<&Path>) -> Result<(ProcessMap, ProcessMap)> {
    let noise = cfg.noise.model()?;
    let tcfg = cfg.process.to_core(cfg.seed);
    let get = |path: Option<&Path>, want: Process| -> Result<ProcessMap> {
        match path {
            Some(p) => {
                let (m, tag) = load_chi(p)?;
                if tag.is_some_and(|t| t != want) {
                    return Err(CliError::Config(format!("{}: map is tagged {tag:?}, expected {want:?}", p.display())));
                }
                Ok(m)
            }
            None => Ok(run_process_tomography(want, &noise, &tcfg)?),
        }
    };
    Ok((get(p1, Process::P1)?, get(p2, Process::P2)?))
}

pub fn chain(
    cfg: &ExperimentConfig,
    p1: Option<&Path>,
    p2: Option<&Path>,
    file: Option<&Path>,
    out: &mut Outputs,
) -> Result<String> {
    let (m1, m2) = maps_for(cfg, p1, p2)?;
    let n = cfg.protocol.n;
    let mpo = chain_maps(&m1, &m2, n, cfg.protocol.truncation())?;
    let name = file.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("mpo.json"));
    out.write_json(&name, &mpo.to_json())?;
    let fid = mpo.fidelity(&ideal_cluster_mps(&LadderGraph::new(n)?))?;
    let le = if n >= 2 {
        Some(localizable_entanglement(&mpo, &le_options(cfg)?)?.mean)
    } else {
        None
    };
    out.write_json("chain.json", &json!({ "n": n, "fidelity_to_cluster": fid, "localizable_entanglement": le }))?;
    let le = le.map(|v| format!(", LE {v:.4}")).unwrap_or_default();
    Ok(format!("chained 2×{n} state: fidelity {fid:.4}{le}"))
}

pub fn fig2(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<String> {
    let noise = cfg.noise.model()?;
    let g = LadderGraph::new(3)?;
    let target = ideal_cluster_state(&g);
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for (label, name) in [('a', VariantName::Fig2a), ('c', VariantName::Fig2c), ('e', VariantName::Fig2e)] {
        let spec = ProtocolSpec {
            n: 3,
            variant: Variant::PartialEntanglers(emitter::fig2_variant(label)?),
            noise: noise.clone(),
        };
        let rho = emitter::simulate_dense(&spec)?;
        out.write_json(format!("fig2_{label}.json"), &rho.to_json())?;
        let f = rho.fidelity(&target)?;
        for i in 1..=6 {
            for j in i + 1..=6 {
                let pair = rho.partial_trace(&[SiteLabel::Photon(i), SiteLabel::Photon(j)])?;
                let neg = negativity(&pair, &[SiteLabel::Photon(i)])?;
                rows.push(vec![label.to_string(), i.to_string(), j.to_string(), neg.to_string()]);
            }
        }
        notes.push(format!("{name:?} F = {f:.4}"));
        rows.push(vec![label.to_string(), "all".into(), "fidelity".into(), f.to_string()]);
    }
    out.write_csv("fig2_pairs.csv", &["variant", "photon_i", "photon_j", "value"], &rows)?;
    Ok(notes.join(", "))
}

fn fmt_opt(v: &Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn fig4(cfg: &ExperimentConfig, photons: Option<&[usize]>, out: &mut Outputs) -> Result<String> {
    let list = photon_counts(photons.unwrap_or(&cfg.fig4.photons), "fig4.photons")?;
    let opts = le_options(cfg)?;
    let maps = maps_for(cfg, None, None);
    let mut rows = Vec::new();
    for &big_n in &list {
        let n = big_n / 2;
        let mut errors = Vec::new();
        let mut stage = |name: &str, f: &dyn Fn() -> Result<f64>| match f() {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(format!("{name}: {e}"));
                None
            }
        };
        let le_of = |noise: &str| -> Result<f64> {
            let model = NoiseModel::preset(noise)?;
            Ok(localizable_entanglement(&simulate_full(n, model, cfg)?, &opts)?.mean)
        };
        let all = stage("all_errors", &|| le_of("all_errors"));
        let deco = stage("decoherence_only", &|| le_of("decoherence_only"));
        let pm = stage("process_maps", &|| {
            let (m1, m2) = maps.as_ref().map_err(|e| CliError::Output(e.to_string()))?;
            Ok(localizable_entanglement(&chain_maps(m1, m2, n, cfg.protocol.truncation())?, &opts)?.mean)
        });
        let rec = if cfg.fig4.reconstruct && big_n <= cfg.fig4.reconstruct_max {
            stage("reconstructed", &|| {
                let state = simulate_full(n, NoiseModel::preset("all_errors")?, cfg)?;
                let rdms = local_rdms_from_state(&state, &LadderGraph::new(n)?)?;
                let rep = reconstruct_mpo(&rdms, &cfg.reconstruction.to_core())?;
                Ok(localizable_entanglement(&rep.mpo, &opts)?.mean)
            })
        } else {
            None
        };
        let ideal = stage("ideal", &|| le_of("ideal"));
        rows.push(vec![
            big_n.to_string(),
            fmt_opt(&all),
            fmt_opt(&deco),
            fmt_opt(&pm),
            fmt_opt(&rec),
            fmt_opt(&ideal),
            errors.join("; "),
        ]);
    }
    out.write_csv(
        "fig4.csv",
        &[
            "N",
            "le_all_errors",
            "le_decoherence_only",
            "le_process_maps",
            "le_reconstructed",
            "le_ideal",
            "errors",
        ],
        &rows,
    )?;
    let failed = rows.iter().filter(|r| !r[6].is_empty()).count();
    Ok(format!("fig4: {} rows, {failed} with stage failures", rows.len()))
}

pub fn energies(cfg: &ExperimentConfig, photons: Option<&[usize]>, out: &mut Outputs) -> Result<String> {
    let list = photon_counts(photons.unwrap_or(&cfg.energies.photons), "energies.photons")?;
    let noise = cfg.noise.model()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &big_n in &list {
        let g = LadderGraph::new(big_n / 2)?;
        let e = local_energies(&simulate_full(g.n, noise.clone(), cfg)?, &g)?;
        for (v, ev) in g.vertices().zip(&e) {
            let (col, row) = LadderGraph::position(v);
            let class = if col == 1 || col == g.n { "edge" } else { "bulk" };
            rows.push(vec![big_n.to_string(), v.to_string(), col.to_string(), row.to_string(), class.into(), ev.to_string()]);
        }
        let (edge, bulk) = edge_bulk_means(&e, &g);
        summary.push(vec![big_n.to_string(), edge.to_string(), fmt_opt(&bulk)]);
    }
    out.write_csv("energies.csv", &["N", "photon", "column", "row", "class", "energy"], &rows)?;
    out.write_csv("energies_summary.csv", &["N", "edge_mean", "bulk_mean"], &summary)?;
    Ok(format!("local energies for N in {list:?}"))
}
