//! Experiment configuration: TOML or JSON files, environment overrides,
//! and conversion into core option types.
//!
//! Environment variables named `PCLUSTER_<KEY>` override top-level keys and
//! `PCLUSTER_<SECTION>__<KEY>` override keys inside a section, e.g.
//! `PCLUSTER_SEED=7` or `PCLUSTER_NOISE__PRESET=ideal`. Values are parsed as
//! TOML scalars or arrays, falling back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use photonic_cluster::emitter::{fig2_variant, ProtocolSpec, Variant};
use photonic_cluster::entangle::{LeOptions, OutcomeSampling};
use photonic_cluster::linalg::c;
use photonic_cluster::measure::{DetectionConfig, DetectionMode};
use photonic_cluster::mpo::Truncation;
use photonic_cluster::noise::{Coherence, Durations, NoiseModel};
use photonic_cluster::ptomo::{MeasurementModel, Process, SourceReadout, TomographyConfig};
use photonic_cluster::tomo::ReconOptions;

use crate::error::{CliError, Result};

pub const ENV_PREFIX: &str = "PCLUSTER_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub protocol: ProtocolConfig,
    pub noise: NoiseConfig,
    pub detection: DetectionSection,
    pub reconstruction: ReconSection,
    pub entanglement: EntanglementSection,
    pub process: ProcessSection,
    pub fig4: Fig4Section,
    pub energies: EnergiesSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            seed: 1,
            output_dir: PathBuf::from("out"),
            protocol: ProtocolConfig::default(),
            noise: NoiseConfig::default(),
            detection: DetectionSection::default(),
            reconstruction: ReconSection::default(),
            entanglement: EntanglementSection::default(),
            process: ProcessSection::default(),
            fig4: Fig4Section::default(),
            energies: EnergiesSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    FullCluster,
    BellCnot1,
    BellCnot2,
    BellCphase,
    Fig2a,
    Fig2c,
    Fig2e,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    Mpo,
    Trajectories,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n: usize,
    pub variant: VariantName,
    pub method: Method,
    /// Trajectory count for `method = "trajectories"`.
    pub shots: usize,
    pub max_bond: usize,
    pub eps: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let t = Truncation::default();
        ProtocolConfig {
            n: 3,
            variant: VariantName::FullCluster,
            method: Method::Mpo,
            shots: 10_000,
            max_bond: t.max_bond,
            eps: t.eps,
        }
    }
}

impl ProtocolConfig {
    pub fn truncation(&self) -> Truncation {
        Truncation {
            max_bond: self.max_bond,
            eps: self.eps,
        }
    }
}

/// A preset with optional overrides. Angles are given in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub preset: String,
    pub gamma_h_deg: Option<f64>,
    pub gamma_pi_deg: Option<f64>,
    pub gamma_cz_deg: Option<f64>,
    pub l_cz: Option<f64>,
    pub l_pi: Option<f64>,
    pub phi_leak_deg: Option<f64>,
    pub sources: Option<[Coherence; 2]>,
    pub durations: Option<Durations>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            preset: "all_errors".into(),
            gamma_h_deg: None,
            gamma_pi_deg: None,
            gamma_cz_deg: None,
            l_cz: None,
            l_pi: None,
            phi_leak_deg: None,
            sources: None,
            durations: None,
        }
    }
}

impl NoiseConfig {
    pub fn with_preset(preset: &str) -> Self {
        NoiseConfig {
            preset: preset.into(),
            ..Default::default()
        }
    }

    fn has_overrides(&self) -> bool {
        self.gamma_h_deg.is_some()
            || self.gamma_pi_deg.is_some()
            || self.gamma_cz_deg.is_some()
            || self.l_cz.is_some()
            || self.l_pi.is_some()
            || self.phi_leak_deg.is_some()
            || self.sources.is_some()
            || self.durations.is_some()
    }

    pub fn model(&self) -> Result<NoiseModel> {
        let base = NoiseModel::preset(&self.preset).map_err(|e| CliError::Config(format!("noise.preset: {e}")))?;
        let NoiseModel::Device(mut p) = base else {
            if self.has_overrides() {
                return Err(CliError::Config("noise: overrides are not allowed with the ideal preset".into()));
            }
            return Ok(NoiseModel::Ideal);
        };
        if let Some(v) = self.gamma_h_deg {
            p.gamma_h = v.to_radians();
        }
        if let Some(v) = self.gamma_pi_deg {
            p.gamma_pi = v.to_radians();
        }
        if let Some(v) = self.gamma_cz_deg {
            p.gamma_cz = v.to_radians();
        }
        if let Some(v) = self.phi_leak_deg {
            p.phi_leak = v.to_radians();
        }
        p.l_cz = self.l_cz.unwrap_or(p.l_cz);
        p.l_pi = self.l_pi.unwrap_or(p.l_pi);
        p.sources = self.sources.unwrap_or(p.sources);
        p.durations = self.durations.unwrap_or(p.durations);
        p.validate().map_err(|e| CliError::Config(format!("noise: {e}")))?;
        Ok(NoiseModel::Device(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionKind {
    ShotSampling,
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub eta: f64,
    pub shots: usize,
    /// Complex gain as `[re, im]`.
    pub scale: [f64; 2],
    pub mode: DetectionKind,
    /// Per-moment signal-to-noise ratio in analytic mode.
    pub snr: f64,
    /// Moment order per mode.
    pub max_order: usize,
}

impl Default for DetectionSection {
    fn default() -> Self {
        DetectionSection {
            eta: 0.25,
            shots: 100_000,
            scale: [1.0, 0.0],
            mode: DetectionKind::ShotSampling,
            snr: 1e6,
            max_order: 1,
        }
    }
}

impl DetectionSection {
    pub fn to_core(&self) -> Result<DetectionConfig> {
        let cfg = DetectionConfig {
            eta: self.eta,
            scale: c(self.scale[0], self.scale[1]),
            shots: self.shots,
            mode: match self.mode {
                DetectionKind::ShotSampling => DetectionMode::ShotSampling,
                DetectionKind::Analytic => DetectionMode::AnalyticMoments { snr: self.snr },
            },
        };
        cfg.validate().map_err(|e| CliError::Config(format!("detection: {e}")))?;
        if self.max_order == 0 {
            return Err(CliError::Config("detection.max_order: must be at least 1".into()));
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSection {
    pub max_bond: usize,
    pub eps: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub compat_tolerance: f64,
}

impl Default for ReconSection {
    fn default() -> Self {
        let d = ReconOptions::default();
        ReconSection {
            max_bond: d.max_bond,
            eps: d.eps,
            max_iter: d.max_iter,
            tol: d.tol,
            compat_tolerance: d.compat_tolerance,
        }
    }
}

impl ReconSection {
    pub fn to_core(&self) -> ReconOptions {
        ReconOptions {
            max_bond: self.max_bond,
            eps: self.eps,
            max_iter: self.max_iter,
            tol: self.tol,
            compat_tolerance: self.compat_tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntanglementSection {
    pub samples: usize,
    pub sampling: OutcomeSampling,
    pub exhaustive_limit: usize,
}

impl Default for EntanglementSection {
    fn default() -> Self {
        let d = LeOptions::default();
        EntanglementSection {
            samples: d.samples,
            sampling: d.sampling,
            exhaustive_limit: d.exhaustive_limit,
        }
    }
}

impl EntanglementSection {
    pub fn to_core(&self, seed: u64) -> Result<LeOptions> {
        if self.samples == 0 {
            return Err(CliError::Config("entanglement.samples: must be positive".into()));
        }
        Ok(LeOptions {
            samples: self.samples,
            seed,
            sampling: self.sampling,
            exhaustive_limit: self.exhaustive_limit,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessSection {
    pub process: Process,
    pub measurement: MeasurementKind,
    pub readout: SourceReadout,
    /// Runs per source-basis setting in sampled mode.
    pub shots: usize,
    pub eta: f64,
}

impl Default for ProcessSection {
    fn default() -> Self {
        ProcessSection {
            process: Process::P1,
            measurement: MeasurementKind::Exact,
            readout: SourceReadout::Ideal,
            shots: 100_000,
            eta: 0.25,
        }
    }
}

impl ProcessSection {
    pub fn to_core(&self, seed: u64) -> TomographyConfig {
        TomographyConfig {
            readout: self.readout,
            measurement: match self.measurement {
                MeasurementKind::Exact => MeasurementModel::Exact,
                MeasurementKind::Sampled => MeasurementModel::Sampled {
                    shots: self.shots,
                    eta: self.eta,
                    seed,
                },
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig4Section {
    /// Photon counts `N = 2n`.
    pub photons: Vec<usize>,
    /// Also run the rdm → MPO reconstruction column.
    pub reconstruct: bool,
    /// Largest N for the reconstruction column.
    pub reconstruct_max: usize,
}

impl Default for Fig4Section {
    fn default() -> Self {
        Fig4Section {
            photons: (4..=20).step_by(2).collect(),
            reconstruct: false,
            reconstruct_max: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergiesSection {
    pub photons: Vec<usize>,
}

impl Default for EnergiesSection {
    fn default() -> Self {
        EnergiesSection {
            photons: (4..=20).step_by(2).collect(),
        }
    }
}

/// Checks an `N` list: even values in `4..=20`.
pub fn photon_counts(list: &[usize], field: &str) -> Result<Vec<usize>> {
    if list.is_empty() {
        return Err(CliError::Config(format!("{field}: list is empty")));
    }
    for &n in list {
        if n % 2 != 0 || !(4..=20).contains(&n) {
            return Err(CliError::Config(format!("{field}: {n} is not an even photon count in 4..=20")));
        }
    }
    Ok(list.to_vec())
}

impl ExperimentConfig {
    pub fn protocol_spec(&self) -> Result<ProtocolSpec> {
        let noise = self.noise.model()?;
        let p = &self.protocol;
        let (n, variant) = match p.variant {
            VariantName::FullCluster => (p.n, Variant::FullCluster),
            VariantName::BellCnot1 => (2, Variant::BellCnot(1)),
            VariantName::BellCnot2 => (2, Variant::BellCnot(2)),
            VariantName::BellCphase => (1, Variant::BellCphase),
            VariantName::Fig2a | VariantName::Fig2c | VariantName::Fig2e => {
                let label = match p.variant {
                    VariantName::Fig2a => 'a',
                    VariantName::Fig2c => 'c',
                    _ => 'e',
                };
                (3, Variant::PartialEntanglers(fig2_variant(label)?))
            }
        };
        let spec = ProtocolSpec { n, variant, noise };
        spec.validate().map_err(|e| CliError::Config(format!("protocol: {e}")))?;
        Ok(spec)
    }

    /// Rejects values that cannot run, before any computation starts.
    pub fn validate(&self) -> Result<()> {
        if self.protocol.n == 0 {
            return Err(CliError::Config("protocol.n: must be at least 1".into()));
        }
        if self.protocol.max_bond == 0 || !(self.protocol.eps >= 0.0) {
            return Err(CliError::Config("protocol: max_bond must be positive and eps non-negative".into()));
        }
        if self.protocol.method == Method::Trajectories && self.protocol.shots == 0 {
            return Err(CliError::Config("protocol.shots: must be positive".into()));
        }
        self.noise.model()?;
        self.detection.to_core()?;
        self.entanglement.to_core(self.seed)?;
        photon_counts(&self.fig4.photons, "fig4.photons")?;
        photon_counts(&self.energies.photons, "energies.photons")?;
        let r = &self.reconstruction;
        if r.max_bond == 0 || r.max_iter == 0 {
            return Err(CliError::Config("reconstruction: max_bond and max_iter must be positive".into()));
        }
        if self.process.measurement == MeasurementKind::Sampled
            && (self.process.shots == 0 || !(self.process.eta > 0.0 && self.process.eta <= 1.0))
        {
            return Err(CliError::Config("process: sampled mode needs shots ≥ 1 and eta in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Toml,
    Json,
}

fn format_of(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Format::Json,
        _ => Format::Toml,
    }
}

/// Parses config text; diagnostics carry line and field information.
pub fn parse_config(text: &str, json: bool) -> Result<Value> {
    if json {
        serde_json::from_str::<ExperimentConfig>(text).map_err(|e| CliError::Config(e.to_string()))?;
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    } else {
        toml::from_str::<ExperimentConfig>(text).map_err(|e| CliError::Config(e.to_string()))?;
        let v: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        serde_json::to_value(v).map_err(|e| CliError::Config(e.to_string()))
    }
}

fn env_value(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(t) => serde_json::to_value(&t["v"]).unwrap_or_else(|_| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Applies `PCLUSTER_*` overrides from `vars` onto a parsed config tree.
pub fn apply_env(mut tree: Value, vars: impl IntoIterator<Item = (String, String)>) -> Result<Value> {
    if !tree.is_object() {
        tree = Value::Object(Default::default());
    }
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(CliError::Config(format!("{key}: malformed override name")));
        }
        let mut node = &mut tree;
        for (i, part) in path.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("{key}: {part} is not inside a section")))?;
            if i + 1 == path.len() {
                obj.insert(part.clone(), env_value(&raw));
                break;
            }
            node = obj.entry(part.clone()).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(tree)
}

/// Loads a config file (or defaults), applies environment overrides, and
/// validates the result.
pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentConfig> {
    let tree = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse_config(&text, format_of(p) == Format::Json).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })?
        }
        None => Value::Object(Default::default()),
    };
    let tree = apply_env(tree, vars)?;
    let cfg: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| CliError::Config(format!("after environment overrides: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
