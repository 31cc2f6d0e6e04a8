//! Command-line pipelines: configuration, run manifests and the
//! subcommand implementations behind the `pcluster` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipelines;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, MeasurementKind, Method};
use crate::error::{CliError, Result};
use crate::manifest::{Outputs, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "pcluster", version, about = "Photonic cluster-state simulation and tomography pipelines")]
pub struct Cli {
    /// TOML or JSON experiment config; `PCLUSTER_*` variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Seed, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the emission protocol.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        /// Noise preset: ideal, decoherence_only, all_errors.
        #[arg(long)]
        noise: Option<String>,
        /// dense, mpo or trajectories.
        #[arg(long)]
        method: Option<String>,
    },
    /// Heterodyne moments of every local rdm of a state.
    Measure {
        /// `mpo.json` or `state.json`; simulated from the config if absent.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<String>,
        /// Also write raw shots (`shots_v<k>.bin` plus JSON sidecar).
        #[arg(long)]
        save_shots: bool,
    },
    /// Local MLE plus MPO reconstruction.
    Reconstruct {
        /// `moments.json` from `measure`.
        #[arg(long, conflicts_with = "state")]
        moments: Option<PathBuf>,
        /// Use the exact rdms of this state instead of measured moments.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<String>,
    },
    /// Localizable entanglement between the first and last photon pair.
    Entanglement {
        #[arg(long)]
        mpo: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<String>,
    },
    /// Process tomography of one emission cycle.
    Processtomo {
        /// p1 or p2.
        #[arg(long)]
        process: Option<String>,
        #[arg(long)]
        noise: Option<String>,
        /// exact or sampled.
        #[arg(long)]
        measurement: Option<String>,
        /// Output file for the process map (default `chi.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chain process maps into a 2×n state.
    Chain {
        #[arg(long)]
        p1: Option<PathBuf>,
        #[arg(long)]
        p2: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<String>,
        /// Output file for the MPO (default `mpo.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Six-photon build-up variants.
    Fig2 {
        #[arg(long)]
        noise: Option<String>,
    },
    /// Localizable entanglement against N for every simulation flavour.
    Fig4 {
        /// Photon counts, e.g. `--photons 4,8,12`.
        #[arg(long, value_delimiter = ',')]
        photons: Option<Vec<usize>>,
        /// Include the reconstruction column.
        #[arg(long)]
        reconstruct: bool,
    },
    /// Per-photon local energies.
    Energies {
        #[arg(long, value_delimiter = ',')]
        photons: Option<Vec<usize>>,
        #[arg(long)]
        noise: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Measure { .. } => "measure",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Entanglement { .. } => "entanglement",
            Command::Processtomo { .. } => "processtomo",
            Command::Chain { .. } => "chain",
            Command::Fig2 { .. } => "fig2",
            Command::Fig4 { .. } => "fig4",
            Command::Energies { .. } => "energies",
        }
    }
}

fn parse_name<T: serde::de::DeserializeOwned>(raw: &str, field: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(raw.into()))
        .map_err(|e| CliError::Config(format!("--{field} {raw:?}: {e}")))
}

/// Folds command-line flags into the loaded config.
pub fn apply_flags(cli: &Cli, cfg: &mut ExperimentConfig) -> Result<()> {
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let (n, noise) = match &cli.command {
        Command::Simulate { n, noise, method } => {
            if let Some(m) = method {
                cfg.protocol.method = parse_name::<Method>(m, "method")?;
            }
            (*n, noise.clone())
        }
        Command::Measure { n, noise, .. }
        | Command::Reconstruct { n, noise, .. }
        | Command::Entanglement { n, noise, .. }
        | Command::Chain { n, noise, .. } => (*n, noise.clone()),
        Command::Processtomo {
            process,
            noise,
            measurement,
            ..
        } => {
            if let Some(p) = process {
                cfg.process.process = p.parse().map_err(|e| CliError::Config(format!("--process: {e}")))?;
            }
            if let Some(m) = measurement {
                cfg.process.measurement = parse_name::<MeasurementKind>(m, "measurement")?;
            }
            (None, noise.clone())
        }
        Command::Fig2 { noise } | Command::Energies { noise, .. } => (None, noise.clone()),
        Command::Fig4 { reconstruct, .. } => {
            cfg.fig4.reconstruct |= *reconstruct;
            (None, None)
        }
    };
    if let Some(n) = n {
        cfg.protocol.n = n;
    }
    if let Some(p) = noise {
        cfg.noise = config::NoiseConfig::with_preset(&p);
    }
    cfg.validate()
}

/// Loads the config, runs the subcommand and writes the manifest.
pub fn run(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<(RunManifest, String)> {
    let mut cfg = config::load(cli.config.as_deref(), env)?;
    apply_flags(cli, &mut cfg)?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // a global pool can only be installed once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let t0 = Instant::now();
    let mut out = Outputs::create(&cfg.output_dir)?;
    let summary = match &cli.command {
        Command::Simulate { .. } => pipelines::simulate(&cfg, &mut out)?,
        Command::Measure { state, save_shots, .. } => pipelines::measure(&cfg, state.as_deref(), *save_shots, &mut out)?,
        Command::Reconstruct { moments, state, .. } => {
            pipelines::reconstruct(&cfg, moments.as_deref(), state.as_deref(), &mut out)?
        }
        Command::Entanglement { mpo, .. } => pipelines::entanglement(&cfg, mpo.as_deref(), &mut out)?,
        Command::Processtomo { out: file, .. } => pipelines::processtomo(&cfg, file.as_deref(), &mut out)?,
        Command::Chain { p1, p2, out: file, .. } => {
            pipelines::chain(&cfg, p1.as_deref(), p2.as_deref(), file.as_deref(), &mut out)?
        }
        Command::Fig2 { .. } => pipelines::fig2(&cfg, &mut out)?,
        Command::Fig4 { photons, .. } => pipelines::fig4(&cfg, photons.as_deref(), &mut out)?,
        Command::Energies { photons, .. } => pipelines::energies(&cfg, photons.as_deref(), &mut out)?,
    };
    let manifest = out.finish(cli.command.name(), &cfg, vec![cfg.seed], t0.elapsed().as_secs_f64())?;
    Ok((manifest, summary))
}
