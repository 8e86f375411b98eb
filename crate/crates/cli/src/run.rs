//! `run`: builds the chain, samples the ensemble and writes every artifact.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use pilotwave::analysis::{backward_reachable, bin_distribution, screen_histogram, transition_net, tv_distance};
use pilotwave::markov::{build_chain_aligned, run_ensemble, MarkovChain, TrajectoryEnsemble};
use pilotwave::transport::{
    average_action, global_jump_action, msd_report, quadratic_cost, relativistic_cost, wasserstein, CostMatrix,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Artifact, CostKind, ExperimentConfig, Resolved};

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "PILOTWAVE_OUT";

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.ensemble.seed = s;
        }
        if let Some(n) = self.particles {
            cfg.ensemble.particles = n;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
    }
}

/// Output directory after applying the output-root variable.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    let dir = &cfg.output.dir;
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if dir.is_relative() => Path::new(&root).join(dir),
        _ => dir.clone(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub seed: u64,
    pub particles: usize,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub config: ExperimentConfig,
    pub derived: Derived,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Derived {
    pub wavelength: f64,
    pub mass: f64,
    pub velocity: f64,
    pub tau: f64,
    pub dy: f64,
    pub screen_distance: f64,
    pub site_spacing: f64,
    pub p_max: Option<f64>,
    pub tv_distance: Option<f64>,
}

/// Every file goes through here so the manifest cannot miss one.
struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<ManifestFile>,
}

impl ArtifactWriter {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
        let bytes = fs::metadata(&path)?.len();
        self.files.push(ManifestFile {
            name: name.to_string(),
            bytes,
        });
        Ok(())
    }
}

/// Cost matrix of the configured kind between two lines of the chain.
pub fn step_cost(cfg: &ExperimentConfig, r: &Resolved, chain: &MarkovChain, j: usize) -> Result<CostMatrix> {
    let (s, t) = (chain.grid(j).clone(), chain.grid(j + 1).clone());
    Ok(match cfg.transport.cost {
        CostKind::Quadratic => quadratic_cost(s, t),
        CostKind::Relativistic => relativistic_cost(s, t, r.time.mass(), r.time.tau())?,
    })
}

pub fn build(cfg: &ExperimentConfig, r: &Resolved) -> Result<MarkovChain> {
    build_chain_aligned(
        r.grid.clone(),
        &r.geometry,
        &r.time,
        cfg.propagation.lines,
        cfg.geometry.alignment,
    )
    .context("building the Markov chain")
}

#[derive(Debug, Clone, Serialize)]
struct TransportRow {
    step: usize,
    average_action: f64,
    total_msd: f64,
    w2: f64,
    nnz: usize,
    global_jump_action: f64,
}

fn transport_rows(cfg: &ExperimentConfig, r: &Resolved, chain: &MarkovChain) -> Result<Vec<TransportRow>> {
    (0..chain.n_steps())
        .into_par_iter()
        .map(|j| {
            let m = chain.matrix(j);
            let (p, q) = (chain.line(j), chain.line(j + 1));
            let cost = step_cost(cfg, r, chain, j)?;
            let report = msd_report(m, p, chain.grid(j), chain.grid(j + 1)).with_context(|| format!("step {j}"))?;
            Ok(TransportRow {
                step: j,
                average_action: average_action(m, p, &cost)?,
                total_msd: report.total_msd,
                w2: wasserstein(p, q, 2.0)?,
                nnz: report.nonzero_entries,
                global_jump_action: global_jump_action(p, q, &cost)?,
            })
        })
        .collect()
}

fn csv_header(w: &mut dyn Write, header: &str) -> std::io::Result<()> {
    writeln!(w, "{header}")
}

/// Screen site used for the backward-reachable region.
pub fn final_site(cfg: &ExperimentConfig, chain: &MarkovChain) -> usize {
    let last = chain.n_lines() - 1;
    let screen = chain.line(last);
    match cfg.analysis.final_x.and_then(|x| chain.grid(last).nearest_site(x)) {
        Some(s) if screen.weight(s) > 0.0 => s,
        _ => {
            screen
                .weights()
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
                .0
        }
    }
}

/// Runs the whole experiment and returns the manifest that was written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    let r = cfg.resolve()?;
    if cfg.transport.cost == CostKind::Relativistic {
        let ratio = cfg.light_cone_ratio(&r);
        if ratio >= 1.0 {
            eprintln!("warning: grid width / (c·tau) = {ratio:.3e}; the widest jumps leave the light cone");
        }
    }
    let want: BTreeSet<Artifact> = cfg.output.artifacts.iter().cloned().collect();
    let chain = build(cfg, &r)?;
    let mut out = ArtifactWriter::new(output_dir(cfg))?;

    if want.contains(&Artifact::Distributions) {
        out.write("distributions.csv", |w| {
            csv_header(w, "line,x,p")?;
            for (j, line) in chain.lines().iter().enumerate() {
                for (i, p) in line.weights().iter().enumerate() {
                    writeln!(w, "{j},{:e},{p:e}", line.grid().position(i))?;
                }
            }
            Ok(())
        })?;
    }
    if want.contains(&Artifact::Matrices) {
        out.write("matrices.csv", |w| {
            csv_header(w, "line,i,k,prob")?;
            let mut w = w;
            for (j, m) in chain.matrices().iter().enumerate() {
                m.write_csv(&mut w, j)?;
            }
            Ok(())
        })?;
    }

    let needs_ensemble = [Artifact::Trajectories, Artifact::Histogram, Artifact::Tv]
        .iter()
        .any(|a| want.contains(a));
    let ensemble: Option<TrajectoryEnsemble> = if needs_ensemble {
        Some(run_ensemble(&chain, cfg.ensemble.particles, cfg.ensemble.seed).context("sampling trajectories")?)
    } else {
        None
    };

    if let (Some(ens), true) = (&ensemble, want.contains(&Artifact::Trajectories)) {
        out.write("trajectories.csv", |w| {
            csv_header(w, "pid,line,x,y")?;
            let mut w = w;
            ens.write_csv(&mut w, &chain, cfg.ensemble.export_trajectories)
        })?;
        let meta = serde_json::json!({
            "seed": cfg.ensemble.seed,
            "particles": cfg.ensemble.particles,
            "exported_trajectories": cfg.ensemble.export_trajectories.min(cfg.ensemble.particles),
            "geometry": cfg.geometry,
            "wavelength": r.time.wavelength(),
            "grid": cfg.grid,
            "lines": chain.n_lines(),
            "dy": chain.dy(),
        });
        out.write("ensemble.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &meta)?;
            writeln!(w)
        })?;
    }

    let last = chain.n_lines() - 1;
    let mut tv = None;
    if let Some(ens) = &ensemble {
        let hist = screen_histogram(ens, &chain, last, r.histogram_bins.clone())?;
        let theory = bin_distribution(chain.line(last), r.histogram_bins.clone())?;
        let d = tv_distance(&hist, &theory)?;
        tv = Some(d);
        if want.contains(&Artifact::Histogram) {
            out.write("histogram.csv", |w| {
                csv_header(w, "x,count,theory")?;
                let mut w = w;
                hist.write_csv(&mut w, &theory)
            })?;
        }
        if want.contains(&Artifact::Tv) {
            let per_site = tv_distance(&screen_histogram(ens, &chain, last, r.grid.clone())?, chain.line(last))?;
            out.write("tv.csv", |w| {
                csv_header(w, "line,particles,bins,tv,sites,tv_per_site")?;
                writeln!(
                    w,
                    "{last},{},{},{d:e},{},{per_site:e}",
                    ens.len(),
                    r.histogram_bins.len(),
                    r.grid.len()
                )
            })?;
        }
    }

    let mut p_max = None;
    if want.contains(&Artifact::Net) {
        let net = transition_net(&chain, cfg.analysis.net_threshold)?;
        p_max = Some(net.p_max);
        out.write("net.csv", |w| {
            csv_header(w, "step,x_source,x_target,total_probability,band")?;
            let mut w = w;
            net.write_csv(&mut w, &chain)
        })?;
    }
    if want.contains(&Artifact::Region) {
        let region = backward_reachable(&chain, final_site(cfg, &chain))?;
        out.write("region.csv", |w| {
            csv_header(w, "line,site,reachable")?;
            let mut w = w;
            region.write_csv(&mut w)
        })?;
    }
    if want.contains(&Artifact::Transport) {
        let rows = transport_rows(cfg, &r, &chain)?;
        out.write("transport.csv", |w| {
            csv_header(w, "step,average_action,total_msd,w2,nnz,global_jump_action")?;
            for row in &rows {
                writeln!(
                    w,
                    "{},{:e},{:e},{:e},{},{:e}",
                    row.step, row.average_action, row.total_msd, row.w2, row.nnz, row.global_jump_action
                )?;
            }
            Ok(())
        })?;
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.ensemble.seed,
        particles: cfg.ensemble.particles,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: cfg.clone(),
        derived: Derived {
            wavelength: r.time.wavelength(),
            mass: r.time.mass(),
            velocity: r.time.v_y(),
            tau: r.time.tau(),
            dy: r.time.dy(),
            screen_distance: chain.y(last),
            site_spacing: r.grid.spacing(),
            p_max,
            tv_distance: tv,
        },
        files: out.files.clone(),
    };
    let path = out.dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}
