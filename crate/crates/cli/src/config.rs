//! Experiment configuration: TOML sections with per-field validation.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use pilotwave::lattice::{Grid1D, TimeParameters, ELECTRON_MASS, SPEED_OF_LIGHT};
use pilotwave::wavefield::{ApertureAlignment, SlitGeometry};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub geometry: GeometryConfig,
    pub particle: ParticleConfig,
    pub grid: GridConfig,
    pub propagation: PropagationConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Slit width `a` in meters.
    pub slit_width: f64,
    /// Center-to-center distance `d` in meters; absent for a single slit.
    pub slit_separation: Option<f64>,
    #[serde(default)]
    pub alignment: ApertureAlignment,
}

/// Exactly one of `wavelength` or `velocity`; `mass` defaults to the
/// electron mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub mass: Option<f64>,
    pub wavelength: Option<f64>,
    pub velocity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_sites: usize,
}

/// `lines` steps behind the diaphragm, spaced by `dy` or reaching
/// `screen_distance` (exactly one of the two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    pub lines: usize,
    pub dy: Option<f64>,
    pub screen_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub particles: usize,
    pub seed: u64,
    /// Number of full trajectories written to `trajectories.csv`.
    #[serde(default = "default_exported")]
    pub export_trajectories: usize,
}

fn default_exported() -> usize {
    100
}

/// Screen histogram bins, centered on an even grid over the site range.
/// Defaults to one bin per site.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    #[default]
    Quadratic,
    Relativistic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    #[serde(default)]
    pub cost: CostKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Net edges below this fraction of the largest transition are dropped.
    #[serde(default = "default_threshold")]
    pub net_threshold: f64,
    /// Screen position whose backward-reachable region is exported;
    /// defaults to the most probable screen site.
    pub final_x: Option<f64>,
}

fn default_threshold() -> f64 {
    1e-6
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            net_threshold: default_threshold(),
            final_x: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Artifact {
    Distributions,
    Matrices,
    Net,
    Trajectories,
    Histogram,
    Region,
    Transport,
    Tv,
}

impl Artifact {
    pub const ALL: [Artifact; 8] = [
        Artifact::Distributions,
        Artifact::Matrices,
        Artifact::Net,
        Artifact::Trajectories,
        Artifact::Histogram,
        Artifact::Region,
        Artifact::Transport,
        Artifact::Tv,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against `$PILOTWAVE_OUT` when it is set.
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_artifacts")]
    pub artifacts: Vec<Artifact>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_artifacts() -> Vec<Artifact> {
    Artifact::ALL.to_vec()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            artifacts: default_artifacts(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        bail!("{field}: must be positive and finite, got {v}");
    }
    Ok(v)
}

/// Validated physical quantities derived from a config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub geometry: SlitGeometry,
    pub grid: Arc<Grid1D>,
    pub time: TimeParameters,
    pub histogram_bins: Arc<Grid1D>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks every field and derives geometry, grid and time step.
    pub fn resolve(&self) -> Result<Resolved> {
        let g = &self.geometry;
        positive("geometry.slit_width", g.slit_width)?;
        let geometry = match g.slit_separation {
            Some(d) => {
                positive("geometry.slit_separation", d)?;
                SlitGeometry::new(g.slit_width, d).context("geometry.slit_separation")?
            }
            None => SlitGeometry::single(g.slit_width).context("geometry.slit_width")?,
        };

        let gr = &self.grid;
        let grid = Grid1D::new(gr.x_min, gr.x_max, gr.n_sites).context("grid")?;
        if gr.n_sites > u32::MAX as usize {
            bail!("grid.n_sites: at most {} sites", u32::MAX);
        }
        let grid = Arc::new(grid);

        let pr = &self.propagation;
        if pr.lines == 0 {
            bail!("propagation.lines: need at least one line behind the diaphragm");
        }
        let dy = match (pr.dy, pr.screen_distance) {
            (Some(dy), None) => positive("propagation.dy", dy)?,
            (None, Some(y)) => positive("propagation.screen_distance", y)? / pr.lines as f64,
            _ => bail!("propagation: give exactly one of dy or screen_distance"),
        };

        let p = &self.particle;
        let mass = positive("particle.mass", p.mass.unwrap_or(ELECTRON_MASS))?;
        let time = match (p.wavelength, p.velocity) {
            (Some(l), None) => TimeParameters::from_wavelength(mass, positive("particle.wavelength", l)?, dy)?,
            (None, Some(v)) => {
                let v = positive("particle.velocity", v)?;
                TimeParameters::from_velocity(mass, v, dy / v)?
            }
            _ => bail!("particle: give exactly one of wavelength or velocity"),
        };

        if self.ensemble.particles == 0 {
            bail!("ensemble.particles: need at least one particle");
        }
        let t = self.analysis.net_threshold;
        if !(t > 0.0 && t < 1.0) {
            bail!("analysis.net_threshold: must lie in (0, 1), got {t}");
        }
        if let Some(x) = self.analysis.final_x {
            if grid.nearest_site(x).is_none() {
                bail!("analysis.final_x: {x} lies outside the grid");
            }
        }
        let histogram_bins = match self.histogram.bins {
            None => grid.clone(),
            Some(n) if n >= 2 => Arc::new(Grid1D::new(gr.x_min, gr.x_max, n).context("histogram.bins")?),
            Some(n) => bail!("histogram.bins: need at least 2 bins, got {n}"),
        };

        Ok(Resolved {
            geometry,
            grid,
            time,
            histogram_bins,
        })
    }

    /// `max |Δx| / (cτ)` over the grid; the relativistic cost forbids jumps
    /// with a ratio of one or more.
    pub fn light_cone_ratio(&self, r: &Resolved) -> f64 {
        (r.grid.x_max() - r.grid.x_min()) / (SPEED_OF_LIGHT * r.time.tau())
    }
}
