//! Markov chain over the lines behind the diaphragm and seeded sampling of
//! particle trajectory ensembles.

use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Grid1D, ProbabilityDistribution, TimeParameters};
use crate::transport::{minimal_stochastic_matrix, StochasticMatrix};
use crate::wavefield::{line_distribution_aligned, ApertureAlignment, SlitGeometry};

/// Largest tolerated pushforward mismatch when assembling a chain by hand.
pub const CHAIN_TOL: f64 = 1e-12;

/// Line distributions `y_j = j·Δy`, `j = 0..=n_steps`, and the transition
/// matrices between consecutive lines. Immutable once built.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    lines: Vec<ProbabilityDistribution>,
    matrices: Vec<StochasticMatrix>,
    dy: f64,
    time: Option<TimeParameters>,
    // cumulative weights of line 0 for inverse-CDF sampling
    start_cdf: Vec<f64>,
}

impl MarkovChain {
    /// Assembles a chain from explicit lines and matrices, checking that
    /// every matrix carries line `j` onto line `j + 1`.
    pub fn from_parts(lines: Vec<ProbabilityDistribution>, matrices: Vec<StochasticMatrix>, dy: f64) -> Result<Self> {
        if lines.is_empty() || matrices.len() + 1 != lines.len() {
            return Err(Error::Dimension(format!(
                "{} lines need {} matrices, got {}",
                lines.len(),
                lines.len().saturating_sub(1),
                matrices.len()
            )));
        }
        for (j, m) in matrices.iter().enumerate() {
            let r = m
                .marginal_residuals(&lines[j], &lines[j + 1])
                .map_err(|e| e.at_line("chain assembly", j))?;
            if r.max() > CHAIN_TOL {
                return Err(Error::MassBalance(r.max()).at_line("chain assembly", j));
            }
        }
        Ok(Self::assemble(lines, matrices, dy, None))
    }

    /// Chain whose matrices are the minimal stochastic matrices between
    /// consecutive given lines.
    pub fn from_lines(lines: Vec<ProbabilityDistribution>, dy: f64) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Dimension("chain needs at least one line".into()));
        }
        let matrices = transport_steps(&lines)?;
        Ok(Self::assemble(lines, matrices, dy, None))
    }

    fn assemble(
        lines: Vec<ProbabilityDistribution>,
        matrices: Vec<StochasticMatrix>,
        dy: f64,
        time: Option<TimeParameters>,
    ) -> Self {
        let mut acc = 0.0;
        let start_cdf = lines[0]
            .weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            lines,
            matrices,
            dy,
            time,
            start_cdf,
        }
    }

    /// Number of transitions (`lines − 1`).
    pub fn n_steps(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn line(&self, j: usize) -> &ProbabilityDistribution {
        &self.lines[j]
    }

    pub fn lines(&self) -> &[ProbabilityDistribution] {
        &self.lines
    }

    /// Matrix from line `j` to line `j + 1`.
    pub fn matrix(&self, j: usize) -> &StochasticMatrix {
        &self.matrices[j]
    }

    pub fn matrices(&self) -> &[StochasticMatrix] {
        &self.matrices
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    pub fn time(&self) -> Option<&TimeParameters> {
        self.time.as_ref()
    }

    pub fn grid(&self, j: usize) -> &Arc<Grid1D> {
        self.lines[j].grid()
    }
}

fn transport_steps(lines: &[ProbabilityDistribution]) -> Result<Vec<StochasticMatrix>> {
    (0..lines.len() - 1)
        .into_par_iter()
        .map(|j| {
            minimal_stochastic_matrix(&lines[j], &lines[j + 1]).map_err(|e| e.at_line("minimal stochastic matrix", j))
        })
        .collect()
}

/// Double- or single-slit chain: line 0 is the uniform aperture
/// distribution, lines `1..=n_steps` the Fresnel profiles at `j·Δy`.
pub fn build_chain(
    grid: Arc<Grid1D>,
    geom: &SlitGeometry,
    time: &TimeParameters,
    n_steps: usize,
) -> Result<MarkovChain> {
    build_chain_aligned(grid, geom, time, n_steps, ApertureAlignment::default())
}

pub fn build_chain_aligned(
    grid: Arc<Grid1D>,
    geom: &SlitGeometry,
    time: &TimeParameters,
    n_steps: usize,
    alignment: ApertureAlignment,
) -> Result<MarkovChain> {
    if n_steps == 0 {
        return Err(Error::Invalid("need at least one step".into()));
    }
    let dy = time.dy();
    let lambda = time.wavelength();
    let lines = (0..=n_steps)
        .into_par_iter()
        .map(|j| {
            line_distribution_aligned(grid.clone(), j as f64 * dy, geom, lambda, alignment)
                .map_err(|e| e.at_line("line distribution", j))
        })
        .collect::<Result<Vec<_>>>()?;
    let matrices = transport_steps(&lines)?;
    Ok(MarkovChain::assemble(lines, matrices, dy, Some(time.clone())))
}

/// One particle path: a site index on every line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trajectory {
    sites: Vec<u32>,
}

impl Trajectory {
    pub fn new(sites: Vec<u32>) -> Self {
        Self { sites }
    }

    pub fn sites(&self) -> &[u32] {
        &self.sites
    }

    pub fn site(&self, j: usize) -> usize {
        self.sites[j] as usize
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// `(x, y)` in meters on every line.
    pub fn positions(&self, chain: &MarkovChain) -> Vec<(f64, f64)> {
        self.sites
            .iter()
            .enumerate()
            .map(|(j, &i)| (chain.grid(j).position(i as usize), chain.y(j)))
            .collect()
    }
}

/// Walks the row in ascending target order; the last entry takes whatever
/// the rounding residual of the row sum leaves uncovered.
fn sample_row(row: &[(usize, f64)], u: f64) -> Option<usize> {
    let mut acc = 0.0;
    for &(k, p) in row {
        acc += p;
        if u < acc {
            return Some(k);
        }
    }
    row.last().map(|e| e.0)
}

/// Draws one trajectory: the start site from line 0, then one site per step
/// from the current row.
pub fn sample_trajectory<R: Rng + ?Sized>(chain: &MarkovChain, rng: &mut R) -> Result<Trajectory> {
    let cdf = &chain.start_cdf;
    let total = *cdf.last().expect("chain has a first line");
    let u: f64 = rng.gen::<f64>() * total;
    let mut site = cdf.partition_point(|&c| c <= u);
    if site >= cdf.len() {
        site = chain.lines[0]
            .weights()
            .iter()
            .rposition(|&w| w > 0.0)
            .ok_or(Error::NoMass)?;
    }
    let mut sites = Vec::with_capacity(chain.n_lines());
    sites.push(site as u32);
    for (step, m) in chain.matrices.iter().enumerate() {
        let u: f64 = rng.gen();
        site = sample_row(m.row(site), u).ok_or(Error::EmptyRow { step, site })?;
        sites.push(site as u32);
    }
    Ok(Trajectory { sites })
}

/// `ℙ(q₀)·Π_j ℙ(q_j → q_{j+1})`; zero as soon as any step is forbidden.
pub fn path_probability(trajectory: &Trajectory, chain: &MarkovChain) -> f64 {
    if trajectory.len() != chain.n_lines() {
        return 0.0;
    }
    let mut p = chain.line(0).weight(trajectory.site(0));
    for j in 0..chain.n_steps() {
        if p == 0.0 {
            break;
        }
        p *= chain.matrix(j).get(trajectory.site(j), trajectory.site(j + 1));
    }
    p
}

/// Independent trajectories for particles `0..N`. Particle `i` draws from
/// its own ChaCha stream `i` under the run seed, so the ensemble does not
/// depend on thread scheduling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEnsemble {
    seed: u64,
    trajectories: Vec<Trajectory>,
}

impl TrajectoryEnsemble {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Site of every particle on line `j`.
    pub fn sites_at(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.trajectories.iter().map(move |t| t.site(j))
    }

    /// Writes `pid,line,x,y` rows (no header) for the first `limit` particles.
    pub fn write_csv<W: Write>(&self, out: &mut W, chain: &MarkovChain, limit: usize) -> io::Result<()> {
        for (pid, t) in self.trajectories.iter().take(limit).enumerate() {
            for (j, (x, y)) in t.positions(chain).into_iter().enumerate() {
                writeln!(out, "{pid},{j},{x:e},{y:e}")?;
            }
        }
        Ok(())
    }
}

/// RNG of particle `pid` in a run seeded with `seed`.
pub fn particle_rng(seed: u64, pid: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pid);
    rng
}

pub fn run_ensemble(chain: &MarkovChain, n_particles: usize, seed: u64) -> Result<TrajectoryEnsemble> {
    if n_particles == 0 {
        return Err(Error::Invalid("ensemble needs at least one particle".into()));
    }
    let trajectories = (0..n_particles)
        .into_par_iter()
        .map(|pid| sample_trajectory(chain, &mut particle_rng(seed, pid as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryEnsemble { seed, trajectories })
}
