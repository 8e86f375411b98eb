//! `verify`: invariant suites over a built chain, with measured residuals.

use std::fmt;

use anyhow::Result;
use pilotwave::analysis::find_crossing_pairs_limited;
use pilotwave::lattice::{normalize, Grid1D, ProbabilityDistribution};
use pilotwave::markov::MarkovChain;
use pilotwave::transport::{
    average_action, brute_force_optimal, minimal_stochastic_matrix, msd_report, quadratic_cost, wasserstein,
    StochasticMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::config::{CostKind, ExperimentConfig, Resolved};
use crate::run::step_cost;

pub const MARGINAL_TOL: f64 = 1e-12;
pub const ORACLE_TOL: f64 = 1e-9;
pub const WASSERSTEIN_TOL: f64 = 1e-12;
const ORACLE_INSTANCES: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst measured value (residual or violation count).
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{tag} {:<22} measured={:.3e} tol={:.0e}  {}",
                c.name, c.measured, c.tolerance, c.detail
            )?;
        }
        Ok(())
    }
}

/// Perturbs the first stored entry of the first matrix by `1e-6`, keeping it
/// inside `(0, 1]`.
pub fn inject_fault(matrices: &mut [StochasticMatrix]) -> Result<()> {
    let m = &matrices[0];
    let mut rows = m.rows().to_vec();
    let row = rows
        .iter_mut()
        .find(|r| !r.is_empty())
        .ok_or_else(|| anyhow::anyhow!("first matrix is empty"))?;
    let p = row[0].1;
    row[0].1 = if p > 0.5 { p - 1e-6 } else { p + 1e-6 };
    matrices[0] = StochasticMatrix::from_rows(m.n_to(), rows, m.source().cloned())?;
    Ok(())
}

fn marginals(lines: &[ProbabilityDistribution], matrices: &[StochasticMatrix]) -> Result<Check> {
    let worst = matrices
        .par_iter()
        .enumerate()
        .map(|(j, m)| m.marginal_residuals(&lines[j], &lines[j + 1]).map(|r| (j, r.max())))
        .collect::<pilotwave::Result<Vec<_>>>()?
        .into_iter()
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Ok(Check {
        name: "marginals",
        passed: worst.1 <= MARGINAL_TOL,
        measured: worst.1,
        tolerance: MARGINAL_TOL,
        detail: format!(
            "row sums and pushforward over {} steps (worst step {})",
            matrices.len(),
            worst.0
        ),
    })
}

fn non_crossing(
    name: &'static str,
    lines: &[ProbabilityDistribution],
    matrices: &[StochasticMatrix],
    cost_of: impl Fn(usize) -> Result<pilotwave::transport::CostMatrix> + Sync,
) -> Result<Check> {
    let found = matrices
        .par_iter()
        .enumerate()
        .map(|(j, m)| {
            let cost = cost_of(j)?;
            Ok(find_crossing_pairs_limited(m, &lines[j], &cost, j, 1)?.len())
        })
        .collect::<Result<Vec<_>>>()?;
    let steps_with = found.iter().filter(|&&n| n > 0).count();
    Ok(Check {
        name,
        passed: steps_with == 0,
        measured: steps_with as f64,
        tolerance: 0.0,
        detail: format!("steps containing a crossing pair, of {}", matrices.len()),
    })
}

fn bell_minimality(lines: &[ProbabilityDistribution], matrices: &[StochasticMatrix]) -> Check {
    let mut violations = 0usize;
    let mut shared = 0usize;
    for (j, m) in matrices.iter().enumerate() {
        if !lines[j].same_grid(&lines[j + 1]) {
            continue;
        }
        shared += 1;
        for (i, k, p) in m.triplets() {
            if i != k && p * m.get(k, i) != 0.0 {
                violations += 1;
            }
        }
    }
    Check {
        name: "bell-minimality",
        passed: violations == 0,
        measured: violations as f64,
        tolerance: 0.0,
        detail: format!("pairs with both q->q' and q'->q allowed, over {shared} shared-grid steps"),
    }
}

/// Random desk-scale instances compared with the exact LP optimum.
pub fn oracle_suite(seed: u64, instances: usize) -> Result<Check> {
    let worst = (0..instances)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let n = rng.gen_range(2..=6);
            let m = rng.gen_range(2..=6);
            let (p, q) = (random_distribution(&mut rng, n)?, random_distribution(&mut rng, m)?);
            let cost = quadratic_cost(p.grid().clone(), q.grid().clone());
            let fast = average_action(&minimal_stochastic_matrix(&p, &q)?, &p, &cost)?;
            let (_, exact) = brute_force_optimal(&p, &q, &cost)?;
            Ok((fast - exact).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Check {
        name: "oracle",
        passed: worst < ORACLE_TOL,
        measured: worst,
        tolerance: ORACLE_TOL,
        detail: format!("|sweep - LP optimum| on {instances} random instances up to 6x6"),
    })
}

/// Distribution with random (sometimes zero) weights on an integer grid.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> pilotwave::Result<ProbabilityDistribution> {
    let grid = Arc::new(Grid1D::new(0.0, (n - 1) as f64, n)?);
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            return normalize(&w, grid);
        }
    }
}

fn wasserstein_identity(lines: &[ProbabilityDistribution], matrices: &[StochasticMatrix]) -> Result<Check> {
    let worst = matrices
        .par_iter()
        .enumerate()
        .map(|(j, m)| {
            let (p, q) = (&lines[j], &lines[j + 1]);
            let w2 = wasserstein(p, q, 2.0)?;
            let msd = msd_report(m, p, p.grid(), q.grid())?.total_msd;
            let scale = msd.max(w2 * w2);
            Ok(if scale == 0.0 {
                0.0
            } else {
                (w2 * w2 - msd).abs() / scale
            })
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(Check {
        name: "wasserstein-identity",
        passed: worst <= WASSERSTEIN_TOL,
        measured: worst,
        tolerance: WASSERSTEIN_TOL,
        detail: "relative |W2^2 - total mean-square displacement| per step".into(),
    })
}

/// Runs every suite on the chain's lines and (possibly altered) matrices.
pub fn verify_matrices(
    cfg: &ExperimentConfig,
    r: &Resolved,
    chain: &MarkovChain,
    matrices: &[StochasticMatrix],
) -> Result<VerificationReport> {
    let lines = chain.lines();
    let mut checks = vec![
        marginals(lines, matrices)?,
        non_crossing("non-crossing", lines, matrices, |j| {
            Ok(quadratic_cost(chain.grid(j).clone(), chain.grid(j + 1).clone()))
        })?,
    ];
    if cfg.transport.cost == CostKind::Relativistic {
        checks.push(non_crossing("non-crossing-relativ", lines, matrices, |j| {
            step_cost(cfg, r, chain, j)
        })?);
    }
    checks.push(bell_minimality(lines, matrices));
    checks.push(oracle_suite(cfg.ensemble.seed, ORACLE_INSTANCES)?);
    checks.push(wasserstein_identity(lines, matrices)?);
    Ok(VerificationReport { checks })
}

pub fn verify(cfg: &ExperimentConfig, fault: bool) -> Result<VerificationReport> {
    let r = cfg.resolve()?;
    let chain = crate::run::build(cfg, &r)?;
    let mut matrices = chain.matrices().to_vec();
    if fault {
        inject_fault(&mut matrices)?;
    }
    verify_matrices(cfg, &r, &chain, &matrices)
}
