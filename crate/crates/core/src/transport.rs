//! Minimal stochastic matrices between consecutive lines, the average action
//! they induce, and the optimal-transport quantities built on them.
//!
//! [`minimal_stochastic_matrix`] is the ascending double sweep that pours the
//! source mass into the target sites in order. In one dimension that is the
//! monotone coupling, which minimizes the average action for every cost that
//! is a convex function of the displacement. [`brute_force_optimal`] solves
//! the same problem as a generic linear program and serves as the oracle.

use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Grid1D, ProbabilityDistribution, NORMALIZATION_TOL, SPEED_OF_LIGHT};
use crate::numeric::compensated_sum;

/// Largest tolerated leftover mass after the sweep.
pub const MASS_BALANCE_TOL: f64 = 1e-12;

/// Cell budget of the exact LP oracle.
pub const ORACLE_MAX_CELLS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
enum CostKind {
    Quadratic,
    Relativistic { rest_action: f64, c_tau: f64 },
    Dense(Vec<f64>),
}

/// Action of a single jump from source site `i` to target site `k`.
///
/// Entries are computed on demand from the two grids except for the dense
/// variant, which stores them explicitly.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    source: Arc<Grid1D>,
    target: Arc<Grid1D>,
    kind: CostKind,
}

/// Squared displacement `(x'_k − x_i)²`, the non-relativistic action with
/// its constant offset and `m/2τ` prefactor dropped.
pub fn quadratic_cost(source: Arc<Grid1D>, target: Arc<Grid1D>) -> CostMatrix {
    CostMatrix {
        source,
        target,
        kind: CostKind::Quadratic,
    }
}

/// Free-particle proper-time action `−mc²τ √(1 − (Δx/cτ)²)`; jumps outside
/// the light cone cost `+∞`.
pub fn relativistic_cost(source: Arc<Grid1D>, target: Arc<Grid1D>, mass: f64, tau: f64) -> Result<CostMatrix> {
    if !(mass > 0.0 && tau > 0.0 && mass.is_finite() && tau.is_finite()) {
        return Err(Error::Invalid(format!(
            "relativistic cost needs positive mass and tau, got {mass}, {tau}"
        )));
    }
    let c2 = SPEED_OF_LIGHT * SPEED_OF_LIGHT;
    Ok(CostMatrix {
        source,
        target,
        kind: CostKind::Relativistic {
            rest_action: mass * c2 * tau,
            c_tau: SPEED_OF_LIGHT * tau,
        },
    })
}

impl CostMatrix {
    /// Explicit row-major `n_from × n_to` entries.
    pub fn dense(source: Arc<Grid1D>, target: Arc<Grid1D>, entries: Vec<f64>) -> Result<Self> {
        let expected = source.len() * target.len();
        if entries.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: entries.len(),
            });
        }
        if let Some(v) = entries.iter().find(|v| v.is_nan()) {
            return Err(Error::NonFinite(*v));
        }
        Ok(Self {
            source,
            target,
            kind: CostKind::Dense(entries),
        })
    }

    pub fn n_from(&self) -> usize {
        self.source.len()
    }

    pub fn n_to(&self) -> usize {
        self.target.len()
    }

    pub fn source(&self) -> &Arc<Grid1D> {
        &self.source
    }

    pub fn target(&self) -> &Arc<Grid1D> {
        &self.target
    }

    /// Constant part shared by every entry (`−mc²τ` for the relativistic
    /// action, zero otherwise).
    pub fn offset(&self) -> f64 {
        match self.kind {
            CostKind::Relativistic { rest_action, .. } => -rest_action,
            _ => 0.0,
        }
    }

    /// `entry(i, k) − offset()`, computed without cancellation.
    pub fn excess(&self, i: usize, k: usize) -> f64 {
        let dx = self.target.position(k) - self.source.position(i);
        match &self.kind {
            CostKind::Quadratic => dx * dx,
            CostKind::Relativistic { rest_action, c_tau } => {
                let z = dx / c_tau;
                let z2 = z * z;
                if z2 >= 1.0 {
                    f64::INFINITY
                } else {
                    rest_action * z2 / (1.0 + (1.0 - z2).sqrt())
                }
            }
            CostKind::Dense(v) => v[i * self.target.len() + k],
        }
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        self.offset() + self.excess(i, k)
    }

    /// True when the cost is a strictly increasing function of `|x' − x|`.
    pub fn depends_on_distance(&self) -> bool {
        !matches!(self.kind, CostKind::Dense(_))
    }
}

/// Row-stochastic transition matrix between two site sets, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    n_to: usize,
    rows: Vec<Vec<(usize, f64)>>,
    source: Option<ProbabilityDistribution>,
}

impl StochasticMatrix {
    /// Builds from explicit rows of `(target, probability)`. Entries must lie
    /// in `(0, 1]`; rows are sorted by target.
    pub fn from_rows(
        n_to: usize,
        mut rows: Vec<Vec<(usize, f64)>>,
        source: Option<ProbabilityDistribution>,
    ) -> Result<Self> {
        for (i, row) in rows.iter_mut().enumerate() {
            row.retain(|&(_, p)| p != 0.0);
            row.sort_by_key(|&(k, _)| k);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Invalid(format!("duplicate entry ({i}, {})", w[0].0)));
                }
            }
            for &(k, p) in row.iter() {
                if k >= n_to {
                    return Err(Error::Dimension(format!("target {k} out of range {n_to}")));
                }
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Invalid(format!("entry ({i}, {k}) = {p} outside [0, 1]")));
                }
            }
        }
        if let Some(s) = &source {
            if s.len() != rows.len() {
                return Err(Error::Dimension(format!(
                    "{} rows but source has {} sites",
                    rows.len(),
                    s.len()
                )));
            }
        }
        Ok(Self { n_to, rows, source })
    }

    /// Dense row-major constructor; zeros are dropped.
    pub fn from_dense(
        n_from: usize,
        n_to: usize,
        entries: &[f64],
        source: Option<ProbabilityDistribution>,
    ) -> Result<Self> {
        if entries.len() != n_from * n_to {
            return Err(Error::LengthMismatch {
                expected: n_from * n_to,
                got: entries.len(),
            });
        }
        let rows = entries
            .chunks(n_to)
            .map(|r| r.iter().copied().enumerate().filter(|&(_, p)| p != 0.0).collect())
            .collect();
        Self::from_rows(n_to, rows, source)
    }

    /// Attaches the source distribution the matrix transports.
    pub fn with_source(mut self, source: ProbabilityDistribution) -> Result<Self> {
        if source.len() != self.rows.len() {
            return Err(Error::Dimension(format!(
                "{} rows but source has {} sites",
                self.rows.len(),
                source.len()
            )));
        }
        self.source = Some(source);
        Ok(self)
    }

    pub fn n_from(&self) -> usize {
        self.rows.len()
    }

    pub fn n_to(&self) -> usize {
        self.n_to
    }

    pub fn source(&self) -> Option<&ProbabilityDistribution> {
        self.source.as_ref()
    }

    /// Nonzero entries of row `i`, ascending in target.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        match self.rows[i].binary_search_by_key(&k, |&(t, _)| t) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => 0.0,
        }
    }

    pub(crate) fn set(&mut self, i: usize, k: usize, p: f64) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&k, |&(t, _)| t) {
            Ok(pos) => {
                if p == 0.0 {
                    row.remove(pos);
                } else {
                    row[pos].1 = p;
                }
            }
            Err(pos) => {
                if p != 0.0 {
                    row.insert(pos, (k, p));
                }
            }
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `(source, target, probability)` for every stored entry.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(k, p)| (i, k, p)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| compensated_sum(r.iter().map(|&(_, p)| p)))
            .collect()
    }

    /// `Σ_q P(q→q′)·p(q)` for every target `q′`.
    pub fn pushforward(&self, p_from: &ProbabilityDistribution) -> Result<Vec<f64>> {
        self.check_source(p_from)?;
        let mut out = vec![0.0; self.n_to];
        let mut comp = vec![0.0; self.n_to];
        for (i, row) in self.rows.iter().enumerate() {
            let w = p_from.weight(i);
            if w == 0.0 {
                continue;
            }
            for &(k, p) in row {
                // Neumaier per column
                let v = p * w;
                let t = out[k] + v;
                if out[k].abs() >= v.abs() {
                    comp[k] += (out[k] - t) + v;
                } else {
                    comp[k] += (v - t) + out[k];
                }
                out[k] = t;
            }
        }
        Ok(out.iter().zip(&comp).map(|(s, c)| s + c).collect())
    }

    /// Largest deviation from the two marginal conditions: unit row sums on
    /// sources with mass, and pushforward equal to `p_to`.
    pub fn marginal_residuals(
        &self,
        p_from: &ProbabilityDistribution,
        p_to: &ProbabilityDistribution,
    ) -> Result<MarginalResiduals> {
        if p_to.len() != self.n_to {
            return Err(Error::Dimension(format!(
                "matrix has {} targets, distribution {}",
                self.n_to,
                p_to.len()
            )));
        }
        let sums = self.row_sums();
        let row = sums
            .iter()
            .enumerate()
            .filter(|&(i, _)| p_from.weight(i) > 0.0)
            .map(|(_, s)| (s - 1.0).abs())
            .fold(0.0, f64::max);
        let push = self
            .pushforward(p_from)?
            .iter()
            .zip(p_to.weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(MarginalResiduals {
            max_row_residual: row,
            max_pushforward_residual: push,
        })
    }

    /// Writes `line,i,k,prob` rows (no header).
    pub fn write_csv<W: Write>(&self, out: &mut W, line: usize) -> io::Result<()> {
        for (i, k, p) in self.triplets() {
            writeln!(out, "{line},{i},{k},{p:e}")?;
        }
        Ok(())
    }

    fn check_source(&self, p_from: &ProbabilityDistribution) -> Result<()> {
        if p_from.len() != self.rows.len() {
            return Err(Error::Dimension(format!(
                "matrix has {} sources, distribution {}",
                self.rows.len(),
                p_from.len()
            )));
        }
        if let Some(s) = &self.source {
            if s != p_from {
                return Err(Error::Invalid(
                    "matrix was built against a different source distribution".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalResiduals {
    pub max_row_residual: f64,
    pub max_pushforward_residual: f64,
}

impl MarginalResiduals {
    pub fn max(&self) -> f64 {
        self.max_row_residual.max(self.max_pushforward_residual)
    }
}

fn check_normalized(p: &ProbabilityDistribution) -> Result<()> {
    let s = p.total_mass();
    if (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized(s));
    }
    Ok(())
}

/// Joint masses `J(x, x')` of the ascending sweep, per source row.
///
/// Each step moves `min(A(x), B(x'))`, which zeroes one side exactly, so a
/// target whose capacity is used up is never revisited and the double loop
/// collapses to a single pass with a moving target cursor. Any leftover
/// source mass (at most the rounding gap between the two totals) is added to
/// the last current of its row.
pub(crate) fn monotone_joint(p_from: &[f64], p_to: &[f64]) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut a = p_from.to_vec();
    let mut b = p_to.to_vec();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); a.len()];
    let mut k = 0;
    for (i, row) in rows.iter_mut().enumerate() {
        while a[i] > 0.0 && k < b.len() {
            if b[k] > 0.0 {
                let j = a[i].min(b[k]);
                a[i] -= j;
                b[k] -= j;
                row.push((k, j));
            }
            if b[k] <= 0.0 {
                k += 1;
            }
        }
    }
    let left_a = compensated_sum(a.iter().copied());
    let left_b = compensated_sum(b.iter().copied());
    let residual = left_a.max(left_b);
    if residual > MASS_BALANCE_TOL {
        return Err(Error::MassBalance(residual));
    }
    let last_target = p_to.iter().rposition(|&w| w > 0.0);
    for (i, rest) in a.iter().enumerate() {
        if *rest > 0.0 {
            match rows[i].last_mut() {
                Some(last) => last.1 += rest,
                None => match last_target {
                    Some(t) => rows[i].push((t, *rest)),
                    None => return Err(Error::MassBalance(*rest)),
                },
            }
        }
    }
    Ok(rows)
}

/// The minimal stochastic matrix between two line distributions.
///
/// Both loops run in ascending site order: `J(x′, x) = min(A(x), B(x′))` is
/// moved whenever both remainders are positive and `P(x→x′) = J / p(x)`.
/// Rows of zero-probability sources stay empty.
pub fn minimal_stochastic_matrix(
    p_from: &ProbabilityDistribution,
    p_to: &ProbabilityDistribution,
) -> Result<StochasticMatrix> {
    check_normalized(p_from)?;
    check_normalized(p_to)?;
    let joint = monotone_joint(p_from.weights(), p_to.weights())?;
    let rows = joint
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let w = p_from.weight(i);
            row.into_iter().map(|(k, j)| (k, (j / w).min(1.0))).collect()
        })
        .collect();
    Ok(StochasticMatrix {
        n_to: p_to.len(),
        rows,
        source: Some(p_from.clone()),
    })
}

/// Baseline in which every row equals the target distribution: jumps ignore
/// where the particle is and only the global mass is conserved.
pub fn global_jump_matrix(p_to: &ProbabilityDistribution, source_sites: usize) -> Result<StochasticMatrix> {
    check_normalized(p_to)?;
    let row: Vec<(usize, f64)> = p_to
        .weights()
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, w)| w > 0.0)
        .collect();
    Ok(StochasticMatrix {
        n_to: p_to.len(),
        rows: vec![row; source_sites],
        source: None,
    })
}

/// Ensemble-averaged action `Σ_{q′}Σ_q P(q→q′)·p(q)·S(q′, q)`.
pub fn average_action(matrix: &StochasticMatrix, p_from: &ProbabilityDistribution, cost: &CostMatrix) -> Result<f64> {
    if cost.n_from() != matrix.n_from() || cost.n_to() != matrix.n_to() {
        return Err(Error::Dimension(format!(
            "matrix {}x{} vs cost {}x{}",
            matrix.n_from(),
            matrix.n_to(),
            cost.n_from(),
            cost.n_to()
        )));
    }
    matrix.check_source(p_from)?;
    let mut mass = Vec::with_capacity(matrix.nnz());
    let mut action = Vec::with_capacity(matrix.nnz());
    for (i, k, p) in matrix.triplets() {
        let total = p * p_from.weight(i);
        if total == 0.0 {
            continue;
        }
        mass.push(total);
        action.push(total * cost.excess(i, k));
    }
    let offset = cost.offset();
    let base = if offset == 0.0 {
        0.0
    } else {
        offset * compensated_sum(mass)
    };
    Ok(base + compensated_sum(action))
}

/// Average action of [`global_jump_matrix`] without building it:
/// `Σ_q Σ_{q′} p(q)·p′(q′)·S(q′, q)`.
pub fn global_jump_action(
    p_from: &ProbabilityDistribution,
    p_to: &ProbabilityDistribution,
    cost: &CostMatrix,
) -> Result<f64> {
    if cost.n_from() != p_from.len() || cost.n_to() != p_to.len() {
        return Err(Error::Dimension(format!(
            "cost {}x{} vs distributions {}x{}",
            cost.n_from(),
            cost.n_to(),
            p_from.len(),
            p_to.len()
        )));
    }
    check_normalized(p_to)?;
    let targets: Vec<(usize, f64)> = p_to.support().map(|k| (k, p_to.weight(k))).collect();
    let rows = p_from.support().map(|i| {
        let w = p_from.weight(i);
        w * compensated_sum(targets.iter().map(|&(k, q)| q * cost.excess(i, k)))
    });
    let excess = compensated_sum(rows);
    let offset = cost.offset();
    Ok(if offset == 0.0 {
        excess
    } else {
        offset * p_from.total_mass() + excess
    })
}

/// Dense joint distribution `γ(i, k)` over source × target sites.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coupling {
    n_from: usize,
    n_to: usize,
    mass: Vec<f64>,
}

impl Coupling {
    pub fn n_from(&self) -> usize {
        self.n_from
    }

    pub fn n_to(&self) -> usize {
        self.n_to
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.mass[i * self.n_to + k]
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Cost `Σ γ(i,k)·S(i,k)` of this coupling.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        let offset = cost.offset();
        let mut terms = Vec::new();
        for i in 0..self.n_from {
            for k in 0..self.n_to {
                let g = self.get(i, k);
                if g > 0.0 {
                    terms.push(g * cost.excess(i, k));
                }
            }
        }
        offset * compensated_sum(self.mass.iter().copied()) + compensated_sum(terms)
    }

    /// Converts to a stochastic matrix against `p_from`.
    pub fn to_matrix(&self, p_from: &ProbabilityDistribution) -> Result<StochasticMatrix> {
        let rows = (0..self.n_from)
            .map(|i| {
                let w = p_from.weight(i);
                (0..self.n_to)
                    .filter_map(|k| {
                        let g = self.get(i, k);
                        (g > 0.0 && w > 0.0).then(|| (k, (g / w).min(1.0)))
                    })
                    .collect()
            })
            .collect();
        StochasticMatrix::from_rows(self.n_to, rows, Some(p_from.clone()))
    }
}

fn check_oracle_input(
    p_from: &ProbabilityDistribution,
    p_to: &ProbabilityDistribution,
    cost: &CostMatrix,
) -> Result<()> {
    let (n, m) = (p_from.len(), p_to.len());
    if n * m > ORACLE_MAX_CELLS {
        return Err(Error::OracleTooLarge { n_from: n, n_to: m });
    }
    if cost.n_from() != n || cost.n_to() != m {
        return Err(Error::Dimension(format!(
            "cost {}x{} vs distributions {n}x{m}",
            cost.n_from(),
            cost.n_to()
        )));
    }
    check_normalized(p_from)?;
    check_normalized(p_to)
}

/// Exact minimum of the average action over every coupling with the given
/// marginals, solved as a linear program (two-phase simplex, Bland's rule).
///
/// Desk-scale only: at most [`ORACLE_MAX_CELLS`] source × target cells.
pub fn brute_force_optimal(
    p_from: &ProbabilityDistribution,
    p_to: &ProbabilityDistribution,
    cost: &CostMatrix,
) -> Result<(Coupling, f64)> {
    check_oracle_input(p_from, p_to, cost)?;
    let (n, m) = (p_from.len(), p_to.len());
    let excess: Vec<f64> = (0..n * m).map(|c| cost.excess(c / m, c % m)).collect();
    let scale = excess
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let objective: Vec<Option<f64>> = excess.iter().map(|&v| v.is_finite().then_some(v / scale)).collect();
    let x = simplex::solve_transport(p_from.weights(), p_to.weights(), &objective)?;
    let coupling = Coupling {
        n_from: n,
        n_to: m,
        mass: x,
    };
    let value = coupling.cost(cost);
    Ok((coupling, value))
}

/// Exact optimum by enumerating every basic feasible solution (spanning-tree
/// bases) of the transport polytope. Exponential; for cross-checking the
/// simplex oracle on instances up to 4 × 4.
pub fn vertex_enumeration_optimal(
    p_from: &ProbabilityDistribution,
    p_to: &ProbabilityDistribution,
    cost: &CostMatrix,
) -> Result<(Coupling, f64)> {
    check_oracle_input(p_from, p_to, cost)?;
    let (n, m) = (p_from.len(), p_to.len());
    if n * m > 16 {
        return Err(Error::OracleTooLarge { n_from: n, n_to: m });
    }
    let cells = n * m;
    let basis_size = n + m - 1;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut chosen = Vec::with_capacity(basis_size);
    enumerate_subsets(cells, basis_size, 0, &mut chosen, &mut |subset| {
        if let Some(x) = tree_solution(subset, p_from.weights(), p_to.weights(), m) {
            let coupling = Coupling {
                n_from: n,
                n_to: m,
                mass: x.clone(),
            };
            let v = coupling.cost(cost);
            if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((x, v));
            }
        }
    });
    let (mass, value) = best.ok_or_else(|| Error::Oracle("no feasible vertex".into()))?;
    Ok((
        Coupling {
            n_from: n,
            n_to: m,
            mass,
        },
        value,
    ))
}

fn enumerate_subsets(n: usize, k: usize, start: usize, chosen: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    for c in start..n {
        if n - c < k - chosen.len() {
            break;
        }
        chosen.push(c);
        enumerate_subsets(n, k, c + 1, chosen, visit);
        chosen.pop();
    }
}

/// Solves the marginal equations on a candidate basis by peeling leaves of
/// the bipartite row/column graph. `None` if the cells do not form a
/// spanning tree or the solution is negative.
fn tree_solution(cells: &[usize], p: &[f64], q: &[f64], m: usize) -> Option<Vec<f64>> {
    let n = p.len();
    let mut x = vec![0.0; n * m];
    let mut row_rest = p.to_vec();
    let mut col_rest = q.to_vec();
    let mut alive: Vec<usize> = cells.to_vec();
    let mut row_deg = vec![0usize; n];
    let mut col_deg = vec![0usize; m];
    for &c in &alive {
        row_deg[c / m] += 1;
        col_deg[c % m] += 1;
    }
    if row_deg.contains(&0) || col_deg.contains(&0) {
        return None;
    }
    while !alive.is_empty() {
        let pos = alive.iter().position(|&c| row_deg[c / m] == 1 || col_deg[c % m] == 1)?;
        let c = alive.swap_remove(pos);
        let (i, k) = (c / m, c % m);
        let v = if row_deg[i] == 1 { row_rest[i] } else { col_rest[k] };
        x[c] = v;
        row_rest[i] -= v;
        col_rest[k] -= v;
        row_deg[i] -= 1;
        col_deg[k] -= 1;
    }
    let tol = 1e-12;
    if x.iter().any(|&v| v < -tol) || row_rest.iter().any(|r| r.abs() > tol) || col_rest.iter().any(|r| r.abs() > tol) {
        return None;
    }
    Some(x.into_iter().map(|v| v.max(0.0)).collect())
}

mod simplex {
    use crate::error::{Error, Result};

    const PIVOT_TOL: f64 = 1e-12;
    const MAX_PIVOTS: usize = 100_000;

    struct Tableau {
        // rows: constraints, last column is the right-hand side
        a: Vec<Vec<f64>>,
        basis: Vec<usize>,
        n_cols: usize,
    }

    impl Tableau {
        fn pivot(&mut self, r: usize, c: usize) {
            let pv = self.a[r][c];
            for v in self.a[r].iter_mut() {
                *v /= pv;
            }
            let pivot_row = self.a[r].clone();
            for (i, row) in self.a.iter_mut().enumerate() {
                if i == r {
                    continue;
                }
                let f = row[c];
                if f != 0.0 {
                    for (v, p) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                    row[c] = 0.0;
                }
            }
            self.basis[r] = c;
        }

        /// Minimizes `cost · x` over the current feasible basis; `allowed`
        /// masks columns that may enter.
        fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
            let rhs = self.n_cols;
            for _ in 0..MAX_PIVOTS {
                // reduced costs c_j − c_B B⁻¹ A_j, entering column by Bland's rule
                let entering = (0..self.n_cols).find(|&j| {
                    if !allowed[j] || self.basis.contains(&j) {
                        return false;
                    }
                    let mut rc = cost[j];
                    for (row, &b) in self.a.iter().zip(&self.basis) {
                        rc -= cost[b] * row[j];
                    }
                    rc < -1e-11
                });
                let Some(c) = entering else {
                    return Ok(());
                };
                let mut best: Option<(usize, f64)> = None;
                for (r, row) in self.a.iter().enumerate() {
                    if row[c] > PIVOT_TOL {
                        let ratio = row[rhs] / row[c];
                        let better = match best {
                            None => true,
                            Some((br, bv)) => {
                                ratio < bv - 1e-15 || (ratio <= bv + 1e-15 && self.basis[r] < self.basis[br])
                            }
                        };
                        if better {
                            best = Some((r, ratio));
                        }
                    }
                }
                let Some((r, _)) = best else {
                    return Err(Error::Oracle("unbounded program".into()));
                };
                self.pivot(r, c);
            }
            Err(Error::Oracle("pivot limit reached".into()))
        }
    }

    /// Minimizes `Σ c_ik x_ik` subject to row sums `p`, column sums `q`,
    /// `x ≥ 0`. Cells with `None` cost are forbidden.
    pub(super) fn solve_transport(p: &[f64], q: &[f64], cost: &[Option<f64>]) -> Result<Vec<f64>> {
        let (n, m) = (p.len(), q.len());
        let n_vars = n * m;
        let n_rows = n + m;
        let n_cols = n_vars + n_rows; // structural + one artificial per row
        let mut a = vec![vec![0.0; n_cols + 1]; n_rows];
        for i in 0..n {
            for k in 0..m {
                a[i][i * m + k] = 1.0;
                a[n + k][i * m + k] = 1.0;
            }
        }
        for (r, row) in a.iter_mut().enumerate() {
            row[n_vars + r] = 1.0;
            row[n_cols] = if r < n { p[r] } else { q[r - n] };
        }
        let mut t = Tableau {
            a,
            basis: (n_vars..n_cols).collect(),
            n_cols,
        };

        // phase one: drive the artificials to zero
        let mut phase1 = vec![0.0; n_cols];
        phase1[n_vars..].iter_mut().for_each(|c| *c = 1.0);
        let mut allowed: Vec<bool> = (0..n_cols).map(|j| j >= n_vars || cost[j].is_some()).collect();
        t.optimize(&phase1, &allowed)?;
        let infeasibility: f64 = t
            .basis
            .iter()
            .zip(&t.a)
            .filter(|(&b, _)| b >= n_vars)
            .map(|(_, row)| row[n_cols])
            .sum();
        if infeasibility > 1e-9 {
            return Err(Error::Oracle(format!("infeasible marginals ({infeasibility:e})")));
        }
        // pivot remaining (zero-level) artificials out where possible
        for r in 0..n_rows {
            if t.basis[r] >= n_vars {
                if let Some(c) = (0..n_vars).find(|&j| allowed[j] && !t.basis.contains(&j) && t.a[r][j].abs() > 1e-9) {
                    t.pivot(r, c);
                }
            }
        }
        allowed[n_vars..].iter_mut().for_each(|v| *v = false);

        // phase two
        let mut phase2 = vec![0.0; n_cols];
        for (j, c) in cost.iter().enumerate() {
            phase2[j] = c.unwrap_or(0.0);
        }
        t.optimize(&phase2, &allowed)?;

        let mut x = vec![0.0; n_vars];
        for (r, &b) in t.basis.iter().enumerate() {
            if b < n_vars {
                x[b] = t.a[r][n_cols].max(0.0);
            }
        }
        Ok(x)
    }
}

/// Order-`p` Wasserstein distance between two line distributions with
/// ground distance `|x′ − x|`, evaluated on the monotone coupling (optimal in
/// 1D for every `p ≥ 1`). The grids may differ.
pub fn wasserstein(p_from: &ProbabilityDistribution, p_to: &ProbabilityDistribution, order: f64) -> Result<f64> {
    if !order.is_finite() || order < 1.0 {
        return Err(Error::InvalidOrder(order));
    }
    check_normalized(p_from)?;
    check_normalized(p_to)?;
    let joint = monotone_joint(p_from.weights(), p_to.weights())?;
    let (gs, gt) = (p_from.grid(), p_to.grid());
    let terms = joint.iter().enumerate().flat_map(|(i, row)| {
        let x = gs.position(i);
        row.iter().map(move |&(k, j)| {
            let d = (gt.position(k) - x).abs();
            if order == 1.0 {
                j * d
            } else if order == 2.0 {
                j * d * d
            } else {
                j * d.powf(order)
            }
        })
    });
    let total = compensated_sum(terms);
    Ok(if order == 1.0 {
        total
    } else if order == 2.0 {
        total.sqrt()
    } else {
        total.powf(1.0 / order)
    })
}

/// Mean-square-displacement summary of one transport step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportReport {
    /// Quadratic-cost average action `S̄′` (m²).
    pub average_action: f64,
    /// `Σ_q p(q)·Δ²(q)` (m²).
    pub total_msd: f64,
    /// `Δ²(q) = Σ_{q′} P(q→q′)·|q′ − q|²` per source site (m²).
    pub per_site_msd: Vec<f64>,
    pub nonzero_entries: usize,
    /// Worst relative gap in `Δ²(q) = (q − ⟨q′⟩)² + Var(q′|q)`.
    pub max_decomposition_residual: f64,
}

const DECOMPOSITION_TOL: f64 = 1e-12;

pub fn msd_report(
    matrix: &StochasticMatrix,
    p_from: &ProbabilityDistribution,
    source: &Grid1D,
    target: &Grid1D,
) -> Result<TransportReport> {
    if source.len() != matrix.n_from() || target.len() != matrix.n_to() {
        return Err(Error::Dimension(format!(
            "matrix {}x{} vs grids {}x{}",
            matrix.n_from(),
            matrix.n_to(),
            source.len(),
            target.len()
        )));
    }
    matrix.check_source(p_from)?;
    let mut per_site = Vec::with_capacity(matrix.n_from());
    let mut worst = 0.0_f64;
    for (i, row) in matrix.rows().iter().enumerate() {
        let x = source.position(i);
        let msd = compensated_sum(row.iter().map(|&(k, p)| {
            let d = target.position(k) - x;
            p * d * d
        }));
        if !row.is_empty() {
            let mass = compensated_sum(row.iter().map(|&(_, p)| p));
            let mean = compensated_sum(row.iter().map(|&(k, p)| p * target.position(k))) / mass;
            let var = compensated_sum(row.iter().map(|&(k, p)| {
                let d = target.position(k) - mean;
                p * d * d
            }));
            let bias = (x - mean) * (x - mean) * mass;
            let rhs = bias + var;
            // relative to the terms involved; absolute floor at the squared
            // resolution of the coordinates
            let floor = (f64::EPSILON * x.abs().max(mean.abs())).powi(2) * 16.0;
            let scale = msd.max(rhs).max(floor);
            let gap = ((msd - rhs).abs() - floor).max(0.0) / scale;
            worst = worst.max(gap);
        }
        per_site.push(msd);
    }
    if worst > DECOMPOSITION_TOL {
        return Err(Error::Invalid(format!(
            "mean-square displacement decomposition off by {worst:e}"
        )));
    }
    let total = compensated_sum(per_site.iter().enumerate().map(|(i, d)| p_from.weight(i) * d));
    Ok(TransportReport {
        average_action: total,
        total_msd: total,
        per_site_msd: per_site,
        nonzero_entries: matrix.nnz(),
        max_decomposition_residual: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::normalize;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> Arc<Grid1D> {
        Arc::new(Grid1D::new(0.0, (n - 1) as f64, n).unwrap())
    }

    fn dist(w: &[f64]) -> ProbabilityDistribution {
        normalize(w, unit_grid(w.len())).unwrap()
    }

    /// The double loop exactly as written, for comparison with the sweep.
    fn literal_double_loop(p: &[f64], q: &[f64]) -> Vec<f64> {
        let (n, m) = (p.len(), q.len());
        let mut a = p.to_vec();
        let mut b = q.to_vec();
        let mut out = vec![0.0; n * m];
        for x in 0..n {
            for xp in 0..m {
                if a[x] * b[xp] > 0.0 {
                    let j = a[x].min(b[xp]);
                    a[x] -= j;
                    b[xp] -= j;
                    out[x * m + xp] = j / p[x];
                }
            }
        }
        out
    }

    fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        loop {
            let w: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen::<f64>() })
                .collect();
            if w.iter().any(|&x| x > 0.0) {
                return w;
            }
        }
    }

    #[test]
    fn forced_single_transition() {
        let m = minimal_stochastic_matrix(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert!(m.row(1).is_empty());
    }

    #[test]
    fn equal_marginals_give_identity() {
        let p = dist(&[0.5, 0.5]);
        let m = minimal_stochastic_matrix(&p, &p).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(1, 1), 1.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn hand_traced_two_by_two() {
        let p = dist(&[0.7, 0.3]);
        let q = dist(&[0.4, 0.6]);
        let m = minimal_stochastic_matrix(&p, &q).unwrap();
        assert_abs_diff_eq!(m.get(0, 0), 4.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.get(0, 1), 3.0 / 7.0, epsilon = 1e-15);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(1, 1), 1.0);
        let cost = quadratic_cost(p.grid().clone(), q.grid().clone());
        let s = average_action(&m, &p, &cost).unwrap();
        assert_abs_diff_eq!(s, 0.3, epsilon = 1e-15);
        let (_, best) = brute_force_optimal(&p, &q, &cost).unwrap();
        assert_abs_diff_eq!(best, s, epsilon = 1e-12);
        let report = msd_report(&m, &p, p.grid(), q.grid()).unwrap();
        assert_abs_diff_eq!(report.per_site_msd[0], 3.0 / 7.0, epsilon = 1e-15);
        assert_eq!(report.per_site_msd[1], 0.0);
        assert_abs_diff_eq!(report.total_msd, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn sweep_matches_literal_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(2..30);
            let m = rng.gen_range(2..30);
            let p = normalize(&random_weights(&mut rng, n), unit_grid(n)).unwrap();
            let q = normalize(&random_weights(&mut rng, m), unit_grid(m)).unwrap();
            let fast = minimal_stochastic_matrix(&p, &q).unwrap();
            let slow = literal_double_loop(p.weights(), q.weights());
            for i in 0..n {
                let last = fast.row(i).last().map(|e| e.0);
                for k in 0..m {
                    let f = fast.get(i, k);
                    let s = slow[i * m + k];
                    if Some(k) == last {
                        // the top-up only touches the final current of a row
                        assert!((f - s).abs() <= 1e-12, "({i},{k}) {f} vs {s}");
                    } else {
                        assert_eq!(f.to_bits(), s.to_bits(), "({i},{k})");
                    }
                }
            }
        }
    }

    #[test]
    fn quadratic_cost_entries() {
        let g = unit_grid(4);
        let c = quadratic_cost(g.clone(), g.clone());
        for i in 0..4 {
            assert_eq!(c.entry(i, i), 0.0);
            for k in 0..4 {
                assert_eq!(c.entry(i, k), c.entry(k, i));
            }
        }
        let a = Arc::new(Grid1D::new(0.0, 1e-6, 2).unwrap());
        let b = Arc::new(Grid1D::new(2e-6, 3e-6, 2).unwrap());
        let c = quadratic_cost(a, b);
        assert_abs_diff_eq!(c.entry(0, 0), 4e-12, epsilon = 1e-27);
    }

    #[test]
    fn relativistic_cost_limits() {
        let g = Arc::new(Grid1D::new(0.0, 1.0, 11).unwrap());
        let c = relativistic_cost(g.clone(), g.clone(), 1.0, 1e-9).unwrap();
        // cτ ≈ 0.3 m: a jump of 0.5 m leaves the light cone
        assert!(c.entry(0, 5).is_infinite());
        let rest = SPEED_OF_LIGHT * SPEED_OF_LIGHT * 1e-9;
        assert_eq!(c.entry(3, 3), -rest);
        // small displacements reproduce the quadratic form m Δx² / 2τ
        let c = relativistic_cost(g.clone(), g.clone(), 1.0, 1.0).unwrap();
        assert!((c.excess(0, 1) / (0.01 / 2.0) - 1.0).abs() < 1e-12);
        assert!(relativistic_cost(g.clone(), g, 0.0, 1.0).is_err());
    }

    #[test]
    fn global_jump_rows_copy_target() {
        let q = dist(&[0.0, 1.0]);
        let m = global_jump_matrix(&q, 2).unwrap();
        assert_eq!(m.row(0), &[(1, 1.0)]);
        assert_eq!(m.row(1), &[(1, 1.0)]);
        let p = dist(&[0.3, 0.2, 0.5]);
        let q = dist(&[0.1, 0.6, 0.3]);
        let g = global_jump_matrix(&q, 3).unwrap();
        assert_eq!(g.pushforward(&p).unwrap(), q.weights().to_vec());
    }

    #[test]
    fn global_jump_action_matches_matrix_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let p = normalize(&random_weights(&mut rng, 7), unit_grid(7)).unwrap();
            let q = normalize(&random_weights(&mut rng, 7), unit_grid(7)).unwrap();
            let c = quadratic_cost(p.grid().clone(), q.grid().clone());
            let m = global_jump_matrix(&q, 7).unwrap();
            let a = average_action(&m, &p, &c).unwrap();
            let b = global_jump_action(&p, &q, &c).unwrap();
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
            let best = average_action(&minimal_stochastic_matrix(&p, &q).unwrap(), &p, &c).unwrap();
            assert!(b >= best);
        }
    }

    #[test]
    fn identity_has_zero_action() {
        let p = dist(&[0.2, 0.3, 0.5]);
        let m = minimal_stochastic_matrix(&p, &p).unwrap();
        let c = quadratic_cost(p.grid().clone(), p.grid().clone());
        assert_eq!(average_action(&m, &p, &c).unwrap(), 0.0);
        let r = msd_report(&m, &p, p.grid(), p.grid()).unwrap();
        assert!(r.per_site_msd.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn average_action_rejects_mismatch() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.2, 0.3, 0.5]);
        let m = minimal_stochastic_matrix(&p, &q).unwrap();
        let c = quadratic_cost(p.grid().clone(), p.grid().clone());
        assert!(matches!(average_action(&m, &p, &c), Err(Error::Dimension(_))));
        let other = dist(&[0.1, 0.9]);
        let c = quadratic_cost(p.grid().clone(), q.grid().clone());
        assert!(average_action(&m, &other, &c).is_err());
        assert!(msd_report(&m, &p, p.grid(), p.grid()).is_err());
    }

    #[test]
    fn oracle_singleton_and_guard() {
        let p = normalize(&[1.0, 0.0], unit_grid(2)).unwrap();
        let c = quadratic_cost(p.grid().clone(), p.grid().clone());
        let (_, v) = brute_force_optimal(&p, &p, &c).unwrap();
        assert_eq!(v, 0.0);
        let big = dist(&[1.0; 9]);
        let c = quadratic_cost(big.grid().clone(), big.grid().clone());
        assert!(matches!(
            brute_force_optimal(&big, &big, &c),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_agrees_with_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..150 {
            let n = rng.gen_range(2..=4);
            let m = rng.gen_range(2..=4);
            let p = normalize(&random_weights(&mut rng, n), unit_grid(n)).unwrap();
            let q = normalize(&random_weights(&mut rng, m), unit_grid(m)).unwrap();
            // arbitrary dense costs so neither route can lean on convexity
            let entries: Vec<f64> = (0..n * m).map(|_| rng.gen_range(0.0..5.0)).collect();
            let c = CostMatrix::dense(p.grid().clone(), q.grid().clone(), entries).unwrap();
            let (x, a) = brute_force_optimal(&p, &q, &c).unwrap();
            let (_, b) = vertex_enumeration_optimal(&p, &q, &c).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            for i in 0..n {
                let s: f64 = (0..m).map(|k| x.get(i, k)).sum();
                assert!((s - p.weight(i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_beats_random_feasible_couplings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = normalize(&random_weights(&mut rng, 5), unit_grid(5)).unwrap();
            let q = normalize(&random_weights(&mut rng, 5), unit_grid(5)).unwrap();
            let c = quadratic_cost(p.grid().clone(), q.grid().clone());
            let (_, best) = brute_force_optimal(&p, &q, &c).unwrap();
            for _ in 0..20 {
                // random feasible coupling: sweep over a random permutation of targets
                let mut order: Vec<usize> = (0..5).collect();
                for i in (1..5).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                let permuted: Vec<f64> = order.iter().map(|&k| q.weight(k)).collect();
                let joint = monotone_joint(p.weights(), &permuted).unwrap();
                let mut v = 0.0;
                for (i, row) in joint.iter().enumerate() {
                    for &(kk, j) in row {
                        v += j * c.entry(i, order[kk]);
                    }
                }
                assert!(best <= v + 1e-12);
            }
        }
    }

    #[test]
    fn wasserstein_examples() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(wasserstein(&p, &p, 1.0).unwrap(), 0.0);
        assert_eq!(wasserstein(&p, &p, 2.0).unwrap(), 0.0);
        let a = normalize(&[1.0, 0.0, 0.0, 0.0], unit_grid(4)).unwrap();
        let b = normalize(&[0.0, 0.0, 0.0, 1.0], unit_grid(4)).unwrap();
        for order in [1.0, 1.5, 2.0, 3.0] {
            assert_abs_diff_eq!(wasserstein(&a, &b, order).unwrap(), 3.0, epsilon = 1e-14);
        }
        assert!(matches!(wasserstein(&a, &b, 0.5), Err(Error::InvalidOrder(_))));
        assert!(wasserstein(&a, &b, f64::NAN).is_err());
    }

    #[test]
    fn mass_balance_violation_is_reported() {
        let joint = monotone_joint(&[0.5, 0.5], &[0.5, 0.4]);
        assert!(matches!(joint, Err(Error::MassBalance(_))));
    }

    #[test]
    fn triplet_csv() {
        let p = dist(&[0.7, 0.3]);
        let q = dist(&[0.4, 0.6]);
        let m = minimal_stochastic_matrix(&p, &q).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf, 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("3,0,0,"));
        assert!(text.ends_with("3,1,1,1e0\n"));
    }

    proptest! {
        #[test]
        fn decomposition_holds_on_random_matrices(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 4)
        ) {
            let rows: Vec<Vec<(usize, f64)>> = rows
                .into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    if s == 0.0 { return vec![(0, 1.0)]; }
                    r.into_iter().enumerate().map(|(k, v)| (k, v / s)).filter(|x| x.1 > 0.0).collect()
                })
                .collect();
            let src = unit_grid(4);
            let tgt = Arc::new(Grid1D::new(-1.0, 3.0, 5).unwrap());
            let p = normalize(&[0.1, 0.2, 0.3, 0.4], src.clone()).unwrap();
            let m = StochasticMatrix::from_rows(5, rows, None).unwrap();
            let r = msd_report(&m, &p, &src, &tgt).unwrap();
            prop_assert!(r.max_decomposition_residual <= 1e-12);
            let direct: f64 = (0..4).map(|i| p.weight(i) * r.per_site_msd[i]).sum();
            prop_assert!((direct - r.total_msd).abs() <= 1e-12);
        }
    }
}
