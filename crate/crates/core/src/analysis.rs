//! Structural checks on computed chains (crossing transitions, transition
//! nets, backward-reachable regions) and ensemble statistics.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Grid1D, ProbabilityDistribution};
use crate::markov::{MarkovChain, TrajectoryEnsemble};
use crate::transport::{CostMatrix, StochasticMatrix};

/// Total transition probabilities at or below this are treated as zero.
pub const ZERO_PROBABILITY: f64 = 1e-15;

/// Two transitions `a → b′` and `b → a′` where each source would rather
/// take the other's target: `S(a′,a) < S(b′,a)` and `S(b′,b) < S(a′,b)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingPair {
    pub step: usize,
    pub a: usize,
    pub b: usize,
    pub a_target: usize,
    pub b_target: usize,
    /// `S(a′,a)`, `S(b′,a)`, `S(b′,b)`, `S(a′,b)`.
    pub actions: [f64; 4],
    /// Total probability of `a → b′`.
    pub total_a_to_b_target: f64,
    /// Total probability of `b → a′`.
    pub total_b_to_a_target: f64,
}

impl CrossingPair {
    /// Mass moved by [`uncross`].
    pub fn transfer(&self) -> f64 {
        self.total_a_to_b_target.min(self.total_b_to_a_target)
    }

    /// `C·(S(a′,a) − S(b′,a) + S(b′,b) − S(a′,b))`, negative by construction.
    pub fn action_change(&self) -> f64 {
        let [saa, sba, sbb, sab] = self.actions;
        self.transfer() * ((saa - sba) + (sbb - sab))
    }
}

struct Edge {
    source: usize,
    target: usize,
    total: f64,
}

fn edges(matrix: &StochasticMatrix, p_from: &ProbabilityDistribution) -> Vec<Edge> {
    matrix
        .triplets()
        .filter_map(|(i, k, p)| {
            let total = p * p_from.weight(i);
            (total > ZERO_PROBABILITY).then_some(Edge {
                source: i,
                target: k,
                total,
            })
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PairRule {
    // both one-sided inequalities
    Crossing,
    // the exchange lowers the summed action
    Improving,
}

fn pair_of(rule: PairRule, step: usize, e1: &Edge, e2: &Edge, cost: &CostMatrix) -> Option<CrossingPair> {
    // e1 = a → b′, e2 = b → a′
    let (a, bt, b, at) = (e1.source, e1.target, e2.source, e2.target);
    if a == b || at == bt {
        return None;
    }
    let saa = cost.entry(a, at);
    let sba = cost.entry(a, bt);
    let sbb = cost.entry(b, bt);
    let sab = cost.entry(b, at);
    let hit = match rule {
        PairRule::Crossing => saa < sba && sbb < sab,
        PairRule::Improving => {
            // compare excesses so constant offsets cannot swamp the difference
            let (xaa, xba, xbb, xab) = (
                cost.excess(a, at),
                cost.excess(a, bt),
                cost.excess(b, bt),
                cost.excess(b, at),
            );
            xaa + xbb < xba + xab
        }
    };
    hit.then_some(CrossingPair {
        step,
        a,
        b,
        a_target: at,
        b_target: bt,
        actions: [saa, sba, sbb, sab],
        total_a_to_b_target: e1.total,
        total_b_to_a_target: e2.total,
    })
}

/// Every crossing pair among the transitions with nonzero total probability,
/// reported once with `a < b`.
pub fn find_crossing_pairs(
    matrix: &StochasticMatrix,
    p_from: &ProbabilityDistribution,
    cost: &CostMatrix,
    step: usize,
) -> Result<Vec<CrossingPair>> {
    scan_pairs(PairRule::Crossing, matrix, p_from, cost, step, usize::MAX)
}

/// Like [`find_crossing_pairs`], stopping after `limit` pairs.
pub fn find_crossing_pairs_limited(
    matrix: &StochasticMatrix,
    p_from: &ProbabilityDistribution,
    cost: &CostMatrix,
    step: usize,
    limit: usize,
) -> Result<Vec<CrossingPair>> {
    scan_pairs(PairRule::Crossing, matrix, p_from, cost, step, limit)
}

/// Pairs `a → b′`, `b → a′` for which exchanging the targets lowers the
/// action, `S(a′,a) + S(b′,b) < S(b′,a) + S(a′,b)`.
///
/// Every crossing pair is improving, but not conversely: sources 0 and 1
/// sending 0 → 3 and 1 → 2 under the quadratic cost cross in neither
/// labelling, yet the exchange lowers the action from 10 to 8. A matrix free
/// of improving pairs is optimal for convex costs in one dimension; a matrix
/// free of crossing pairs need not be.
pub fn find_improving_pairs(
    matrix: &StochasticMatrix,
    p_from: &ProbabilityDistribution,
    cost: &CostMatrix,
    step: usize,
    limit: usize,
) -> Result<Vec<CrossingPair>> {
    scan_pairs(PairRule::Improving, matrix, p_from, cost, step, limit)
}

// For costs that are convex, strictly increasing functions of the jump
// length, both rules need the two sources and the two targets in opposite
// order, so only edge pairs that are out of order are tested. Monotone
// matrices are certified in linear time this way. Other costs get the full
// quadratic scan.
fn scan_pairs(
    rule: PairRule,
    matrix: &StochasticMatrix,
    p_from: &ProbabilityDistribution,
    cost: &CostMatrix,
    step: usize,
    limit: usize,
) -> Result<Vec<CrossingPair>> {
    if matrix.n_from() != p_from.len() || cost.n_from() != matrix.n_from() || cost.n_to() != matrix.n_to() {
        return Err(Error::Dimension(format!(
            "matrix {}x{}, distribution {}, cost {}x{}",
            matrix.n_from(),
            matrix.n_to(),
            p_from.len(),
            cost.n_from(),
            cost.n_to()
        )));
    }
    let edges = edges(matrix, p_from);
    let mut out = Vec::new();
    if limit == 0 {
        return Ok(out);
    }
    let mut push = |pair: CrossingPair| {
        out.push(pair);
        out.len() >= limit
    };
    // edges are sorted by source, then target
    if cost.depends_on_distance() {
        let mut max_target_before = None::<usize>;
        let mut row_start = 0;
        for (idx, e2) in edges.iter().enumerate() {
            if idx > 0 && edges[idx - 1].source != e2.source {
                let prev = edges[idx - 1].target.max(max_target_before.unwrap_or(0));
                max_target_before = Some(prev);
                row_start = idx;
            }
            if max_target_before.is_none_or(|m| m <= e2.target) {
                continue;
            }
            for e1 in &edges[..row_start] {
                if e1.target > e2.target {
                    if let Some(pair) = pair_of(rule, step, e1, e2, cost) {
                        if push(pair) {
                            return Ok(out);
                        }
                    }
                }
            }
        }
    } else {
        for (idx, e2) in edges.iter().enumerate() {
            for e1 in edges[..idx].iter().filter(|e1| e1.source < e2.source) {
                if let Some(pair) = pair_of(rule, step, e1, e2, cost) {
                    if push(pair) {
                        return Ok(out);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Moves `C = min(ℙ(a→b′)ℙ(a), ℙ(b→a′)ℙ(b))` of total probability from the
/// crossing transitions onto `a → a′` and `b → b′`. Both marginals are kept
/// and at least one of the crossing transitions vanishes.
pub fn uncross(matrix: &StochasticMatrix, pair: &CrossingPair) -> Result<StochasticMatrix> {
    let source = matrix
        .source()
        .ok_or_else(|| Error::Invalid("uncrossing needs the source distribution".into()))?;
    let (pa, pb) = (source.weight(pair.a), source.weight(pair.b));
    let ab = matrix.get(pair.a, pair.b_target);
    let ba = matrix.get(pair.b, pair.a_target);
    if ab * pa != pair.total_a_to_b_target || ba * pb != pair.total_b_to_a_target {
        return Err(Error::StalePair(format!(
            "({} -> {}, {} -> {}) no longer carries the recorded probabilities",
            pair.a, pair.b_target, pair.b, pair.a_target
        )));
    }
    let c = pair.transfer();
    let mut out = matrix.clone();
    // the exhausted transition is zeroed exactly; the other loses C / p
    let (da, new_ab) = if c == pair.total_a_to_b_target {
        (ab, 0.0)
    } else {
        let d = c / pa;
        (d, (ab - d).max(0.0))
    };
    let (db, new_ba) = if c == pair.total_b_to_a_target {
        (ba, 0.0)
    } else {
        let d = c / pb;
        (d, (ba - d).max(0.0))
    };
    out.set(pair.a, pair.b_target, new_ab);
    out.set(pair.a, pair.a_target, (matrix.get(pair.a, pair.a_target) + da).min(1.0));
    out.set(pair.b, pair.a_target, new_ba);
    out.set(pair.b, pair.b_target, (matrix.get(pair.b, pair.b_target) + db).min(1.0));
    Ok(out)
}

/// Decade band of a transition relative to the largest one in the net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Band {
    /// `[1e-6, 1e-3)`
    Faint,
    /// `[1e-3, 1e-2)`
    Weak,
    /// `[1e-2, 1e-1)`
    Moderate,
    /// `[1e-1, 1]`
    Strong,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Faint, Band::Weak, Band::Moderate, Band::Strong];

    /// Band of `total / p_max`, `None` below `1e-6`.
    pub fn classify(ratio: f64) -> Option<Band> {
        if ratio >= 1e-1 {
            Some(Band::Strong)
        } else if ratio >= 1e-2 {
            Some(Band::Moderate)
        } else if ratio >= 1e-3 {
            Some(Band::Weak)
        } else if ratio >= 1e-6 {
            Some(Band::Faint)
        } else {
            None
        }
    }

    /// Half-open range `[lo, hi)` of the ratio (the top band includes 1).
    pub fn range(self) -> (f64, f64) {
        match self {
            Band::Faint => (1e-6, 1e-3),
            Band::Weak => (1e-3, 1e-2),
            Band::Moderate => (1e-2, 1e-1),
            Band::Strong => (1e-1, 1.0),
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.range();
        let close = if *self == Band::Strong { ']' } else { ')' };
        write!(f, "[{lo:e},{hi:e}{close}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetEdge {
    pub step: usize,
    pub source: usize,
    pub target: usize,
    pub total: f64,
    pub band: Option<Band>,
}

/// Transitions of a chain whose total probability is at least a fraction of
/// the largest one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionNet {
    pub edges: Vec<NetEdge>,
    pub p_max: f64,
    pub threshold: f64,
}

impl TransitionNet {
    pub fn band_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for e in &self.edges {
            if let Some(b) = e.band {
                counts[b as usize] += 1;
            }
        }
        counts
    }

    /// Writes `step,x_source,x_target,total_probability,band` rows (no header).
    pub fn write_csv<W: Write>(&self, out: &mut W, chain: &MarkovChain) -> io::Result<()> {
        for e in &self.edges {
            let xs = chain.grid(e.step).position(e.source);
            let xt = chain.grid(e.step + 1).position(e.target);
            let band = e.band.map(|b| b.to_string()).unwrap_or_default();
            writeln!(out, "{},{xs:e},{xt:e},{:e},\"{band}\"", e.step, e.total)?;
        }
        Ok(())
    }
}

pub fn transition_net(chain: &MarkovChain, threshold: f64) -> Result<TransitionNet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!(
            "net threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let all: Vec<NetEdge> = chain
        .matrices()
        .iter()
        .enumerate()
        .flat_map(|(step, m)| {
            edges(m, chain.line(step)).into_iter().map(move |e| NetEdge {
                step,
                source: e.source,
                target: e.target,
                total: e.total,
                band: None,
            })
        })
        .collect();
    let p_max = all.iter().map(|e| e.total).fold(0.0, f64::max);
    let edges = all
        .into_iter()
        .filter(|e| e.total >= threshold * p_max)
        .map(|mut e| {
            e.band = Band::classify(e.total / p_max);
            e
        })
        .collect();
    Ok(TransitionNet {
        edges,
        p_max,
        threshold,
    })
}

/// Sites on every line from which the chosen screen site can be reached
/// through transitions of nonzero probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachableRegion {
    pub final_site: usize,
    lines: Vec<Vec<bool>>,
}

impl ReachableRegion {
    pub fn contains(&self, line: usize, site: usize) -> bool {
        self.lines[line][site]
    }

    pub fn sites(&self, line: usize) -> Vec<usize> {
        self.lines[line]
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| r.then_some(i))
            .collect()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Writes `line,site,reachable` rows (no header) for every site.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (j, line) in self.lines.iter().enumerate() {
            for (i, &r) in line.iter().enumerate() {
                writeln!(out, "{j},{i},{}", u8::from(r))?;
            }
        }
        Ok(())
    }
}

pub fn backward_reachable(chain: &MarkovChain, final_site: usize) -> Result<ReachableRegion> {
    let last = chain.n_lines() - 1;
    let screen = chain.line(last);
    if final_site >= screen.len() {
        return Err(Error::Invalid(format!("site {final_site} outside the screen grid")));
    }
    if screen.weight(final_site) <= 0.0 {
        return Err(Error::ZeroProbabilitySite(final_site));
    }
    let mut lines = vec![Vec::new(); chain.n_lines()];
    let mut current = vec![false; screen.len()];
    current[final_site] = true;
    for j in (0..last).rev() {
        let m = chain.matrix(j);
        let p = chain.line(j);
        let reach: Vec<bool> = (0..m.n_from())
            .map(|i| {
                m.row(i)
                    .iter()
                    .any(|&(k, prob)| current[k] && prob * p.weight(i) > ZERO_PROBABILITY)
            })
            .collect();
        lines[j + 1] = std::mem::replace(&mut current, reach);
    }
    lines[0] = current;
    Ok(ReachableRegion { final_site, lines })
}

/// Particle counts per bin of a histogram grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    grid: Arc<Grid1D>,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Writes `x,count,theory` rows (no header).
    pub fn write_csv<W: Write>(&self, out: &mut W, theory: &ProbabilityDistribution) -> io::Result<()> {
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:e},{c},{:e}", self.grid.position(i), theory.weight(i))?;
        }
        Ok(())
    }
}

fn bin_of(bins: &Grid1D, x: f64) -> usize {
    let r = ((x - bins.x_min()) / bins.spacing()).round();
    r.clamp(0.0, (bins.len() - 1) as f64) as usize
}

/// Counts the ensemble's impacts on line `line`, each site assigned to the
/// nearest bin (sites past either end fall into the outermost bin).
pub fn screen_histogram(
    ensemble: &TrajectoryEnsemble,
    chain: &MarkovChain,
    line: usize,
    bins: Arc<Grid1D>,
) -> Result<Histogram> {
    if line >= chain.n_lines() {
        return Err(Error::Invalid(format!(
            "line {line} outside chain with {} lines",
            chain.n_lines()
        )));
    }
    let sites = chain.grid(line);
    let map: Vec<usize> = (0..sites.len()).map(|i| bin_of(&bins, sites.position(i))).collect();
    let mut counts = vec![0u64; bins.len()];
    for s in ensemble.sites_at(line) {
        counts[map[s]] += 1;
    }
    Ok(Histogram { grid: bins, counts })
}

/// Aggregates a site distribution onto histogram bins with the same
/// nearest-bin rule as [`screen_histogram`].
pub fn bin_distribution(dist: &ProbabilityDistribution, bins: Arc<Grid1D>) -> Result<ProbabilityDistribution> {
    let mut w = vec![0.0; bins.len()];
    for (i, &p) in dist.weights().iter().enumerate() {
        w[bin_of(&bins, dist.grid().position(i))] += p;
    }
    ProbabilityDistribution::new(bins, w)
}

/// `½ Σ |count/N − p|` over the bins.
pub fn tv_distance(histogram: &Histogram, distribution: &ProbabilityDistribution) -> Result<f64> {
    if *histogram.grid != **distribution.grid() {
        return Err(Error::GridMismatch);
    }
    let n = histogram.total();
    if n == 0 {
        return Err(Error::Invalid("empty histogram".into()));
    }
    let n = n as f64;
    Ok(0.5
        * crate::compensated_sum(
            histogram
                .counts
                .iter()
                .zip(distribution.weights())
                .map(|(&c, &p)| (c as f64 / n - p).abs()),
        ))
}
