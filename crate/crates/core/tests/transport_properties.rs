mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use common::{random_distribution, unit_grid};
use pilotwave::analysis::{find_crossing_pairs, find_improving_pairs};
use pilotwave::lattice::{normalize, Grid1D, ProbabilityDistribution};
use pilotwave::transport::{
    average_action, brute_force_optimal, minimal_stochastic_matrix, msd_report, quadratic_cost, relativistic_cost,
    wasserstein,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dist(weights: Vec<f64>, grid: Arc<Grid1D>) -> Option<ProbabilityDistribution> {
    weights
        .iter()
        .any(|&w| w > 0.0)
        .then(|| normalize(&weights, grid).unwrap())
}

fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0..1.0f64], 2..=max_len)
}

/// `W1` through the CDFs, `∫|F − G|`, on a shared grid.
fn w1_by_cdf(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> f64 {
    let g = p.grid();
    let (mut fp, mut fq, mut total) = (0.0, 0.0, 0.0);
    for i in 0..g.len() - 1 {
        fp += p.weight(i);
        fq += q.weight(i);
        total += (fp - fq).abs() * (g.position(i + 1) - g.position(i));
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sweep_output_has_no_crossing_or_improving_pairs(a in weights(64), b in weights(64)) {
        let (ga, gb) = (unit_grid(a.len()), unit_grid(b.len()));
        let (Some(p), Some(q)) = (dist(a, ga.clone()), dist(b, gb.clone())) else { return Ok(()) };
        let m = minimal_stochastic_matrix(&p, &q).unwrap();
        let cost = quadratic_cost(ga, gb);
        prop_assert!(find_crossing_pairs(&m, &p, &cost, 0).unwrap().is_empty());
        prop_assert!(find_improving_pairs(&m, &p, &cost, 0, 1).unwrap().is_empty());
        prop_assert!(m.marginal_residuals(&p, &q).unwrap().max() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sweep_is_optimal_for_quadratic_and_relativistic_costs(a in weights(6), b in weights(6)) {
        let (ga, gb) = (unit_grid(a.len()), unit_grid(b.len()));
        let (Some(p), Some(q)) = (dist(a, ga.clone()), dist(b, gb.clone())) else { return Ok(()) };
        let m = minimal_stochastic_matrix(&p, &q).unwrap();
        let quad = quadratic_cost(ga.clone(), gb.clone());
        let (_, exact) = brute_force_optimal(&p, &q, &quad).unwrap();
        prop_assert!((average_action(&m, &p, &quad).unwrap() - exact).abs() < 1e-9);

        // unit sites, so c·τ = 10 keeps every jump inside the light cone
        let mass = 1.0 / 299_792_458.0_f64.powi(2);
        let tau = 10.0 / 299_792_458.0;
        let rel = relativistic_cost(ga, gb, mass, tau).unwrap();
        let (_, exact) = brute_force_optimal(&p, &q, &rel).unwrap();
        let fast = average_action(&m, &p, &rel).unwrap();
        prop_assert!((fast - exact).abs() < 1e-9 * exact.abs().max(1.0), "{fast} vs {exact}");
    }

    #[test]
    fn w1_matches_cdf_route(a in weights(40), b_seed in any::<u64>()) {
        let g = unit_grid(a.len());
        let Some(p) = dist(a, g.clone()) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(b_seed);
        let q = random_distribution(&mut rng, g);
        let w = wasserstein(&p, &q, 1.0).unwrap();
        prop_assert!((w - w1_by_cdf(&p, &q)).abs() < 1e-12);
    }

    #[test]
    fn w2_squared_equals_minimal_msd(a in weights(30), b in weights(30)) {
        let (ga, gb) = (unit_grid(a.len()), unit_grid(b.len()));
        let (Some(p), Some(q)) = (dist(a, ga.clone()), dist(b, gb.clone())) else { return Ok(()) };
        let m = minimal_stochastic_matrix(&p, &q).unwrap();
        let report = msd_report(&m, &p, &ga, &gb).unwrap();
        let w2 = wasserstein(&p, &q, 2.0).unwrap();
        prop_assert!((w2 * w2 - report.total_msd).abs() <= 1e-12 * report.total_msd.max(1.0));
        let s = average_action(&m, &p, &quadratic_cost(ga, gb)).unwrap();
        prop_assert!((s - report.total_msd).abs() <= 1e-12 * s.max(1.0));
    }

    #[test]
    fn wasserstein_metric_axioms(seed in any::<u64>(), n in 2usize..25, order in prop_oneof![Just(1.0), Just(2.0), Just(3.0), 1.0..4.0f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = unit_grid(n);
        let (p, q, r) = (
            random_distribution(&mut rng, g.clone()),
            random_distribution(&mut rng, g.clone()),
            random_distribution(&mut rng, g),
        );
        prop_assert_eq!(wasserstein(&p, &p, order).unwrap(), 0.0);
        let pq = wasserstein(&p, &q, order).unwrap();
        prop_assert!((pq - wasserstein(&q, &p, order).unwrap()).abs() <= 1e-12);
        let pr = wasserstein(&p, &r, order).unwrap();
        let rq = wasserstein(&r, &q, order).unwrap();
        prop_assert!(pq <= pr + rq + 1e-10);
    }
}

#[test]
fn wasserstein_between_deltas_is_the_distance() {
    let g = unit_grid(9);
    let p = ProbabilityDistribution::delta(g.clone(), 1).unwrap();
    let q = ProbabilityDistribution::delta(g, 7).unwrap();
    for order in [1.0, 2.0, 2.5] {
        assert_relative_eq!(wasserstein(&p, &q, order).unwrap(), 6.0, max_relative = 1e-14);
    }
}

#[test]
fn sweep_between_different_grids_keeps_marginals() {
    let ga = Arc::new(Grid1D::new(-1.0, 1.0, 7).unwrap());
    let gb = Arc::new(Grid1D::new(-3.0, 2.0, 13).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let p = random_distribution(&mut rng, ga.clone());
        let q = random_distribution(&mut rng, gb.clone());
        let m = minimal_stochastic_matrix(&p, &q).unwrap();
        assert!(m.marginal_residuals(&p, &q).unwrap().max() <= 1e-12);
        let cost = quadratic_cost(ga.clone(), gb.clone());
        assert!(find_crossing_pairs(&m, &p, &cost, 0).unwrap().is_empty());
    }
}
