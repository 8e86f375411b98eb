#![allow(dead_code)]

pub mod quadrature;

use std::sync::Arc;

use pilotwave::lattice::{normalize, Grid1D, ProbabilityDistribution};
use rand::Rng;

/// Sites at `0, 1, …, n − 1`.
pub fn unit_grid(n: usize) -> Arc<Grid1D> {
    Arc::new(Grid1D::new(0.0, (n - 1) as f64, n).unwrap())
}

/// Random weights, about a fifth of them exactly zero.
pub fn random_distribution<R: Rng>(rng: &mut R, grid: Arc<Grid1D>) -> ProbabilityDistribution {
    loop {
        let w: Vec<f64> = (0..grid.len())
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            return normalize(&w, grid).unwrap();
        }
    }
}
