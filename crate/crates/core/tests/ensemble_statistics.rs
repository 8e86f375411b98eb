mod common;

use std::sync::Arc;

use pilotwave::analysis::{screen_histogram, tv_distance};
use pilotwave::lattice::{Grid1D, TimeParameters, ELECTRON_MASS};
use pilotwave::markov::{build_chain, run_ensemble, MarkovChain};
use pilotwave::wavefield::SlitGeometry;

fn small_double_slit() -> MarkovChain {
    let grid = Arc::new(Grid1D::new(-1.5e-3, 1.5e-3, 301).unwrap());
    let geom = SlitGeometry::new(1e-4, 3e-4).unwrap();
    let time = TimeParameters::from_wavelength(ELECTRON_MASS, 7e-7, 2e-4).unwrap();
    build_chain(grid, &geom, &time, 20).unwrap()
}

#[test]
fn every_line_histogram_converges() {
    let chain = small_double_slit();
    let ens = run_ensemble(&chain, 40_000, 11).unwrap();
    for j in [0, 5, 20] {
        let hist = screen_histogram(&ens, &chain, j, chain.grid(j).clone()).unwrap();
        let tv = tv_distance(&hist, chain.line(j)).unwrap();
        // expected multinomial TV at one bin per site is a few percent here
        assert!(tv < 0.06, "line {j}: tv {tv}");
    }
}

#[test]
fn tv_shrinks_with_ensemble_size() {
    let chain = small_double_slit();
    let last = chain.n_lines() - 1;
    let tv = |n: usize| {
        let mut v: Vec<f64> = (0..3)
            .map(|s| {
                let ens = run_ensemble(&chain, n, 100 + s).unwrap();
                let hist = screen_histogram(&ens, &chain, last, chain.grid(last).clone()).unwrap();
                tv_distance(&hist, chain.line(last)).unwrap()
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[1]
    };
    let (a, b, c) = (tv(500), tv(5_000), tv(50_000));
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn symmetric_setup_gives_balanced_sides() {
    let chain = small_double_slit();
    let n = 40_000;
    let ens = run_ensemble(&chain, n, 12).unwrap();
    let last = chain.n_lines() - 1;
    let mid = chain.grid(last).len() / 2;
    let left = ens.sites_at(last).filter(|&s| s < mid).count() as f64;
    let right = ens.sites_at(last).filter(|&s| s > mid).count() as f64;
    // 5σ for a fair split
    let sigma = (0.25 * (left + right)).sqrt();
    assert!((left - right).abs() < 10.0 * sigma, "{left} vs {right}");
}

#[test]
fn no_step_jumps_across_the_midline() {
    // monotone transport between mirror-symmetric lines maps each half into
    // itself; only the center site may feed both sides
    let chain = small_double_slit();
    let ens = run_ensemble(&chain, 5_000, 13).unwrap();
    let mid = chain.grid(0).len() / 2;
    for t in ens.trajectories() {
        for j in 1..t.len() {
            let (a, b) = (t.site(j - 1), t.site(j));
            assert!(!(a < mid && b > mid) && !(a > mid && b < mid), "step {j}: {a} -> {b}");
        }
    }
}
