//! Shared fixtures for the benchmarks.

use ndarray::Array2;

use epistrata::dgp::{simulate_rare, RareDiseaseParams};
use epistrata::panel::{adjacency_orders, grid_adjacency};
use epistrata::posterior::ModelSpec;
use epistrata::{Posterior, PriorSpec, Variant};

/// Desk-scale inputs on a `1 × regions` chain of regions.
pub fn desk_inputs(regions: usize, ages: usize) -> (RareDiseaseParams, Array2<u64>, Array2<u32>) {
    let params = RareDiseaseParams::desk(regions, ages);
    let pops = Array2::from_shape_fn((regions, ages), |(g, i)| 1500 + 300 * ((g + 2 * i) % 4) as u64);
    let orders = adjacency_orders(&grid_adjacency(1, regions)).expect("a chain is connected");
    (params, pops, orders)
}

/// A full-variant posterior over a simulated panel, with the origin of
/// the unconstrained space as a finite evaluation point.
pub fn desk_posterior(regions: usize, ages: usize, weeks: usize) -> (Posterior, Vec<f64>) {
    let (params, pops, orders) = desk_inputs(regions, ages);
    let (panel, _) = simulate_rare(&params, &pops, &orders, weeks, Variant::Full, 7).expect("desk simulation");
    let prior = PriorSpec::preset("simstudy", Variant::Full, ages).expect("preset");
    let post = Posterior::new(ModelSpec::new(Variant::Full).with_orders(orders), panel, prior).expect("posterior");
    let x = vec![0.0; epistrata::LogDensity::dim(&post)];
    assert!(epistrata::LogDensity::log_density(&post, &x).is_finite());
    (post, x)
}
