//! Shared fixtures for the benchmark targets.

use spex::cov::SiteSet;
use spex::marginal::{MaximaPanel, SurfaceModel, TrendSurface};
use spex::sim::synth_dataset;

/// Square lattice of sites with the given spacing in km.
pub fn lattice(side: usize, spacing: f64) -> SiteSet {
    let ids = (0..side * side).map(|k| format!("s{k:03}")).collect();
    let coords = (0..side * side)
        .map(|k| [(k % side) as f64 * spacing, (k / side) as f64 * spacing])
        .collect();
    SiteSet::new(ids, coords).expect("valid lattice")
}

/// Mild trend surfaces typical of annual temperature maxima.
pub fn bench_model() -> SurfaceModel {
    SurfaceModel {
        eta: TrendSurface {
            beta0: 30.0,
            beta1: 0.05,
            beta2: -0.1,
        },
        tau: TrendSurface::constant(8.0),
        xi: TrendSurface::constant(0.1),
    }
}

/// Smith-model panel over a lattice, `years` rows.
pub fn bench_panel(side: usize, spacing: f64, years: usize, seed: u64) -> MaximaPanel {
    let sites = lattice(side, spacing);
    let spec = spex::dep::DependenceSpec::Smith {
        omega11: 100.0,
        omega12: 0.0,
        omega22: 100.0,
    };
    let year_list: Vec<i64> = (0..years as i64).map(|t| 1961 + t).collect();
    synth_dataset(&bench_model(), &spec, &sites, &year_list, seed).expect("panel simulates")
}
