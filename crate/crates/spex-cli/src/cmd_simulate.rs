//! `spex simulate`: synthetic annual-maxima panels at the stations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spex::dep::DependenceSpec;
use spex::io::{load_stations, panel_csv};
use spex::marginal::SurfaceModel;
use spex::mcmc::simulate_latent_hierarchy;
use spex::sim::synth_dataset;
use spex::Result;

use crate::artifact::Run;
use crate::{config, RunArgs};

/// Consecutive simulation years.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YearRange {
    pub start: i64,
    pub count: usize,
}

/// What drives the spatial dependence of the panel.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// A dependence model draw per year pushed through the margins.
    MaxStable { dependence: DependenceSpec },
    /// Latent Gaussian surfaces once, then rows independent across years.
    Latent { sills: [f64; 3], ranges: [f64; 3] },
}

/// Configuration document for `spex simulate`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub stations: PathBuf,
    pub years: YearRange,
    pub model: SurfaceModel,
    pub generator: Generator,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
struct SimulateResults {
    n_sites: usize,
    n_years: usize,
    maxima: &'static str,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg: SimulateConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut run = Run::new("simulate", cfg.seed, config::echo_value(&cfg)?, &args.out)?;
    run.add_input("stations", &cfg.stations)?;

    let sites = load_stations(&cfg.stations)?.sites;
    let years: Vec<i64> = (0..cfg.years.count)
        .map(|k| cfg.years.start + k as i64)
        .collect();
    let panel = match &cfg.generator {
        Generator::MaxStable { dependence } => {
            synth_dataset(&cfg.model, dependence, &sites, &years, cfg.seed)?
        }
        Generator::Latent { sills, ranges } => {
            simulate_latent_hierarchy(&cfg.model, *sills, *ranges, &sites, &years, cfg.seed)?.0
        }
    };
    run.write_bytes("maxima.csv", panel_csv(&panel).as_bytes())?;
    run.write_doc(
        "simulate.json",
        &SimulateResults {
            n_sites: panel.n_sites(),
            n_years: panel.n_years(),
            maxima: "maxima.csv",
        },
    )?;
    run.finish()
}
