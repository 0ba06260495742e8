//! `spex fit`: composite likelihood fit over the fit-role stations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spex::dep::{extremal_coefficient, practical_range, DependenceSpec};
use spex::fit::{fit_model, FitOptions, FitReport};
use spex::io::{filter_by_role, load_panel, Role};
use spex::marginal::SurfaceModel;
use spex::Result;

use crate::artifact::{csv_num, Run};
use crate::{config, RunArgs};

fn d_true() -> bool {
    true
}
fn d_n_starts() -> usize {
    3
}
fn d_max_evals() -> usize {
    8000
}

/// Configuration document for `spex fit`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub stations: PathBuf,
    pub maxima: PathBuf,
    /// Dependence family to fit; its parameter values seed the search.
    pub dependence: DependenceSpec,
    #[serde(default = "d_true")]
    pub eta_trend: bool,
    #[serde(default)]
    pub tau_trend: bool,
    #[serde(default)]
    pub xi_trend: bool,
    /// Pair cutoff, km: pairs farther apart drop out of the likelihood.
    #[serde(default)]
    pub max_pair_distance: Option<f64>,
    #[serde(default = "d_n_starts")]
    pub n_starts: usize,
    #[serde(default = "d_max_evals")]
    pub max_evals: usize,
    /// Slot names frozen at their starting values.
    #[serde(default)]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub start_model: Option<SurfaceModel>,
    #[serde(default)]
    pub start_dependence: Option<DependenceSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
struct PracticalRange {
    h_minus: f64,
    h_plus: f64,
}

#[derive(Serialize)]
struct FitResults<'a> {
    fit: &'a FitReport,
    /// Distances where the fitted theta curve crosses 1.3 and 1.7, km;
    /// absent when the fitted family never reaches the first threshold.
    practical_range: Option<PracticalRange>,
    theta_curve: &'static str,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg: FitConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut run = Run::new("fit", cfg.seed, config::echo_value(&cfg)?, &args.out)?;
    run.add_input("stations", &cfg.stations)?;
    run.add_input("maxima", &cfg.maxima)?;

    let (panel, roles) = load_panel(&cfg.stations, &cfg.maxima)?;
    let panel = filter_by_role(&panel, &roles, Role::Fit)?;
    let opts = FitOptions {
        eta_trend: cfg.eta_trend,
        tau_trend: cfg.tau_trend,
        xi_trend: cfg.xi_trend,
        max_pair_distance: cfg.max_pair_distance,
        n_starts: cfg.n_starts,
        max_evals: cfg.max_evals,
        seed: cfg.seed,
        fixed: cfg.fixed.clone(),
        start_model: cfg.start_model,
        start_dependence: cfg.start_dependence.clone(),
    };
    let report = fit_model(&panel, &cfg.dependence, &opts)?;

    // Fitted extremal coefficient curve along the x axis, log-spaced
    // from 0.1 to 1000 km.
    let mut curve = String::from("distance_km,theta\n");
    for k in 0..=160 {
        let h = 10f64.powf(-1.0 + k as f64 / 40.0);
        let theta = extremal_coefficient([h, 0.0], &report.dependence)?;
        curve.push_str(&format!("{},{}\n", csv_num(h), csv_num(theta)));
    }
    run.write_bytes("theta_curve.csv", curve.as_bytes())?;

    let pr = practical_range(&report.dependence)
        .ok()
        .map(|(h_minus, h_plus)| PracticalRange { h_minus, h_plus });
    run.write_doc(
        "report.json",
        &FitResults {
            fit: &report,
            practical_range: pr,
            theta_curve: "theta_curve.csv",
        },
    )?;
    run.finish()
}
