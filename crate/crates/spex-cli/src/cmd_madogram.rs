//! `spex madogram`: rank-based F-madogram tables from a panel.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spex::io::load_panel;
use spex::sim::{fmadogram_curve, fmadogram_pair};
use spex::{Error, Result};

use crate::artifact::{csv_num, Run};
use crate::{config, RunArgs};

fn d_bins() -> usize {
    12
}

/// Configuration document for `spex madogram`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MadogramConfig {
    pub stations: PathBuf,
    pub maxima: PathBuf,
    /// Equal-count distance bins for the pooled curve.
    #[serde(default = "d_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
struct MadogramResults {
    n_sites: usize,
    n_years: usize,
    n_pairs: usize,
    n_bins: usize,
    pairs: &'static str,
    binned: &'static str,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg: MadogramConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut run = Run::new("madogram", cfg.seed, config::echo_value(&cfg)?, &args.out)?;
    run.add_input("stations", &cfg.stations)?;
    run.add_input("maxima", &cfg.maxima)?;

    // Madograms are empirical, so every station takes part regardless
    // of role.
    let (panel, _) = load_panel(&cfg.stations, &cfg.maxima)?;
    let sites = panel.sites();

    let mut pairs = String::from("id1,id2,distance_km,nu,theta,theta_se,n\n");
    let mut n_pairs = 0;
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            let pm = match fmadogram_pair(&panel.site_column(i), &panel.site_column(j)) {
                Ok(pm) => pm,
                // Pairs with too little joint record give no estimate.
                Err(Error::InsufficientData(_)) => continue,
                Err(e) => return Err(e),
            };
            pairs.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                sites.ids()[i],
                sites.ids()[j],
                csv_num(sites.distance(i, j)),
                csv_num(pm.nu),
                csv_num(pm.theta),
                csv_num(pm.theta_se),
                pm.n
            ));
            n_pairs += 1;
        }
    }
    run.write_bytes("pairs.csv", pairs.as_bytes())?;

    let mut binned = String::from("mean_distance_km,nu,theta,theta_se,n_pairs,n_terms\n");
    for bin in fmadogram_curve(&panel, cfg.n_bins)? {
        binned.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_num(bin.mean_distance),
            csv_num(bin.nu),
            csv_num(bin.theta),
            csv_num(bin.theta_se),
            bin.n_pairs,
            bin.n_terms
        ));
    }
    run.write_bytes("binned.csv", binned.as_bytes())?;

    run.write_doc(
        "madogram.json",
        &MadogramResults {
            n_sites: panel.n_sites(),
            n_years: panel.n_years(),
            n_pairs,
            n_bins: cfg.n_bins,
            pairs: "pairs.csv",
            binned: "binned.csv",
        },
    )?;
    run.finish()
}
