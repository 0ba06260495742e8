//! `spex mcmc`: latent hierarchy sampling over the fit-role stations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spex::cov::CorrFamily;
use spex::io::{filter_by_role, load_panel, Role};
use spex::mcmc::{run_chain, summarize, McmcConfig, McmcDiagnostics, PriorConfig, TraceSummary};
use spex::Result;

use crate::artifact::{csv_num, Run};
use crate::{config, RunArgs};

fn d_iterations() -> usize {
    30_000
}
fn d_burn_in() -> usize {
    5_000
}
fn d_thin() -> usize {
    25
}
fn d_rw_xi() -> f64 {
    0.05
}
fn d_rw_range() -> f64 {
    2.0
}
fn d_true() -> bool {
    true
}
fn d_exponential() -> CorrFamily {
    CorrFamily::Exponential
}

/// Chain settings; the run's global seed seeds the chain.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_burn_in")]
    pub burn_in: usize,
    #[serde(default = "d_thin")]
    pub thin: usize,
    /// Site-move step for the location field; data-driven when absent.
    #[serde(default)]
    pub rw_eta: Option<f64>,
    /// Site-move step for the scale field; data-driven when absent.
    #[serde(default)]
    pub rw_tau: Option<f64>,
    #[serde(default = "d_rw_xi")]
    pub rw_xi: f64,
    #[serde(default = "d_rw_range")]
    pub rw_range: f64,
    #[serde(default = "d_true")]
    pub adapt: bool,
    #[serde(default = "d_exponential")]
    pub family: CorrFamily,
    #[serde(default)]
    pub family_kappa: Option<f64>,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            iterations: d_iterations(),
            burn_in: d_burn_in(),
            thin: d_thin(),
            rw_eta: None,
            rw_tau: None,
            rw_xi: d_rw_xi(),
            rw_range: d_rw_range(),
            adapt: true,
            family: CorrFamily::Exponential,
            family_kappa: None,
        }
    }
}

impl ChainSettings {
    fn to_core(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            rw_eta: self.rw_eta,
            rw_tau: self.rw_tau,
            rw_xi: self.rw_xi,
            rw_range: self.rw_range,
            adapt: self.adapt,
            family: self.family,
            family_kappa: self.family_kappa,
            seed,
        }
    }
}

/// Configuration document for `spex mcmc`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcCommandConfig {
    pub stations: PathBuf,
    pub maxima: PathBuf,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub mcmc: ChainSettings,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
struct McmcResults<'a> {
    n_samples: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    site_ids: &'a [String],
    diagnostics: &'a McmcDiagnostics,
    summaries: &'a [TraceSummary],
    samples: &'static str,
}

/// Column header of `samples.csv` for a given station ordering.
pub fn samples_header(ids: &[String]) -> String {
    let mut h = String::from("sample");
    for b in ["eta", "tau", "xi"] {
        for c in ["0", "x", "y"] {
            h.push_str(&format!(",beta.{b}.{c}"));
        }
    }
    for b in ["eta", "tau", "xi"] {
        h.push_str(&format!(",sill.{b}"));
    }
    for b in ["eta", "tau", "xi"] {
        h.push_str(&format!(",range.{b}"));
    }
    for b in ["eta", "tau", "xi"] {
        for id in ids {
            h.push_str(&format!(",{b}.{id}"));
        }
    }
    h
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg: McmcCommandConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut run = Run::new("mcmc", cfg.seed, config::echo_value(&cfg)?, &args.out)?;
    run.add_input("stations", &cfg.stations)?;
    run.add_input("maxima", &cfg.maxima)?;

    let (panel, roles) = load_panel(&cfg.stations, &cfg.maxima)?;
    let panel = filter_by_role(&panel, &roles, Role::Fit)?;
    let chain = run_chain(&panel, &cfg.priors, &cfg.mcmc.to_core(cfg.seed))?;

    let ids = panel.sites().ids();
    let mut csv = samples_header(ids);
    csv.push('\n');
    for (k, s) in chain.samples.iter().enumerate() {
        csv.push_str(&k.to_string());
        for b in 0..3 {
            for c in 0..3 {
                csv.push(',');
                csv.push_str(&csv_num(s.betas[b][c]));
            }
        }
        for b in 0..3 {
            csv.push(',');
            csv.push_str(&csv_num(s.sills[b]));
        }
        for b in 0..3 {
            csv.push(',');
            csv.push_str(&csv_num(s.ranges[b]));
        }
        for b in 0..3 {
            for v in &s.fields[b] {
                csv.push(',');
                csv.push_str(&csv_num(*v));
            }
        }
        csv.push('\n');
    }
    run.write_bytes("samples.csv", csv.as_bytes())?;

    let summaries = if chain.samples.is_empty() {
        Vec::new()
    } else {
        summarize(&chain)?
    };
    run.write_doc(
        "mcmc.json",
        &McmcResults {
            n_samples: chain.samples.len(),
            iterations: chain.iterations,
            burn_in: chain.burn_in,
            thin: chain.thin,
            site_ids: ids,
            diagnostics: &chain.diagnostics,
            summaries: &summaries,
            samples: "samples.csv",
        },
    )?;
    run.finish()
}
