//! `spex check`: envelope and quantile diagnostics of a fitted model.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use spex::dep::DependenceSpec;
use spex::evd::gev_cdf;
use spex::io::load_panel;
use spex::marginal::{panel_to_frechet, SurfaceModel};
use spex::mcmc::latent_groupwise_check;
use spex::sim::groupwise_check;
use spex::Result;

use crate::artifact::{csv_num, Run};
use crate::{config, RunArgs};

fn d_n_sim() -> usize {
    999
}
fn d_level() -> f64 {
    0.05
}

/// Null hypothesis the observed panel is checked against.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NullModel {
    /// A spatial dependence model on unit Fréchet margins.
    Dependence { dependence: DependenceSpec },
    /// The latent hierarchy: conditional independence across years.
    Latent { sills: [f64; 3], ranges: [f64; 3] },
}

/// Configuration document for `spex check`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub stations: PathBuf,
    pub maxima: PathBuf,
    /// Fitted marginal surfaces the data are standardized with.
    pub model: SurfaceModel,
    pub null: NullModel,
    /// Ball center for the group statistic; station centroid when absent.
    #[serde(default)]
    pub center: Option<[f64; 2]>,
    /// Ball radii, km.
    pub radii: Vec<f64>,
    #[serde(default = "d_n_sim")]
    pub n_sim: usize,
    #[serde(default = "d_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
struct CheckResults {
    p_value: f64,
    inside: bool,
    center: [f64; 2],
    n_sim: usize,
    level: f64,
    envelope: &'static str,
    tstat: &'static str,
    qq: &'static str,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg: CheckConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut run = Run::new("check", cfg.seed, config::echo_value(&cfg)?, &args.out)?;
    run.add_input("stations", &cfg.stations)?;
    run.add_input("maxima", &cfg.maxima)?;

    let (panel, _) = load_panel(&cfg.stations, &cfg.maxima)?;
    let sites = panel.sites();
    let center = cfg.center.unwrap_or_else(|| {
        let mut c = [0.0, 0.0];
        for j in 0..sites.len() {
            let [x, y] = sites.coord(j);
            c[0] += x;
            c[1] += y;
        }
        [c[0] / sites.len() as f64, c[1] / sites.len() as f64]
    });

    let check = match &cfg.null {
        NullModel::Dependence { dependence } => {
            let frechet = panel_to_frechet(&panel, &cfg.model)?;
            groupwise_check(
                frechet.rows(),
                sites,
                dependence,
                center,
                &cfg.radii,
                cfg.n_sim,
                cfg.level,
                cfg.seed,
            )?
        }
        NullModel::Latent { sills, ranges } => latent_groupwise_check(
            &panel, &cfg.model, *sills, *ranges, center, &cfg.radii, cfg.n_sim, cfg.level,
            cfg.seed,
        )?,
    };

    let mut envelope = String::from("radius_km,observed,lower,upper\n");
    for (k, &r) in check.radii.iter().enumerate() {
        envelope.push_str(&format!(
            "{},{},{},{}\n",
            csv_num(r),
            csv_num(check.observed[k]),
            csv_num(check.lower[k]),
            csv_num(check.upper[k])
        ));
    }
    run.write_bytes("envelope.csv", envelope.as_bytes())?;

    let mut tstat = String::from("sim,radius_km,theta\n");
    for (b, curve) in check.sims.iter().enumerate() {
        for (k, &r) in check.radii.iter().enumerate() {
            tstat.push_str(&format!("{},{},{}\n", b, csv_num(r), csv_num(curve[k])));
        }
    }
    run.write_bytes("tstat.csv", tstat.as_bytes())?;

    // Pooled probability integral transform of every observed cell under
    // the marginal surfaces.
    let mut pit = Vec::new();
    for d in 0..sites.len() {
        let params = cfg.model.params_at(sites.coord(d), &sites.ids()[d])?;
        for t in 0..panel.n_years() {
            let y = panel.value(t, d);
            if y.is_finite() {
                pit.push(gev_cdf(y, &params)?);
            }
        }
    }
    pit.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut qq = String::from("expected,observed\n");
    let n = pit.len();
    for (i, u) in pit.iter().enumerate() {
        qq.push_str(&format!(
            "{},{}\n",
            csv_num((i as f64 + 0.5) / n as f64),
            csv_num(*u)
        ));
    }
    run.write_bytes("qq.csv", qq.as_bytes())?;

    run.write_doc(
        "check.json",
        &CheckResults {
            p_value: check.p_value,
            inside: check.inside,
            center,
            n_sim: cfg.n_sim,
            level: cfg.level,
            envelope: "envelope.csv",
            tstat: "tstat.csv",
            qq: "qq.csv",
        },
    )?;
    run.finish()
}
