//! `spex returnmap`: posterior return-level map from retained states.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spex::cov::{CorrFamily, SiteSet};
use spex::io::{load_stations, Role};
use spex::mcmc::{posterior_return_map, ChainState};
use spex::{Error, Result};

use crate::artifact::{csv_num, Run};
use crate::cmd_mcmc::samples_header;
use crate::{config, RunArgs};

fn d_exponential() -> CorrFamily {
    CorrFamily::Exponential
}

/// Regular prediction grid; row-major from the south-west corner.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub nx: usize,
    pub ny: usize,
    /// Cell spacing, km.
    pub step: f64,
}

/// Configuration document for `spex returnmap`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnMapConfig {
    /// Stations file of the chain's run; fit-role stations carry the
    /// latent fields in the samples.
    pub stations: PathBuf,
    /// Thinned samples table written by the mcmc command.
    pub samples: PathBuf,
    /// Prediction grid; absent means predict at all stations.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Return period, years.
    pub period: f64,
    /// Correlation family of the chain's latent fields.
    #[serde(default = "d_exponential")]
    pub family: CorrFamily,
    #[serde(default)]
    pub family_kappa: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Serialize)]
struct ReturnMapResults<'a> {
    period: f64,
    n_samples: usize,
    n_cells: usize,
    /// Draws per cell discarded for an invalid parameter combination.
    n_missing: &'a [usize],
    map: &'static str,
}

fn parse_samples(path: &Path, ids: &[String]) -> Result<Vec<ChainState>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Schema {
            line: Some(1),
            message: "samples file is empty".into(),
        });
    };
    let expect = samples_header(ids);
    if header != expect {
        return Err(Error::Schema {
            line: Some(1),
            message: format!(
                "samples header does not match the stations file; expected '{expect}'"
            ),
        });
    }
    let d = ids.len();
    let want = 1 + 9 + 3 + 3 + 3 * d;
    let mut out = Vec::new();
    for (k, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lno = k + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != want {
            return Err(Error::Schema {
                line: Some(lno),
                message: format!("expected {want} fields, got {}", cells.len()),
            });
        }
        let mut nums = Vec::with_capacity(want - 1);
        for c in &cells[1..] {
            nums.push(c.parse::<f64>().map_err(|_| Error::Schema {
                line: Some(lno),
                message: format!("sample cell must be numeric, got '{c}'"),
            })?);
        }
        let beta = |b: usize| [nums[3 * b], nums[3 * b + 1], nums[3 * b + 2]];
        let field = |b: usize| nums[15 + b * d..15 + (b + 1) * d].to_vec();
        let state = ChainState {
            fields: [field(0), field(1), field(2)],
            betas: [beta(0), beta(1), beta(2)],
            sills: [nums[9], nums[10], nums[11]],
            ranges: [nums[12], nums[13], nums[14]],
        };
        state.validate(d)?;
        out.push(state);
    }
    Ok(out)
}

fn grid_sites(spec: &GridSpec) -> Result<SiteSet> {
    let mut ids = Vec::with_capacity(spec.nx * spec.ny);
    let mut coords = Vec::with_capacity(spec.nx * spec.ny);
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            ids.push(format!("g{:06}", iy * spec.nx + ix));
            coords.push([
                spec.x0 + ix as f64 * spec.step,
                spec.y0 + iy as f64 * spec.step,
            ]);
        }
    }
    SiteSet::new(ids, coords)
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg: ReturnMapConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut run = Run::new("returnmap", cfg.seed, config::echo_value(&cfg)?, &args.out)?;
    run.add_input("stations", &cfg.stations)?;
    run.add_input("samples", &cfg.samples)?;

    let stations = load_stations(&cfg.stations)?;
    let keep: Vec<usize> = (0..stations.roles.len())
        .filter(|&j| stations.roles[j] == Role::Fit)
        .collect();
    if keep.is_empty() {
        return Err(Error::InsufficientData("no station with role 'fit'".into()));
    }
    let fit_sites = SiteSet::new(
        keep.iter()
            .map(|&j| stations.sites.ids()[j].clone())
            .collect(),
        keep.iter().map(|&j| stations.sites.coord(j)).collect(),
    )?;
    let samples = parse_samples(&cfg.samples, fit_sites.ids())?;
    let grid = match &cfg.grid {
        Some(spec) => grid_sites(spec)?,
        None => stations.sites.clone(),
    };

    let map = posterior_return_map(
        &samples,
        &fit_sites,
        &grid,
        cfg.period,
        cfg.family,
        cfg.family_kappa,
        cfg.seed,
    )?;

    let mut csv = String::from("lon_km,lat_km,mean,q025,q975\n");
    for (k, coord) in map.coords.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_num(coord[0]),
            csv_num(coord[1]),
            csv_num(map.mean[k]),
            csv_num(map.q025[k]),
            csv_num(map.q975[k])
        ));
    }
    run.write_bytes("map.csv", csv.as_bytes())?;

    run.write_doc(
        "returnmap.json",
        &ReturnMapResults {
            period: map.period,
            n_samples: samples.len(),
            n_cells: grid.len(),
            n_missing: &map.n_missing,
            map: "map.csv",
        },
    )?;
    run.finish()
}
