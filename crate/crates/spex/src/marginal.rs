//! Marginal GEV surfaces over a station network and panel transforms.
//!
//! Site-level GEV parameters come from planar trend surfaces in km
//! coordinates. Annual maxima live in a year-by-site panel with NaN as the
//! missing value marker; the panel moves to unit Fréchet margins either
//! through the fitted surfaces or through per-site empirical ranks.

use crate::cov::SiteSet;
use crate::error::{Error, Result};
use crate::evd::{to_unit_frechet, GevParams};
use serde::{Deserialize, Serialize};

/// Affine trend in km coordinates: beta0 + beta1 lon + beta2 lat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendSurface {
    pub beta0: f64,
    /// Slope per km of longitude.
    pub beta1: f64,
    /// Slope per km of latitude.
    pub beta2: f64,
}

impl TrendSurface {
    pub fn constant(beta0: f64) -> Self {
        Self {
            beta0,
            beta1: 0.0,
            beta2: 0.0,
        }
    }

    pub fn at(&self, coord: [f64; 2]) -> f64 {
        self.beta0 + self.beta1 * coord[0] + self.beta2 * coord[1]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0.is_finite() && self.beta1.is_finite() && self.beta2.is_finite()) {
            return Err(Error::invalid(format!("non-finite trend surface {self:?}")));
        }
        Ok(())
    }
}

/// GEV location, scale, and shape trend surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub eta: TrendSurface,
    pub tau: TrendSurface,
    pub xi: TrendSurface,
}

impl SurfaceModel {
    pub fn validate(&self) -> Result<()> {
        self.eta.validate()?;
        self.tau.validate()?;
        self.xi.validate()
    }

    /// GEV parameters at a coordinate; the label names the site in errors.
    pub fn params_at(&self, coord: [f64; 2], label: &str) -> Result<GevParams> {
        self.validate()?;
        let tau = self.tau.at(coord);
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::NonPositiveScale {
                site: label.to_string(),
                tau,
            });
        }
        GevParams::new(self.eta.at(coord), tau, self.xi.at(coord))
    }
}

/// GEV parameters implied by the surfaces at one site of a network.
pub fn gev_at_site(model: &SurfaceModel, sites: &SiteSet, index: usize) -> Result<GevParams> {
    if index >= sites.len() {
        return Err(Error::shape(format!(
            "site index {index} out of range for {} sites",
            sites.len()
        )));
    }
    model.params_at(sites.coord(index), &sites.ids()[index])
}

/// Year-by-site panel of annual maxima. NaN marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximaPanel {
    sites: SiteSet,
    years: Vec<i64>,
    /// Row per year, column per site.
    values: Vec<Vec<f64>>,
}

impl MaximaPanel {
    pub fn new(sites: SiteSet, years: Vec<i64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if years.len() != values.len() {
            return Err(Error::shape(format!(
                "{} years vs {} value rows",
                years.len(),
                values.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for y in &years {
            if !seen.insert(*y) {
                return Err(Error::invalid(format!("duplicate year {y}")));
            }
        }
        for (y, row) in years.iter().zip(&values) {
            if row.len() != sites.len() {
                return Err(Error::shape(format!(
                    "year {y} has {} values for {} sites",
                    row.len(),
                    sites.len()
                )));
            }
            for v in row {
                if v.is_infinite() {
                    return Err(Error::invalid(format!("infinite value in year {y}")));
                }
            }
        }
        Ok(Self {
            sites,
            years,
            values,
        })
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn value(&self, year_idx: usize, site_idx: usize) -> f64 {
        self.values[year_idx][site_idx]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Values over years at one site, missing cells included.
    pub fn site_column(&self, site_idx: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[site_idx]).collect()
    }

    pub fn non_missing_count(&self, site_idx: usize) -> usize {
        self.values
            .iter()
            .filter(|row| row[site_idx].is_finite())
            .count()
    }

    /// Apply a cellwise transform, keeping missing cells missing.
    /// The closure receives (site index, year, value).
    pub fn map_cells<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, i64, f64) -> Result<f64>,
    {
        let mut values = self.values.clone();
        for (t, row) in values.iter_mut().enumerate() {
            for (d, v) in row.iter_mut().enumerate() {
                if v.is_finite() {
                    *v = f(d, self.years[t], *v)?;
                }
            }
        }
        Ok(Self {
            sites: self.sites.clone(),
            years: self.years.clone(),
            values,
        })
    }
}

/// Transform a maxima panel to unit Fréchet margins under the fitted
/// surfaces. Missing cells stay missing; support violations are collected
/// across the whole panel and reported together.
pub fn panel_to_frechet(panel: &MaximaPanel, model: &SurfaceModel) -> Result<MaximaPanel> {
    let mut params = Vec::with_capacity(panel.n_sites());
    for d in 0..panel.n_sites() {
        params.push(gev_at_site(model, panel.sites(), d)?);
    }
    let mut bad: Vec<(String, i64)> = Vec::new();
    let out = panel.map_cells(|d, year, y| match to_unit_frechet(y, &params[d]) {
        Ok(z) => Ok(z),
        Err(Error::OutOfSupport(_)) => {
            bad.push((panel.sites().ids()[d].clone(), year));
            Ok(f64::NAN)
        }
        Err(e) => Err(e),
    })?;
    if !bad.is_empty() {
        bad.sort();
        return Err(Error::OutOfSupportCells { cells: bad });
    }
    Ok(out)
}

/// Per-site empirical uniform scores rank/(n+1), with average ranks on
/// ties. Missing cells stay missing.
pub fn empirical_uniform(panel: &MaximaPanel) -> Result<MaximaPanel> {
    let n_sites = panel.n_sites();
    let mut values = panel.rows().to_vec();
    for d in 0..n_sites {
        let mut idx: Vec<usize> = (0..panel.n_years())
            .filter(|&t| panel.value(t, d).is_finite())
            .collect();
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "site {} has {} non-missing values, need >= 2 for empirical ranks",
                panel.sites().ids()[d],
                idx.len()
            )));
        }
        idx.sort_by(|&a, &b| panel.value(a, d).partial_cmp(&panel.value(b, d)).unwrap());
        let denom = (idx.len() + 1) as f64;
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && panel.value(idx[j + 1], d) == panel.value(idx[i], d) {
                j += 1;
            }
            // 1-based average rank over the tied block.
            let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
            for &t in &idx[i..=j] {
                values[t][d] = rank / denom;
            }
            i = j + 1;
        }
    }
    MaximaPanel::new(panel.sites().clone(), panel.years().to_vec(), values)
}
