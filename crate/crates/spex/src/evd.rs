//! Generalized extreme-value and generalized Pareto marginals.
//!
//! The GEV distribution function with location `eta`, scale `tau > 0`, and
//! shape `xi` is
//!
//! ```text
//! H(y) = exp[ -{1 + xi (y - eta)/tau}_+^(-1/xi) ]     (xi != 0)
//! H(y) = exp[ -exp{-(y - eta)/tau} ]                  (xi  = 0)
//! ```
//!
//! with `{u}_+ = max(u, 0)`. Shapes with `|xi|` below [`XI_GUMBEL_SWITCH`]
//! are evaluated on the Gumbel branch. The unit Fréchet transform
//! `z = {1 + xi (y - eta)/tau}^(1/xi)` (`exp{(y - eta)/tau}` for `xi = 0`)
//! maps a GEV variate to pr(Z <= z) = exp(-1/z).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Shapes closer to zero than this are treated as Gumbel.
pub const XI_GUMBEL_SWITCH: f64 = 1e-8;

/// GEV location, scale, shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub eta: f64,
    pub tau: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(eta: f64, tau: f64, xi: f64) -> Result<Self> {
        let p = Self { eta, tau, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.tau.is_finite() && self.xi.is_finite()) {
            return Err(Error::invalid(format!(
                "GEV parameters must be finite, got ({}, {}, {})",
                self.eta, self.tau, self.xi
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::invalid(format!(
                "GEV scale must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn is_gumbel(&self) -> bool {
        self.xi.abs() < XI_GUMBEL_SWITCH
    }

    /// Finite lower endpoint of the support, if any (xi > 0).
    pub fn lower_endpoint(&self) -> Option<f64> {
        (!self.is_gumbel() && self.xi > 0.0).then(|| self.eta - self.tau / self.xi)
    }

    /// Finite upper endpoint of the support, if any (xi < 0).
    pub fn upper_endpoint(&self) -> Option<f64> {
        (!self.is_gumbel() && self.xi < 0.0).then(|| self.eta - self.tau / self.xi)
    }
}

/// GPD scale and shape for threshold exceedances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma_u: f64,
    pub xi: f64,
}

impl GpdParams {
    pub fn new(sigma_u: f64, xi: f64) -> Result<Self> {
        let p = Self { sigma_u, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_u.is_finite() && self.xi.is_finite()) {
            return Err(Error::invalid(format!(
                "GPD parameters must be finite, got ({}, {})",
                self.sigma_u, self.xi
            )));
        }
        if self.sigma_u <= 0.0 {
            return Err(Error::invalid(format!(
                "GPD scale must be positive, got {}",
                self.sigma_u
            )));
        }
        Ok(())
    }
}

/// GEV distribution function. Returns 0 below a finite lower endpoint and 1
/// above a finite upper endpoint.
pub fn gev_cdf(y: f64, params: &GevParams) -> Result<f64> {
    params.validate()?;
    if !y.is_finite() {
        return Err(Error::domain(format!("gev_cdf needs finite y, got {y}")));
    }
    let s = (y - params.eta) / params.tau;
    if params.is_gumbel() {
        return Ok((-(-s).exp()).exp());
    }
    let t = 1.0 + params.xi * s;
    if t <= 0.0 {
        return Ok(if params.xi > 0.0 { 0.0 } else { 1.0 });
    }
    Ok((-t.powf(-1.0 / params.xi)).exp())
}

/// GEV log-density. Returns -inf outside the support.
pub fn gev_logpdf(y: f64, params: &GevParams) -> Result<f64> {
    params.validate()?;
    if !y.is_finite() {
        return Err(Error::domain(format!("gev_logpdf needs finite y, got {y}")));
    }
    let s = (y - params.eta) / params.tau;
    if params.is_gumbel() {
        return Ok(-params.tau.ln() - s - (-s).exp());
    }
    let t = 1.0 + params.xi * s;
    if t <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let inv_xi = 1.0 / params.xi;
    Ok(-params.tau.ln() - (1.0 + inv_xi) * t.ln() - t.powf(-inv_xi))
}

/// Level exceeded once every `period` years on average (`period > 1`):
/// the `1 - 1/period` quantile of the GEV.
pub fn return_level(period: f64, params: &GevParams) -> Result<f64> {
    params.validate()?;
    if !(period.is_finite() && period > 1.0) {
        return Err(Error::domain(format!(
            "return period must exceed 1 year, got {period}"
        )));
    }
    // -log p with p = 1 - 1/period, kept accurate for large periods.
    let neg_log_p = -(-1.0 / period).ln_1p();
    if params.is_gumbel() {
        Ok(params.eta - params.tau * neg_log_p.ln())
    } else {
        Ok(params.eta + params.tau / params.xi * (neg_log_p.powf(-params.xi) - 1.0))
    }
}

/// GPD survivor function pr(X > x) for exceedance size `x >= 0`.
pub fn gpd_survivor(x: f64, params: &GpdParams) -> Result<f64> {
    params.validate()?;
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::domain(format!(
            "gpd_survivor needs x >= 0, got {x}"
        )));
    }
    if params.xi.abs() < XI_GUMBEL_SWITCH {
        return Ok((-x / params.sigma_u).exp());
    }
    let t = 1.0 + params.xi * x / params.sigma_u;
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(t.powf(-1.0 / params.xi))
}

/// Map an observation to the unit Fréchet scale. Errors outside the support.
pub fn to_unit_frechet(y: f64, params: &GevParams) -> Result<f64> {
    params.validate()?;
    if !y.is_finite() {
        return Err(Error::domain(format!(
            "to_unit_frechet needs finite y, got {y}"
        )));
    }
    let s = (y - params.eta) / params.tau;
    if params.is_gumbel() {
        return Ok(s.exp());
    }
    let t = 1.0 + params.xi * s;
    if t <= 0.0 {
        return Err(Error::OutOfSupport(format!(
            "y = {y} outside GEV support (eta={}, tau={}, xi={})",
            params.eta, params.tau, params.xi
        )));
    }
    Ok(t.powf(1.0 / params.xi))
}

/// Inverse of [`to_unit_frechet`] for `z > 0`.
pub fn from_unit_frechet(z: f64, params: &GevParams) -> Result<f64> {
    params.validate()?;
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::domain(format!(
            "from_unit_frechet needs z > 0, got {z}"
        )));
    }
    if params.is_gumbel() {
        Ok(params.eta + params.tau * z.ln())
    } else {
        Ok(params.eta + params.tau * (z.powf(params.xi) - 1.0) / params.xi)
    }
}

/// Log of dz/dy for the unit Fréchet transform at `y`:
/// dz/dy = z^(1-xi) / tau. Errors outside the support.
pub fn frechet_log_jacobian(y: f64, params: &GevParams) -> Result<f64> {
    let z = to_unit_frechet(y, params)?;
    Ok((1.0 - params.xi) * z.ln() - params.tau.ln())
}

/// Map unit Fréchet to standard Gumbel: log z.
pub fn frechet_to_gumbel(z: f64) -> Result<f64> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::domain(format!(
            "frechet_to_gumbel needs z > 0, got {z}"
        )));
    }
    Ok(z.ln())
}
