//! Pairwise composite likelihood fitting with sandwich variances.
//!
//! Margins and dependence are estimated jointly: trend surface
//! coefficients enter through the per-site GEV transform to unit Fréchet,
//! dependence parameters through the bivariate density of each retained
//! site pair. Because a composite likelihood is a working objective
//! rather than a true one, standard errors come from the sandwich
//! estimator and model ranking from its information criterion rather
//! than from raw likelihood curvature.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::cov::{self, SiteSet};
use crate::dep::{bivariate_logdensity, extremal_coefficient, DependenceSpec};
use crate::error::{Error, Result};
use crate::evd::{frechet_log_jacobian, gev_logpdf, to_unit_frechet};
use crate::kernels::{normal_quantile, student_t_quantile};
use crate::marginal::{MaximaPanel, SurfaceModel, TrendSurface};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::{indexed_stream, streams};
use crate::sim::fmadogram_curve;

/// Scale on which a parameter is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    /// Optimized as is.
    Identity,
    /// Optimized as its natural logarithm; keeps the parameter positive.
    Log,
}

/// One named model parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Slot {
    /// Stable name, e.g. "eta.0" or "dep.lambda".
    pub name: String,
    /// Current value on the natural scale.
    pub value: f64,
    /// Fixed slots keep their value during optimization.
    pub fixed: bool,
    /// Optimization scale.
    pub transform: Transform,
}

/// Ordered collection of marginal and dependence parameters with a
/// two-way mapping to the optimizer's unconstrained coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterVector {
    slots: Vec<Slot>,
}

fn trend_slots(prefix: &str, t: &TrendSurface, with_trend: bool, out: &mut Vec<Slot>) {
    out.push(Slot {
        name: format!("{prefix}.0"),
        value: t.beta0,
        fixed: false,
        transform: Transform::Identity,
    });
    out.push(Slot {
        name: format!("{prefix}.x"),
        value: t.beta1,
        fixed: !with_trend,
        transform: Transform::Identity,
    });
    out.push(Slot {
        name: format!("{prefix}.y"),
        value: t.beta2,
        fixed: !with_trend,
        transform: Transform::Identity,
    });
}

fn corr_slots(corr: &cov::CorrelationSpec, out: &mut Vec<Slot>) {
    out.push(Slot {
        name: "dep.lambda".into(),
        value: corr.lambda,
        fixed: false,
        transform: Transform::Log,
    });
    if let Some(kappa) = corr.kappa {
        out.push(Slot {
            name: "dep.kappa".into(),
            value: kappa,
            fixed: false,
            transform: Transform::Log,
        });
    }
}

fn dependence_slots(spec: &DependenceSpec, out: &mut Vec<Slot>) {
    match spec {
        DependenceSpec::Smith {
            omega11,
            omega12,
            omega22,
        } => {
            // An isotropic template keeps a single variance slot so the
            // constraint omega22 = omega11, omega12 = 0 survives the fit.
            if *omega12 == 0.0 && omega11 == omega22 {
                out.push(Slot {
                    name: "dep.omega".into(),
                    value: *omega11,
                    fixed: false,
                    transform: Transform::Log,
                });
            } else {
                out.push(Slot {
                    name: "dep.omega11".into(),
                    value: *omega11,
                    fixed: false,
                    transform: Transform::Log,
                });
                out.push(Slot {
                    name: "dep.omega12".into(),
                    value: *omega12,
                    fixed: false,
                    transform: Transform::Identity,
                });
                out.push(Slot {
                    name: "dep.omega22".into(),
                    value: *omega22,
                    fixed: false,
                    transform: Transform::Log,
                });
            }
        }
        DependenceSpec::Schlather { corr } | DependenceSpec::GaussianCopula { corr } => {
            corr_slots(corr, out)
        }
        DependenceSpec::RandomSetSchlather { corr, disk_radius } => {
            corr_slots(corr, out);
            out.push(Slot {
                name: "dep.radius".into(),
                value: *disk_radius,
                fixed: false,
                transform: Transform::Log,
            });
        }
        DependenceSpec::GeometricGaussian { sigma2, corr } => {
            out.push(Slot {
                name: "dep.sigma2".into(),
                value: *sigma2,
                fixed: false,
                transform: Transform::Log,
            });
            corr_slots(corr, out);
        }
        DependenceSpec::BrownResnick { vario } => {
            out.push(Slot {
                name: "dep.lambda".into(),
                value: vario.lambda,
                fixed: false,
                transform: Transform::Log,
            });
            out.push(Slot {
                name: "dep.alpha".into(),
                value: vario.alpha,
                fixed: false,
                transform: Transform::Log,
            });
        }
        DependenceSpec::HuslerReiss { lambda, kappa } => {
            out.push(Slot {
                name: "dep.lambda".into(),
                value: *lambda,
                fixed: false,
                transform: Transform::Log,
            });
            out.push(Slot {
                name: "dep.kappa".into(),
                value: *kappa,
                fixed: false,
                transform: Transform::Log,
            });
        }
        DependenceSpec::ExtremalT { nu, corr } | DependenceSpec::StudentTCopula { nu, corr } => {
            out.push(Slot {
                name: "dep.nu".into(),
                value: *nu,
                fixed: false,
                transform: Transform::Log,
            });
            corr_slots(corr, out);
        }
        DependenceSpec::Independence => {}
    }
}

impl ParameterVector {
    /// Builds the parameter layout for a marginal surface model plus a
    /// dependence template. Trend slopes for surfaces with `*_trend`
    /// false are fixed at their template values; correlation nugget and
    /// anisotropy always pass through the template unchanged.
    pub fn for_model(
        model: &SurfaceModel,
        spec: &DependenceSpec,
        eta_trend: bool,
        tau_trend: bool,
        xi_trend: bool,
    ) -> Result<Self> {
        model.validate()?;
        spec.validate()?;
        let mut slots = Vec::new();
        trend_slots("eta", &model.eta, eta_trend, &mut slots);
        trend_slots("tau", &model.tau, tau_trend, &mut slots);
        trend_slots("xi", &model.xi, xi_trend, &mut slots);
        dependence_slots(spec, &mut slots);
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.slots
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(self.slots[self.position(name)?].value)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self.position(name)?;
        self.slots[i].value = value;
        Ok(())
    }

    /// Freezes a parameter at its current value.
    pub fn fix(&mut self, name: &str) -> Result<()> {
        let i = self.position(name)?;
        self.slots[i].fixed = true;
        Ok(())
    }

    pub fn n_free(&self) -> usize {
        self.slots.iter().filter(|s| !s.fixed).count()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.slots
            .iter()
            .filter(|s| !s.fixed)
            .map(|s| s.name.clone())
            .collect()
    }

    /// Free parameters on the optimizer scale.
    pub fn to_free(&self) -> Result<Vec<f64>> {
        self.slots
            .iter()
            .filter(|s| !s.fixed)
            .map(|s| match s.transform {
                Transform::Identity => Ok(s.value),
                Transform::Log => {
                    if s.value > 0.0 {
                        Ok(s.value.ln())
                    } else {
                        Err(Error::invalid(format!(
                            "{} must be positive to log transform, got {}",
                            s.name, s.value
                        )))
                    }
                }
            })
            .collect()
    }

    /// Rebuilds the vector from optimizer coordinates.
    pub fn with_free(&self, z: &[f64]) -> Result<Self> {
        if z.len() != self.n_free() {
            return Err(Error::shape(format!(
                "{} coordinates for {} free parameters",
                z.len(),
                self.n_free()
            )));
        }
        let mut out = self.clone();
        let mut k = 0;
        for s in &mut out.slots {
            if !s.fixed {
                s.value = match s.transform {
                    Transform::Identity => z[k],
                    Transform::Log => z[k].exp(),
                };
                k += 1;
            }
        }
        Ok(out)
    }

    /// Marginal surface model implied by the current values.
    pub fn surface_model(&self) -> Result<SurfaceModel> {
        let t = |p: &str| -> Result<TrendSurface> {
            Ok(TrendSurface {
                beta0: self.get(&format!("{p}.0"))?,
                beta1: self.get(&format!("{p}.x"))?,
                beta2: self.get(&format!("{p}.y"))?,
            })
        };
        Ok(SurfaceModel {
            eta: t("eta")?,
            tau: t("tau")?,
            xi: t("xi")?,
        })
    }

    /// Dependence model implied by the current values, with structural
    /// choices (family, nugget, anisotropy) taken from the template.
    pub fn dependence(&self, template: &DependenceSpec) -> Result<DependenceSpec> {
        let corr_from = |corr: &cov::CorrelationSpec| -> Result<cov::CorrelationSpec> {
            let mut out = corr.clone();
            out.lambda = self.get("dep.lambda")?;
            if corr.kappa.is_some() {
                out.kappa = Some(self.get("dep.kappa")?);
            }
            Ok(out)
        };
        Ok(match template {
            DependenceSpec::Smith {
                omega11, omega12, ..
            } => {
                if *omega12 == 0.0 && omega11 == &template_omega22(template) {
                    let w = self.get("dep.omega")?;
                    DependenceSpec::Smith {
                        omega11: w,
                        omega12: 0.0,
                        omega22: w,
                    }
                } else {
                    DependenceSpec::Smith {
                        omega11: self.get("dep.omega11")?,
                        omega12: self.get("dep.omega12")?,
                        omega22: self.get("dep.omega22")?,
                    }
                }
            }
            DependenceSpec::Schlather { corr } => DependenceSpec::Schlather {
                corr: corr_from(corr)?,
            },
            DependenceSpec::RandomSetSchlather { corr, .. } => {
                DependenceSpec::RandomSetSchlather {
                    corr: corr_from(corr)?,
                    disk_radius: self.get("dep.radius")?,
                }
            }
            DependenceSpec::GeometricGaussian { corr, .. } => DependenceSpec::GeometricGaussian {
                sigma2: self.get("dep.sigma2")?,
                corr: corr_from(corr)?,
            },
            DependenceSpec::BrownResnick { .. } => DependenceSpec::BrownResnick {
                vario: cov::VariogramSpec::new(self.get("dep.lambda")?, self.get("dep.alpha")?)?,
            },
            DependenceSpec::HuslerReiss { .. } => DependenceSpec::HuslerReiss {
                lambda: self.get("dep.lambda")?,
                kappa: self.get("dep.kappa")?,
            },
            DependenceSpec::ExtremalT { corr, .. } => DependenceSpec::ExtremalT {
                nu: self.get("dep.nu")?,
                corr: corr_from(corr)?,
            },
            DependenceSpec::GaussianCopula { corr } => DependenceSpec::GaussianCopula {
                corr: corr_from(corr)?,
            },
            DependenceSpec::StudentTCopula { corr, .. } => DependenceSpec::StudentTCopula {
                nu: self.get("dep.nu")?,
                corr: corr_from(corr)?,
            },
            DependenceSpec::Independence => DependenceSpec::Independence,
        })
    }
}

fn template_omega22(spec: &DependenceSpec) -> f64 {
    match spec {
        DependenceSpec::Smith { omega22, .. } => *omega22,
        _ => f64::NAN,
    }
}

/// Site pairs entering the composite likelihood.
#[derive(Debug, Clone)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
}

impl PairSet {
    /// Every unordered pair.
    pub fn all(sites: &SiteSet) -> Self {
        let d = sites.len();
        let mut pairs = Vec::with_capacity(d * (d - 1) / 2);
        for i in 0..d {
            for j in (i + 1)..d {
                pairs.push((i, j));
            }
        }
        Self { pairs }
    }

    /// Pairs closer than `max_distance` km. Distant pairs carry little
    /// dependence information, so dropping them sharpens and speeds the
    /// fit.
    pub fn within(sites: &SiteSet, max_distance: f64) -> Result<Self> {
        if !(max_distance.is_finite() && max_distance > 0.0) {
            return Err(Error::invalid(format!(
                "pair distance cutoff must be positive, got {max_distance}"
            )));
        }
        let mut pairs = Vec::new();
        let d = sites.len();
        for i in 0..d {
            for j in (i + 1)..d {
                if sites.distance(i, j) <= max_distance {
                    pairs.push((i, j));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no site pair within {max_distance} km"
            )));
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Per-cell unit Fréchet transform cache: (z, log dz/dy) or None when
/// missing. Soft failure (support violation, bad scale) yields Ok(None)
/// at the whole-cache level so optimizers can retreat.
fn frechet_cache(
    panel: &MaximaPanel,
    model: &SurfaceModel,
) -> Result<Option<Vec<Vec<Option<(f64, f64)>>>>> {
    let sites = panel.sites();
    let mut params = Vec::with_capacity(sites.len());
    for d in 0..sites.len() {
        match model.params_at(sites.coord(d), &sites.ids()[d]) {
            Ok(p) => params.push(p),
            Err(Error::NonPositiveScale { .. }) | Err(Error::InvalidParameter(_)) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        }
    }
    let mut cache = Vec::with_capacity(panel.n_years());
    for t in 0..panel.n_years() {
        let mut row = Vec::with_capacity(sites.len());
        for d in 0..sites.len() {
            let y = panel.value(t, d);
            if !y.is_finite() {
                row.push(None);
                continue;
            }
            match to_unit_frechet(y, &params[d]) {
                Ok(z) => match frechet_log_jacobian(y, &params[d]) {
                    Ok(lj) => row.push(Some((z, lj))),
                    Err(Error::OutOfSupport(_)) | Err(Error::Domain(_)) => return Ok(None),
                    Err(e) => return Err(e),
                },
                Err(Error::OutOfSupport(_)) | Err(Error::Domain(_)) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
        cache.push(row);
    }
    Ok(Some(cache))
}

/// Negative log pairwise composite likelihood, split by year.
///
/// Parameter values that push any observation outside the marginal
/// support, or any pair density to a non-finite value, return +inf rows
/// so the optimizer backs away rather than failing.
pub fn pairwise_nll_by_year(
    panel: &MaximaPanel,
    model: &SurfaceModel,
    spec: &DependenceSpec,
    pairs: &PairSet,
) -> Result<Vec<f64>> {
    let n_years = panel.n_years();
    let inf = || Ok(vec![f64::INFINITY; n_years]);
    if spec.validate().is_err() {
        return inf();
    }
    let cache = match frechet_cache(panel, model)? {
        Some(c) => c,
        None => return inf(),
    };
    let sites = panel.sites();
    let seps: Vec<[f64; 2]> = pairs
        .pairs()
        .iter()
        .map(|&(i, j)| sites.separation(i, j))
        .collect();
    // Years are independent given the cache, so they parallelize; the
    // ordered collect keeps every sum bitwise identical to a sequential
    // pass regardless of thread count.
    let year_nll = |row: &Vec<Option<(f64, f64)>>| -> Result<f64> {
        let mut acc = 0.0;
        for (&(i, j), h) in pairs.pairs().iter().zip(&seps) {
            if let (Some((zi, lji)), Some((zj, ljj))) = (row[i], row[j]) {
                match bivariate_logdensity(zi, zj, *h, spec) {
                    Ok(ld) => acc -= ld + lji + ljj,
                    Err(Error::NonFiniteDensity { .. })
                    | Err(Error::Domain(_))
                    | Err(Error::InvalidParameter(_)) => return Ok(f64::INFINITY),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(acc)
    };
    let rows: Result<Vec<f64>> = cache.par_iter().map(year_nll).collect();
    let rows = rows?;
    if rows.iter().any(|v| v.is_infinite()) {
        return inf();
    }
    Ok(rows)
}

/// Total negative log pairwise composite likelihood.
pub fn pairwise_nll(
    panel: &MaximaPanel,
    model: &SurfaceModel,
    spec: &DependenceSpec,
    pairs: &PairSet,
) -> Result<f64> {
    Ok(pairwise_nll_by_year(panel, model, spec, pairs)?.iter().sum())
}

/// Negative log marginal GEV likelihood (no dependence), split by year.
pub fn marginal_nll_by_year(panel: &MaximaPanel, model: &SurfaceModel) -> Result<Vec<f64>> {
    let sites = panel.sites();
    let n_years = panel.n_years();
    let inf = || Ok(vec![f64::INFINITY; n_years]);
    let mut params = Vec::with_capacity(sites.len());
    for d in 0..sites.len() {
        match model.params_at(sites.coord(d), &sites.ids()[d]) {
            Ok(p) => params.push(p),
            Err(Error::NonPositiveScale { .. }) | Err(Error::InvalidParameter(_)) => {
                return inf()
            }
            Err(e) => return Err(e),
        }
    }
    let mut out = vec![0.0; n_years];
    for t in 0..n_years {
        for d in 0..sites.len() {
            let y = panel.value(t, d);
            if !y.is_finite() {
                continue;
            }
            match gev_logpdf(y, &params[d]) {
                Ok(lp) => out[t] -= lp,
                Err(Error::OutOfSupport(_)) | Err(Error::Domain(_)) => return inf(),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Full joint negative log likelihood for the elliptical copula models,
/// split by year. Missing cells are handled by marginalizing to each
/// year's observed subvector, which for these copulas is again the same
/// copula on the subset.
pub fn full_nll_elliptical_by_year(
    panel: &MaximaPanel,
    model: &SurfaceModel,
    spec: &DependenceSpec,
) -> Result<Vec<f64>> {
    let n_years = panel.n_years();
    let inf = || Ok(vec![f64::INFINITY; n_years]);
    let (nu, corr) = match spec {
        DependenceSpec::GaussianCopula { corr } => (None, corr),
        DependenceSpec::StudentTCopula { nu, corr } => (Some(*nu), corr),
        _ => {
            return Err(Error::UnsupportedFamily(
                "full likelihood is only defined for the elliptical copula models".into(),
            ))
        }
    };
    if spec.validate().is_err() {
        return inf();
    }
    let cache = match frechet_cache(panel, model)? {
        Some(c) => c,
        None => return inf(),
    };
    let sites = panel.sites();
    let d_all = sites.len();
    let full_r = match cov::corr_matrix(sites, corr) {
        Ok(r) => r,
        Err(Error::InvalidParameter(_)) => return inf(),
        Err(e) => return Err(e),
    };

    let mut out = vec![0.0; n_years];
    for (t, row) in cache.iter().enumerate() {
        let obs: Vec<usize> = (0..d_all).filter(|&d| row[d].is_some()).collect();
        if obs.is_empty() {
            continue;
        }
        // Unit Fréchet margin and transform Jacobian for every observed cell.
        let mut xs = Vec::with_capacity(obs.len());
        for &d in &obs {
            let (z, lj) = row[d].unwrap();
            out[t] -= -2.0 * z.ln() - 1.0 / z + lj;
            let u = (-1.0 / z).exp().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
            let x = match nu {
                None => normal_quantile(u)?,
                Some(nu) => student_t_quantile(u, nu)?,
            };
            xs.push(x);
        }
        if obs.len() == 1 {
            continue;
        }
        let k = obs.len();
        let mut r_sub = DMatrix::<f64>::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                r_sub[(a, b)] = full_r[(obs[a], obs[b])];
            }
        }
        let (l, _) = match cov::cholesky(&r_sub) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite { .. }) => return inf(),
            Err(e) => return Err(e),
        };
        let log_det: f64 = 2.0 * (0..k).map(|a| l[(a, a)].ln()).sum::<f64>();
        let x = DVector::from_column_slice(&xs);
        let w = nalgebra::Cholesky::pack_dirty(l).solve(&x);
        let q = x.dot(&w);
        let copula_ld = match nu {
            None => {
                let xtx = x.dot(&x);
                -0.5 * log_det - 0.5 * (q - xtx)
            }
            Some(nu) => {
                let kf = k as f64;
                let tail: f64 = xs.iter().map(|x| (1.0 + x * x / nu).ln()).sum();
                ln_gamma((nu + kf) / 2.0) + (kf - 1.0) * ln_gamma(nu / 2.0)
                    - kf * ln_gamma((nu + 1.0) / 2.0)
                    - 0.5 * log_det
                    - (nu + kf) / 2.0 * (1.0 + q / nu).ln()
                    + (nu + 1.0) / 2.0 * tail
            }
        };
        if !copula_ld.is_finite() {
            return inf();
        }
        out[t] -= copula_ld;
    }
    Ok(out)
}

/// Total full negative log likelihood for the elliptical copula models.
pub fn full_nll_elliptical(
    panel: &MaximaPanel,
    model: &SurfaceModel,
    spec: &DependenceSpec,
) -> Result<f64> {
    Ok(full_nll_elliptical_by_year(panel, model, spec)?.iter().sum())
}

fn fd_step(x: f64) -> f64 {
    (1e-4 * x.abs()).max(1e-6)
}

/// Central difference gradient. Errors if any displaced evaluation is
/// non-finite.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let dn = f(&xp);
        xp[i] = x[i];
        if !(up.is_finite() && dn.is_finite()) {
            return Err(Error::domain(format!(
                "objective not finite near coordinate {i} during differentiation"
            )));
        }
        g.push((up - dn) / (2.0 * h));
    }
    Ok(g)
}

/// Central difference Hessian, symmetrized.
pub fn fd_hessian(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let p = x.len();
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::domain("objective not finite at the expansion point"));
    }
    let mut h = DMatrix::<f64>::zeros(p, p);
    let mut xp = x.to_vec();
    for i in 0..p {
        let hi = fd_step(x[i]);
        xp[i] = x[i] + hi;
        let up = f(&xp);
        xp[i] = x[i] - hi;
        let dn = f(&xp);
        xp[i] = x[i];
        if !(up.is_finite() && dn.is_finite()) {
            return Err(Error::domain(format!(
                "objective not finite near coordinate {i} during differentiation"
            )));
        }
        h[(i, i)] = (up - 2.0 * f0 + dn) / (hi * hi);
        for j in (i + 1)..p {
            let hj = fd_step(x[j]);
            let mut eval = |si: f64, sj: f64, f: &mut dyn FnMut(&[f64]) -> f64| {
                xp[i] = x[i] + si * hi;
                xp[j] = x[j] + sj * hj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let pp = eval(1.0, 1.0, f);
            let pm = eval(1.0, -1.0, f);
            let mp = eval(-1.0, 1.0, f);
            let mm = eval(-1.0, -1.0, f);
            if ![pp, pm, mp, mm].iter().all(|v| v.is_finite()) {
                return Err(Error::domain(format!(
                    "objective not finite near coordinates ({i}, {j}) during differentiation"
                )));
            }
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Moment starts for the marginal surfaces: per-site Gumbel moment
/// estimates, then least squares of those on the coordinates when a
/// trend is requested.
pub fn marginal_start(panel: &MaximaPanel, eta_trend: bool, tau_trend: bool) -> Result<SurfaceModel> {
    let sites = panel.sites();
    let mut coords = Vec::new();
    let mut etas = Vec::new();
    let mut taus = Vec::new();
    for d in 0..sites.len() {
        let col: Vec<f64> = panel
            .site_column(d)
            .into_iter()
            .filter(|v| v.is_finite())
            .collect();
        if col.len() < 3 {
            continue;
        }
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let tau = (var.sqrt() * 6f64.sqrt() / std::f64::consts::PI).max(1e-3);
        // Gumbel moment relations: mean = eta + Euler-Mascheroni * tau.
        let eta = mean - 0.5772156649015329 * tau;
        coords.push(sites.coord(d));
        etas.push(eta);
        taus.push(tau);
    }
    if coords.is_empty() {
        return Err(Error::InsufficientData(
            "no site has 3 observations for moment starts".into(),
        ));
    }
    let ls = |vals: &[f64], trend: bool| -> TrendSurface {
        if !trend || coords.len() < 4 {
            TrendSurface::constant(vals.iter().sum::<f64>() / vals.len() as f64)
        } else {
            let n = coords.len();
            let mut xtx = DMatrix::<f64>::zeros(3, 3);
            let mut xty = DVector::<f64>::zeros(3);
            for (c, v) in coords.iter().zip(vals) {
                let row = [1.0, c[0], c[1]];
                for a in 0..3 {
                    for b in 0..3 {
                        xtx[(a, b)] += row[a] * row[b];
                    }
                    xty[a] += row[a] * v;
                }
            }
            // Tiny ridge keeps collinear site layouts solvable.
            let scale = xtx.trace() / 3.0;
            for a in 0..3 {
                xtx[(a, a)] += 1e-10 * scale.max(1.0);
            }
            match xtx.cholesky() {
                Some(ch) => {
                    let beta = ch.solve(&xty);
                    TrendSurface {
                        beta0: beta[0],
                        beta1: beta[1],
                        beta2: beta[2],
                    }
                }
                None => {
                    let _ = n;
                    TrendSurface::constant(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            }
        }
    };
    Ok(SurfaceModel {
        eta: ls(&etas, eta_trend),
        tau: ls(&taus, tau_trend),
        xi: TrendSurface::constant(0.1),
    })
}

/// Madogram-matched start for the dependence parameters: grid search of
/// the range parameter against the empirical extremal coefficient curve,
/// other parameters kept at template values. Copula templates fall back
/// to the median pair distance since they have no extremal coefficient
/// curve to match.
pub fn dependence_start(template: &DependenceSpec, panel: &MaximaPanel) -> Result<DependenceSpec> {
    let sites = panel.sites();
    if sites.len() < 2 {
        return Ok(template.clone());
    }
    let mut dists = Vec::new();
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            dists.push(sites.distance(i, j));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2].max(1e-3);

    let set_range = |spec: &DependenceSpec, lambda: f64| -> DependenceSpec {
        let mut s = spec.clone();
        match &mut s {
            DependenceSpec::Smith { .. } => {
                s = DependenceSpec::Smith {
                    omega11: lambda * lambda,
                    omega12: 0.0,
                    omega22: lambda * lambda,
                };
            }
            DependenceSpec::Schlather { corr }
            | DependenceSpec::RandomSetSchlather { corr, .. }
            | DependenceSpec::GeometricGaussian { corr, .. }
            | DependenceSpec::ExtremalT { corr, .. }
            | DependenceSpec::GaussianCopula { corr }
            | DependenceSpec::StudentTCopula { corr, .. } => corr.lambda = lambda,
            DependenceSpec::BrownResnick { vario } => vario.lambda = lambda,
            DependenceSpec::HuslerReiss { lambda: l, .. } => *l = lambda,
            DependenceSpec::Independence => {}
        }
        s
    };

    if matches!(
        template,
        DependenceSpec::Independence
            | DependenceSpec::GaussianCopula { .. }
            | DependenceSpec::StudentTCopula { .. }
    ) {
        return Ok(match template {
            DependenceSpec::Independence => template.clone(),
            _ => set_range(template, median),
        });
    }

    let bins = match fmadogram_curve(panel, 8) {
        Ok(b) => b,
        Err(Error::InsufficientData(_)) => return Ok(set_range(template, median)),
        Err(e) => return Err(e),
    };
    let lo = (dists[0] / 4.0).max(1e-2);
    let hi = dists[dists.len() - 1] * 4.0;
    let n_cand = 17;
    let mut best = (f64::INFINITY, median);
    for k in 0..n_cand {
        let lambda = lo * (hi / lo).powf(k as f64 / (n_cand - 1) as f64);
        let cand = set_range(template, lambda);
        if cand.validate().is_err() {
            continue;
        }
        let mut sse = 0.0;
        let mut ok = true;
        for b in &bins {
            match extremal_coefficient([b.mean_distance, 0.0], &cand) {
                Ok(th) => sse += (th - b.theta) * (th - b.theta),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && sse < best.0 {
            best = (sse, lambda);
        }
    }
    Ok(set_range(template, best.1))
}

/// Options for [`fit_model`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Fit linear coordinate trends in the location surface.
    pub eta_trend: bool,
    /// Fit linear coordinate trends in the scale surface.
    pub tau_trend: bool,
    /// Fit linear coordinate trends in the shape surface.
    pub xi_trend: bool,
    /// Keep only site pairs within this distance, km.
    pub max_pair_distance: Option<f64>,
    /// Optimizer starts (first from moment/madogram heuristics, the rest
    /// jittered).
    pub n_starts: usize,
    /// Objective evaluation budget per start.
    pub max_evals: usize,
    /// Seed for start jitter.
    pub seed: u64,
    /// Slot names to freeze at their start values.
    pub fixed: Vec<String>,
    /// Marginal start override; defaults to moment estimates.
    pub start_model: Option<SurfaceModel>,
    /// Dependence start override; defaults to madogram matching applied
    /// to the fit template.
    pub start_dependence: Option<DependenceSpec>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            eta_trend: true,
            tau_trend: false,
            xi_trend: false,
            max_pair_distance: None,
            n_starts: 3,
            max_evals: 8000,
            seed: 0,
            fixed: Vec::new(),
            start_model: None,
            start_dependence: None,
        }
    }
}

/// Result of a composite likelihood fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Names of the free parameters, in estimate order.
    pub parameter_names: Vec<String>,
    /// Estimates on the natural scale.
    pub estimates: Vec<f64>,
    /// Sandwich standard errors on the natural scale.
    pub std_errors: Vec<f64>,
    /// Sandwich covariance on the natural scale.
    pub covariance: Vec<Vec<f64>>,
    /// Maximized log composite (or full) likelihood.
    pub ell_p: f64,
    /// Composite information penalty tr(J^-1 K).
    pub tr_jk: f64,
    /// Information criterion -2 ell_p + 2 tr(J^-1 K); smaller is better.
    pub clic: f64,
    /// Site pairs used (zero for single-site or copula full fits).
    pub n_pairs: usize,
    /// Likelihood terms with complete data.
    pub n_terms: usize,
    /// Whether the winning start converged.
    pub converged: bool,
    /// Optimizer starts attempted.
    pub starts_used: usize,
    /// Seed the fit was run with.
    pub seed: u64,
    /// Missing (site, year) cells excluded from the objective.
    pub excluded_cells: Vec<(String, i64)>,
    /// Fitted marginal surfaces.
    pub model: SurfaceModel,
    /// Fitted dependence model.
    pub dependence: DependenceSpec,
}

enum Objective {
    Pairwise(PairSet),
    EllipticalFull,
    MarginalOnly,
}

/// Fits marginal surfaces and dependence jointly by maximum composite
/// likelihood.
///
/// The objective is the pairwise likelihood for max-stable and
/// independence templates, the full joint likelihood for the elliptical
/// copulas, and the plain marginal GEV likelihood when the panel has a
/// single site (only the independence template is meaningful there).
pub fn fit_model(
    panel: &MaximaPanel,
    template: &DependenceSpec,
    opts: &FitOptions,
) -> Result<FitReport> {
    template.validate()?;
    let sites = panel.sites();
    if panel.n_years() < 3 {
        return Err(Error::InsufficientData(
            "need at least 3 years to fit".into(),
        ));
    }

    let start_model = match &opts.start_model {
        Some(m) => m.clone(),
        None => marginal_start(panel, opts.eta_trend, opts.tau_trend)?,
    };
    let start_dep = match &opts.start_dependence {
        Some(s) => s.clone(),
        None => dependence_start(template, panel)?,
    };

    let mut pv = ParameterVector::for_model(
        &start_model,
        &start_dep,
        opts.eta_trend,
        opts.tau_trend,
        opts.xi_trend,
    )?;
    for name in &opts.fixed {
        pv.fix(name)?;
    }
    if pv.n_free() == 0 {
        return Err(Error::invalid("no free parameters to fit"));
    }

    let objective = if sites.len() < 2 {
        if !matches!(template, DependenceSpec::Independence) {
            return Err(Error::InsufficientData(
                "dependence fits need at least 2 sites".into(),
            ));
        }
        Objective::MarginalOnly
    } else {
        match template {
            DependenceSpec::GaussianCopula { .. } | DependenceSpec::StudentTCopula { .. } => {
                Objective::EllipticalFull
            }
            _ => {
                let pairs = match opts.max_pair_distance {
                    Some(dmax) => PairSet::within(sites, dmax)?,
                    None => PairSet::all(sites),
                };
                Objective::Pairwise(pairs)
            }
        }
    };

    let n_pairs = match &objective {
        Objective::Pairwise(p) => p.len(),
        _ => 0,
    };
    let n_terms = match &objective {
        Objective::Pairwise(p) => {
            let mut n = 0usize;
            for t in 0..panel.n_years() {
                for &(i, j) in p.pairs() {
                    if panel.value(t, i).is_finite() && panel.value(t, j).is_finite() {
                        n += 1;
                    }
                }
            }
            n
        }
        _ => (0..panel.n_years())
            .map(|t| (0..sites.len()).filter(|&d| panel.value(t, d).is_finite()).count())
            .sum(),
    };

    let by_year = |z: &[f64]| -> Result<Vec<f64>> {
        let cand = pv.with_free(z)?;
        let model = cand.surface_model()?;
        let spec = cand.dependence(template)?;
        match &objective {
            Objective::Pairwise(pairs) => pairwise_nll_by_year(panel, &model, &spec, pairs),
            Objective::EllipticalFull => full_nll_elliptical_by_year(panel, &model, &spec),
            Objective::MarginalOnly => marginal_nll_by_year(panel, &model),
        }
    };
    let mut total = |z: &[f64]| -> f64 {
        match by_year(z) {
            Ok(v) => v.iter().sum(),
            Err(_) => f64::INFINITY,
        }
    };

    let z0 = pv.to_free()?;
    let nm_opts = NelderMeadOptions {
        max_evals: opts.max_evals,
        ftol: 1e-9,
        xtol: 1e-7,
        initial_step: 0.15,
    };
    let mut best: Option<crate::optim::OptimResult> = None;
    for s in 0..opts.n_starts.max(1) {
        let mut zs = z0.clone();
        if s > 0 {
            let mut rng = indexed_stream(opts.seed, streams::OPTIMIZER_STARTS, s as u64);
            for v in &mut zs {
                let jitter: f64 = rng.sample(rand_distr::StandardNormal);
                *v += 0.25 * jitter;
            }
        }
        let res = nelder_mead(&mut total, &zs, &nm_opts);
        if res.fx.is_finite() && best.as_ref().map_or(true, |b| res.fx < b.fx) {
            best = Some(res);
        }
    }
    let best = best.ok_or(Error::AllStartsFailed {
        starts: opts.n_starts.max(1),
    })?;

    let z_hat = best.x.clone();
    let nll_hat = best.fx;

    // Curvature and outer-product information on the optimizer scale.
    let j_mat = fd_hessian(&mut total, &z_hat)?;
    let p = z_hat.len();
    let n_years = panel.n_years();
    let mut scores = DMatrix::<f64>::zeros(n_years, p);
    {
        let mut zp = z_hat.clone();
        for i in 0..p {
            let h = fd_step(z_hat[i]);
            zp[i] = z_hat[i] + h;
            let up = by_year(&zp)?;
            zp[i] = z_hat[i] - h;
            let dn = by_year(&zp)?;
            zp[i] = z_hat[i];
            for t in 0..n_years {
                if !(up[t].is_finite() && dn[t].is_finite()) {
                    return Err(Error::domain(
                        "yearly score not finite at the optimum".to_string(),
                    ));
                }
                scores[(t, i)] = (up[t] - dn[t]) / (2.0 * h);
            }
        }
    }
    let k_mat = scores.transpose() * &scores;

    let chol = match j_mat.clone().cholesky() {
        Some(c) => c,
        None => {
            let eig = j_mat.symmetric_eigenvalues();
            let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
            return Err(Error::SingularHessian {
                rcond: if max > 0.0 { min / max } else { 0.0 },
            });
        }
    };
    let j_inv = chol.inverse();
    let tr_jk = (&j_inv * &k_mat).trace();
    let sandwich = &j_inv * &k_mat * &j_inv;

    // Delta method back to the natural scale.
    let pv_hat = pv.with_free(&z_hat)?;
    let free: Vec<&Slot> = pv_hat.slots.iter().filter(|s| !s.fixed).collect();
    let mut dvec = DVector::<f64>::zeros(p);
    for (i, s) in free.iter().enumerate() {
        dvec[i] = match s.transform {
            Transform::Identity => 1.0,
            Transform::Log => s.value,
        };
    }
    let mut cov_nat = vec![vec![0.0; p]; p];
    let mut se = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            cov_nat[i][j] = sandwich[(i, j)] * dvec[i] * dvec[j];
        }
        se[i] = cov_nat[i][i].max(0.0).sqrt();
    }

    let ell_p = -nll_hat;
    let clic = -2.0 * ell_p + 2.0 * tr_jk;
    let mut excluded = Vec::new();
    for t in 0..panel.n_years() {
        for d in 0..sites.len() {
            if !panel.value(t, d).is_finite() {
                excluded.push((sites.ids()[d].clone(), panel.years()[t]));
            }
        }
    }

    Ok(FitReport {
        parameter_names: pv_hat.free_names(),
        estimates: free.iter().map(|s| s.value).collect(),
        std_errors: se,
        covariance: cov_nat,
        ell_p,
        tr_jk,
        clic,
        n_pairs,
        n_terms,
        converged: best.converged,
        starts_used: opts.n_starts.max(1),
        seed: opts.seed,
        excluded_cells: excluded,
        model: pv_hat.surface_model()?,
        dependence: pv_hat.dependence(template)?,
    })
}
