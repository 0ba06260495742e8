//! Bivariate spatial dependence models on unit Fréchet margins.
//!
//! Max-stable families (Smith, Schlather and its random set variant,
//! geometric Gaussian, Brown-Resnick, Hüsler-Reiss, extremal-t) are
//! described through their pairwise exponent function V, its partial
//! derivatives, and the bivariate log density exp(-V)(V1 V2 - V12).
//! Elliptical copulas (Gaussian, Student t) supply a bivariate density on
//! the same margins but have no exponent function. Summaries shared by the
//! fitting and simulation layers live here too: extremal coefficients,
//! Pickands dependence functions, practical dependence ranges, and tail
//! dependence indices.

use crate::cov::{correlation, semivariogram, CorrelationSpec, VariogramSpec};
use crate::error::{Error, Result};
use crate::kernels::{
    normal_cdf, normal_pdf, normal_quantile, student_t_cdf, student_t_quantile,
};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Pairwise dependence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DependenceSpec {
    /// Gaussian extreme value model with covariance Omega in km^2.
    Smith {
        omega11: f64,
        omega12: f64,
        omega22: f64,
    },
    /// Extremal Gaussian model driven by a correlation function.
    Schlather { corr: CorrelationSpec },
    /// Schlather model thinned by random disks of fixed radius (km).
    RandomSetSchlather { corr: CorrelationSpec, disk_radius: f64 },
    /// Log Gaussian storm profiles with variance sigma2 on the exponent.
    GeometricGaussian { sigma2: f64, corr: CorrelationSpec },
    /// Brown-Resnick model driven by a fractional power variogram.
    BrownResnick { vario: VariogramSpec },
    /// Hüsler-Reiss model with a(h)^2 = (|h|/lambda)^kappa.
    HuslerReiss { lambda: f64, kappa: f64 },
    /// Extremal-t model with nu degrees of freedom.
    ExtremalT { nu: f64, corr: CorrelationSpec },
    /// Gaussian copula on unit Fréchet margins (asymptotically independent).
    GaussianCopula { corr: CorrelationSpec },
    /// Student t copula on unit Fréchet margins.
    StudentTCopula { nu: f64, corr: CorrelationSpec },
    /// Exact independence between sites.
    Independence,
}

impl DependenceSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Smith {
                omega11,
                omega12,
                omega22,
            } => {
                let det = omega11 * omega22 - omega12 * omega12;
                if !(omega11.is_finite()
                    && omega12.is_finite()
                    && omega22.is_finite()
                    && *omega11 > 0.0
                    && *omega22 > 0.0
                    && det > 0.0)
                {
                    return Err(Error::invalid(format!(
                        "Smith covariance must be SPD, got [[{omega11}, {omega12}], [{omega12}, {omega22}]]"
                    )));
                }
            }
            Self::Schlather { corr } | Self::GaussianCopula { corr } => corr.validate()?,
            Self::RandomSetSchlather { corr, disk_radius } => {
                corr.validate()?;
                if !(disk_radius.is_finite() && *disk_radius > 0.0) {
                    return Err(Error::invalid(format!(
                        "disk radius must be positive, got {disk_radius}"
                    )));
                }
            }
            Self::GeometricGaussian { sigma2, corr } => {
                corr.validate()?;
                if !(sigma2.is_finite() && *sigma2 > 0.0) {
                    return Err(Error::invalid(format!(
                        "log profile variance must be positive, got {sigma2}"
                    )));
                }
            }
            Self::BrownResnick { vario } => vario.validate()?,
            Self::HuslerReiss { lambda, kappa } => {
                if !(lambda.is_finite() && *lambda > 0.0) {
                    return Err(Error::invalid(format!(
                        "Hüsler-Reiss range must be positive, got {lambda}"
                    )));
                }
                if !(kappa.is_finite() && *kappa > 0.0 && *kappa <= 2.0) {
                    return Err(Error::invalid(format!(
                        "Hüsler-Reiss shape must lie in (0, 2], got {kappa}"
                    )));
                }
            }
            Self::ExtremalT { nu, corr } | Self::StudentTCopula { nu, corr } => {
                corr.validate()?;
                if !(nu.is_finite() && *nu > 0.0) {
                    return Err(Error::invalid(format!(
                        "degrees of freedom must be positive, got {nu}"
                    )));
                }
            }
            Self::Independence => {}
        }
        Ok(())
    }

    /// True for max-stable families (those with an exponent function).
    pub fn is_extremal(&self) -> bool {
        !matches!(
            self,
            Self::GaussianCopula { .. } | Self::StudentTCopula { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Smith { .. } => "smith",
            Self::Schlather { .. } => "schlather",
            Self::RandomSetSchlather { .. } => "random-set-schlather",
            Self::GeometricGaussian { .. } => "geometric-gaussian",
            Self::BrownResnick { .. } => "brown-resnick",
            Self::HuslerReiss { .. } => "husler-reiss",
            Self::ExtremalT { .. } => "extremal-t",
            Self::GaussianCopula { .. } => "gaussian-copula",
            Self::StudentTCopula { .. } => "student-t-copula",
            Self::Independence => "independence",
        }
    }
}

/// Extremal coefficient curve with the practical dependence ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaCurve {
    pub distances: Vec<f64>,
    pub theta: Vec<f64>,
    /// Distance where theta reaches 1.3.
    pub h_minus: f64,
    /// Distance where theta reaches 1.7; +infinity when never reached.
    pub h_plus: f64,
}

/// Reduced form of the exponent function at one separation.
enum VCore {
    /// V = Phi(w)/z1 + Phi(v)/z2 with w = a/2 + log(z2/z1)/a, v = a - w.
    Phi { a2: f64 },
    Schlather { rho: f64 },
    RandomSet { rho: f64, alpha: f64 },
    ExtremalT { nu: f64, rho: f64 },
    Independence,
}

fn v_core(h: [f64; 2], spec: &DependenceSpec) -> Result<VCore> {
    spec.validate()?;
    if !(h[0].is_finite() && h[1].is_finite()) {
        return Err(Error::domain(format!(
            "non-finite separation ({}, {})",
            h[0], h[1]
        )));
    }
    match spec {
        DependenceSpec::Smith {
            omega11,
            omega12,
            omega22,
        } => {
            let det = omega11 * omega22 - omega12 * omega12;
            let a2 = (omega22 * h[0] * h[0] - 2.0 * omega12 * h[0] * h[1]
                + omega11 * h[1] * h[1])
                / det;
            Ok(VCore::Phi { a2 })
        }
        DependenceSpec::HuslerReiss { lambda, kappa } => {
            let d = h[0].hypot(h[1]);
            Ok(VCore::Phi {
                a2: (d / lambda).powf(*kappa),
            })
        }
        DependenceSpec::BrownResnick { vario } => Ok(VCore::Phi {
            a2: 2.0 * semivariogram(h, vario)?,
        }),
        DependenceSpec::GeometricGaussian { sigma2, corr } => Ok(VCore::Phi {
            a2: 2.0 * sigma2 * (1.0 - correlation(h, corr)?),
        }),
        DependenceSpec::Schlather { corr } => Ok(VCore::Schlather {
            rho: correlation(h, corr)?,
        }),
        DependenceSpec::RandomSetSchlather { corr, disk_radius } => Ok(VCore::RandomSet {
            rho: correlation(h, corr)?,
            alpha: disk_overlap_alpha(h[0].hypot(h[1]), *disk_radius)?,
        }),
        DependenceSpec::ExtremalT { nu, corr } => Ok(VCore::ExtremalT {
            nu: *nu,
            rho: correlation(h, corr)?,
        }),
        DependenceSpec::Independence => Ok(VCore::Independence),
        DependenceSpec::GaussianCopula { .. } | DependenceSpec::StudentTCopula { .. } => {
            Err(Error::UnsupportedFamily(format!(
                "{} has no exponent function",
                spec.name()
            )))
        }
    }
}

fn check_z(z1: f64, z2: f64) -> Result<()> {
    if !(z1.is_finite() && z2.is_finite() && z1 > 0.0 && z2 > 0.0) {
        return Err(Error::domain(format!(
            "exponent function needs z1, z2 > 0, got ({z1}, {z2})"
        )));
    }
    Ok(())
}

fn v_from_core(z1: f64, z2: f64, core: &VCore) -> Result<f64> {
    Ok(match *core {
        VCore::Phi { a2 } => {
            if a2 <= 0.0 {
                return Ok(1.0 / z1.min(z2));
            }
            let a = a2.sqrt();
            let w = 0.5 * a + (z2 / z1).ln() / a;
            let v = a - w;
            normal_cdf(w) / z1 + normal_cdf(v) / z2
        }
        VCore::Schlather { rho } => {
            let r = schlather_r(z1, z2, rho);
            (z1 + z2 + r) / (2.0 * z1 * z2)
        }
        VCore::RandomSet { rho, alpha } => {
            let r = schlather_r(z1, z2, rho);
            let u = z1 + z2;
            (1.0 / z1 + 1.0 / z2) * (1.0 - 0.5 * alpha * (1.0 - r / u))
        }
        VCore::ExtremalT { nu, rho } => {
            if rho >= 1.0 - 1e-15 {
                return Ok(1.0 / z1.min(z2));
            }
            let s = ((nu + 1.0) / (1.0 - rho * rho)).sqrt();
            let t1 = student_t_cdf(s * ((z2 / z1).powf(1.0 / nu) - rho), nu + 1.0)?;
            let t2 = student_t_cdf(s * ((z1 / z2).powf(1.0 / nu) - rho), nu + 1.0)?;
            t1 / z1 + t2 / z2
        }
        VCore::Independence => 1.0 / z1 + 1.0 / z2,
    })
}

fn schlather_r(z1: f64, z2: f64, rho: f64) -> f64 {
    (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2).max(0.0).sqrt()
}

/// Pairwise exponent function V(z1, z2) at separation `h`.
pub fn exponent_v(z1: f64, z2: f64, h: [f64; 2], spec: &DependenceSpec) -> Result<f64> {
    check_z(z1, z2)?;
    let core = v_core(h, spec)?;
    v_from_core(z1, z2, &core)
}

/// First and mixed partial derivatives (V1, V2, V12) of the exponent
/// function. Analytic for the Smith-type and Schlather families, Richardson
/// extrapolated central differences otherwise.
pub fn v_partials(z1: f64, z2: f64, h: [f64; 2], spec: &DependenceSpec) -> Result<(f64, f64, f64)> {
    check_z(z1, z2)?;
    let core = v_core(h, spec)?;
    match core {
        VCore::Phi { a2 } => {
            if a2 <= 0.0 {
                return Err(Error::NonFiniteDensity {
                    z1,
                    z2,
                    detail: "degenerate dependence at zero separation".to_string(),
                });
            }
            let a = a2.sqrt();
            let w = 0.5 * a + (z2 / z1).ln() / a;
            let v = a - w;
            let pw = normal_pdf(w);
            let pv = normal_pdf(v);
            let v1 = -normal_cdf(w) / (z1 * z1) - pw / (a * z1 * z1) + pv / (a * z1 * z2);
            let v2 = -normal_cdf(v) / (z2 * z2) - pv / (a * z2 * z2) + pw / (a * z1 * z2);
            let v12 = pw * (w / a - 1.0) / (a * z1 * z1 * z2)
                + pv * (v / a - 1.0) / (a * z1 * z2 * z2);
            Ok((v1, v2, v12))
        }
        VCore::Schlather { rho } => {
            let r = schlather_r(z1, z2, rho);
            if r == 0.0 {
                return Err(Error::NonFiniteDensity {
                    z1,
                    z2,
                    detail: "degenerate dependence at zero separation".to_string(),
                });
            }
            let v1 = (rho * z1 - z2 - r) / (2.0 * z1 * z1 * r);
            let v2 = (rho * z2 - z1 - r) / (2.0 * z2 * z2 * r);
            let v12 = (rho * rho - 1.0) / (2.0 * r * r * r);
            Ok((v1, v2, v12))
        }
        VCore::RandomSet { rho, .. } | VCore::ExtremalT { rho, .. } => {
            if rho >= 1.0 - 1e-12 {
                return Err(Error::NonFiniteDensity {
                    z1,
                    z2,
                    detail: "degenerate dependence at zero separation".to_string(),
                });
            }
            fd_partials(z1, z2, |a, b| v_from_core(a, b, &core))
        }
        VCore::Independence => Ok((-1.0 / (z1 * z1), -1.0 / (z2 * z2), 0.0)),
    }
}

/// Smallest point where a relative finite-difference step stays meaningful.
const FD_MIN_Z: f64 = 1e-8;

fn fd_partials<F>(z1: f64, z2: f64, f: F) -> Result<(f64, f64, f64)>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if z1 <= FD_MIN_Z || z2 <= FD_MIN_Z {
        return Err(Error::domain(format!(
            "finite-difference step underflows at z = ({z1}, {z2})"
        )));
    }
    let first = |z: f64, g: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        let t = 1e-5 * z;
        let d = |t: f64| -> Result<f64> { Ok((g(z + t)? - g(z - t)?) / (2.0 * t)) };
        Ok((4.0 * d(0.5 * t)? - d(t)?) / 3.0)
    };
    let v1 = first(z1, &|z| f(z, z2))?;
    let v2 = first(z2, &|z| f(z1, z))?;
    // The mixed stencil divides by t1*t2, so it takes a wider step to keep
    // cancellation noise below the derivative scale.
    let t1 = 1e-3 * z1;
    let t2 = 1e-3 * z2;
    let mixed = |t1: f64, t2: f64| -> Result<f64> {
        Ok(
            (f(z1 + t1, z2 + t2)? - f(z1 + t1, z2 - t2)? - f(z1 - t1, z2 + t2)?
                + f(z1 - t1, z2 - t2)?)
                / (4.0 * t1 * t2),
        )
    };
    let v12 = (4.0 * mixed(0.5 * t1, 0.5 * t2)? - mixed(t1, t2)?) / 3.0;
    Ok((v1, v2, v12))
}

fn frechet_margin_logdens(z: f64) -> f64 {
    -2.0 * z.ln() - 1.0 / z
}

/// Bivariate log density at separation `h` on unit Fréchet margins.
///
/// For max-stable families this is log[exp(-V)(V1 V2 - V12)]; for the
/// elliptical copulas it is the copula log density plus the Fréchet margin
/// terms.
pub fn bivariate_logdensity(z1: f64, z2: f64, h: [f64; 2], spec: &DependenceSpec) -> Result<f64> {
    check_z(z1, z2)?;
    match spec {
        DependenceSpec::GaussianCopula { corr } => {
            let rho = bounded_rho(h, corr)?;
            let x1 = normal_quantile((-1.0 / z1).exp())?;
            let x2 = normal_quantile((-1.0 / z2).exp())?;
            let om = 1.0 - rho * rho;
            let logc = -0.5 * om.ln()
                - (rho * rho * (x1 * x1 + x2 * x2) - 2.0 * rho * x1 * x2) / (2.0 * om);
            Ok(logc + frechet_margin_logdens(z1) + frechet_margin_logdens(z2))
        }
        DependenceSpec::StudentTCopula { nu, corr } => {
            let rho = bounded_rho(h, corr)?;
            let nu = *nu;
            let x1 = student_t_quantile((-1.0 / z1).exp(), nu)?;
            let x2 = student_t_quantile((-1.0 / z2).exp(), nu)?;
            let om = 1.0 - rho * rho;
            let q = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / om;
            let logc = ln_gamma(0.5 * (nu + 2.0)) + ln_gamma(0.5 * nu)
                - 2.0 * ln_gamma(0.5 * (nu + 1.0))
                - 0.5 * om.ln()
                - 0.5 * (nu + 2.0) * (1.0 + q / nu).ln()
                + 0.5 * (nu + 1.0)
                    * ((1.0 + x1 * x1 / nu).ln() + (1.0 + x2 * x2 / nu).ln());
            Ok(logc + frechet_margin_logdens(z1) + frechet_margin_logdens(z2))
        }
        _ => {
            let v = exponent_v(z1, z2, h, spec)?;
            let (v1, v2, v12) = v_partials(z1, z2, h, spec)?;
            let g = v1 * v2 - v12;
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::NonFiniteDensity {
                    z1,
                    z2,
                    detail: format!("V1 V2 - V12 = {g} at separation ({}, {})", h[0], h[1]),
                });
            }
            Ok(-v + g.ln())
        }
    }
}

/// Numerical mass of the bivariate density over the positive quadrant.
///
/// Simpson rule with `n` panels per axis (n even) on a log-spaced grid
/// over [0.02, 4000]^2. In log coordinates the diagonal ridge of dependent
/// families has order-one width, so the rule converges; the mass outside
/// the box is below 6e-4 for every family (the lower corner holds less
/// than exp(-50) and each upper tail less than 1 - exp(-1/4000)). A
/// correct density therefore comes back as 1 to well within 1e-3 at
/// n = 200.
pub fn density_integral(spec: &DependenceSpec, h: [f64; 2], n: usize) -> Result<f64> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::shape(format!(
            "Simpson rule needs an even panel count >= 2, got {n}"
        )));
    }
    let (lo, hi) = (0.02f64.ln(), 4000.0f64.ln());
    let step = (hi - lo) / n as f64;
    let simpson = |i: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let z: Vec<f64> = (0..=n).map(|i| (lo + step * i as f64).exp()).collect();
    let mut total = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            // Far off the diagonal the factor V1 V2 - V12 of strongly
            // dependent families cancels below f64 resolution; such
            // corners hold no mass at this rule's tolerance.
            let f = match bivariate_logdensity(z[i], z[j], h, spec) {
                Ok(ld) => ld.exp(),
                Err(Error::NonFiniteDensity { .. }) => 0.0,
                Err(e) => return Err(e),
            };
            total += simpson(i) * simpson(j) * f * z[i] * z[j];
        }
    }
    Ok(total * step * step / 9.0)
}

fn bounded_rho(h: [f64; 2], corr: &CorrelationSpec) -> Result<f64> {
    let rho = correlation(h, corr)?;
    if rho >= 1.0 - 1e-12 || rho <= -1.0 + 1e-12 {
        return Err(Error::NonFiniteDensity {
            z1: f64::NAN,
            z2: f64::NAN,
            detail: format!("copula correlation {rho} is degenerate"),
        });
    }
    Ok(rho)
}

/// Pairwise extremal coefficient theta(h) = V(1, 1).
pub fn extremal_coefficient(h: [f64; 2], spec: &DependenceSpec) -> Result<f64> {
    let core = v_core(h, spec)?;
    Ok(match core {
        VCore::Phi { a2 } => 2.0 * normal_cdf(0.5 * a2.max(0.0).sqrt()),
        VCore::Schlather { rho } => 1.0 + (0.5 * (1.0 - rho)).max(0.0).sqrt(),
        VCore::RandomSet { rho, alpha } => {
            2.0 - alpha * (1.0 - (0.5 * (1.0 - rho)).max(0.0).sqrt())
        }
        VCore::ExtremalT { nu, rho } => {
            let arg = ((nu + 1.0) * (1.0 - rho) / (1.0 + rho)).max(0.0).sqrt();
            2.0 * student_t_cdf(arg, nu + 1.0)?
        }
        VCore::Independence => 2.0,
    })
}

/// Area of intersection of two unit-rate disks of radius `r` at distance
/// `h`, relative to the disk area.
pub fn disk_overlap_alpha(h: f64, r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::invalid(format!(
            "disk radius must be positive, got {r}"
        )));
    }
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::domain(format!("distance must be >= 0, got {h}")));
    }
    if h >= 2.0 * r {
        return Ok(0.0);
    }
    let lens = 2.0 * r * r * (h / (2.0 * r)).acos() - 0.5 * h * (4.0 * r * r - h * h).sqrt();
    Ok(lens / (std::f64::consts::PI * r * r))
}

/// Families with a closed-form Pickands dependence function.
#[derive(Debug, Clone, PartialEq)]
pub enum PickandsSpec {
    HuslerReiss { lambda: f64, kappa: f64 },
    ExtremalT { nu: f64, corr: CorrelationSpec },
    /// Exchangeable Marshall-Olkin with dependence weight alpha in [0, 1].
    MarshallOlkin { alpha: f64 },
}

/// Pickands dependence function A(w) at separation `h`.
pub fn pickands_a(w: f64, h: [f64; 2], spec: &PickandsSpec) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::domain(format!("Pickands argument must lie in [0, 1], got {w}")));
    }
    if w == 0.0 || w == 1.0 {
        return Ok(1.0);
    }
    match spec {
        PickandsSpec::HuslerReiss { lambda, kappa } => {
            DependenceSpec::HuslerReiss {
                lambda: *lambda,
                kappa: *kappa,
            }
            .validate()?;
            let d = h[0].hypot(h[1]);
            let a = (d / lambda).powf(0.5 * kappa);
            if a <= 1e-12 {
                return Ok(w.max(1.0 - w));
            }
            let lr = ((1.0 - w) / w).ln();
            Ok((1.0 - w) * normal_cdf(0.5 * a + lr / a) + w * normal_cdf(0.5 * a - lr / a))
        }
        PickandsSpec::ExtremalT { nu, corr } => {
            if !(nu.is_finite() && *nu > 0.0) {
                return Err(Error::invalid(format!(
                    "degrees of freedom must be positive, got {nu}"
                )));
            }
            let rho = correlation(h, corr)?;
            if rho >= 1.0 - 1e-15 {
                return Ok(w.max(1.0 - w));
            }
            let s = ((nu + 1.0) / (1.0 - rho * rho)).sqrt();
            let ratio = w / (1.0 - w);
            let t1 = student_t_cdf(s * (ratio.powf(1.0 / nu) - rho), nu + 1.0)?;
            let t2 = student_t_cdf(s * (ratio.powf(-1.0 / nu) - rho), nu + 1.0)?;
            Ok(w * t1 + (1.0 - w) * t2)
        }
        PickandsSpec::MarshallOlkin { alpha } => {
            if !(0.0..=1.0).contains(alpha) {
                return Err(Error::invalid(format!(
                    "Marshall-Olkin weight must lie in [0, 1], got {alpha}"
                )));
            }
            Ok(1.0 - (1.0 - alpha) * w.min(1.0 - w))
        }
    }
}

/// Distance pair (h-, h+) where theta crosses 1.3 and 1.7.
///
/// `h_plus` comes back as +infinity when theta never reaches 1.7. Errors
/// with the achieved supremum when theta never reaches 1.3. Anisotropic
/// models report the envelope over the principal axes; use
/// [`practical_range_along`] for a specific direction.
pub fn practical_range(spec: &DependenceSpec) -> Result<(f64, f64)> {
    let dirs = default_directions(spec)?;
    let mut h_minus = f64::INFINITY;
    let mut h_plus: f64 = 0.0;
    for dir in &dirs {
        let (hm, hp) = practical_range_along(spec, *dir)?;
        h_minus = h_minus.min(hm);
        h_plus = h_plus.max(hp);
    }
    Ok((h_minus, h_plus))
}

/// Practical range along a fixed unit direction.
pub fn practical_range_along(spec: &DependenceSpec, direction: [f64; 2]) -> Result<(f64, f64)> {
    let norm = direction[0].hypot(direction[1]);
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::domain(format!(
            "direction must be a nonzero vector, got ({}, {})",
            direction[0], direction[1]
        )));
    }
    let u = [direction[0] / norm, direction[1] / norm];
    let theta = |d: f64| extremal_coefficient([d * u[0], d * u[1]], spec);
    let h_minus = match cross_distance(&theta, 1.3)? {
        Some(h) => h,
        None => {
            return Err(Error::NoRoot {
                target: "theta = 1.3".to_string(),
                supremum: theta(RANGE_H_MAX)?,
            })
        }
    };
    let h_plus = cross_distance(&theta, 1.7)?.unwrap_or(f64::INFINITY);
    Ok((h_minus, h_plus))
}

const RANGE_H_MAX: f64 = 1e9;

/// First distance where the nondecreasing curve reaches `level`, to 1e-6 km.
fn cross_distance<F>(theta: &F, level: f64) -> Result<Option<f64>>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut hi = 1.0;
    while theta(hi)? < level {
        hi *= 2.0;
        if hi > RANGE_H_MAX {
            return Ok(None);
        }
    }
    let mut lo = if hi > 1.0 { hi * 0.5 } else { 0.0 };
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if theta(mid)? < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

fn default_directions(spec: &DependenceSpec) -> Result<Vec<[f64; 2]>> {
    spec.validate()?;
    match spec {
        DependenceSpec::Smith {
            omega11,
            omega12,
            omega22,
        } => {
            if *omega12 != 0.0 || omega11 != omega22 {
                Ok(sym2_axes(*omega11, *omega12, *omega22).to_vec())
            } else {
                Ok(vec![[1.0, 0.0]])
            }
        }
        DependenceSpec::Schlather { corr }
        | DependenceSpec::RandomSetSchlather { corr, .. }
        | DependenceSpec::GeometricGaussian { corr, .. }
        | DependenceSpec::ExtremalT { corr, .. } => match &corr.anisotropy {
            Some(a) if !(a.a11 == 1.0 && a.a12 == 0.0) => {
                let (u, v) = a.principal_axes();
                Ok(vec![u, v])
            }
            _ => Ok(vec![[1.0, 0.0]]),
        },
        DependenceSpec::BrownResnick { .. }
        | DependenceSpec::HuslerReiss { .. }
        | DependenceSpec::Independence => Ok(vec![[1.0, 0.0]]),
        DependenceSpec::GaussianCopula { .. } | DependenceSpec::StudentTCopula { .. } => {
            Err(Error::UnsupportedFamily(format!(
                "{} has no extremal coefficient",
                spec.name()
            )))
        }
    }
}

/// Unit eigenvectors of a symmetric 2x2 matrix.
fn sym2_axes(m11: f64, m12: f64, m22: f64) -> [[f64; 2]; 2] {
    if m12 == 0.0 {
        return [[1.0, 0.0], [0.0, 1.0]];
    }
    let disc = (0.5 * (m11 - m22)).hypot(m12);
    let mid = 0.5 * (m11 + m22);
    let axis = |l: f64| -> [f64; 2] {
        let v = [m12, l - m11];
        let n = v[0].hypot(v[1]);
        [v[0] / n, v[1] / n]
    };
    [axis(mid + disc), axis(mid - disc)]
}

/// Extremal coefficients over a distance grid, along `direction` (defaults
/// to the first coordinate axis).
pub fn theta_curve(
    spec: &DependenceSpec,
    distances: &[f64],
    direction: Option<[f64; 2]>,
) -> Result<ThetaCurve> {
    let dir = direction.unwrap_or([1.0, 0.0]);
    let norm = dir[0].hypot(dir[1]);
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::domain("direction must be a nonzero vector".to_string()));
    }
    let u = [dir[0] / norm, dir[1] / norm];
    let mut theta = Vec::with_capacity(distances.len());
    for &d in distances {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::domain(format!("distance must be >= 0, got {d}")));
        }
        theta.push(extremal_coefficient([d * u[0], d * u[1]], spec)?);
    }
    let (h_minus, h_plus) = match direction {
        Some(dir) => practical_range_along(spec, dir)?,
        None => practical_range(spec)?,
    };
    Ok(ThetaCurve {
        distances: distances.to_vec(),
        theta,
        h_minus,
        h_plus,
    })
}

/// Upper and lower tail dependence indices (chi_up, chi_low) at separation
/// `h`. The lower index is `None` where no closed form is available.
pub fn tail_dependence(h: [f64; 2], spec: &DependenceSpec) -> Result<(f64, Option<f64>)> {
    spec.validate()?;
    match spec {
        DependenceSpec::GaussianCopula { corr } => {
            let rho = correlation(h, corr)?;
            if rho >= 1.0 - 1e-15 {
                return Ok((1.0, Some(1.0)));
            }
            Ok((0.0, Some(0.0)))
        }
        DependenceSpec::StudentTCopula { nu, corr } => {
            let rho = correlation(h, corr)?;
            let arg = -(((nu + 1.0) * (1.0 - rho) / (1.0 + rho)).max(0.0).sqrt());
            let chi = 2.0 * student_t_cdf(arg, nu + 1.0)?;
            Ok((chi, Some(chi)))
        }
        DependenceSpec::HuslerReiss { .. } => {
            let theta = extremal_coefficient(h, spec)?;
            Ok((2.0 - theta, Some(0.0)))
        }
        DependenceSpec::Independence => Ok((0.0, Some(0.0))),
        _ => {
            let theta = extremal_coefficient(h, spec)?;
            Ok((2.0 - theta, None))
        }
    }
}

/// Brown-Resnick variogram scale to the Hüsler-Reiss range with identical
/// bivariate distributions: kappa = alpha, lambda = 2^(-1/alpha) lambda_br.
pub fn br_hr_convert(lambda_br: f64, alpha: f64) -> Result<(f64, f64)> {
    VariogramSpec::new(lambda_br, alpha)?;
    Ok((2.0f64.powf(-1.0 / alpha) * lambda_br, alpha))
}
