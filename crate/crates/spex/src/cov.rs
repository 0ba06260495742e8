//! Spatial correlation models and Gaussian-process sampling.
//!
//! Isotropic correlation families on planar km coordinates, with optional
//! geometric anisotropy (distance taken as the norm induced by a unit
//! determinant SPD matrix) and an optional nugget that scales the
//! correlation off the origin. A fractional power semivariogram covers the
//! intrinsically stationary case. Dense matrix utilities (correlation matrix
//! assembly, Cholesky with a diagonal jitter ladder, unconditional and
//! conditional sampling) sit on top.

use crate::error::{Error, Result};
use crate::kernels::bessel_k;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

/// Isotropic correlation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrFamily {
    WhittleMatern,
    Cauchy,
    Stable,
    Exponential,
}

/// Geometric anisotropy: distance is sqrt(h' A h) with
/// A = [[a11, a12], [a12, a22]], a22 = (1 + a12^2)/a11, so det A = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anisotropy {
    pub a11: f64,
    pub a12: f64,
}

impl Anisotropy {
    pub fn validate(&self) -> Result<()> {
        if !(self.a11.is_finite() && self.a12.is_finite() && self.a11 > 0.0) {
            return Err(Error::invalid(format!(
                "anisotropy needs finite a12 and a11 > 0, got ({}, {})",
                self.a11, self.a12
            )));
        }
        Ok(())
    }

    pub fn a22(&self) -> f64 {
        (1.0 + self.a12 * self.a12) / self.a11
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a12, self.a22()]]
    }

    /// Norm of `h` in the metric induced by A.
    pub fn scaled_norm(&self, h: [f64; 2]) -> f64 {
        let q = self.a11 * h[0] * h[0] + 2.0 * self.a12 * h[0] * h[1] + self.a22() * h[1] * h[1];
        q.max(0.0).sqrt()
    }

    /// Unit eigenvectors of A (principal axes of the anisotropy).
    pub fn principal_axes(&self) -> ([f64; 2], [f64; 2]) {
        let a22 = self.a22();
        if self.a12 == 0.0 {
            return ([1.0, 0.0], [0.0, 1.0]);
        }
        let tr = self.a11 + a22;
        let disc = ((self.a11 - a22) * 0.5).hypot(self.a12);
        let l1 = 0.5 * tr + disc;
        let l2 = 0.5 * tr - disc;
        let axis = |l: f64| -> [f64; 2] {
            let v = [self.a12, l - self.a11];
            let n = v[0].hypot(v[1]);
            [v[0] / n, v[1] / n]
        };
        (axis(l1), axis(l2))
    }
}

/// Correlation model: family, range, shape, anisotropy, nugget proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub family: CorrFamily,
    /// Range parameter in km.
    pub lambda: f64,
    /// Shape parameter; required except for the Exponential family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anisotropy: Option<Anisotropy>,
    /// Proportion of variance from white noise, in [0, 1).
    #[serde(default)]
    pub nugget: f64,
}

impl CorrelationSpec {
    pub fn new(family: CorrFamily, lambda: f64, kappa: Option<f64>) -> Result<Self> {
        let spec = Self {
            family,
            lambda,
            kappa,
            anisotropy: None,
            nugget: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn exponential(lambda: f64) -> Result<Self> {
        Self::new(CorrFamily::Exponential, lambda, None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!(
                "correlation range must be positive, got {}",
                self.lambda
            )));
        }
        match (self.family, self.kappa) {
            (CorrFamily::Exponential, None) => {}
            (CorrFamily::Exponential, Some(_)) => {
                return Err(Error::invalid(
                    "Exponential correlation takes no shape parameter".to_string(),
                ));
            }
            (_, None) => {
                return Err(Error::invalid(format!(
                    "{:?} correlation needs a shape parameter",
                    self.family
                )));
            }
            (family, Some(kappa)) => {
                if !(kappa.is_finite() && kappa > 0.0) {
                    return Err(Error::invalid(format!(
                        "correlation shape must be positive, got {kappa}"
                    )));
                }
                if family == CorrFamily::Stable && kappa > 2.0 {
                    return Err(Error::invalid(format!(
                        "Stable correlation needs kappa in (0, 2], got {kappa}"
                    )));
                }
            }
        }
        if let Some(a) = &self.anisotropy {
            a.validate()?;
        }
        if !(self.nugget >= 0.0 && self.nugget < 1.0) {
            return Err(Error::invalid(format!(
                "nugget must lie in [0, 1), got {}",
                self.nugget
            )));
        }
        Ok(())
    }

    /// Distance used by the correlation function, honoring anisotropy.
    pub fn distance(&self, h: [f64; 2]) -> f64 {
        match &self.anisotropy {
            Some(a) => a.scaled_norm(h),
            None => h[0].hypot(h[1]),
        }
    }
}

/// Fractional power semivariogram gamma(h) = (|h|/lambda)^alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramSpec {
    /// Scale in km.
    pub lambda: f64,
    /// Exponent in (0, 2].
    pub alpha: f64,
}

impl VariogramSpec {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        let spec = Self { lambda, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!(
                "variogram scale must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::invalid(format!(
                "variogram exponent must lie in (0, 2], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Station set: unique labels plus planar km coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    ids: Vec<String>,
    coords: Vec<[f64; 2]>,
}

impl SiteSet {
    pub fn new(ids: Vec<String>, coords: Vec<[f64; 2]>) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(Error::shape(format!(
                "{} ids vs {} coordinate pairs",
                ids.len(),
                coords.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate site id: {id}")));
            }
        }
        for (id, c) in ids.iter().zip(&coords) {
            if !(c[0].is_finite() && c[1].is_finite()) {
                return Err(Error::invalid(format!(
                    "site {id} has non-finite coordinates ({}, {})",
                    c[0], c[1]
                )));
            }
        }
        Ok(Self { ids, coords })
    }

    /// Sites on a regular grid, labeled g0, g1, ... row-major.
    pub fn grid(x0: f64, y0: f64, nx: usize, ny: usize, step: f64) -> Result<Self> {
        let mut ids = Vec::with_capacity(nx * ny);
        let mut coords = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                ids.push(format!("g{}", j * nx + i));
                coords.push([x0 + i as f64 * step, y0 + j as f64 * step]);
            }
        }
        Self::new(ids, coords)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    /// Vector from site j to site i.
    pub fn separation(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.coords[i][0] - self.coords[j][0],
            self.coords[i][1] - self.coords[j][1],
        ]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let s = self.separation(i, j);
        s[0].hypot(s[1])
    }

    /// Index pairs of sites with identical coordinates.
    pub fn coincident_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                if self.coords[i] == self.coords[j] {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Correlation at separation `h`, honoring anisotropy and nugget.
pub fn correlation(h: [f64; 2], spec: &CorrelationSpec) -> Result<f64> {
    spec.validate()?;
    let d = spec.distance(h);
    if !d.is_finite() {
        return Err(Error::domain(format!(
            "non-finite separation ({}, {})",
            h[0], h[1]
        )));
    }
    if d == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - spec.nugget) * base_correlation(d, spec)?)
}

/// Family correlation at positive scaled distance, before the nugget factor.
fn base_correlation(d: f64, spec: &CorrelationSpec) -> Result<f64> {
    let x = d / spec.lambda;
    match spec.family {
        CorrFamily::Exponential => Ok((-x).exp()),
        CorrFamily::Stable => {
            let kappa = spec.kappa.unwrap();
            Ok((-x.powf(kappa)).exp())
        }
        CorrFamily::Cauchy => {
            let kappa = spec.kappa.unwrap();
            Ok((1.0 + x * x).powf(-kappa))
        }
        CorrFamily::WhittleMatern => {
            let kappa = spec.kappa.unwrap();
            // rho -> 1 at the origin; the explicit branch avoids overflowing
            // K_kappa at tiny arguments.
            if x < 1e-10 {
                return Ok(1.0);
            }
            let k = bessel_k(kappa, x)?;
            let rho = 2.0f64.powf(1.0 - kappa) / gamma(kappa) * x.powf(kappa) * k;
            // Clamp roundoff just above 1 near the origin.
            Ok(rho.min(1.0))
        }
    }
}

/// Semivariogram value at separation `h`.
pub fn semivariogram(h: [f64; 2], spec: &VariogramSpec) -> Result<f64> {
    spec.validate()?;
    let d = h[0].hypot(h[1]);
    if !d.is_finite() {
        return Err(Error::domain(format!(
            "non-finite separation ({}, {})",
            h[0], h[1]
        )));
    }
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok((d / spec.lambda).powf(spec.alpha))
}

/// Correlation matrix over a site set.
pub fn corr_matrix(sites: &SiteSet, spec: &CorrelationSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if sites.is_empty() {
        return Err(Error::shape("correlation matrix needs >= 1 site".to_string()));
    }
    let d = sites.len();
    let mut m = DMatrix::<f64>::identity(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let rho = correlation(sites.separation(i, j), spec)?;
            m[(i, j)] = rho;
            m[(j, i)] = rho;
        }
    }
    Ok(m)
}

/// Jitter values tried in turn by [`cholesky`] after a bare factorization
/// fails.
pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower Cholesky factor with a diagonal jitter ladder.
///
/// Returns the factor and the jitter that was added to the diagonal (0.0
/// when none was needed) so callers can surface it in run metadata.
pub fn cholesky(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape(format!(
            "cholesky needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(chol) = nalgebra::Cholesky::new(m.clone()) {
        return Ok((chol.unpack(), 0.0));
    }
    for &jitter in JITTER_LADDER.iter() {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(jittered) {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::NotPositiveDefinite {
        last_jitter: *JITTER_LADDER.last().unwrap(),
    })
}

/// One zero-mean draw with covariance `sill * R(spec)` using the given stream.
pub fn gp_sample_with<R: Rng>(
    sites: &SiteSet,
    spec: &CorrelationSpec,
    sill: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sill.is_finite() && sill > 0.0) {
        return Err(Error::invalid(format!("sill must be positive, got {sill}")));
    }
    let r = corr_matrix(sites, spec)?;
    let (l, _jitter) = cholesky(&r)?;
    let eps: DVector<f64> =
        DVector::from_iterator(sites.len(), (0..sites.len()).map(|_| rng.sample(StandardNormal)));
    let z = l * eps * sill.sqrt();
    Ok(z.iter().copied().collect())
}

/// One zero-mean draw with covariance `sill * R(spec)`, deterministic in `seed`.
pub fn gp_sample(
    sites: &SiteSet,
    spec: &CorrelationSpec,
    sill: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gp_sample_with(sites, spec, sill, &mut rng)
}

/// Kriging mean and conditional covariance of a zero-mean field at
/// `new_sites` given observed values.
pub fn gp_conditional_moments(
    obs_sites: &SiteSet,
    obs_values: &[f64],
    new_sites: &SiteSet,
    spec: &CorrelationSpec,
    sill: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if obs_values.len() != obs_sites.len() {
        return Err(Error::shape(format!(
            "{} observed values for {} sites",
            obs_values.len(),
            obs_sites.len()
        )));
    }
    if !(sill.is_finite() && sill > 0.0) {
        return Err(Error::invalid(format!("sill must be positive, got {sill}")));
    }
    spec.validate()?;
    let n_obs = obs_sites.len();
    let n_new = new_sites.len();
    let r_oo = corr_matrix(obs_sites, spec)?;
    let (l, _jitter) = cholesky(&r_oo)?;

    let mut r_no = DMatrix::<f64>::zeros(n_new, n_obs);
    for i in 0..n_new {
        for j in 0..n_obs {
            let h = [
                new_sites.coord(i)[0] - obs_sites.coord(j)[0],
                new_sites.coord(i)[1] - obs_sites.coord(j)[1],
            ];
            r_no[(i, j)] = correlation(h, spec)?;
        }
    }
    let r_nn = corr_matrix(new_sites, spec)?;

    // Solve R_oo X = R_on via the factor; mean = R_no R_oo^{-1} y,
    // cov = sill (R_nn - R_no R_oo^{-1} R_on).
    let y = DVector::from_column_slice(obs_values);
    let chol = nalgebra::Cholesky::pack_dirty(l);
    let alpha = chol.solve(&y);
    let r_on = r_no.transpose();
    let w = chol.solve(&r_on);
    let mean = &r_no * alpha;
    let cov = (r_nn - &r_no * w) * sill;
    Ok((mean, cov))
}

/// Draw from the conditional law of the field at `new_sites` given
/// observations, deterministic in `seed`.
pub fn gp_conditional_sample(
    obs_sites: &SiteSet,
    obs_values: &[f64],
    new_sites: &SiteSet,
    spec: &CorrelationSpec,
    sill: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let (mean, cov) = gp_conditional_moments(obs_sites, obs_values, new_sites, spec, sill)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    conditional_draw_with(&mean, &cov, &mut rng)
}

/// Draw from N(mean, cov) where cov may be singular (conditioning on a
/// site reproduces its observation exactly rather than through jitter).
pub fn conditional_draw_with<R: Rng>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = mean.len();
    let l = psd_lower(cov)?;
    let eps: DVector<f64> = DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)));
    let z = mean + l * eps;
    Ok(z.iter().copied().collect())
}

/// Lower factor of a positive semidefinite matrix. Directions with zero
/// conditional variance get a zero column instead of failing.
pub(crate) fn psd_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(1e-30, f64::max);
    let tol = 1e-10 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / dj;
            }
        } else if d < -1e3 * tol {
            return Err(Error::NotPositiveDefinite { last_jitter: 0.0 });
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn wm(lambda: f64, kappa: f64) -> CorrelationSpec {
        CorrelationSpec::new(CorrFamily::WhittleMatern, lambda, Some(kappa)).unwrap()
    }

    #[test]
    fn correlation_is_one_at_origin_for_every_family() {
        let specs = [
            CorrelationSpec::exponential(10.0).unwrap(),
            wm(700.0, 0.37),
            CorrelationSpec::new(CorrFamily::Cauchy, 6.3, Some(0.06)).unwrap(),
            CorrelationSpec::new(CorrFamily::Stable, 34.8, Some(0.95)).unwrap(),
        ];
        for spec in &specs {
            assert_eq!(correlation([0.0, 0.0], spec).unwrap(), 1.0);
        }
    }

    #[test]
    fn whittle_matern_half_shape_equals_exponential() {
        let m = wm(13.0, 0.5);
        let e = CorrelationSpec::exponential(13.0).unwrap();
        for &d in &[0.1, 1.0, 5.0, 13.0, 40.0, 200.0] {
            let h = [d, 0.0];
            assert_relative_eq!(
                correlation(h, &m).unwrap(),
                correlation(h, &e).unwrap(),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn correlation_matches_frozen_values() {
        // Frozen from arbitrary-precision evaluation of the closed forms.
        assert_relative_eq!(
            correlation([6.3, 0.0], &CorrelationSpec::new(CorrFamily::Cauchy, 6.3, Some(0.06)).unwrap())
                .unwrap(),
            0.959264119325264390,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            correlation([300.0, 0.0], &wm(700.0, 0.37)).unwrap(),
            0.544371441292260237,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            correlation([50.0, 0.0], &wm(39.3, 0.44)).unwrap(),
            0.249230479907560079,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            correlation(
                [50.0, 0.0],
                &CorrelationSpec::new(CorrFamily::Stable, 34.8, Some(0.95)).unwrap()
            )
            .unwrap(),
            0.243903851098965288,
            max_relative = 1e-12
        );
    }

    #[test]
    fn correlations_stay_in_unit_interval() {
        let specs = [
            CorrelationSpec::exponential(5.0).unwrap(),
            wm(20.0, 2.5),
            CorrelationSpec::new(CorrFamily::Cauchy, 8.0, Some(1.3)).unwrap(),
            CorrelationSpec::new(CorrFamily::Stable, 15.0, Some(1.7)).unwrap(),
        ];
        for spec in &specs {
            for i in 0..200 {
                let d = 1e-3 * 1.1f64.powi(i);
                let rho = correlation([d, 0.0], spec).unwrap();
                assert!((0.0..=1.0).contains(&rho), "{spec:?} at {d}: {rho}");
            }
        }
    }

    #[test]
    fn nugget_scales_off_origin_only() {
        let mut spec = CorrelationSpec::exponential(10.0).unwrap();
        spec.nugget = 0.25;
        assert_eq!(correlation([0.0, 0.0], &spec).unwrap(), 1.0);
        assert_relative_eq!(
            correlation([10.0, 0.0], &spec).unwrap(),
            0.75 * (-1.0f64).exp(),
            max_relative = 1e-14
        );
        spec.nugget = 1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn anisotropy_identity_matches_isotropic() {
        let mut spec = CorrelationSpec::exponential(10.0).unwrap();
        let iso = spec.clone();
        spec.anisotropy = Some(Anisotropy { a11: 1.0, a12: 0.0 });
        for &h in &[[3.0, 4.0], [0.0, 7.0], [-2.0, 1.0]] {
            assert_eq!(
                correlation(h, &spec).unwrap(),
                correlation(h, &iso).unwrap()
            );
        }
    }

    #[test]
    fn anisotropy_determinant_is_one() {
        for &(a11, a12) in &[(1.0, 0.0), (2.0, 0.5), (0.3, -1.2)] {
            let a = Anisotropy { a11, a12 };
            let m = a.matrix();
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            assert_relative_eq!(det, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn principal_axes_are_orthonormal_eigenvectors() {
        let a = Anisotropy { a11: 2.0, a12: 0.7 };
        let (u, v) = a.principal_axes();
        assert!((u[0] * v[0] + u[1] * v[1]).abs() < 1e-12);
        let m = a.matrix();
        // A u must be parallel to u.
        let au = [m[0][0] * u[0] + m[0][1] * u[1], m[1][0] * u[0] + m[1][1] * u[1]];
        let cross = au[0] * u[1] - au[1] * u[0];
        assert!(cross.abs() < 1e-12);
    }

    #[test]
    fn semivariogram_matches_frozen_values() {
        let spec = VariogramSpec::new(30.0, 0.74).unwrap();
        assert_eq!(semivariogram([0.0, 0.0], &spec).unwrap(), 0.0);
        assert_relative_eq!(
            semivariogram([30.0, 0.0], &spec).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            semivariogram([84.6, 0.0], &spec).unwrap(),
            2.15369569603860449,
            max_relative = 1e-13
        );
        assert!(VariogramSpec::new(30.0, 2.3).is_err());
        assert!(VariogramSpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn corr_matrix_line_example() {
        let sites = SiteSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]],
        )
        .unwrap();
        let spec = CorrelationSpec::exponential(10.0).unwrap();
        let m = corr_matrix(&sites, &spec).unwrap();
        assert_relative_eq!(m[(0, 1)], (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(m[(0, 2)], (-2.0f64).exp(), max_relative = 1e-14);
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }

    #[test]
    fn corr_matrix_single_and_coincident_sites() {
        let one = SiteSet::new(vec!["a".into()], vec![[3.0, 4.0]]).unwrap();
        let spec = CorrelationSpec::exponential(10.0).unwrap();
        let m = corr_matrix(&one, &spec).unwrap();
        assert_eq!(m.nrows(), 1);
        assert_eq!(m[(0, 0)], 1.0);

        let twin = SiteSet::new(vec!["a".into(), "b".into()], vec![[1.0, 1.0], [1.0, 1.0]])
            .unwrap();
        assert_eq!(twin.coincident_pairs(), vec![(0, 1)]);
        let m = corr_matrix(&twin, &spec).unwrap();
        assert_eq!(m[(0, 1)], 1.0);
        // Singular matrix: bare factorization fails, ladder rescues it.
        let (_, jitter) = cholesky(&m).unwrap();
        assert!(jitter > 0.0);
    }

    #[test]
    fn cholesky_hand_factorization() {
        let ident = DMatrix::<f64>::identity(3, 3);
        let (l, jitter) = cholesky(&ident).unwrap();
        assert_eq!(jitter, 0.0);
        assert_relative_eq!((l.clone() - ident).norm(), 0.0, epsilon = 1e-14);

        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let (l, jitter) = cholesky(&m).unwrap();
        assert_eq!(jitter, 0.0);
        assert_relative_eq!(l[(0, 0)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(l[(1, 0)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(l[(1, 1)], 2.0f64.sqrt(), max_relative = 1e-14);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_rebuilds_random_spd_matrices() {
        let mut seed = 7u64;
        let mut next = || {
            seed = crate::rng::splitmix64(seed);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..20 {
            let n = 2 + trial % 6;
            let a = DMatrix::from_fn(n, n, |_, _| next() - 0.5);
            let m = &a * a.transpose() + DMatrix::<f64>::identity(n, n) * 0.1;
            let (l, _) = cholesky(&m).unwrap();
            let rebuilt = &l * l.transpose();
            assert!(
                (&rebuilt - &m).norm() <= 1e-8 * m.norm(),
                "trial {trial}: rebuild error {}",
                (rebuilt - &m).norm()
            );
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky(&m),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn corr_matrix_eigenvalues_nonnegative_for_random_specs() {
        let mut seed = 99u64;
        let mut next = || {
            seed = crate::rng::splitmix64(seed);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..100 {
            let d = 2 + (next() * 8.0) as usize;
            let ids: Vec<String> = (0..d).map(|i| format!("s{i}")).collect();
            let coords: Vec<[f64; 2]> = (0..d)
                .map(|_| [next() * 200.0, next() * 200.0])
                .collect();
            let sites = SiteSet::new(ids, coords).unwrap();
            let spec = match trial % 4 {
                0 => CorrelationSpec::exponential(1.0 + next() * 100.0).unwrap(),
                1 => wm(1.0 + next() * 100.0, 0.1 + next() * 3.0),
                2 => CorrelationSpec::new(CorrFamily::Cauchy, 1.0 + next() * 100.0, Some(0.05 + next() * 2.0))
                    .unwrap(),
                _ => CorrelationSpec::new(CorrFamily::Stable, 1.0 + next() * 100.0, Some(0.1 + next() * 1.9))
                    .unwrap(),
            };
            let m = corr_matrix(&sites, &spec).unwrap();
            let eig = m.symmetric_eigenvalues();
            for ev in eig.iter() {
                assert!(*ev >= -1e-8, "trial {trial}: eigenvalue {ev}");
            }
        }
    }

    #[test]
    fn gp_sample_matches_marginal_variance() {
        let one = SiteSet::new(vec!["a".into()], vec![[0.0, 0.0]]).unwrap();
        let spec = CorrelationSpec::exponential(10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z = gp_sample_with(&one, &spec, 4.0, &mut rng).unwrap()[0];
            sum += z;
            sum2 += z * z;
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        assert!((var - 4.0).abs() < 0.15, "sample variance {var}");
    }

    #[test]
    fn gp_sample_is_seed_deterministic() {
        let sites = SiteSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]],
        )
        .unwrap();
        let spec = CorrelationSpec::exponential(10.0).unwrap();
        let a = gp_sample(&sites, &spec, 2.0, 42).unwrap();
        let b = gp_sample(&sites, &spec, 2.0, 42).unwrap();
        let c = gp_sample(&sites, &spec, 2.0, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gp_sample_coincident_sites_nearly_equal() {
        let twin = SiteSet::new(vec!["a".into(), "b".into()], vec![[1.0, 1.0], [1.0, 1.0]])
            .unwrap();
        let spec = CorrelationSpec::exponential(10.0).unwrap();
        let z = gp_sample(&twin, &spec, 1.0, 7).unwrap();
        assert!((z[0] - z[1]).abs() < 1e-3, "{z:?}");
    }

    #[test]
    fn gp_sample_empirical_covariance_matches() {
        let sites = SiteSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![[0.0, 0.0], [7.0, 0.0], [0.0, 15.0]],
        )
        .unwrap();
        let spec = CorrelationSpec::exponential(12.0).unwrap();
        let sill = 2.5;
        let r = corr_matrix(&sites, &spec).unwrap();
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let z = gp_sample_with(&sites, &spec, sill, &mut rng).unwrap();
            let v = DVector::from_column_slice(&z);
            acc += &v * v.transpose();
        }
        let emp = acc / n as f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = sill * r[(i, j)];
                // Var of a covariance MC estimate: (m_ii m_jj + m_ij^2)/n.
                let se = ((sill * r[(i, i)] * sill * r[(j, j)]
                    + target * target)
                    / n as f64)
                    .sqrt();
                assert!(
                    (emp[(i, j)] - target).abs() < 3.0 * se,
                    "covariance ({i},{j}): {} vs {target} (se {se})",
                    emp[(i, j)]
                );
            }
        }
    }

    #[test]
    fn conditional_sample_reproduces_observations() {
        let obs = SiteSet::new(
            vec!["a".into(), "b".into()],
            vec![[0.0, 0.0], [9.0, 3.0]],
        )
        .unwrap();
        let spec = CorrelationSpec::exponential(10.0).unwrap();
        let values = [1.3, -0.4];
        let z = gp_conditional_sample(&obs, &values, &obs, &spec, 1.0, 5).unwrap();
        assert!((z[0] - values[0]).abs() < 1e-6, "{z:?}");
        assert!((z[1] - values[1]).abs() < 1e-6, "{z:?}");
    }

    #[test]
    fn conditional_moments_bivariate_example() {
        // One observation of 2 at the origin, new site with rho = 0.5,
        // sill 1: conditional mean 1.0, conditional variance 0.75.
        let obs = SiteSet::new(vec!["o".into()], vec![[0.0, 0.0]]).unwrap();
        let spec = CorrelationSpec::exponential(10.0).unwrap();
        let d = -10.0 * 0.5f64.ln();
        let new = SiteSet::new(vec!["n".into()], vec![[d, 0.0]]).unwrap();
        let (mean, cov) = gp_conditional_moments(&obs, &[2.0], &new, &spec, 1.0).unwrap();
        assert_relative_eq!(mean[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(cov[(0, 0)], 0.75, max_relative = 1e-10);
    }

    #[test]
    fn conditional_sample_far_site_is_unconditional() {
        let obs = SiteSet::new(vec!["o".into()], vec![[0.0, 0.0]]).unwrap();
        let spec = CorrelationSpec::exponential(5.0).unwrap();
        let new = SiteSet::new(vec!["n".into()], vec![[1e6, 0.0]]).unwrap();
        let (mean, cov) = gp_conditional_moments(&obs, &[37.0], &new, &spec, 2.0).unwrap();
        assert!(mean[0].abs() < 1e-8);
        assert_relative_eq!(cov[(0, 0)], 2.0, max_relative = 1e-10);
    }

    #[test]
    fn site_set_rejects_duplicates_and_shape_mismatch() {
        assert!(SiteSet::new(
            vec!["a".into(), "a".into()],
            vec![[0.0, 0.0], [1.0, 0.0]]
        )
        .is_err());
        assert!(SiteSet::new(vec!["a".into()], vec![]).is_err());
        assert!(SiteSet::new(vec!["a".into()], vec![[f64::NAN, 0.0]]).is_err());
    }
}
