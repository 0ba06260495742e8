//! Latent Gaussian hierarchy for GEV margins.
//!
//! Each GEV parameter surface (location, scale, shape) is a linear trend
//! plus a zero-mean stationary Gaussian process; maxima are independent
//! across sites and years given the surfaces. Inference is a fixed-scan
//! Metropolis-within-Gibbs sampler: site-level random walks for the
//! latent fields, exact conjugate draws for the regression coefficients
//! and sills, and a uniform random walk for the ranges. Posterior
//! return-level maps come from conditional simulation of the latent
//! surfaces on a prediction grid.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cov::{self, CorrFamily, CorrelationSpec, SiteSet};
use crate::error::{Error, Result};
use crate::evd::{from_unit_frechet, gev_logpdf, return_level, to_unit_frechet, GevParams};
use crate::marginal::{MaximaPanel, SurfaceModel};
use crate::rng::{derive_indexed_seed, indexed_stream, stream, streams};
use crate::sim::{area_statistic_t, rank_envelope, GroupwiseCheck};

const BLOCK_NAMES: [&str; 3] = ["eta", "tau", "xi"];

/// Prior for one GEV parameter block (location, scale, or shape):
/// a normal prior on the trend coefficients, an inverse gamma prior on
/// the GP sill, and a gamma prior on the GP range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockPrior {
    /// Prior mean of the trend coefficients.
    pub beta_mean: [f64; 3],
    /// Prior covariance of the trend coefficients.
    pub beta_cov: [[f64; 3]; 3],
    /// Inverse gamma shape for the sill.
    pub sill_shape: f64,
    /// Inverse gamma scale for the sill.
    pub sill_scale: f64,
    /// Gamma shape for the range.
    pub range_shape: f64,
    /// Gamma scale for the range, km.
    pub range_scale: f64,
}

impl BlockPrior {
    /// Diffuse trend prior (variance 1e6 per coefficient) with the given
    /// sill hyperparameters and a gamma(5, 3) range prior.
    pub fn with_sill(sill_shape: f64, sill_scale: f64) -> Self {
        let mut beta_cov = [[0.0; 3]; 3];
        for (i, row) in beta_cov.iter_mut().enumerate() {
            row[i] = 1e6;
        }
        Self {
            beta_mean: [0.0; 3],
            beta_cov,
            sill_shape,
            sill_scale,
            range_shape: 5.0,
            range_scale: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta_mean.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("trend prior mean must be finite"));
        }
        if self.beta_cov_matrix().cholesky().is_none() {
            return Err(Error::invalid(
                "trend prior covariance must be symmetric positive definite",
            ));
        }
        for (name, v) in [
            ("sill shape", self.sill_shape),
            ("sill scale", self.sill_scale),
            ("range shape", self.range_shape),
            ("range scale", self.range_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn beta_cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |i, j| self.beta_cov[i][j])
    }

    fn beta_mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta_mean)
    }
}

/// Priors for the three GEV parameter blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorConfig {
    pub eta: BlockPrior,
    pub tau: BlockPrior,
    pub xi: BlockPrior,
}

impl Default for PriorConfig {
    /// Diffuse trend priors, inverse gamma sill priors with shape 1 and
    /// scales 12, 1 and 0.04 for location, scale and shape, and a
    /// gamma(5, 3) range prior throughout. The small shape-sill scale
    /// keeps spatial variation of the shape parameter modest.
    fn default() -> Self {
        Self {
            eta: BlockPrior::with_sill(1.0, 12.0),
            tau: BlockPrior::with_sill(1.0, 1.0),
            xi: BlockPrior::with_sill(1.0, 0.04),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        self.eta.validate()?;
        self.tau.validate()?;
        self.xi.validate()
    }

    fn block(&self, b: usize) -> &BlockPrior {
        match b {
            0 => &self.eta,
            1 => &self.tau,
            _ => &self.xi,
        }
    }
}

/// Chain length, thinning, and proposal tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total sweeps, burn-in included.
    pub iterations: usize,
    /// Leading sweeps discarded.
    pub burn_in: usize,
    /// Keep every `thin`-th post burn-in state.
    pub thin: usize,
    /// Random walk scale for site-level location moves; derived from the
    /// data spread when absent.
    pub rw_eta: Option<f64>,
    /// Random walk scale for site-level scale moves; derived from the
    /// data spread when absent.
    pub rw_tau: Option<f64>,
    /// Random walk scale for site-level shape moves.
    pub rw_xi: f64,
    /// Half-width of the uniform range proposal, km.
    pub rw_range: f64,
    /// Tune proposal scales toward 20-40% acceptance during burn-in;
    /// scales are frozen afterwards so the retained chain is Markov.
    pub adapt: bool,
    /// Latent correlation family. Exponential is the supported choice;
    /// other families are accepted but experimental.
    pub family: CorrFamily,
    /// Shape parameter for correlation families that carry one.
    pub family_kappa: Option<f64>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            burn_in: 5_000,
            thin: 25,
            rw_eta: None,
            rw_tau: None,
            rw_xi: 0.05,
            rw_range: 2.0,
            adapt: true,
            family: CorrFamily::Exponential,
            family_kappa: None,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < self.burn_in {
            return Err(Error::invalid(format!(
                "iterations ({}) must reach the burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning factor must be at least 1"));
        }
        for (name, v) in [
            ("rw_xi", Some(self.rw_xi)),
            ("rw_range", Some(self.rw_range)),
            ("rw_eta", self.rw_eta),
            ("rw_tau", self.rw_tau),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

/// One state of the chain. Blocks are ordered location, scale, shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainState {
    /// Latent GEV parameter values at the sites, one vector per block.
    pub fields: [Vec<f64>; 3],
    /// Trend coefficients per block.
    pub betas: [[f64; 3]; 3],
    /// GP sills per block.
    pub sills: [f64; 3],
    /// GP ranges per block, km.
    pub ranges: [f64; 3],
}

impl ChainState {
    pub fn validate(&self, n_sites: usize) -> Result<()> {
        for (b, f) in self.fields.iter().enumerate() {
            if f.len() != n_sites {
                return Err(Error::shape(format!(
                    "{} field has {} entries for {} sites",
                    BLOCK_NAMES[b],
                    f.len(),
                    n_sites
                )));
            }
            if !f.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{} field must be finite",
                    BLOCK_NAMES[b]
                )));
            }
        }
        if self.fields[1].iter().any(|&t| t <= 0.0) {
            return Err(Error::invalid("latent scale field must stay positive"));
        }
        for b in 0..3 {
            if !(self.sills[b].is_finite() && self.sills[b] > 0.0) {
                return Err(Error::invalid(format!(
                    "{} sill must be positive",
                    BLOCK_NAMES[b]
                )));
            }
            if !(self.ranges[b].is_finite() && self.ranges[b] > 0.0) {
                return Err(Error::invalid(format!(
                    "{} range must be positive",
                    BLOCK_NAMES[b]
                )));
            }
            if !self.betas[b].iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{} trend coefficients must be finite",
                    BLOCK_NAMES[b]
                )));
            }
        }
        Ok(())
    }
}

/// Proposal acceptance and tuning outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    /// Post burn-in acceptance rate of site-level moves per block.
    pub site_acceptance: [f64; 3],
    /// Post burn-in acceptance rate of range moves per block.
    pub range_acceptance: [f64; 3],
    /// Site-level proposal scales after tuning.
    pub rw_scales: [f64; 3],
    /// Range proposal half-widths after tuning, km.
    pub rw_ranges: [f64; 3],
}

/// Thinned posterior sample with bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcRun {
    pub samples: Vec<ChainState>,
    pub diagnostics: McmcDiagnostics,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

fn design_matrix(sites: &SiteSet) -> DMatrix<f64> {
    DMatrix::from_fn(sites.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => sites.coord(i)[0],
        _ => sites.coord(i)[1],
    })
}

/// Correlation factor shared by every density evaluation at one range
/// value: lower Cholesky factor of R and its log determinant.
pub(crate) struct BlockCache {
    chol: DMatrix<f64>,
    log_det: f64,
}

impl BlockCache {
    fn build(sites: &SiteSet, spec: &CorrelationSpec) -> Result<Self> {
        let r = cov::corr_matrix(sites, spec)?;
        let (chol, _) = cov::cholesky(&r)?;
        let log_det = 2.0 * (0..chol.nrows()).map(|i| chol[(i, i)].ln()).sum::<f64>();
        Ok(Self { chol, log_det })
    }

    /// Quadratic form r' R^-1 r through one triangular solve.
    fn quad(&self, resid: &DVector<f64>) -> f64 {
        let w = self
            .chol
            .solve_lower_triangular(resid)
            .expect("correlation factor has positive diagonal");
        w.dot(&w)
    }
}

/// GEV log likelihood of one site's observations; any invalid parameter
/// combination or support violation collapses to -inf so Metropolis
/// steps reject it.
fn site_loglik(column: &[f64], eta: f64, tau: f64, xi: f64) -> f64 {
    let params = match GevParams::new(eta, tau, xi) {
        Ok(p) => p,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut ll = 0.0;
    for &y in column {
        if !y.is_finite() {
            continue;
        }
        match gev_logpdf(y, &params) {
            Ok(lp) => ll += lp,
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    ll
}

/// Outcome of evaluating one site-level proposal.
pub(crate) struct SiteMove {
    pub ll_prop: f64,
    pub quad_prop: f64,
    /// Log acceptance ratio; -inf marks an outright rejection.
    pub log_accept: f64,
}

/// Log acceptance ratio of a single-site move on one block: the GEV
/// likelihood ratio at the site times the latent-field density ratio.
/// `params` holds the current (location, scale, shape) at the site,
/// `component` picks which of them moves, and `resid` is the current
/// field minus its trend mean for that block.
pub(crate) fn site_move(
    column: &[f64],
    params: [f64; 3],
    component: usize,
    proposal: f64,
    resid: &DVector<f64>,
    site: usize,
    cache: &BlockCache,
    sill: f64,
    cur_quad: f64,
    cur_ll: f64,
) -> SiteMove {
    if component == 1 && proposal <= 0.0 {
        return SiteMove {
            ll_prop: f64::NEG_INFINITY,
            quad_prop: cur_quad,
            log_accept: f64::NEG_INFINITY,
        };
    }
    let mut p = params;
    p[component] = proposal;
    let ll_prop = site_loglik(column, p[0], p[1], p[2]);
    let mut r = resid.clone();
    r[site] += proposal - params[component];
    let quad_prop = cache.quad(&r);
    let log_accept = (ll_prop - cur_ll) - 0.5 * (quad_prop - cur_quad) / sill;
    SiteMove {
        ll_prop,
        quad_prop,
        log_accept,
    }
}

/// Outcome of evaluating one range proposal.
pub(crate) struct RangeMove {
    pub cache: Option<BlockCache>,
    pub quad_prop: f64,
    pub log_accept: f64,
}

/// Log acceptance ratio of a range move: the latent-field density ratio
/// under the proposed correlation matrix times the gamma prior ratio.
pub(crate) fn range_move(
    sites: &SiteSet,
    spec_prop: Result<CorrelationSpec>,
    resid: &DVector<f64>,
    cur: &BlockCache,
    cur_quad: f64,
    sill: f64,
    lambda_cur: f64,
    lambda_prop: f64,
    prior_shape: f64,
    prior_scale: f64,
) -> RangeMove {
    let reject = RangeMove {
        cache: None,
        quad_prop: cur_quad,
        log_accept: f64::NEG_INFINITY,
    };
    if lambda_prop <= 0.0 {
        return reject;
    }
    let spec = match spec_prop {
        Ok(s) => s,
        Err(_) => return reject,
    };
    let cand = match BlockCache::build(sites, &spec) {
        Ok(c) => c,
        Err(_) => return reject,
    };
    let quad_prop = cand.quad(resid);
    let log_accept = -0.5 * (cand.log_det - cur.log_det) - 0.5 * (quad_prop - cur_quad) / sill
        + range_prior_log_ratio(lambda_prop, lambda_cur, prior_shape, prior_scale);
    RangeMove {
        cache: Some(cand),
        quad_prop,
        log_accept,
    }
}

/// Log ratio of gamma prior densities at the proposed and current range.
pub fn range_prior_log_ratio(
    lambda_prop: f64,
    lambda_cur: f64,
    shape: f64,
    scale: f64,
) -> f64 {
    (shape - 1.0) * (lambda_prop / lambda_cur).ln() + (lambda_cur - lambda_prop) / scale
}

/// Conditional mean and covariance of the trend coefficients given the
/// latent field: covariance {(S*)^-1 + X' S^-1 X}^-1 with S = sill * R,
/// mean anchored at the prior and the field.
pub fn conjugate_beta_moments(
    x: &DMatrix<f64>,
    field: &DVector<f64>,
    corr: &DMatrix<f64>,
    sill: f64,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(sill.is_finite() && sill > 0.0) {
        return Err(Error::invalid(format!("sill must be positive, got {sill}")));
    }
    let (l, _) = cov::cholesky(corr)?;
    let r_chol = Cholesky::pack_dirty(l);
    let prior_prec = Cholesky::new(prior_cov.clone())
        .ok_or_else(|| Error::invalid("prior covariance must be symmetric positive definite"))?
        .inverse();
    let rinv_x = r_chol.solve(x);
    let rinv_f = r_chol.solve(field);
    let precision = &prior_prec + x.transpose() * &rinv_x / sill;
    let post_cov = Cholesky::new(precision)
        .ok_or(Error::NotPositiveDefinite { last_jitter: 0.0 })?
        .inverse();
    let rhs = &prior_prec * prior_mean + x.transpose() * &rinv_f / sill;
    let mean = &post_cov * rhs;
    Ok((mean, post_cov))
}

/// Shape and rate of the sill's inverse gamma full conditional given the
/// field residual quadratic form r' R^-1 r.
pub(crate) fn sill_conditional(n_sites: usize, quad: f64, prior: &BlockPrior) -> (f64, f64) {
    (
        0.5 * n_sites as f64 + prior.sill_shape,
        prior.sill_scale + 0.5 * quad,
    )
}

/// One draw from the inverse gamma distribution with the given shape and
/// rate (density proportional to x^(-shape-1) exp(-rate/x)).
pub fn draw_inverse_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(Error::invalid(format!(
            "inverse gamma needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    let gamma = rand_distr::Gamma::new(shape, 1.0)
        .map_err(|e| Error::invalid(format!("gamma sampler: {e}")))?;
    let g: f64 = rng.sample(gamma);
    Ok(rate / g.max(f64::MIN_POSITIVE))
}

pub(crate) fn draw_mvn<R: Rng>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let l = cov::psd_lower(cov)?;
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + l * z)
}

/// Sampler internals shared by `run_chain` and the joint-distribution
/// tests; the state is advanced block by block in the fixed scan order.
pub(crate) struct Sampler<'a> {
    sites: &'a SiteSet,
    x: DMatrix<f64>,
    pub(crate) columns: Vec<Vec<f64>>,
    priors: &'a PriorConfig,
    family: CorrFamily,
    family_kappa: Option<f64>,
    pub(crate) state: ChainState,
    caches: [BlockCache; 3],
    means: [DVector<f64>; 3],
    resids: [DVector<f64>; 3],
    quads: [f64; 3],
    site_ll: Vec<f64>,
    pub(crate) scales: [f64; 3],
    pub(crate) range_steps: [f64; 3],
    prior_means: [DVector<f64>; 3],
    prior_covs: [DMatrix<f64>; 3],
    site_accept: [usize; 3],
    site_attempt: [usize; 3],
    range_accept: [usize; 3],
    range_attempt: [usize; 3],
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(
        panel: &'a MaximaPanel,
        priors: &'a PriorConfig,
        config: &McmcConfig,
        state: ChainState,
    ) -> Result<Self> {
        let sites = panel.sites();
        state.validate(sites.len())?;
        let x = design_matrix(sites);
        let columns: Vec<Vec<f64>> = (0..sites.len()).map(|j| panel.site_column(j)).collect();

        let spread = data_spread(&columns);
        let default_scale = (0.5 * spread / 10.0).max(1e-3);
        let scales = [
            config.rw_eta.unwrap_or(default_scale),
            config.rw_tau.unwrap_or(default_scale),
            config.rw_xi,
        ];

        let mut sampler = Self {
            sites,
            x,
            columns,
            priors,
            family: config.family,
            family_kappa: config.family_kappa,
            state,
            caches: [
                BlockCache {
                    chol: DMatrix::zeros(0, 0),
                    log_det: 0.0,
                },
                BlockCache {
                    chol: DMatrix::zeros(0, 0),
                    log_det: 0.0,
                },
                BlockCache {
                    chol: DMatrix::zeros(0, 0),
                    log_det: 0.0,
                },
            ],
            means: [DVector::zeros(0), DVector::zeros(0), DVector::zeros(0)],
            resids: [DVector::zeros(0), DVector::zeros(0), DVector::zeros(0)],
            quads: [0.0; 3],
            site_ll: Vec::new(),
            scales,
            range_steps: [config.rw_range; 3],
            prior_means: [
                priors.eta.beta_mean_vector(),
                priors.tau.beta_mean_vector(),
                priors.xi.beta_mean_vector(),
            ],
            prior_covs: [
                priors.eta.beta_cov_matrix(),
                priors.tau.beta_cov_matrix(),
                priors.xi.beta_cov_matrix(),
            ],
            site_accept: [0; 3],
            site_attempt: [0; 3],
            range_accept: [0; 3],
            range_attempt: [0; 3],
        };
        for b in 0..3 {
            sampler.rebuild_cache(b)?;
            sampler.refresh_block(b);
        }
        sampler.refresh_site_loglik();
        Ok(sampler)
    }

    fn corr_spec(&self, lambda: f64) -> Result<CorrelationSpec> {
        CorrelationSpec::new(self.family, lambda, self.family_kappa)
    }

    fn rebuild_cache(&mut self, b: usize) -> Result<()> {
        let spec = self.corr_spec(self.state.ranges[b])?;
        self.caches[b] = BlockCache::build(self.sites, &spec)?;
        Ok(())
    }

    /// Recomputes the trend mean, residual and quadratic form of block
    /// `b` from the current state.
    fn refresh_block(&mut self, b: usize) {
        let beta = DVector::from_column_slice(&self.state.betas[b]);
        self.means[b] = &self.x * beta;
        self.resids[b] =
            DVector::from_column_slice(&self.state.fields[b]) - &self.means[b];
        self.quads[b] = self.caches[b].quad(&self.resids[b]);
    }

    pub(crate) fn refresh_site_loglik(&mut self) {
        self.site_ll = (0..self.sites.len())
            .map(|d| {
                site_loglik(
                    &self.columns[d],
                    self.state.fields[0][d],
                    self.state.fields[1][d],
                    self.state.fields[2][d],
                )
            })
            .collect();
    }

    /// Appendix Step 1: single-site random walk updates of the three
    /// latent fields.
    pub(crate) fn step_sites<R: Rng>(&mut self, rng: &mut R) {
        for b in 0..3 {
            for d in 0..self.sites.len() {
                self.site_attempt[b] += 1;
                let eps: f64 = rng.sample(StandardNormal);
                let cur = self.state.fields[b][d];
                let proposal = cur + self.scales[b] * eps;
                let params = [
                    self.state.fields[0][d],
                    self.state.fields[1][d],
                    self.state.fields[2][d],
                ];
                let mv = site_move(
                    &self.columns[d],
                    params,
                    b,
                    proposal,
                    &self.resids[b],
                    d,
                    &self.caches[b],
                    self.state.sills[b],
                    self.quads[b],
                    self.site_ll[d],
                );
                let u: f64 = rng.gen();
                if u.ln() < mv.log_accept {
                    self.state.fields[b][d] = proposal;
                    self.resids[b][d] += proposal - cur;
                    self.quads[b] = mv.quad_prop;
                    self.site_ll[d] = mv.ll_prop;
                    self.site_accept[b] += 1;
                }
            }
        }
    }

    /// Appendix Step 2: exact conjugate draw of the trend coefficients.
    pub(crate) fn step_regression<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        for b in 0..3 {
            let field = DVector::from_column_slice(&self.state.fields[b]);
            let r_chol = Cholesky::pack_dirty(self.caches[b].chol.clone());
            let prior_prec = Cholesky::new(self.prior_covs[b].clone())
                .ok_or_else(|| {
                    Error::invalid("prior covariance must be symmetric positive definite")
                })?
                .inverse();
            let rinv_x = r_chol.solve(&self.x);
            let rinv_f = r_chol.solve(&field);
            let precision =
                &prior_prec + self.x.transpose() * &rinv_x / self.state.sills[b];
            let post_cov = Cholesky::new(precision)
                .ok_or(Error::NotPositiveDefinite { last_jitter: 0.0 })?
                .inverse();
            let rhs = &prior_prec * &self.prior_means[b]
                + self.x.transpose() * &rinv_f / self.state.sills[b];
            let mean = &post_cov * rhs;
            let beta = draw_mvn(&mean, &post_cov, rng)?;
            self.state.betas[b] = [beta[0], beta[1], beta[2]];
            self.refresh_block(b);
        }
        Ok(())
    }

    /// Appendix Step 3: exact inverse gamma draw of the sills.
    pub(crate) fn step_sills<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        for b in 0..3 {
            let (shape, rate) =
                sill_conditional(self.sites.len(), self.quads[b], self.priors.block(b));
            self.state.sills[b] = draw_inverse_gamma(shape, rate, rng)?;
        }
        Ok(())
    }

    /// Appendix Step 4: uniform random walk on the ranges.
    pub(crate) fn step_ranges<R: Rng>(&mut self, rng: &mut R) {
        for b in 0..3 {
            self.range_attempt[b] += 1;
            let cur = self.state.ranges[b];
            let proposal = cur + self.range_steps[b] * (2.0 * rng.gen::<f64>() - 1.0);
            let prior = self.priors.block(b);
            let mv = range_move(
                self.sites,
                self.corr_spec(proposal),
                &self.resids[b],
                &self.caches[b],
                self.quads[b],
                self.state.sills[b],
                cur,
                proposal,
                prior.range_shape,
                prior.range_scale,
            );
            let u: f64 = rng.gen();
            if u.ln() < mv.log_accept {
                self.state.ranges[b] = proposal;
                self.caches[b] = mv.cache.expect("accepted move carries its factor");
                self.quads[b] = mv.quad_prop;
                self.range_accept[b] += 1;
            }
        }
    }

    pub(crate) fn sweep<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        self.step_sites(rng);
        self.step_regression(rng)?;
        self.step_sills(rng)?;
        self.step_ranges(rng);
        Ok(())
    }

    fn reset_counters(&mut self) {
        self.site_accept = [0; 3];
        self.site_attempt = [0; 3];
        self.range_accept = [0; 3];
        self.range_attempt = [0; 3];
    }

    /// Multiplicative scale tuning toward 20-40% acceptance.
    fn adapt_scales(&mut self) {
        for b in 0..3 {
            if self.site_attempt[b] > 0 {
                let rate = self.site_accept[b] as f64 / self.site_attempt[b] as f64;
                if rate > 0.4 {
                    self.scales[b] *= 1.25;
                } else if rate < 0.2 {
                    self.scales[b] /= 1.25;
                }
            }
            if self.range_attempt[b] > 0 {
                let rate = self.range_accept[b] as f64 / self.range_attempt[b] as f64;
                if rate > 0.4 {
                    self.range_steps[b] *= 1.25;
                } else if rate < 0.2 {
                    self.range_steps[b] = (self.range_steps[b] / 1.25).max(1e-3);
                }
            }
        }
        self.reset_counters();
    }

    fn acceptance(&self) -> ([f64; 3], [f64; 3]) {
        let frac = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        (
            [
                frac(self.site_accept[0], self.site_attempt[0]),
                frac(self.site_accept[1], self.site_attempt[1]),
                frac(self.site_accept[2], self.site_attempt[2]),
            ],
            [
                frac(self.range_accept[0], self.range_attempt[0]),
                frac(self.range_accept[1], self.range_attempt[1]),
                frac(self.range_accept[2], self.range_attempt[2]),
            ],
        )
    }
}

fn data_spread(columns: &[Vec<f64>]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for col in columns {
        for &v in col {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Moment-based starting state: per-site Gumbel moment estimates for the
/// location and scale fields, a small constant shape field, trend
/// coefficients from ridge least squares on the fields, sills from the
/// residual spread, and ranges at the prior mean.
fn initial_state(panel: &MaximaPanel, priors: &PriorConfig) -> Result<ChainState> {
    let sites = panel.sites();
    let d = sites.len();
    let mut all = Vec::new();
    for t in 0..panel.n_years() {
        for j in 0..d {
            let v = panel.value(t, j);
            if v.is_finite() {
                all.push(v);
            }
        }
    }
    if all.len() < 3 {
        return Err(Error::InsufficientData(
            "need at least 3 observations to start the chain".into(),
        ));
    }
    let moments = |vals: &[f64]| -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let tau = (var.sqrt() * 6f64.sqrt() / std::f64::consts::PI).max(1e-3);
        (mean - 0.5772156649015329 * tau, tau)
    };
    let (g_eta, g_tau) = moments(&all);
    let mut eta_field = Vec::with_capacity(d);
    let mut tau_field = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = panel
            .site_column(j)
            .into_iter()
            .filter(|v| v.is_finite())
            .collect();
        if col.len() >= 3 {
            let (e, t) = moments(&col);
            eta_field.push(e);
            tau_field.push(t);
        } else {
            eta_field.push(g_eta);
            tau_field.push(g_tau);
        }
    }
    let xi_field = vec![0.05; d];

    let x = design_matrix(sites);
    let ls = |vals: &[f64]| -> [f64; 3] {
        let mut xtx = x.transpose() * &x;
        let scale = xtx.trace() / 3.0;
        for i in 0..3 {
            xtx[(i, i)] += 1e-8 * scale.max(1.0);
        }
        let xty = x.transpose() * DVector::from_column_slice(vals);
        match Cholesky::new(xtx) {
            Some(ch) => {
                let beta = ch.solve(&xty);
                [beta[0], beta[1], beta[2]]
            }
            None => [vals.iter().sum::<f64>() / vals.len() as f64, 0.0, 0.0],
        }
    };
    let fields = [eta_field, tau_field, xi_field];
    let mut betas = [[0.0; 3]; 3];
    let mut sills = [0.0; 3];
    let mut ranges = [0.0; 3];
    for b in 0..3 {
        betas[b] = ls(&fields[b]);
        let beta = DVector::from_column_slice(&betas[b]);
        let resid = DVector::from_column_slice(&fields[b]) - &x * beta;
        let rvar = resid.dot(&resid) / d as f64;
        let prior = priors.block(b);
        // Prior mode as a floor keeps the first sweeps well conditioned
        // when the moment residuals are tiny.
        let mode = prior.sill_scale / (prior.sill_shape + 1.0);
        sills[b] = rvar.max(mode);
        ranges[b] = prior.range_shape * prior.range_scale;
    }
    Ok(ChainState {
        fields,
        betas,
        sills,
        ranges,
    })
}

/// Runs one chain of the fixed-scan sampler on an annual maxima panel.
///
/// Proposal scales adapt toward 20-40% acceptance during burn-in and are
/// frozen afterwards; reported acceptance rates cover the post burn-in
/// sweeps only.
pub fn run_chain(panel: &MaximaPanel, priors: &PriorConfig, config: &McmcConfig) -> Result<McmcRun> {
    priors.validate()?;
    config.validate()?;
    if panel.sites().len() < 2 {
        return Err(Error::InsufficientData(
            "the latent hierarchy needs at least 2 sites".into(),
        ));
    }
    let state = initial_state(panel, priors)?;
    let mut sampler = Sampler::new(panel, priors, config, state)?;
    let mut rng = stream(config.seed, streams::MCMC_CHAIN);

    let n_keep = (config.iterations - config.burn_in).div_ceil(config.thin);
    let mut samples = Vec::with_capacity(n_keep);
    for sweep in 0..config.iterations {
        sampler.sweep(&mut rng)?;
        if sweep < config.burn_in {
            if config.adapt && (sweep + 1) % 100 == 0 {
                sampler.adapt_scales();
            }
            if sweep + 1 == config.burn_in {
                sampler.reset_counters();
            }
        }
        if sweep >= config.burn_in && (sweep - config.burn_in) % config.thin == 0 {
            samples.push(sampler.state.clone());
        }
    }
    let (site_acceptance, range_acceptance) = sampler.acceptance();
    Ok(McmcRun {
        samples,
        diagnostics: McmcDiagnostics {
            site_acceptance,
            range_acceptance,
            rw_scales: sampler.scales,
            rw_ranges: sampler.range_steps,
        },
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        seed: config.seed,
    })
}

/// Geweke convergence score: standardized difference between the means
/// of the first tenth and the last half of a series, with batch-means
/// standard errors so autocorrelation does not understate the noise.
pub fn geweke_z(series: &[f64]) -> Result<f64> {
    if series.len() < 40 {
        return Err(Error::InsufficientData(
            "Geweke diagnostic needs at least 40 draws".into(),
        ));
    }
    let head = &series[..(series.len() / 10).max(10)];
    let tail = &series[series.len() / 2..];
    let mean_and_se = |x: &[f64]| -> (f64, f64) {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let n_batches = 10.min(x.len());
        let batch = x.len() / n_batches;
        let mut bm = Vec::with_capacity(n_batches);
        for k in 0..n_batches {
            let seg = &x[k * batch..(k + 1) * batch];
            bm.push(seg.iter().sum::<f64>() / seg.len() as f64);
        }
        let bmean = bm.iter().sum::<f64>() / bm.len() as f64;
        let bvar = bm.iter().map(|v| (v - bmean) * (v - bmean)).sum::<f64>()
            / (bm.len() as f64 - 1.0);
        (mean, (bvar / bm.len() as f64).sqrt())
    };
    let (m1, se1) = mean_and_se(head);
    let (m2, se2) = mean_and_se(tail);
    let denom = (se1 * se1 + se2 * se2).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((m1 - m2) / denom)
}

/// Posterior summary of one scalar chain component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub geweke_z: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn summarize_series(name: String, series: &[f64]) -> TraceSummary {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sd = if series.len() > 1 {
        (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    TraceSummary {
        name,
        mean,
        sd,
        q025: quantile(&sorted, 0.025),
        median: quantile(&sorted, 0.5),
        q975: quantile(&sorted, 0.975),
        geweke_z: geweke_z(series).unwrap_or(f64::NAN),
    }
}

/// Scalar trace summaries of a run: trend coefficients, sills, and
/// ranges per block, plus the derived practical range `h_plus` at which
/// the exponential field correlation drops to 0.05.
pub fn summarize(run: &McmcRun) -> Result<Vec<TraceSummary>> {
    if run.samples.is_empty() {
        return Err(Error::InsufficientData("no retained samples".into()));
    }
    let coef_names = ["0", "x", "y"];
    let mut out = Vec::new();
    for b in 0..3 {
        for (k, cname) in coef_names.iter().enumerate() {
            let series: Vec<f64> = run.samples.iter().map(|s| s.betas[b][k]).collect();
            out.push(summarize_series(
                format!("beta.{}.{}", BLOCK_NAMES[b], cname),
                &series,
            ));
        }
        let sills: Vec<f64> = run.samples.iter().map(|s| s.sills[b]).collect();
        out.push(summarize_series(format!("sill.{}", BLOCK_NAMES[b]), &sills));
        let ranges: Vec<f64> = run.samples.iter().map(|s| s.ranges[b]).collect();
        out.push(summarize_series(
            format!("range.{}", BLOCK_NAMES[b]),
            &ranges,
        ));
        let h_plus: Vec<f64> = ranges.iter().map(|l| -l * 0.05f64.ln()).collect();
        out.push(summarize_series(
            format!("h_plus.{}", BLOCK_NAMES[b]),
            &h_plus,
        ));
    }
    Ok(out)
}

/// Draws one realization of the hierarchy: a Gaussian surface per GEV
/// parameter around its trend (exponential correlation), then
/// conditionally independent GEV maxima. Returns the panel together with
/// the latent fields that generated it.
pub fn simulate_latent_hierarchy(
    model: &SurfaceModel,
    sills: [f64; 3],
    ranges: [f64; 3],
    sites: &SiteSet,
    years: &[i64],
    seed: u64,
) -> Result<(MaximaPanel, [Vec<f64>; 3])> {
    model.validate()?;
    let d = sites.len();
    let mut rng = indexed_stream(seed, streams::SYNTH_DATASET, 0);
    let mut fields: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for b in 0..3 {
        let spec = CorrelationSpec::exponential(ranges[b])?;
        let bump = cov::gp_sample_with(sites, &spec, sills[b], &mut rng)?;
        let trend = match b {
            0 => &model.eta,
            1 => &model.tau,
            _ => &model.xi,
        };
        fields[b] = (0..d)
            .map(|j| trend.at(sites.coord(j)) + bump[j])
            .collect();
    }
    for (j, &tau) in fields[1].iter().enumerate() {
        if tau <= 0.0 {
            return Err(Error::NonPositiveScale {
                site: sites.ids()[j].clone(),
                tau,
            });
        }
    }
    let params: Vec<GevParams> = (0..d)
        .map(|j| GevParams::new(fields[0][j], fields[1][j], fields[2][j]))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(years.len());
    for t in 0..years.len() {
        let mut row_rng = indexed_stream(seed, streams::SYNTH_DATASET, 1 + t as u64);
        let mut row = Vec::with_capacity(d);
        for p in &params {
            let u: f64 = row_rng.gen::<f64>().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
            let z = -1.0 / u.ln();
            row.push(from_unit_frechet(z, p)?);
        }
        rows.push(row);
    }
    let panel = MaximaPanel::new(sites.clone(), years.to_vec(), rows)?;
    Ok((panel, fields))
}

/// Pointwise posterior return-level surface from retained chain states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnMap {
    /// Return period, years.
    pub period: f64,
    pub ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    /// Posterior mean return level per grid cell.
    pub mean: Vec<f64>,
    /// 2.5% posterior quantile.
    pub q025: Vec<f64>,
    /// 97.5% posterior quantile.
    pub q975: Vec<f64>,
    /// Draws per cell discarded for an invalid GEV parameter combination.
    pub n_missing: Vec<usize>,
}

/// Builds a posterior return-level map: for every retained state the
/// three latent surfaces are conditionally simulated on the grid given
/// the state's site values, the return level is evaluated cellwise, and
/// the draws are aggregated pointwise. Grid cells where a draw yields an
/// invalid scale contribute to that cell's missing count instead of a
/// level.
pub fn posterior_return_map(
    samples: &[ChainState],
    sites: &SiteSet,
    grid: &SiteSet,
    period: f64,
    family: CorrFamily,
    family_kappa: Option<f64>,
    seed: u64,
) -> Result<ReturnMap> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(
            "return map needs at least one retained state".into(),
        ));
    }
    let d = sites.len();
    let g = grid.len();
    let x_obs = design_matrix(sites);
    let x_grid = design_matrix(grid);
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len()); g];
    let mut n_missing = vec![0usize; g];
    for (k, state) in samples.iter().enumerate() {
        state.validate(d)?;
        let mut rng = indexed_stream(seed, streams::RETURN_MAP, k as u64);
        let mut surfaces: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for b in 0..3 {
            let spec = CorrelationSpec::new(family, state.ranges[b], family_kappa)?;
            let beta = DVector::from_column_slice(&state.betas[b]);
            let resid = DVector::from_column_slice(&state.fields[b]) - &x_obs * &beta;
            let (mean, mut cov) = cov::gp_conditional_moments(
                sites,
                resid.as_slice(),
                grid,
                &spec,
                state.sills[b],
            )?;
            // Grid cells on top of observed sites have conditional
            // variance zero up to rounding noise; zero those rows so the
            // draw interpolates exactly.
            let tol = 1e-10 * state.sills[b];
            for i in 0..g {
                if cov[(i, i)] < tol {
                    for j in 0..g {
                        cov[(i, j)] = 0.0;
                        cov[(j, i)] = 0.0;
                    }
                }
            }
            let bump = cov::conditional_draw_with(&mean, &cov, &mut rng)?;
            let trend = &x_grid * &beta;
            surfaces[b] = (0..g).map(|j| trend[j] + bump[j]).collect();
        }
        for j in 0..g {
            match GevParams::new(surfaces[0][j], surfaces[1][j], surfaces[2][j])
                .and_then(|p| return_level(period, &p))
            {
                Ok(level) => draws[j].push(level),
                Err(_) => n_missing[j] += 1,
            }
        }
    }
    let mut mean = vec![f64::NAN; g];
    let mut q025 = vec![f64::NAN; g];
    let mut q975 = vec![f64::NAN; g];
    for j in 0..g {
        if draws[j].is_empty() {
            continue;
        }
        let mut v = draws[j].clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mean[j] = v.iter().sum::<f64>() / v.len() as f64;
        q025[j] = quantile(&v, 0.025);
        q975[j] = quantile(&v, 0.975);
    }
    Ok(ReturnMap {
        period,
        ids: grid.ids().to_vec(),
        coords: (0..g).map(|j| grid.coord(j)).collect(),
        mean,
        q025,
        q975,
        n_missing,
    })
}

/// Group-maximum envelope check against the latent hierarchy: simulated
/// panels share the marginal surfaces but are conditionally independent
/// across sites given fresh Gaussian surfaces, so systematically smaller
/// observed group maxima expose unmodeled spatial dependence.
///
/// Observed and simulated panels are mapped to the unit Fréchet scale
/// with the supplied surfaces; cells outside a fitted support map to the
/// limiting values 0 and +inf of the transform rather than failing.
pub fn latent_groupwise_check(
    panel: &MaximaPanel,
    model: &SurfaceModel,
    sills: [f64; 3],
    ranges: [f64; 3],
    center: [f64; 2],
    radii: &[f64],
    n_sim: usize,
    level: f64,
    seed: u64,
) -> Result<GroupwiseCheck> {
    if radii.is_empty() {
        return Err(Error::invalid("need at least one radius"));
    }
    if n_sim < 19 {
        return Err(Error::invalid("need at least 19 simulations"));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid(format!("level must be in (0,1), got {level}")));
    }
    let sites = panel.sites();
    let to_frechet_rows = |p: &MaximaPanel| -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(p.n_years());
        for t in 0..p.n_years() {
            let mut row = Vec::with_capacity(sites.len());
            for j in 0..sites.len() {
                let y = p.value(t, j);
                if !y.is_finite() {
                    row.push(f64::NAN);
                    continue;
                }
                let params = model.params_at(sites.coord(j), &sites.ids()[j])?;
                let z = match to_unit_frechet(y, &params) {
                    Ok(z) => z,
                    // Below the fitted lower endpoint the transform tends
                    // to 0, above the fitted upper endpoint to infinity.
                    Err(Error::OutOfSupport(_)) => {
                        if params.lower_endpoint().is_some_and(|lo| y <= lo) {
                            0.0
                        } else {
                            1e300
                        }
                    }
                    Err(e) => return Err(e),
                };
                row.push(z);
            }
            rows.push(row);
        }
        Ok(rows)
    };
    let observed = to_frechet_rows(panel)?;
    let curve = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
        radii
            .iter()
            .map(|&r| Ok(area_statistic_t(rows, sites, center, r)?.theta))
            .collect()
    };
    let mut curves = Vec::with_capacity(n_sim + 1);
    curves.push(curve(&observed)?);
    for b in 0..n_sim {
        let sim_seed = derive_indexed_seed(seed, streams::GROUPWISE_CHECK, b as u64);
        let (sim_panel, _) =
            simulate_latent_hierarchy(model, sills, ranges, sites, panel.years(), sim_seed)?;
        let mut rows = to_frechet_rows(&sim_panel)?;
        for (row, obs) in rows.iter_mut().zip(&observed) {
            for (cell, o) in row.iter_mut().zip(obs) {
                if !o.is_finite() {
                    *cell = f64::NAN;
                }
            }
        }
        curves.push(curve(&rows)?);
    }
    Ok(rank_envelope(radii, curves, level))
}
