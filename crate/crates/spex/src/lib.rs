//! Spatial extreme-value modeling.
//!
//! Building blocks for annual-maximum analyses over a spatial domain:
//!
//! * [`evd`]: generalized extreme-value and generalized Pareto marginals,
//!   return levels, and transforms to and from the unit Fréchet scale.
//! * [`kernels`]: the scalar special functions everything else leans on
//!   (normal CDF and quantile, Student t CDF and quantile, modified Bessel
//!   function of the second kind with fractional order).
//! * [`cov`]: isotropic correlation families, geometric anisotropy, nugget
//!   effects, semivariograms, and Gaussian-process sampling.
//! * [`dep`]: bivariate spatial dependence models (max-stable exponent
//!   measures, extremal copulas, elliptical copulas) with closed-form or
//!   numeric partial derivatives, extremal coefficients, and practical
//!   dependence ranges.
//! * [`marginal`]: trend surfaces mapping site coordinates to GEV parameters
//!   and panel-wide transforms to the unit Fréchet scale.
//! * [`fit`]: pairwise composite likelihood, full elliptical-copula
//!   likelihood, derivative-free optimization, sandwich variance, and a
//!   composite-likelihood information criterion.
//! * [`mcmc`]: a latent Gaussian hierarchy with fixed-scan Metropolis and
//!   conjugate updates, plus posterior return-level maps.
//! * [`sim`]: exact and truncated spectral simulators for max-stable fields,
//!   copula-limit simulation, F-madogram estimation, and model checks.
//! * [`io`]: station table and annual-maxima panel parsing shared with the
//!   command-line front end.
//!
//! Distances are kilometres throughout; coordinates are planar (already
//! projected). All randomness flows from one global `u64` seed through the
//! stream-splitting scheme in [`rng`].

pub mod cov;
pub mod dep;
pub mod error;
pub mod evd;
pub mod fit;
pub mod io;
pub mod kernels;
pub mod marginal;
pub mod mcmc;
pub mod optim;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
