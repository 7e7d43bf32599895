//! Embarrassingly parallel variational inference for nonconjugate models.
//!
//! Data are split into `M` shards. Each shard's subposterior, with the prior
//! raised to `1/M`, is approximated independently by a uniform mixture of `K`
//! isotropic Gaussians ([`nvi`]). The `M` fitted mixtures are then combined
//! through their product, which approximates the full-data posterior
//! ([`combine`]): exactly by enumerating all `K^M` components, by a
//! Metropolis-within-Gibbs chain over component indices, or by sequential
//! pairwise products.
//!
//! [`pipeline`] runs the whole procedure with file-based exchange between
//! workers, and [`eval`] measures held-out predictive performance.

pub mod cli;
pub mod combine;
pub mod error;
pub mod eval;
pub mod io;
pub mod math;
pub mod mixture;
pub mod models;
pub mod nvi;
pub mod pipeline;

pub use error::{Error, Result};
pub use mixture::{
    enumerate_product, product_component, ComponentIndex, GaussianComponent, MixtureApprox, ProductComponent,
    ProductMixture, DEFAULT_ENUMERATION_CAP,
};
