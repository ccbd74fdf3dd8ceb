//! Eight-way causal variance decomposition for hospital profiling.
//!
//! The library splits the marginal variance of a care-quality outcome into
//! eight components: group indirect effect, group direct effect, group
//! covariance, main hospital effect, effect modification, differential
//! selection, case-mix, and residual. Estimation is plug-in: a fixed-effects
//! outcome GLM, a hospital-assignment multinomial model, and a group-membership
//! multinomial model are fitted by maximum likelihood and their predictions
//! are standardized over the empirical covariate distribution.
//!
//! Modules:
//! - [`data`]: CSV ingestion, categorical encoding, and design rows.
//! - [`models`]: Newton-Raphson GLM and multinomial fitting.
//! - [`decompose`]: the eight plug-in variance components.
//! - [`oracles`]: exact reference implementations over small discrete laws.
//! - [`uncertainty`]: normal-approximation posterior draws and bootstrap.
//! - [`simulate`]: data-generating scenarios and the replication harness.

pub mod data;
pub mod decompose;
pub mod error;
pub mod models;
pub mod oracles;
pub mod rng;
pub mod simulate;
pub mod uncertainty;

mod kahan;

pub use error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is enabled.
///
/// Results are collected in index order, so downstream reductions are
/// bit-identical regardless of thread count.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
