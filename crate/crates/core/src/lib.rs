//! Dual coresets for Wasserstein distributionally robust optimization (WDRO).
//!
//! A WDRO problem minimizes, over a hypothesis ball, the worst-case expected
//! loss across all distributions within Wasserstein distance `sigma` of the
//! empirical distribution. Through strong duality the inner supremum becomes a
//! one-dimensional infimum over a multiplier `lambda`, with per-sample terms
//! `h_i(theta, lambda)` (a Moreau–Yosida regularization of the loss). This
//! crate compresses the dataset for that dual objective: samples are
//! stratified on a grid built from lower/upper bounds of `h_i` at an anchor
//! point, then drawn per cell with weights that keep the estimator unbiased.
//!
//! Modules:
//! - [`dataio`]: datasets, the feature-label metric, parsing, normalization,
//!   and synthetic/perturbed data generation.
//! - [`losses`]: loss models (SVM hinge, logistic, Huber, hypercube SVM) with
//!   their dual quantities `kappa`, `C`, `R` and the `h`/`a`/`b` oracles.
//! - [`coreset`]: anchors, the two-sided grid partition, budget allocation,
//!   and coreset sampling (grid-based and uniform baseline).
//! - [`wdro`]: dual objective evaluation, worst-case risk via 1-D search,
//!   projected subgradient training, and a brute-force verification oracle.
//! - [`bench`](mod@bench): the repeated-trials benchmark protocol with CSV/plot output.

pub mod bench;
pub mod coreset;
pub mod dataio;
pub mod error;
pub mod losses;
pub mod rng;
pub mod wdro;

pub(crate) mod vecs;

pub use error::WdroError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, WdroError>;
