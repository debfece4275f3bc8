//! Representation discrepancy toolkit.
//!
//! Compares two feature matrices `Z` (p×n) and `Z′` (p′×n) computed on the
//! same n samples. The central quantity is the transferred discrepancy: fit
//! the same kind of head on both representations for a downstream task and
//! measure how differently the two heads predict. For linear heads this has
//! a closed form in terms of the projectors onto the row spaces of `Z` and
//! `Z′`, and its large-sample behaviour is governed by the singular values
//! of the alignment matrix `D = A^{-1/2} B C^{-1/2}`.
//!
//! Companion metrics (CCA, linear CKA, maximum match) live in [`metrics`],
//! the spectral limits in [`spectral`], Gaussian generators in [`synth`] and
//! Monte Carlo checks in [`verify`].
//!
//! ```
//! use repdisc::{FeatureMatrix, TaskVector, td_linear};
//!
//! let z = FeatureMatrix::from_rows(&[&[1.0, 0.0, -1.0]]).unwrap();
//! let z2 = FeatureMatrix::from_rows(&[&[0.0, 1.0, -1.0]]).unwrap();
//! let y = TaskVector::from_slice(&[1.0, 0.0, -1.0]).unwrap();
//! let td = td_linear(&z, &z2, &y).unwrap();
//! assert!((td.value - 0.5).abs() < 1e-12);
//! ```

pub mod cli;
pub mod error;
pub mod fmat;
pub mod linalg;
pub mod metrics;
pub mod probes;
pub mod spectral;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use fmat::{ClassLabels, FeatureMatrix, Labels, TaskVector};
pub use linalg::{InvSqrtOptions, RngStream, SymmetricPsd};
pub use metrics::{d_cca, d_cka, max_match_bound, max_match_greedy, td_cls, td_linear, td_soft, MetricValue};
pub use spectral::{d_hat, AlignmentSpectrum};
pub use synth::{make_spec, sample_joint, JointGaussianSpec, SpecKind};
pub use verify::VerifyReport;
