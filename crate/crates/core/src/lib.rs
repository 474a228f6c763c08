//! Gaussian process regression with the approximations commonly used for
//! large datasets: subset of data, FITC with inducing points drawn from the
//! training set, local experts on a recursive projection tree, and conjugate
//! gradients, plus the timing harness used to compare them.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod exact;
pub mod fitc;
pub mod harness;
pub mod iterative;
pub mod kernel;
pub mod linalg;
pub mod local;
pub mod metrics;
pub mod optimizer;
pub mod selection;
pub mod sod;

pub use error::{GprError, Result};
pub use exact::{exact_logml, exact_train, ExactModel, LogMl, PredictiveDistribution};
pub use fitc::{fitc_kernel_eval, fitc_logml, fitc_train, hybrid_train, FitcModel};
pub use kernel::{kernel_eval, kernel_matrix, Hyperparameters, KernelFlavor};
pub use local::{local_logml_joint, local_logml_separate, local_train, LocalMode, LocalModel};
pub use optimizer::{maximize_logml, OptBudget};
pub use selection::{build_rpc, rpc_assign, select_fpc, select_random, RpcTree, Selector, SubsetChoice};
pub use sod::{sod_logml, sod_train, SodModel};
