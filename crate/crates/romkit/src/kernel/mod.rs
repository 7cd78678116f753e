//! Kernel-based surrogates: radial basis function interpolation with an
//! optional polynomial tail, and Gaussian process regression with the exact
//! posterior.

mod gpr;
mod rbf;

pub use gpr::{
    gpr_fit, gpr_log_marginal_likelihood, gpr_predict, gpr_select_hyperparams, GprHyper, GprModel,
    PriorMean,
};
pub use rbf::{median_pairwise_distance, rbf_eval, rbf_fit, RbfKernel, RbfModel, RbfTail};
