//! Hierarchical multinomial tree (MTM) and approximate bivariate
//! random-effects models for meta-analysis of diagnostic accuracy studies.

pub mod data;
pub mod error;
pub mod fit;
pub mod likelihood;
pub mod links;
pub mod optim;
pub mod quadrature;
pub mod simulate;
pub mod summary;

pub use data::{
    empirical_accuracy, estimate_prevalences, transform_estimates, CorrectionPolicy,
    MetaDataset, Prevalence, StudyRecord,
};
pub use error::{Error, Result};
pub use links::LinkFunction;
pub use quadrature::{gauss_hermite_rule, BivariateNormalSpec, QuadratureRule, QuadratureScheme};
