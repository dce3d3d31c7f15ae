//! Robust principal component analysis for data with missing values,
//! cellwise outliers and rowwise outliers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ddc;
pub mod detmcd;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod linalg;
pub mod macropca;
pub mod matrix;
mod par;
pub mod simulation;
pub mod univariate;

pub use ddc::{ddc_fit, DdcModel, DdcParams, DdcResult};
pub use detmcd::{detmcd, McdEstimate};
pub use error::{Error, Result};
pub use macropca::{icpca_fit, macropca_fit, macropca_predict, MacroPcaParams, MacroPcaResult, Method, PcaModel};
pub use matrix::{ColumnStandardization, CsvOptions, IncompleteMatrix};
