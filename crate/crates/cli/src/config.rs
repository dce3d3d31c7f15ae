//! Optional TOML defaults, overridden by command-line flags.

use std::path::Path;

use serde::Deserialize;

use crate::error::CliError;
use crate::{AnnotateArg, InputArgs, MethodArg};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<MethodArg>,
    pub k: Option<usize>,
    pub kmax: Option<usize>,
    pub cum_var: Option<f64>,
    pub alpha: Option<f64>,
    pub maxiter: Option<usize>,
    pub tol: Option<f64>,
    pub ndir: Option<usize>,
    pub seed: Option<u64>,
    pub p_cutoff: Option<f64>,
    pub scale_columns: Option<bool>,
    pub na_tokens: Option<Vec<String>>,
    pub row_names: Option<bool>,
    pub block: Option<String>,
    pub annotate: Option<AnnotateArg>,
    pub label_top: Option<usize>,
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub reps: Option<usize>,
    pub grid: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::parse(format!("{}: {}", path.display(), e.message())))
    }

    pub fn csv_options(&self, args: &InputArgs) -> macropca::CsvOptions {
        let mut opts = macropca::CsvOptions::default();
        if !args.na_token.is_empty() {
            opts.na_tokens = args.na_token.clone();
        } else if let Some(t) = &self.na_tokens {
            opts.na_tokens = t.clone();
        }
        opts.row_names = args.row_names || self.row_names.unwrap_or(false);
        opts
    }
}

/// Flag value, else file value.
pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>) -> Option<T> {
    flag.or_else(|| file.clone())
}
