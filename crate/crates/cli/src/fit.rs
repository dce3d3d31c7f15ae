use std::fs;
use std::io::Write;
use std::path::Path;

use macropca::diagnostics::quadrant;
use macropca::macropca::icpca_default_rank;
use macropca::matrix::{format_number, read_csv, write_csv};
use macropca::{icpca_fit, macropca_fit, DdcParams, IncompleteMatrix, MacroPcaParams, MacroPcaResult};

use crate::config::{pick, FileConfig};
use crate::error::CliError;
use crate::{FitArgs, MethodArg};

pub fn params(a: &FitArgs, file: &FileConfig) -> MacroPcaParams {
    let d = MacroPcaParams::default();
    MacroPcaParams {
        alpha: pick(a.alpha, &file.alpha).unwrap_or(d.alpha),
        k: pick(a.k, &file.k),
        k_max: pick(a.kmax, &file.kmax).unwrap_or(d.k_max),
        cum_var_target: pick(a.cum_var, &file.cum_var).unwrap_or(d.cum_var_target),
        n_directions: pick(a.ndir, &file.ndir).unwrap_or(d.n_directions),
        max_iter: pick(a.maxiter, &file.maxiter).unwrap_or(d.max_iter),
        angle_tol: pick(a.tol, &file.tol).unwrap_or(d.angle_tol),
        scale_columns: a.scale_columns || file.scale_columns.unwrap_or(false),
        seed: pick(a.seed, &file.seed).unwrap_or(d.seed),
        ddc: DdcParams { p_cutoff: pick(a.p_cutoff, &file.p_cutoff).unwrap_or(d.ddc.p_cutoff), ..d.ddc },
    }
}

pub fn row_labels(x: &IncompleteMatrix) -> Vec<String> {
    match x.row_names() {
        Some(r) => r.to_vec(),
        None => (1..=x.nrows()).map(|i| i.to_string()).collect(),
    }
}

pub fn run(a: &FitArgs, file: &FileConfig) -> Result<(), CliError> {
    let x = read_csv(&a.input, &file.csv_options(&a.input_opts))?;
    let p = params(a, file);
    let result = match pick(a.method, &file.method).unwrap_or(MethodArg::Macropca) {
        MethodArg::Macropca => macropca_fit(&x, &p)?,
        MethodArg::Icpca => {
            let k = match p.k {
                Some(k) => k,
                None => icpca_default_rank(&x, &p)?,
            };
            icpca_fit(&x, k, p.max_iter, p.angle_tol)?
        }
    };
    write_bundle(&a.out, &x, &result)
}

fn write_bundle(dir: &Path, x: &IncompleteMatrix, r: &MacroPcaResult) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let labels = row_labels(x);
    let cols: Vec<String> = match x.col_names() {
        Some(c) => c.to_vec(),
        None => (1..=x.ncols()).map(|j| format!("V{j}")).collect(),
    };
    let model = &r.model;
    model.save(dir.join("model.json"))?;

    let named = |m: &IncompleteMatrix| -> Result<IncompleteMatrix, CliError> {
        Ok(m.clone().with_row_names(labels.clone())?.with_col_names(cols.clone())?)
    };
    write_csv(&named(x)?, dir.join("data.csv"), "NA")?;
    write_csv(&named(&r.residuals)?, dir.join("residuals.csv"), "NA")?;

    let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
    let mut header = vec!["row".to_string()];
    header.extend((1..=model.k).map(|a| format!("PC{a}")));
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(r.scores.row(i).iter().map(|&v| format_number(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("flags.csv"))?;
    let mut header = vec!["row".to_string(), "outside_h_star".to_string()];
    header.extend(cols.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone(), u8::from(r.row_flags.binary_search(&i).is_ok()).to_string()];
        rec.extend((0..x.ncols()).map(|j| u8::from(r.cell_flags[(i, j)]).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("od_sd.csv"))?;
    w.write_record(["row", "od", "sd", "row_flag", "quadrant"])?;
    for (i, label) in labels.iter().enumerate() {
        let q = quadrant(r.sd[i], r.od[i], model.cutoff_sd, model.cutoff_od);
        w.write_record([
            label.clone(),
            format_number(r.od[i]),
            format_number(r.sd[i]),
            u8::from(r.od[i] > model.cutoff_od).to_string(),
            q.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    std::io::stdout().flush()?;
    Ok(())
}
