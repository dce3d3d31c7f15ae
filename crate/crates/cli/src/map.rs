use std::fs;
use std::path::{Path, PathBuf};

use macropca::diagnostics::{Annotate, OutlierMap, ResidualMap, DEFAULT_R_MAX};
use macropca::matrix::read_csv;
use macropca::{CsvOptions, PcaModel};

use crate::config::{pick, FileConfig};
use crate::error::CliError;
use crate::{AnnotateArg, MapArgs};

fn member(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::io(format!("missing bundle member {}", p.display())))
    }
}

pub fn parse_block(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::parse(format!("block must look like 5x5, got {s:?}"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn read_od_sd(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let (mut od, mut sd) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, CliError> {
            rec.get(c)
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| CliError::parse(format!("{}: bad value at row {}, column {}", path.display(), i + 1, c + 1)))
        };
        od.push(num(1)?);
        sd.push(num(2)?);
    }
    Ok((od, sd))
}

pub fn run(a: &MapArgs, file: &FileConfig) -> Result<(), CliError> {
    let model = PcaModel::load(member(&a.bundle, "model.json")?)?;
    let opts = CsvOptions { na_tokens: vec!["NA".into()], row_names: true, ..CsvOptions::default() };
    let residuals = read_csv(member(&a.bundle, "residuals.csv")?, &opts)?;
    let data = read_csv(member(&a.bundle, "data.csv")?, &opts)?;
    let (od, sd) = read_od_sd(&member(&a.bundle, "od_sd.csv")?)?;

    let annotate = match pick(a.annotate, &file.annotate).unwrap_or(AnnotateArg::None) {
        AnnotateArg::Values => Annotate::Values,
        AnnotateArg::Residuals => Annotate::Residuals,
        AnnotateArg::None => Annotate::None,
    };
    let mut map = ResidualMap::from_parts(&residuals, &od, model.cutoff_od, Some(&data), annotate, DEFAULT_R_MAX)?;
    if let Some(b) = pick(a.block.clone(), &file.block) {
        let (r, c) = parse_block(&b)?;
        map = map.blocked(r, c)?;
    }
    let labels = data.row_names().map(|r| r.to_vec());
    let outliers = OutlierMap::from_parts(
        &sd,
        &od,
        model.cutoff_sd,
        model.cutoff_od,
        labels.as_deref(),
        pick(a.label_top, &file.label_top).unwrap_or(5),
    )?;

    let out = a.out.clone().unwrap_or_else(|| a.bundle.clone());
    fs::create_dir_all(&out)?;
    map.render_svg(out.join("residual_map.svg"))?;
    outliers.render_svg(out.join("outlier_map.svg"))?;
    fs::write(out.join("map_spec.csv"), map.to_csv())?;
    Ok(())
}
