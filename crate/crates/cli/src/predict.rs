use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};

use macropca::macropca::PredictOptions;
use macropca::matrix::{format_number, parse_cell};
use macropca::PcaModel;

use crate::config::{pick, FileConfig};
use crate::error::{CliError, Kind};
use crate::PredictArgs;

pub fn run(a: &PredictArgs, file: &FileConfig) -> Result<(), CliError> {
    let model = PcaModel::load(&a.model)?;
    let d = model.dim();
    let opts = file.csv_options(&a.input_opts);
    let defaults = PredictOptions::default();
    let popts = PredictOptions {
        max_iter: pick(a.maxiter, &file.maxiter).unwrap_or(defaults.max_iter),
        tol: pick(a.tol, &file.tol).unwrap_or(defaults.tol),
    };
    let input: Box<dyn Read> = match &a.input {
        Some(p) if p.as_os_str() != "-" => {
            Box::new(BufReader::new(File::open(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?))
        }
        _ => Box::new(io::stdin().lock()),
    };
    let output: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let na: HashSet<&str> = opts.na_tokens.iter().map(String::as_str).collect();
    let skip = usize::from(opts.row_names);

    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).delimiter(opts.delimiter).from_reader(input);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(CliError::parse("input has no header row")),
    };
    if header.len() != d + skip {
        return Err(CliError::new(
            Kind::Dimension,
            format!("input has {} data columns, the model expects {d}", header.len() - skip.min(header.len())),
        ));
    }
    let names: Vec<String> = header.iter().skip(skip).map(|s| s.trim().to_string()).collect();

    let mut w = csv::Writer::from_writer(output);
    let mut head = vec!["row".to_string()];
    head.extend((1..=model.k).map(|c| format!("PC{c}")));
    head.extend(["od", "sd", "row_flag"].map(String::from));
    head.extend(names.iter().map(|n| format!("imputed_{n}")));
    head.push("cell_flags".into());
    w.write_record(&head)?;
    w.flush()?;

    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != d + skip {
            return Err(CliError::new(
                Kind::Dimension,
                format!("row {} has {} fields, expected {}", i + 1, rec.len(), d + skip),
            ));
        }
        let label = if skip == 1 { rec.get(0).unwrap_or_default().trim().to_string() } else { (i + 1).to_string() };
        let row = rec
            .iter()
            .skip(skip)
            .enumerate()
            .map(|(j, tok)| {
                parse_cell(tok, &na)
                    .map(|v| v.unwrap_or(f64::NAN))
                    .ok_or_else(|| CliError::parse(format!("cannot parse {tok:?} at row {}, column {}", i + 1, j + 1)))
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        let p = model.predict_with(&row, &popts)?;
        let mut out = vec![label];
        out.extend(p.scores.iter().map(|&v| format_number(v)));
        out.push(format_number(p.od));
        out.push(format_number(p.sd));
        out.push(u8::from(p.row_flag).to_string());
        out.extend(p.x_imputed.iter().map(|&v| format_number(v)));
        out.push(p.cell_flags.iter().map(|&j| names[j].as_str()).collect::<Vec<_>>().join(";"));
        w.write_record(&out)?;
        w.flush()?;
    }
    Ok(())
}
