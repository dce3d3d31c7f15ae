use std::fs;

use macropca::simulation::{manifest_entry, preset, run_study, SimulationConfig};

use crate::config::{pick, FileConfig};
use crate::error::CliError;
use crate::SimulateArgs;

pub fn run(a: &SimulateArgs, file: &FileConfig) -> Result<(), CliError> {
    let d = SimulationConfig::default();
    let name = pick(a.preset.clone(), &file.preset).unwrap_or_else(|| "setting1".into());
    let mut spec = preset(
        &name,
        pick(a.n, &file.n).unwrap_or(d.n),
        pick(a.d, &file.d).unwrap_or(d.d),
        pick(a.reps, &file.reps).unwrap_or(d.replications),
        pick(a.seed, &file.seed).unwrap_or(d.seed),
    )?;
    if let Some(g) = pick(a.grid.clone(), &file.grid) {
        spec.grid = g
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::parse(format!("bad grid value {t:?}"))))
            .collect::<Result<_, _>>()?;
    }
    let curve = run_study(&spec)?;
    fs::create_dir_all(&a.out)?;
    let csv_name = format!("{name}.csv");
    curve.write_csv(a.out.join(&csv_name))?;
    let manifest = vec![manifest_entry(&spec, &csv_name)];
    fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
