use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rtinfer::cori::{cori_posterior, mean_detection_delay};
use rtinfer::disease::simulate_seeded;
use rtinfer::eval::{calibration_curve, run_benchmark, Method, MethodPosterior};
use rtinfer::gp_prior::GpPrior;
use rtinfer::io;
use rtinfer::observation::{ObservationModel, ObservationSeries};
use rtinfer::rng::{derive_seed, stream_rng};
use rtinfer::svi::{self, estimate_elbo, Checkpoint, Model};
use rtinfer::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{absolute, Inputs, Manifest, VERSION};
use crate::CliError;

pub const DEFAULT_LEVELS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

const MANIFEST: &str = "manifest.json";

fn manifest(command: &str, config: Option<RunConfig>, seed: u64, inputs: Inputs, outputs: &[&str]) -> Manifest {
    Manifest {
        command: command.into(),
        tool_version: VERSION.into(),
        rng_seed: seed,
        config,
        inputs,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    }
}

/// Writes `infections.csv`, `observations.csv`, `truth.csv`.
pub fn simulate(mut config: RunConfig, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let seed = seed.unwrap_or(config.seed);
    config.resolve_seeds(seed);
    let disease = config.disease()?.clone();
    let scheme = config.scheme()?;
    let truth = config.truth()?;
    let outputs = ["infections.csv", "observations.csv", "truth.csv"];
    manifest("simulate", Some(config.clone()), seed, Inputs::default(), &outputs).write(&out.join(MANIFEST))?;

    let n = simulate_seeded(&truth, &disease, derive_seed(&[seed, 2]))?;
    let model = ObservationModel::new(scheme, config.profile(), disease.population_size)?;
    let x = model.sample(&n, &mut stream_rng(seed, 3, 0));
    io::write_counts(&out.join(outputs[0]), "infections", &n.counts)?;
    io::write_counts(&out.join(outputs[1]), "positives", &x.counts)?;
    io::write_values(&out.join(outputs[2]), "R", &truth.r)?;
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    iterations: usize,
    mean_gamma: f64,
    sd_gamma: f64,
    final_elbo: f64,
}

/// Writes `posterior.csv`, `elbo.csv`, `summary.json`, `checkpoint.json`.
pub fn infer(
    mut config: RunConfig,
    observations: Vec<u64>,
    resume: Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let seed = seed.unwrap_or(config.seed);
    config.resolve_seeds(seed);
    let disease = config.disease()?.clone();
    if observations.len() != disease.horizon {
        return Err(CliError::Config(format!(
            "observations have {} days but disease.horizon is {}",
            observations.len(),
            disease.horizon
        )));
    }
    let scheme = config.scheme()?;
    let prior = GpPrior::new(&config.prior_config()?, disease.horizon)?;
    config.svi.validate()?;
    let checkpoint = match &resume {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let c: Checkpoint =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Some(c)
        }
        None => None,
    };

    let outputs = ["posterior.csv", "elbo.csv", "summary.json", "checkpoint.json"];
    let inputs = Inputs {
        observations: Some(observations.clone()),
        resume: resume.as_deref().map(absolute),
        ..Inputs::default()
    };
    manifest("infer", Some(config.clone()), seed, inputs, &outputs).write(&out.join(MANIFEST))?;

    let observation = ObservationModel::new(scheme, config.profile(), disease.population_size)?;
    let x = ObservationSeries::new(observations);
    let bound = observation.bind(&x);
    let model = Model {
        disease: &disease,
        prior: &prior,
        likelihood: &bound,
    };
    let result = match checkpoint {
        Some(c) => svi::resume(&model, &config.svi, c),
        None => svi::fit(&model, &config.svi),
    };
    let fit = match result {
        Ok(fit) => fit,
        Err(Error::Diverged {
            iteration,
            reason,
            last_finite,
        }) => {
            io::write_json(&out.join("checkpoint.json"), &last_finite)?;
            return Err(CliError::Runtime(format!(
                "optimization diverged at iteration {iteration}: {reason}; last finite state saved to checkpoint.json"
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let final_elbo = estimate_elbo(
        &fit.checkpoint.state,
        &model,
        config.svi.elbo_eval_samples,
        derive_seed(&[seed, 5]),
    );
    io::write_posterior(&out.join(outputs[0]), &MethodPosterior::from_summary(&fit.summary))?;
    io::write_elbo_trace(&out.join(outputs[1]), &fit.summary.elbo_trace)?;
    let summary = FitSummary {
        iterations: fit.checkpoint.iteration,
        mean_gamma: fit.summary.mean_gamma,
        sd_gamma: fit.summary.sd_gamma,
        final_elbo,
    };
    io::write_json(&out.join(outputs[2]), &summary)?;
    io::write_json(&out.join(outputs[3]), &fit.checkpoint)?;
    Ok(())
}

/// Cori estimate for the same inputs as `infer`, written to `cori.csv`.
pub fn cori(mut config: RunConfig, observations: Vec<u64>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let seed = seed.unwrap_or(config.seed);
    config.resolve_seeds(seed);
    let disease = config.disease()?.clone();
    if observations.len() != disease.horizon {
        return Err(CliError::Config(format!(
            "observations have {} days but disease.horizon is {}",
            observations.len(),
            disease.horizon
        )));
    }
    let scheme = config.scheme()?;
    let mut cori = config.cori.clone();
    if cori.mean_delay_shift == 0 {
        cori.mean_delay_shift = mean_detection_delay(&scheme, &config.profile());
    }
    cori.validate()?;
    config.cori = cori.clone();
    let outputs = ["cori.csv"];
    let inputs = Inputs {
        observations: Some(observations.clone()),
        ..Inputs::default()
    };
    manifest("cori", Some(config), seed, inputs, &outputs).write(&out.join(MANIFEST))?;
    let days = cori_posterior(&ObservationSeries::new(observations), &disease.profile, &cori)?;
    io::write_posterior(&out.join(outputs[0]), &MethodPosterior::from_gamma(&days))?;
    Ok(())
}

fn cell_file(label: &str) -> String {
    format!("cell_{label}.csv")
}

/// Writes one `cell_<label>.csv` per grid cell plus `summary.csv`.
pub fn benchmark(mut config: RunConfig, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let seed = seed.unwrap_or(config.seed);
    config.seed = seed;
    let bench = config.benchmark()?;
    let mut outputs: Vec<String> = bench.grid.iter().map(|c| cell_file(&c.label())).collect();
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = outputs.iter().find(|o| !seen.insert(o.as_str())) {
        return Err(CliError::Config(format!("benchmark.grid has two cells writing {dup}")));
    }
    outputs.push("summary.csv".into());
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    manifest("benchmark", Some(config), seed, Inputs::default(), &names).write(&out.join(MANIFEST))?;

    let result = run_benchmark(&bench)?;
    for cell in &result.cells {
        io::write_cell(&out.join(cell_file(&cell.spec.label())), cell)?;
    }
    io::write_summary(&out.join("summary.csv"), &result.cells)?;
    Ok(())
}

/// Pools every `cell_*.csv` in `results` and writes `method,level,coverage`.
pub fn calibrate(results: &Path, levels: Option<Vec<f64>>, out: &Path) -> Result<(), CliError> {
    let levels = levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(CliError::Config("levels must lie in (0, 1)".into()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(results)
        .map_err(|e| CliError::Config(format!("{}: {e}", results.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("cell_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no cell_*.csv files in {}", results.display())));
    }

    let file_name = out
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Config(format!("{} is not a file path", out.display())))?
        .to_string();
    let dir = out.parent().unwrap_or(Path::new(""));
    let inputs = Inputs {
        results: Some(absolute(results)),
        levels: Some(levels.clone()),
        ..Inputs::default()
    };
    manifest("calibrate", None, 0, inputs, &[&file_name]).write(&dir.join(format!("{file_name}.manifest.json")))?;

    let mut pooled: BTreeMap<Method, (Vec<MethodPosterior>, Vec<Vec<f64>>)> = BTreeMap::new();
    for file in &files {
        for (method, (posteriors, truths)) in io::read_cell(file)? {
            let slot = pooled.entry(method).or_default();
            slot.0.extend(posteriors);
            slot.1.extend(truths);
        }
    }
    let mut curves = BTreeMap::new();
    for (method, (posteriors, truths)) in &pooled {
        curves.insert(*method, calibration_curve(posteriors, truths, &levels)?);
    }
    io::write_calibration(out, &levels, &curves)?;
    Ok(())
}

/// Runs the command recorded in a manifest, writing into `out`.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let m = Manifest::read(manifest_path)?;
    if m.tool_version != VERSION {
        eprintln!(
            "warning: manifest was written by version {}, this is {VERSION}",
            m.tool_version
        );
    }
    let dir = match out {
        Some(dir) => dir,
        None => manifest_path.parent().unwrap_or(Path::new("")).to_path_buf(),
    };
    let config = || {
        m.config
            .clone()
            .ok_or_else(|| CliError::Config("manifest has no config snapshot".into()))
    };
    let observations = || {
        m.inputs
            .observations
            .clone()
            .ok_or_else(|| CliError::Config("manifest has no observations".into()))
    };
    let seed = Some(m.rng_seed);
    match m.command.as_str() {
        "simulate" => simulate(config()?, seed, &dir),
        "infer" => infer(config()?, observations()?, m.inputs.resume.clone(), seed, &dir),
        "cori" => cori(config()?, observations()?, seed, &dir),
        "benchmark" => benchmark(config()?, seed, &dir),
        "calibrate" => {
            let results = m
                .inputs
                .results
                .clone()
                .ok_or_else(|| CliError::Config("manifest has no results directory".into()))?;
            let name = m
                .outputs
                .first()
                .ok_or_else(|| CliError::Config("manifest lists no output".into()))?;
            calibrate(&results, m.inputs.levels.clone(), &dir.join(name))
        }
        other => Err(CliError::Config(format!("unknown command {other:?} in manifest"))),
    }
}
