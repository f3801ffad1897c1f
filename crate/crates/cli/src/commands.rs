use std::io::Write;
use std::path::{Path, PathBuf};

use otj_core::environment::CrowdMode;
use otj_core::harness::{
    compute_metrics, export_results, load_episodes, load_frozen_pool, load_sequence_dataset,
    run_stream, Dataset, ExportPaths, MetricsSummary, RunConfig, RunOutput,
};
use otj_core::HarnessError;

use crate::args::{ReplayArgs, ReportArgs, RunArgs, SimulateArgs};
use crate::error::CliError;

pub const DEFAULT_OUT_DIR: &str = "otj-out";

/// Defaults, then the config file, then flags.
pub fn resolve_config(run: &RunArgs) -> Result<RunConfig, CliError> {
    let mut config = match &run.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    let mut set = |key: &str, value: &str| {
        config
            .set(key, value)
            .map_err(|e| CliError::Config(e.to_string()))
    };
    if let Some(policy) = &run.policy {
        set("policy", policy)?;
    }
    if let Some(seed) = run.seed {
        set("seed", &seed.to_string())?;
    }
    for kv in &run.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        set(key, value)?;
    }
    if let Some(out) = &run.out {
        config.output_dir = Some(out.clone());
    }
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

pub fn load_data(run: &RunArgs) -> Result<Dataset, CliError> {
    let path = run
        .data
        .as_ref()
        .ok_or_else(|| CliError::Data("missing required flag --data".into()))?;
    load_sequence_dataset(path).map_err(|e| CliError::Data(e.to_string()))
}

pub fn output_dir(config: &RunConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// The background label if it is one of the dataset's labels.
pub fn background<'a>(config: &'a RunConfig, labels: &[String]) -> Option<&'a str> {
    let b = config.background.as_str();
    labels.iter().any(|l| l == b).then_some(b)
}

pub fn summarize(output: &RunOutput, dataset: &Dataset, config: &RunConfig) -> MetricsSummary {
    let labels = dataset.label_set.names();
    compute_metrics(
        &output.records,
        labels,
        background(config, labels),
        config.window,
    )
}

pub fn write_table<W: Write>(mut w: W, summary: &MetricsSummary) -> std::io::Result<()> {
    for (key, value) in summary.rows() {
        writeln!(w, "{key:<28} {value}")?;
    }
    Ok(())
}

fn finish(
    output: &RunOutput,
    dataset: &Dataset,
    config: &RunConfig,
) -> Result<ExportPaths, CliError> {
    let summary = summarize(output, dataset, config);
    let paths = export_results(
        &output.records,
        &output.trajectory,
        &summary,
        output_dir(config),
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    write_table(std::io::stdout().lock(), &summary).map_err(|e| CliError::Other(e.to_string()))?;
    Ok(paths)
}

pub fn simulate(args: &SimulateArgs) -> Result<ExportPaths, CliError> {
    let dataset = load_data(&args.run)?;
    let config = resolve_config(&args.run)?;
    let output = run_stream(&dataset, &config, CrowdMode::Generative)?;
    finish(&output, &dataset, &config)
}

pub fn replay(args: &ReplayArgs) -> Result<ExportPaths, CliError> {
    let dataset = load_data(&args.run)?;
    let mut config = resolve_config(&args.run)?;
    config.pool_fallback |= args.fallback;
    let pool_path = args
        .pool
        .as_ref()
        .ok_or_else(|| CliError::Data("missing required flag --pool".into()))?;
    let pool =
        load_frozen_pool(pool_path, &dataset, config.pool_fallback).map_err(|e| match e {
            HarnessError::PoolMismatch(_) => CliError::PoolMismatch(e.to_string()),
            other => CliError::Data(other.to_string()),
        })?;
    let output = run_stream(&dataset, &config, CrowdMode::Frozen(pool))?;
    finish(&output, &dataset, &config)
}

pub fn report(args: &ReportArgs) -> Result<MetricsSummary, CliError> {
    let records = load_episodes(&args.episodes).map_err(|e| CliError::Data(e.to_string()))?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no episodes",
            args.episodes.display()
        )));
    }
    let background =
        (!args.background.eq_ignore_ascii_case("none")).then_some(args.background.as_str());
    let summary = compute_metrics(&records, &[], background, args.window.max(1));
    write_table(std::io::stdout().lock(), &summary).map_err(|e| CliError::Other(e.to_string()))?;
    Ok(summary)
}

pub fn episodes_path(dir: &Path) -> PathBuf {
    dir.join(otj_core::harness::export::EPISODES_FILE)
}
