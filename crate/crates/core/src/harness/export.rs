use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::metrics::MetricsSummary;
use super::run::{EpisodeRecord, TrajectoryEvent};
use crate::error::HarnessError;

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CURVE_FILE: &str = "curve.csv";

#[derive(Debug, Clone)]
pub struct ExportPaths {
    pub episodes: PathBuf,
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub curve: PathBuf,
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| HarnessError::io(path, e))
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, HarnessError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>, HarnessError> {
    read_jsonl(path)
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Vec<TrajectoryEvent>, HarnessError> {
    read_jsonl(path)
}

pub fn write_summary<W: Write>(mut w: W, summary: &MetricsSummary) -> std::io::Result<()> {
    for (k, v) in summary.rows() {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

pub fn write_curve<W: Write>(mut w: W, summary: &MetricsSummary) -> std::io::Result<()> {
    writeln!(w, "episode_window,f1,qs_per_token,delay")?;
    for p in &summary.curve {
        writeln!(
            w,
            "{},{},{},{}",
            p.episode_end, p.f1, p.queries_per_token, p.delay_per_token
        )?;
    }
    Ok(())
}

/// Writes episodes, trajectory, summary and learning curve into `dir`.
pub fn export_results(
    records: &[EpisodeRecord],
    trajectory: &[TrajectoryEvent],
    summary: &MetricsSummary,
    dir: impl AsRef<Path>,
) -> Result<ExportPaths, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let paths = ExportPaths {
        episodes: dir.join(EPISODES_FILE),
        trajectory: dir.join(TRAJECTORY_FILE),
        summary: dir.join(SUMMARY_FILE),
        curve: dir.join(CURVE_FILE),
    };
    write_file(&paths.episodes, |w| write_jsonl(w, records))?;
    write_file(&paths.trajectory, |w| write_jsonl(w, trajectory))?;
    write_file(&paths.summary, |w| write_summary(w, summary))?;
    write_file(&paths.curve, |w| write_curve(w, summary))?;
    Ok(paths)
}
