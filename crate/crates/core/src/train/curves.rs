//! Learning curves: metrics logs in, one plottable CSV out.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::TrainMetrics;

/// Reads a `metrics.jsonl` log, one record per line.
pub fn read_metrics(path: &Path) -> Result<Vec<TrainMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Reward and episode length against update, one row per (run, update).
pub fn curves_csv(runs: &[(String, Vec<TrainMetrics>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "update", "total_steps", "mean_episode_reward", "mean_episode_length"])
        .expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (run, metrics) in runs {
        for m in metrics {
            w.write_record([
                run.clone(),
                m.update.to_string(),
                m.total_steps.to_string(),
                opt(m.mean_episode_reward),
                opt(m.mean_episode_length),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Mean episode reward over the first and the last `fraction` of updates
/// (updates without a finished episode are skipped).
pub fn reward_windows(metrics: &[TrainMetrics], fraction: f64) -> Option<(f64, f64)> {
    let k = ((metrics.len() as f64 * fraction).ceil() as usize).max(1);
    if metrics.len() < k {
        return None;
    }
    let mean = |ms: &[TrainMetrics]| {
        let v: Vec<f64> = ms.iter().filter_map(|m| m.mean_episode_reward).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some((mean(&metrics[..k])?, mean(&metrics[metrics.len() - k..])?))
}
