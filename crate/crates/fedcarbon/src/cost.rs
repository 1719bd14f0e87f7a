//! Static per-client costs from regional carbon-intensity traces.
//!
//! A trace is a CSV time series `timestamp,intensity` for one region; its
//! arithmetic mean becomes the region's scalar cost. Each client is
//! assigned the average of a uniformly random region (with replacement),
//! and a round's emissions are the sum over participants of
//! `intensity * energy_per_round`. Costs are static for a whole run.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// One region's carbon-intensity series and its scalar average.
#[derive(Debug, Clone, PartialEq)]
pub struct CarbonTrace {
    pub region_id: String,
    /// `(timestamp, intensity gCO2eq/kWh)` rows in file order.
    pub samples: Vec<(String, f64)>,
    pub average: f64,
}

impl CarbonTrace {
    fn from_samples(region_id: String, samples: Vec<(String, f64)>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let average = samples.iter().map(|(_, v)| v).sum::<f64>() / samples.len() as f64;
        Some(Self {
            region_id,
            samples,
            average,
        })
    }
}

fn parse_trace(region_id: &str, text: &str) -> Result<Option<CarbonTrace>> {
    let mut samples = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (ts, value) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("trace {region_id}: expected `timestamp,intensity`"),
        })?;
        let intensity: f64 = value.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("trace {region_id}: non-numeric intensity {:?}", value.trim()),
        })?;
        if intensity < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("trace {region_id}: negative intensity {intensity}"),
            });
        }
        samples.push((ts.trim().to_string(), intensity));
    }
    Ok(CarbonTrace::from_samples(region_id.to_string(), samples))
}

/// Load one trace file or a directory of `*.csv` trace files (one region
/// per file, region id = file stem, sorted by name for determinism).
/// Empty traces are skipped with a warning.
pub fn load_traces(path: &Path) -> Result<Vec<CarbonTrace>> {
    let mut files: Vec<std::path::PathBuf> = Vec::new();
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().and_then(|e| e.to_str()) == Some("csv") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no trace files found under {}",
            path.display()
        )));
    }
    let mut traces = Vec::with_capacity(files.len());
    for file in &files {
        let region = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("region")
            .to_string();
        let text = std::fs::read_to_string(file)?;
        match parse_trace(&region, &text)? {
            Some(trace) => traces.push(trace),
            None => log::warn!("trace {region} is empty; skipped"),
        }
    }
    if traces.is_empty() {
        return Err(Error::Config(format!(
            "every trace under {} was empty",
            path.display()
        )));
    }
    Ok(traces)
}

/// Build traces from bare region averages, for configs that inline costs
/// instead of shipping trace files.
pub fn traces_from_averages(averages: &[f64]) -> Result<Vec<CarbonTrace>> {
    if averages.is_empty() {
        return Err(Error::Config("cost.region_averages must be non-empty".into()));
    }
    averages
        .iter()
        .enumerate()
        .map(|(i, &avg)| {
            if avg <= 0.0 {
                return Err(Error::Config(format!(
                    "cost.region_averages[{i}] must be > 0, got {avg}"
                )));
            }
            Ok(CarbonTrace {
                region_id: format!("inline_{i:03}"),
                samples: vec![("inline".to_string(), avg)],
                average: avg,
            })
        })
        .collect()
}

/// A client's assigned region and static cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostAssignment {
    pub client_id: usize,
    pub region_id: String,
    /// C'_i, the region's average carbon intensity (gCO2eq/kWh).
    pub intensity: f64,
}

/// Static per-client costs plus the per-round energy draw shared by all
/// clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostModel {
    pub assignments: Vec<CostAssignment>,
    /// kWh consumed by one client in one round.
    pub energy_per_round: f64,
}

impl CostModel {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// C'_i for one client.
    pub fn cost_of(&self, client_id: usize) -> Result<f64> {
        self.assignments
            .get(client_id)
            .map(|a| a.intensity)
            .ok_or_else(|| Error::Integrity(format!("unknown client {client_id}")))
    }
}

/// Assign each client the average of a uniformly random trace (with
/// replacement), deterministically in `seed`.
pub fn assign_costs(
    num_clients: usize,
    traces: &[CarbonTrace],
    energy_per_round: f64,
    seed: u64,
) -> Result<CostModel> {
    if traces.is_empty() {
        return Err(Error::Config("cannot assign costs from zero traces".into()));
    }
    if energy_per_round <= 0.0 {
        return Err(Error::Config("cost.energy_per_round must be > 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let assignments = (0..num_clients)
        .map(|client_id| {
            let trace = &traces[rng.gen_range(0..traces.len())];
            CostAssignment {
                client_id,
                region_id: trace.region_id.clone(),
                intensity: trace.average,
            }
        })
        .collect();
    Ok(CostModel {
        assignments,
        energy_per_round,
    })
}

/// Emissions of one round: sum over participants of
/// `C'_i * energy_per_round` (gCO2eq).
pub fn round_emissions(participants: &[usize], cost_model: &CostModel) -> Result<f64> {
    let mut total = 0.0;
    for &client in participants {
        total += cost_model.cost_of(client)? * cost_model.energy_per_round;
    }
    Ok(total)
}

/// Summary statistics over the per-region averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStats {
    pub regions: usize,
    pub min_average: f64,
    pub max_average: f64,
    pub mean_of_averages: f64,
}

pub fn trace_stats(traces: &[CarbonTrace]) -> Result<TraceStats> {
    if traces.is_empty() {
        return Err(Error::Config("no traces to summarize".into()));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for t in traces {
        min = min.min(t.average);
        max = max.max(t.average);
        sum += t.average;
    }
    Ok(TraceStats {
        regions: traces.len(),
        min_average: min,
        max_average: max,
        mean_of_averages: sum / traces.len() as f64,
    })
}
