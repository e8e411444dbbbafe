//! Runs a scenario's protocol legs and writes their outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use thiserror::Error;

use crate::broadcast::BroadcastRound;
use crate::metrics::{self, mean, mean_clock_variance, tts_stats};
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{run_broadcast, run_pco, LegResult, NodeWindow, SimError, World};
use crate::topology::all_nearest_neighbors;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{leg} leg failed: {source}")]
    Sim {
        leg: &'static str,
        #[source]
        source: SimError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub pco: Option<(LegResult, Vec<Vec<NodeWindow>>)>,
    pub broadcast: Option<(LegResult, Vec<BroadcastRound>)>,
}

impl RunOutput {
    pub fn pco_leg(&self) -> Option<&LegResult> {
        self.pco.as_ref().map(|(l, _)| l)
    }

    pub fn broadcast_leg(&self) -> Option<&LegResult> {
        self.broadcast.as_ref().map(|(l, _)| l)
    }

    /// Broadcast energy over PCO energy, when both legs ran.
    pub fn energy_ratio(&self) -> Option<f64> {
        let (p, b) = (self.pco_leg()?, self.broadcast_leg()?);
        metrics::energy_ratio(b.energy.total(), p.energy.total()).ok()
    }

    /// Mean PCO sync efficiency over mean broadcast sync efficiency.
    pub fn efficiency_ratio(&self) -> Option<f64> {
        let (p, b) = (self.pco_leg()?, self.broadcast_leg()?);
        Some(mean_efficiency(p) / mean_efficiency(b))
    }
}

pub fn mean_efficiency(leg: &LegResult) -> f64 {
    let v: Vec<f64> = leg.samples.iter().map(|s| s.sync_eff_per_w).collect();
    mean(&v)
}

/// Mean clock variance over the first and the final quarter of the run.
pub fn quarter_variances(leg: &LegResult) -> (f64, f64) {
    let d = leg.duration_s;
    (
        mean_clock_variance(&leg.samples, 0.0, 0.25 * d),
        mean_clock_variance(&leg.samples, 0.75 * d, f64::INFINITY),
    )
}

/// Runs the legs the scenario asks for. With both protocols the legs run
/// on separate threads over the same world.
pub fn simulate(s: &Scenario) -> Result<RunOutput, RunError> {
    s.validate()?;
    let world = World::from_scenario(s);
    let (pco, broadcast) = std::thread::scope(|scope| {
        let pco = s.protocol.runs_pco().then(|| scope.spawn(|| run_pco(s, &world)));
        let broadcast = s.protocol.runs_broadcast().then(|| run_broadcast(s, &world));
        let pco = pco.map(|h| h.join().expect("PCO leg panicked"));
        (pco, broadcast)
    });
    let pco = pco
        .transpose()
        .map_err(|source| RunError::Sim { leg: "pco", source })?;
    let broadcast = broadcast.transpose().map_err(|source| RunError::Sim {
        leg: "broadcast",
        source,
    })?;
    if let Some((leg, _)) = &broadcast {
        if leg.infeasible_rounds > 0 {
            warn!(
                "broadcast needed more than the radio maximum in {} of {} rounds; sent at maximum",
                leg.infeasible_rounds,
                leg.rounds.len()
            );
        }
    }
    Ok(RunOutput { pco, broadcast })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn leg_rows(leg: &LegResult, rows: &mut Vec<(String, String)>) {
    let p = leg.protocol;
    let mut put = |k: &str, v: String| rows.push((format!("{p}.{k}"), v));
    put("energy_tx_J", fmt(leg.energy.tx_j));
    put("energy_rx_J", fmt(leg.energy.rx_j));
    put("energy_startup_J", fmt(leg.energy.startup_j));
    put("energy_total_J", fmt(leg.energy.total()));
    put("rounds", leg.rounds.len().to_string());
    if let Some(t) = tts_stats(&leg.rounds) {
        put("tts_first_ms", fmt(t.first * 1e3));
        put("tts_mean_after_first_ms", fmt(t.mean_after_first * 1e3));
        put("tts_var_after_first_s2", fmt(t.var_after_first));
        put("tts_var_all_s2", fmt(t.var_all));
        put("flagged_rounds", t.flagged.to_string());
    }
    put("infeasible_rounds", leg.infeasible_rounds.to_string());
    put("duty_cycle", fmt(leg.duty_cycle()));
    let (first, last) = quarter_variances(leg);
    put("clock_var_first_quarter_s2", fmt(first));
    put("clock_var_final_quarter_s2", fmt(last));
    put("mean_sync_eff_per_W", fmt(mean_efficiency(leg)));
    if let Some(s) = leg.samples.last() {
        put("final_pos", fmt(s.pos));
    }
}

/// Summary as ordered `key,value` pairs.
pub fn summary_rows(s: &Scenario, out: &RunOutput) -> Vec<(String, String)> {
    let mut rows = vec![
        ("name".to_string(), s.name.clone()),
        ("seed".to_string(), s.seed.to_string()),
        ("n_nodes".to_string(), s.n_nodes.to_string()),
        ("duration_s".to_string(), fmt(s.duration_s)),
        ("mobility".to_string(), s.mobility.enabled.to_string()),
    ];
    // Measured mean nearest-neighbour spacing of the initial layout next to
    // the sqrt(A/n) figure used by the analytic gain.
    let world = World::from_scenario(s);
    if let Ok(nn) = all_nearest_neighbors(&world.positions) {
        let d: Vec<f64> = nn.iter().map(|&(_, d)| d).collect();
        rows.push(("nn_distance_mean_m".to_string(), fmt(mean(&d))));
    }
    let area = s.area_side_m * s.area_side_m;
    rows.push((
        "nn_distance_formula_m".to_string(),
        fmt((area / s.n_nodes as f64).sqrt()),
    ));
    if let Some(leg) = out.pco_leg() {
        leg_rows(leg, &mut rows);
    }
    if let Some(leg) = out.broadcast_leg() {
        leg_rows(leg, &mut rows);
    }
    if let Some(r) = out.energy_ratio() {
        rows.push(("energy_ratio".to_string(), fmt(r)));
    }
    if let Some(r) = out.efficiency_ratio() {
        rows.push(("efficiency_ratio".to_string(), fmt(r)));
    }
    rows
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| RunError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Writes `<name>.<protocol>.metrics.csv` per leg and `<name>.summary.csv`.
pub fn write_outputs(s: &Scenario, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for leg in [out.pco_leg(), out.broadcast_leg()].into_iter().flatten() {
        let path = dir.join(format!("{}.{}.metrics.csv", s.name, leg.protocol));
        metrics::write_metrics_csv(&leg.samples, create(&path)?)?;
        written.push(path);
    }
    let path = dir.join(format!("{}.summary.csv", s.name));
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["key", "value"])?;
    for (k, v) in summary_rows(s, out) {
        w.write_record([k, v])?;
    }
    w.flush().map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    written.push(path);
    Ok(written)
}

/// Simulates and writes outputs; returns the summary rows.
pub fn run(s: &Scenario, dir: &Path) -> Result<Vec<(String, String)>, RunError> {
    info!(
        "running {} ({} nodes, {} s, seed {})",
        s.name, s.n_nodes, s.duration_s, s.seed
    );
    let out = simulate(s)?;
    for path in write_outputs(s, &out, dir)? {
        info!("wrote {}", path.display());
    }
    Ok(summary_rows(s, &out))
}

pub fn print_summary<W: Write>(rows: &[(String, String)], mut w: W) -> std::io::Result<()> {
    for (k, v) in rows {
        writeln!(w, "{k:<40} {v}")?;
    }
    Ok(())
}
