//! Synchronization and energy metrics, and the closed-form transmission
//! gain analysis.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("node count must be positive")]
    NoNodes,
    #[error("synced count {synced} exceeds node count {n}")]
    TooManySynced { synced: usize, n: usize },
    #[error("total power must be positive, got {0} W")]
    NonPositivePower(f64),
    #[error("PCO energy total must be positive, got {0} J")]
    NonPositiveEnergy(f64),
}

/// Proportion out of sync, `1 - s/n`.
pub fn pos(synced: usize, n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::NoNodes);
    }
    if synced > n {
        return Err(MetricsError::TooManySynced { synced, n });
    }
    Ok((n - synced) as f64 / n as f64)
}

pub fn sync_efficiency(synced: usize, n: usize, total_power_w: f64) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::NoNodes);
    }
    if !(total_power_w > 0.0) {
        return Err(MetricsError::NonPositivePower(total_power_w));
    }
    Ok(synced as f64 / n as f64 / total_power_w)
}

/// Population variance of `local - reference`.
pub fn clock_variance(local_times: &[f64], reference: f64) -> f64 {
    let diffs: Vec<f64> = local_times.iter().map(|t| t - reference).collect();
    variance(&diffs)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Broadcast total over PCO total.
pub fn energy_ratio(broadcast_total_j: f64, pco_total_j: f64) -> Result<f64, MetricsError> {
    if !(pco_total_j > 0.0) {
        return Err(MetricsError::NonPositiveEnergy(pco_total_j));
    }
    Ok(broadcast_total_j / pco_total_j)
}

/// Outcome of one synchronization round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub index: usize,
    /// True start of the round, seconds.
    pub start_s: f64,
    pub tts_s: f64,
    /// Some node never converged and `tts_s` is the full listening span.
    pub flagged: bool,
}

impl RoundRecord {
    pub fn tts_ms(&self) -> f64 {
        self.tts_s * 1e3
    }
}

/// Summary statistics over round TTS values, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtsStats {
    pub first: f64,
    pub mean_after_first: f64,
    pub var_after_first: f64,
    pub var_all: f64,
    pub flagged: usize,
}

pub fn tts_stats(rounds: &[RoundRecord]) -> Option<TtsStats> {
    let first = rounds.first()?.tts_s;
    let all: Vec<f64> = rounds.iter().map(|r| r.tts_s).collect();
    let rest = &all[1..];
    Some(TtsStats {
        first,
        mean_after_first: mean(rest),
        var_after_first: variance(rest),
        var_all: variance(&all),
        flagged: rounds.iter().filter(|r| r.flagged).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    /// One nearest-neighbour hop against one broadcast.
    PerTransmission,
    /// All `n` nearest-neighbour hops summed against one broadcast.
    AggregateSum,
}

impl GainMode {
    pub fn label(self) -> &'static str {
        match self {
            GainMode::PerTransmission => "per-transmission",
            GainMode::AggregateSum => "aggregate-sum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainQuery {
    pub n: u64,
    pub area_m2: f64,
    pub delta: f64,
    pub mode: GainMode,
}

/// Broadcast pathloss term `(√(A/π) + √(A/(n+1)))^δ` over the
/// nearest-neighbour term `(√(A/n))^δ`, the latter multiplied by `n` in
/// aggregate mode.
pub fn gain_ratio(q: &GainQuery) -> f64 {
    let n = q.n as f64;
    let a = q.area_m2;
    let broadcast = ((a / PI).sqrt() + (a / (n + 1.0)).sqrt()).powf(q.delta);
    let hop = (a / n).sqrt().powf(q.delta);
    match q.mode {
        GainMode::PerTransmission => broadcast / hop,
        GainMode::AggregateSum => broadcast / (n * hop),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainRow {
    pub n: u64,
    pub delta: f64,
    pub mode: &'static str,
    pub gain: f64,
}

/// One row per `(n, delta, mode)`, ordered by mode, then delta, then n.
pub fn sweep_gain(n_values: &[u64], deltas: &[f64], modes: &[GainMode], area_m2: f64) -> Vec<GainRow> {
    let mut rows = Vec::with_capacity(n_values.len() * deltas.len() * modes.len());
    for &mode in modes {
        for &delta in deltas {
            for &n in n_values {
                rows.push(GainRow {
                    n,
                    delta,
                    mode: mode.label(),
                    gain: gain_ratio(&GainQuery {
                        n,
                        area_m2,
                        delta,
                        mode,
                    }),
                });
            }
        }
    }
    rows
}

pub fn write_gain_csv<W: Write>(rows: &[GainRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One metrics row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSample {
    pub t_s: f64,
    pub pos: f64,
    pub tts_ms: Option<f64>,
    pub clock_var_s2: f64,
    pub density_per_m2: f64,
    #[serde(rename = "energy_tx_J")]
    pub energy_tx_j: f64,
    #[serde(rename = "energy_rx_J")]
    pub energy_rx_j: f64,
    #[serde(rename = "energy_startup_J")]
    pub energy_startup_j: f64,
    #[serde(rename = "sync_eff_per_W")]
    pub sync_eff_per_w: f64,
}

pub const METRIC_COLUMNS: [&str; 9] = [
    "t_s",
    "pos",
    "tts_ms",
    "clock_var_s2",
    "density_per_m2",
    "energy_tx_J",
    "energy_rx_J",
    "energy_startup_J",
    "sync_eff_per_W",
];

pub fn write_metrics_csv<W: Write>(samples: &[MetricSample], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if samples.is_empty() {
        w.write_record(METRIC_COLUMNS)?;
    }
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of `clock_var_s2` over samples whose time lies in `[from, to)`.
pub fn mean_clock_variance(samples: &[MetricSample], from: f64, to: f64) -> f64 {
    let v: Vec<f64> = samples
        .iter()
        .filter(|s| s.t_s >= from && s.t_s < to)
        .map(|s| s.clock_var_s2)
        .collect();
    mean(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pos_examples() {
        assert_eq!(pos(612, 612).unwrap(), 0.0);
        assert_eq!(pos(0, 612).unwrap(), 1.0);
        assert!((pos(459, 612).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(pos(0, 0), Err(MetricsError::NoNodes));
    }

    #[test]
    fn efficiency_examples() {
        assert!((sync_efficiency(10, 10, 0.05).unwrap() - 20.0).abs() < 1e-12);
        let a = sync_efficiency(3, 10, 0.2).unwrap();
        let b = sync_efficiency(3, 10, 0.1).unwrap();
        assert!((b / a - 2.0).abs() < 1e-12);
        assert!(sync_efficiency(1, 1, 0.0).is_err());
    }

    #[test]
    fn clock_variance_examples() {
        assert_eq!(clock_variance(&[5.0, 5.0, 5.0], 5.0), 0.0);
        let v = clock_variance(&[10.0 - 1e-6, 10.0 + 1e-6], 10.0);
        assert!((v - 1e-12).abs() < 1e-20);
    }

    #[test]
    fn energy_ratio_examples() {
        assert_eq!(energy_ratio(3.0, 3.0).unwrap(), 1.0);
        assert!(energy_ratio(1.0, 0.0).is_err());
    }

    /// Closed forms written out independently of `gain_ratio`.
    fn oracle(n: f64, delta: f64, aggregate: bool) -> f64 {
        let r = 1.0 / PI.sqrt() + 1.0 / (n + 1.0).sqrt();
        let g = r.powf(delta) * n.powf(delta / 2.0);
        if aggregate {
            g / n
        } else {
            g
        }
    }

    fn q(n: u64, delta: f64, mode: GainMode) -> GainQuery {
        GainQuery {
            n,
            area_m2: 1e6,
            delta,
            mode,
        }
    }

    #[test]
    fn gain_spot_value() {
        let g = gain_ratio(&q(100, 2.0, GainMode::PerTransmission));
        assert!((g - oracle(100.0, 2.0, false)).abs() < 1e-9);
        assert!((g - 44.05).abs() < 2e-3, "{g}");
    }

    #[test]
    fn per_transmission_gain_rises_with_n() {
        for delta in [2.0, 3.0] {
            let mut last = 0.0;
            for n in 10..=10_000u64 {
                let g = gain_ratio(&q(n, delta, GainMode::PerTransmission));
                assert!(g > last);
                assert!((g - oracle(n as f64, delta, false)).abs() < 1e-9 * g);
                last = g;
            }
        }
    }

    #[test]
    fn aggregate_gain_falls_toward_one_over_pi() {
        let mut last = f64::INFINITY;
        for n in 10..=10_000u64 {
            let g = gain_ratio(&q(n, 2.0, GainMode::AggregateSum));
            assert!(g < last);
            assert!(g > 1.0 / PI);
            last = g;
        }
        assert!((last - 1.0 / PI).abs() < 0.02);
    }

    #[test]
    fn gain_independent_of_area() {
        for mode in [GainMode::PerTransmission, GainMode::AggregateSum] {
            let a = gain_ratio(&GainQuery {
                n: 250,
                area_m2: 1.0,
                delta: 3.0,
                mode,
            });
            let b = gain_ratio(&GainQuery {
                n: 250,
                area_m2: 7.3e8,
                delta: 3.0,
                mode,
            });
            assert!((a - b).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn sweep_single_n_single_row() {
        let rows = sweep_gain(&[50], &[2.0], &[GainMode::PerTransmission], 1e6);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mode, "per-transmission");
    }

    #[test]
    fn csv_header_order_and_empty_tts() {
        let s = MetricSample {
            t_s: 1.5,
            pos: 0.25,
            tts_ms: None,
            clock_var_s2: 0.0,
            density_per_m2: 1e-3,
            energy_tx_j: 1.0,
            energy_rx_j: 2.0,
            energy_startup_j: 3.0,
            sync_eff_per_w: 4.0,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&[s], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRIC_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "1.5,0.25,,0.0,0.001,1.0,2.0,3.0,4.0");
    }

    #[test]
    fn tts_stats_split_first_round() {
        let rounds: Vec<RoundRecord> = [0.02, 0.01, 0.01, 0.013]
            .iter()
            .enumerate()
            .map(|(i, &t)| RoundRecord {
                index: i,
                start_s: i as f64,
                tts_s: t,
                flagged: false,
            })
            .collect();
        let s = tts_stats(&rounds).unwrap();
        assert_eq!(s.first, 0.02);
        assert!((s.mean_after_first - 0.011).abs() < 1e-12);
        assert_eq!(s.flagged, 0);
    }
}
