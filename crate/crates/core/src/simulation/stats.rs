//! Error statistics of a flight and the paired allocator comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::simulation::flight::FlightLog;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Nearest-rank 90th percentile.
    pub p90: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Stat> {
        if values.is_empty() {
            return Err(Error::invalid("no samples to summarize"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = (0.9 * n).ceil() as usize;
        Ok(Stat {
            mean,
            std: var.sqrt(),
            p90: sorted[rank.max(1) - 1],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorStats {
    /// Position error norm, m.
    pub position: Stat,
    /// Orientation geodesic angle, rad.
    pub orientation: Stat,
    pub samples: usize,
    /// Ticks in the window where the allocator output was held.
    pub non_converged: usize,
}

/// Statistics over the ticks at or after `settle_window` seconds.
pub fn summarize(log: &FlightLog, settle_window: f64) -> Result<ErrorStats> {
    if log.is_empty() {
        return Err(Error::invalid("flight log is empty"));
    }
    let rows: Vec<_> = log.rows.iter().filter(|r| r.t >= settle_window).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "no ticks after the {settle_window} s settle window"
        )));
    }
    let pos: Vec<f64> = rows.iter().map(|r| r.position_error).collect();
    let ori: Vec<f64> = rows.iter().map(|r| r.orientation_error).collect();
    Ok(ErrorStats {
        position: Stat::of(&pos)?,
        orientation: Stat::of(&ori)?,
        samples: rows.len(),
        non_converged: rows.iter().filter(|r| !r.converged).count(),
    })
}

/// Largest per-tick change of any commanded arm angle.
pub fn max_command_step(log: &FlightLog) -> f64 {
    log.rows
        .windows(2)
        .flat_map(|w| w[1].a_cmd.iter().zip(&w[0].a_cmd).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Largest per-tick change of any actual servo angle.
pub fn max_servo_step(log: &FlightLog) -> f64 {
    log.rows
        .windows(2)
        .flat_map(|w| w[1].a.iter().zip(&w[0].a).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Times of ticks where some commanded arm angle jumps by more than
/// `threshold` from the previous tick. Jumps closer than `min_gap` seconds
/// to the previous reported instant belong to the same event.
pub fn singularity_instants(log: &FlightLog, threshold: f64, min_gap: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for w in log.rows.windows(2) {
        let jump = w[1].a_cmd.iter().zip(&w[0].a_cmd).any(|(a, b)| (a - b).abs() > threshold);
        if jump && out.last().is_none_or(|&t| w[1].t - t >= min_gap) {
            out.push(w[1].t);
        }
    }
    out
}

/// Largest position error in `[t - before, t + after]`.
pub fn peak_position_error(log: &FlightLog, t: f64, before: f64, after: f64) -> Option<f64> {
    log.rows
        .iter()
        .filter(|r| r.t >= t - before && r.t <= t + after)
        .map(|r| r.position_error)
        .reduce(f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    /// Commanded jump that marks a singularity flip, rad.
    pub flip_threshold: f64,
    /// Flips closer together than this count as one instant, s.
    pub min_gap: f64,
    pub window_before: f64,
    pub window_after: f64,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings {
            flip_threshold: std::f64::consts::FRAC_PI_2,
            min_gap: 1.0,
            window_before: 0.25,
            window_after: 1.0,
        }
    }
}

/// Paired peak errors around the singularity instants of the baseline flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub instants: Vec<f64>,
    pub peaks_sqp: Vec<f64>,
    pub peaks_pinv: Vec<f64>,
    pub mean_peak_sqp: f64,
    pub mean_peak_pinv: f64,
    /// Paired t statistic of pinv − sqp.
    pub t_statistic: f64,
    /// One-sided p-value for "SQP peaks are smaller".
    pub p_value: f64,
}

/// Merges paired samples from several flights into one test.
pub fn paired_test(instants: Vec<f64>, peaks_sqp: Vec<f64>, peaks_pinv: Vec<f64>) -> Result<Comparison> {
    let n = peaks_sqp.len();
    if n < 2 || peaks_pinv.len() != n {
        return Err(Error::invalid(format!(
            "paired test needs at least 2 matched pairs, got {n} and {}",
            peaks_pinv.len()
        )));
    }
    let d: Vec<f64> = peaks_pinv.iter().zip(&peaks_sqp).map(|(p, s)| p - s).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let (t, p) = if se > 0.0 {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    } else if mean > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(Comparison {
        instants,
        mean_peak_sqp: peaks_sqp.iter().sum::<f64>() / nf,
        mean_peak_pinv: peaks_pinv.iter().sum::<f64>() / nf,
        peaks_sqp,
        peaks_pinv,
        t_statistic: t,
        p_value: p,
    })
}

/// Pairs two flights of the same maneuver at the baseline's flips.
pub fn compare_flights(sqp: &FlightLog, pinv: &FlightLog, settings: &CompareSettings) -> Result<Comparison> {
    let (instants, peaks_sqp, peaks_pinv) = paired_peaks(sqp, pinv, settings);
    paired_test(instants, peaks_sqp, peaks_pinv)
}

/// Instants and the two peak errors at each, without the test.
pub fn paired_peaks(
    sqp: &FlightLog,
    pinv: &FlightLog,
    s: &CompareSettings,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for t in singularity_instants(pinv, s.flip_threshold, s.min_gap) {
        let a = peak_position_error(sqp, t, s.window_before, s.window_after);
        let b = peak_position_error(pinv, t, s.window_before, s.window_after);
        if let (Some(a), Some(b)) = (a, b) {
            out.0.push(t);
            out.1.push(a);
            out.2.push(b);
        }
    }
    out
}
