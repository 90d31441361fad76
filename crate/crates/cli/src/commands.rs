//! The subcommands. Each writes its files under the configured output
//! directory, prefixed with the job name.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use omnirotor::allocation::{AllocatorInput, AllocatorSolution, AllocatorState, PinvAllocator, SqpAllocator};
use omnirotor::efficiency::{sweep_orientations, EfficiencySummary};
use omnirotor::export::write_json;
use omnirotor::simulation::{
    compare_flights, max_command_step, max_servo_step, run_flight, singularity_instants, summarize,
    AllocatorKind, Comparison, ErrorStats, FlightLog, SweepSpec,
};
use omnirotor::spatial::{quat_from_wxyz, Vec3};
use omnirotor::{Error, Result};

use crate::config::{Format, RunConfig};

/// Calls granted to a cold one-shot SQP allocation.
const ALLOCATE_CALLS: usize = 50;

pub struct Job {
    pub name: String,
    pub config: RunConfig,
}

fn out_path(cfg: &RunConfig, name: &str, suffix: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.join(format!("{name}_{suffix}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Re-emits a CSV table as a JSON array of row objects with numeric values.
fn csv_to_json(csv_text: &[u8], path: &Path) -> Result<()> {
    let mut r = csv::Reader::from_reader(csv_text);
    let names: Vec<String> = r.headers().map_err(|e| Error::Numerical(e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Numerical(e.to_string()))?;
        let obj: serde_json::Map<String, serde_json::Value> = names
            .iter()
            .zip(rec.iter())
            .map(|(k, v)| {
                let num = v.parse::<f64>().ok().and_then(serde_json::Number::from_f64);
                (k.clone(), num.map_or_else(|| v.into(), serde_json::Value::Number))
            })
            .collect();
        rows.push(serde_json::Value::Object(obj));
    }
    write_json(path, &rows)
}

fn write_table(cfg: &RunConfig, name: &str, stem: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    match cfg.format {
        Format::Csv => {
            let path = out_path(cfg, name, &format!("{stem}.csv"))?;
            let mut f = create(&path)?;
            f.write_all(&buf)?;
            f.flush()?;
            Ok(path)
        }
        Format::Json => {
            let path = out_path(cfg, name, &format!("{stem}.json"))?;
            csv_to_json(&buf, &path)?;
            Ok(path)
        }
    }
}

pub fn efficiency(job: &Job) -> Result<EfficiencySummary> {
    let cfg = &job.config;
    let g = cfg.geometry()?;
    let map = sweep_orientations(&g, cfg.samples, cfg.model.mass, cfg.model.gravity)?;
    let summary = map.summary()?;
    let table = write_table(cfg, &job.name, "efficiency", |b| map.write_csv(b))?;
    write_json(&out_path(cfg, &job.name, "efficiency_summary.json")?, &summary)?;
    log::info!("{}: {} samples -> {}", job.name, summary.samples, table.display());
    Ok(summary)
}

/// A number that may also be spelled as a string, so that `"NaN"` reaches
/// validation instead of failing in the JSON parser.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Num {
    Value(f64),
    Text(#[serde(deserialize_with = "parse_text")] f64),
}

fn parse_text<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let s = String::deserialize(d)?;
    s.trim().parse::<f64>().map_err(serde::de::Error::custom)
}

impl Num {
    fn get(self) -> f64 {
        match self {
            Num::Value(v) | Num::Text(v) => v,
        }
    }
}

fn identity() -> [Num; 4] {
    [Num::Value(1.0), Num::Value(0.0), Num::Value(0.0), Num::Value(0.0)]
}

/// Warm start for a one-shot allocation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WarmStart {
    u: Vec<f64>,
    a: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocateRequest {
    /// Body-to-world attitude as [w, x, y, z].
    #[serde(default = "identity")]
    q: [Num; 4],
    force: [Num; 3],
    torque: [Num; 3],
    #[serde(default)]
    warm_start: Option<WarmStart>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocateReport {
    pub allocator: AllocatorKind,
    pub converged: bool,
    pub iterations: usize,
    pub calls: usize,
    pub residual: f64,
    pub objective: f64,
    pub u: Vec<f64>,
    pub a: Vec<f64>,
    pub lambda: Vec<f64>,
}

fn finite3(field: &str, v: &[Num; 3]) -> Result<Vec3> {
    for (i, x) in v.iter().enumerate() {
        if !x.get().is_finite() {
            return Err(Error::InvalidInput(format!("{field}[{i}] must be finite, got {}", x.get())));
        }
    }
    Ok(Vec3::new(v[0].get(), v[1].get(), v[2].get()))
}

pub fn allocate(job: &Job, input: &Path) -> Result<AllocateReport> {
    let cfg = &job.config;
    let text = std::fs::read_to_string(input)?;
    let req: AllocateRequest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", input.display())))?;
    let force = finite3("force", &req.force)?;
    let torque = finite3("torque", &req.torque)?;
    for (i, x) in req.q.iter().enumerate() {
        if !x.get().is_finite() {
            return Err(Error::InvalidInput(format!("q[{i}] must be finite, got {}", x.get())));
        }
    }
    let q = quat_from_wxyz(req.q[0].get(), req.q[1].get(), req.q[2].get(), req.q[3].get())?;
    let demand = AllocatorInput { q, force, torque };
    demand.validate()?;
    let model = cfg.drone_model()?;

    let (sol, calls): (AllocatorSolution, usize) = match cfg.flight.allocator {
        AllocatorKind::Sqp => {
            let mut alloc = SqpAllocator::new(model, cfg.allocation.weights, cfg.allocation.solver)?;
            if let Some(w) = req.warm_start {
                let mut state = AllocatorState::cold(&alloc.model);
                state.a_prev = w.a.clone();
                state.u = w.u;
                state.a = w.a;
                alloc.set_state(state)?;
            }
            let mut total = 0;
            let mut calls = 0;
            let mut sol = loop {
                let s = alloc.allocate(&demand)?;
                total += s.iterations;
                calls += 1;
                if s.converged || calls == ALLOCATE_CALLS {
                    break s;
                }
            };
            sol.iterations = total;
            (sol, calls)
        }
        AllocatorKind::Pinv => {
            let mut alloc = PinvAllocator::new(model)?;
            if let Some(w) = req.warm_start {
                alloc.set_previous_angles(w.a)?;
            }
            (alloc.allocate(&demand)?, 1)
        }
    };
    let report = AllocateReport {
        allocator: cfg.flight.allocator,
        converged: sol.converged,
        iterations: sol.iterations,
        calls,
        residual: sol.residual,
        objective: sol.objective,
        u: sol.u,
        a: sol.a,
        lambda: sol.lambda.iter().copied().collect(),
    };
    write_json(&out_path(cfg, &job.name, "allocation.json")?, &report)?;
    if !report.converged {
        log::warn!("{}: allocation did not converge after {calls} calls", job.name);
    }
    Ok(report)
}

/// Arm-angle continuity scan of a flight log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmScan {
    pub max_command_step: f64,
    pub max_servo_step: f64,
    pub step_limit: f64,
    /// Every commanded arm-angle step stayed below `step_limit`.
    pub continuous: bool,
    pub singularity_instants: usize,
}

impl ArmScan {
    pub fn of(log: &FlightLog, cfg: &RunConfig) -> ArmScan {
        let limit = std::f64::consts::FRAC_PI_4;
        let cmd = max_command_step(log);
        ArmScan {
            max_command_step: cmd,
            max_servo_step: max_servo_step(log),
            step_limit: limit,
            continuous: cmd < limit,
            singularity_instants: singularity_instants(log, cfg.compare.flip_threshold, cfg.compare.min_gap).len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlightReport {
    pub geometry: String,
    pub allocator: AllocatorKind,
    pub sweep: SweepSpec,
    pub duration: f64,
    pub settle_window: f64,
    pub stats: ErrorStats,
    /// Orientation statistics in degrees.
    pub orientation_deg: [f64; 4],
    /// Ticks over the whole flight where the allocator output was held.
    pub non_converged: usize,
    pub arm_scan: ArmScan,
}

fn report(log: &FlightLog, cfg: &RunConfig, allocator: AllocatorKind) -> Result<FlightReport> {
    let stats = summarize(log, cfg.settle_window)?;
    let o = stats.orientation;
    Ok(FlightReport {
        geometry: cfg.geometry.clone(),
        allocator,
        sweep: cfg.flight.sweep.clone(),
        duration: log.rows.len() as f64 * log.dt,
        settle_window: cfg.settle_window,
        stats,
        orientation_deg: [o.mean, o.std, o.p90, o.max].map(f64::to_degrees),
        non_converged: log.non_converged(),
        arm_scan: ArmScan::of(log, cfg),
    })
}

pub fn fly(job: &Job) -> Result<FlightReport> {
    let cfg = &job.config;
    let log = run_flight(&cfg.scenario()?)?;
    let rep = report(&log, cfg, cfg.flight.allocator)?;
    let table = write_table(cfg, &job.name, "flight", |b| log.write_csv(b))?;
    write_json(&out_path(cfg, &job.name, "stats.json")?, &rep)?;
    if rep.non_converged > 0 {
        log::warn!("{}: {} ticks held previous commands", job.name, rep.non_converged);
    }
    log::info!("{}: {} ticks -> {}", job.name, log.rows.len(), table.display());
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub sqp: FlightReport,
    pub pinv: FlightReport,
    pub comparison: Comparison,
    pub sqp_lower: bool,
}

pub fn compare(job: &Job) -> Result<CompareReport> {
    let cfg = &job.config;
    let base = cfg.scenario()?;
    let mut sqp = base.clone();
    sqp.settings.allocator = AllocatorKind::Sqp;
    let mut pinv = base;
    pinv.settings.allocator = AllocatorKind::Pinv;
    let (a, b) = std::thread::scope(|s| {
        let h = s.spawn(|| run_flight(&pinv));
        (run_flight(&sqp), h.join().expect("flight thread panicked"))
    });
    let (a, b) = (a?, b?);
    let comparison = compare_flights(&a, &b, &cfg.compare)?;
    let rep = CompareReport {
        sqp: report(&a, cfg, AllocatorKind::Sqp)?,
        pinv: report(&b, cfg, AllocatorKind::Pinv)?,
        sqp_lower: comparison.mean_peak_sqp < comparison.mean_peak_pinv,
        comparison,
    };
    write_json(&out_path(cfg, &job.name, "compare.json")?, &rep)?;
    log::info!(
        "{}: {} instants, p = {:.3e}",
        job.name,
        rep.comparison.instants.len(),
        rep.comparison.p_value
    );
    Ok(rep)
}
