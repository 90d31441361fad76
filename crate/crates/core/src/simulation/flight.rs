//! Closed-loop flight: setpoint, PID, allocator, actuators and plant.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::allocation::{
    AllocatorInput, AllocatorSolution, DroneModel, PenaltyWeights, PinvAllocator, SolverSettings,
    SqpAllocator,
};
use crate::error::{Error, Result};
use crate::export::{fmt_f64, parse_f64};
use crate::simulation::control::{pid_update, PidGains, PidState, PoseError, Rates};
use crate::simulation::plant::{arm_loads, rigid_body_step, RigidBodyState};
use crate::simulation::servo::{ServoParams, ServoState};
use crate::simulation::trajectory::{sweep_setpoint, SweepSpec};
use crate::spatial::{exp_map, geodesic_angle, orientation_error, quat_from_wxyz, quat_to_wxyz, rotate, UnitQuaternion, Vec3};

/// Calls allowed for the SQP allocator to settle on the initial hover.
const TRIM_CALLS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorKind {
    Sqp,
    Pinv,
}

impl std::str::FromStr for AllocatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqp" => Ok(AllocatorKind::Sqp),
            "pinv" => Ok(AllocatorKind::Pinv),
            _ => Err(Error::invalid(format!("unknown allocator `{s}` (expected sqp or pinv)"))),
        }
    }
}

/// Measurement noise on the controller's view of the state. Zero by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    /// Per-axis standard deviation, m.
    pub position_std: f64,
    /// Per-axis standard deviation of the attitude error rotation vector, rad.
    pub attitude_std: f64,
    pub seed: u64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        NoiseSettings {
            position_std: 0.0,
            attitude_std: 0.0,
            seed: 0,
        }
    }
}

/// Everything about a flight except the airframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlightSettings {
    pub allocator: AllocatorKind,
    pub sweep: SweepSpec,
    pub gains: PidGains,
    pub weights: PenaltyWeights,
    pub solver: SolverSettings,
    pub servo: ServoParams,
    /// Plant integration step, s. Must divide the control period.
    pub physics_dt: f64,
    /// Defaults to the length of the sweep.
    pub duration: Option<f64>,
    /// First-order motor lag, s; 0 for instantaneous thrust.
    pub motor_time_constant: f64,
    pub noise: NoiseSettings,
}

/// Allocator weights for closed-loop flight: a small idle throttle and a
/// stiff bound wall. With `u_lo = 0` an unloaded arm can settle on the
/// negative-throttle branch, where the clamp then breaks the wrench, or sit
/// at exactly zero thrust where its angle has no gradient and stops tracking.
pub fn flight_weights() -> PenaltyWeights {
    PenaltyWeights {
        w_lim: 1e4,
        u_lo: 0.1,
        ..PenaltyWeights::default()
    }
}

impl Default for FlightSettings {
    fn default() -> Self {
        FlightSettings {
            allocator: AllocatorKind::Sqp,
            sweep: SweepSpec::orientation(),
            gains: PidGains::default(),
            weights: flight_weights(),
            solver: SolverSettings::default(),
            servo: ServoParams::default(),
            physics_dt: 0.001,
            duration: None,
            motor_time_constant: 0.0,
            noise: NoiseSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: DroneModel,
    pub settings: FlightSettings,
}

impl Scenario {
    /// Control ticks and plant substeps per tick.
    fn timing(&self) -> Result<(usize, usize)> {
        let s = &self.settings;
        self.model.validate()?;
        s.gains.validate()?;
        s.weights.validate()?;
        s.solver.validate()?;
        s.servo.validate()?;
        s.sweep.validate()?;
        if !(s.physics_dt > 0.0) || !s.physics_dt.is_finite() {
            return Err(Error::invalid("physics_dt must be positive"));
        }
        if !(s.motor_time_constant >= 0.0) || !s.motor_time_constant.is_finite() {
            return Err(Error::invalid("motor time constant must be >= 0"));
        }
        if !(s.noise.position_std >= 0.0 && s.noise.attitude_std >= 0.0) {
            return Err(Error::invalid("noise standard deviations must be >= 0"));
        }
        let ratio = self.model.dt / s.physics_dt;
        let sub = ratio.round();
        if sub < 1.0 || (ratio - sub).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "physics_dt {} must divide the control period {}",
                s.physics_dt, self.model.dt
            )));
        }
        let duration = s
            .duration
            .or_else(|| s.sweep.natural_duration())
            .ok_or_else(|| Error::invalid("this sweep needs an explicit duration"))?;
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::invalid(format!("duration must be positive, got {duration}")));
        }
        Ok(((duration / self.model.dt).round() as usize, sub as usize))
    }
}

/// One control tick. The state is the one the controller acted on.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: RigidBodyState,
    pub setpoint_position: Vec3,
    pub setpoint_q: UnitQuaternion,
    /// Throttles sent to the motors, clamped to [0, 1].
    pub u: Vec<f64>,
    /// Arm angles commanded by the allocator.
    pub a_cmd: Vec<f64>,
    /// Actual servo angles.
    pub a: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Distance to the position setpoint, m.
    pub position_error: f64,
    /// Geodesic angle to the attitude setpoint, rad.
    pub orientation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub dt: f64,
    pub n_arms: usize,
    pub rows: Vec<LogRow>,
}

enum Allocator {
    Sqp(Box<SqpAllocator>),
    Pinv(Box<PinvAllocator>),
}

impl Allocator {
    fn allocate(&mut self, input: &AllocatorInput) -> Result<AllocatorSolution> {
        match self {
            Allocator::Sqp(a) => a.allocate(input),
            Allocator::Pinv(a) => a.allocate(input),
        }
    }
}

struct Measurement {
    noise: Option<(ChaCha8Rng, Normal<f64>, Normal<f64>)>,
}

impl Measurement {
    fn new(n: &NoiseSettings) -> Result<Measurement> {
        if n.position_std == 0.0 && n.attitude_std == 0.0 {
            return Ok(Measurement { noise: None });
        }
        let p = Normal::new(0.0, n.position_std).map_err(|e| Error::invalid(e.to_string()))?;
        let a = Normal::new(0.0, n.attitude_std).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Measurement {
            noise: Some((ChaCha8Rng::seed_from_u64(n.seed), p, a)),
        })
    }

    fn observe(&mut self, s: &RigidBodyState) -> RigidBodyState {
        let Some((rng, p, a)) = &mut self.noise else {
            return *s;
        };
        let mut draw = |d: &Normal<f64>| Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng));
        let dp = draw(p);
        let dq = draw(a);
        RigidBodyState {
            position: s.position + dp,
            q: exp_map(&dq) * s.q,
            ..*s
        }
    }
}

fn hover_input(model: &DroneModel, q: UnitQuaternion) -> AllocatorInput {
    AllocatorInput {
        q,
        force: Vec3::new(0.0, 0.0, model.mass * model.gravity),
        torque: Vec3::zeros(),
    }
}

/// Builds the allocator and returns it with actuator commands trimmed for
/// hover at `q`.
fn trimmed_allocator(scenario: &Scenario, q: UnitQuaternion) -> Result<(Allocator, AllocatorSolution)> {
    let model = &scenario.model;
    let s = &scenario.settings;
    let input = hover_input(model, q);
    match s.allocator {
        AllocatorKind::Sqp => {
            let mut alloc = SqpAllocator::new(model.clone(), s.weights, s.solver)?;
            let mut sol = alloc.allocate(&input)?;
            for _ in 1..TRIM_CALLS {
                let next = alloc.allocate(&input)?;
                let moved = next.a.iter().zip(&sol.a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                sol = next;
                if sol.converged && moved < 1e-9 {
                    break;
                }
            }
            if !sol.converged {
                return Err(Error::Numerical("allocator could not trim the initial hover".into()));
            }
            Ok((Allocator::Sqp(Box::new(alloc)), sol))
        }
        AllocatorKind::Pinv => {
            let mut alloc = PinvAllocator::new(model.clone())?;
            let sol = alloc.allocate(&input)?;
            Ok((Allocator::Pinv(Box::new(alloc)), sol))
        }
    }
}

pub fn run_flight(scenario: &Scenario) -> Result<FlightLog> {
    let (ticks, substeps) = scenario.timing()?;
    let model = &scenario.model;
    let s = &scenario.settings;
    let dt = model.dt;
    let h = s.physics_dt;
    let n = model.n_arms();

    let sp0 = sweep_setpoint(0.0, &s.sweep)?;
    let mut state = RigidBodyState::at_rest(sp0.position, sp0.q);
    let (mut allocator, trim) = trimmed_allocator(scenario, sp0.q)?;
    let mut u_cmd: Vec<f64> = trim.u.iter().map(|u| u.clamp(0.0, 1.0)).collect();
    let mut a_cmd = trim.a.clone();
    let mut u_act = u_cmd.clone();
    let mut servos: Vec<ServoState> = a_cmd.iter().map(|&a| ServoState::new(a, &s.servo)).collect();
    let motor_blend = if s.motor_time_constant > 0.0 {
        1.0 - (-h / s.motor_time_constant).exp()
    } else {
        1.0
    };

    let mut pid = PidState::default();
    let mut sensor = Measurement::new(&s.noise)?;
    let weight = model.mass * model.gravity;
    let mut rows = Vec::with_capacity(ticks);

    for k in 0..ticks {
        let t = k as f64 * dt;
        let sp = sweep_setpoint(t, &s.sweep)?;
        let seen = sensor.observe(&state);
        let omega_world = rotate(&seen.q, &seen.omega);
        let err = PoseError {
            position: sp.position - seen.position,
            orientation: rotate(&seen.q, &orientation_error(&sp.q, &seen.q)),
            velocity: sp.velocity - seen.velocity,
            angular_velocity: sp.angular_velocity - omega_world,
        };
        let rates = Rates {
            velocity: seen.velocity,
            angular_velocity: omega_world,
        };
        let (force, torque) = pid_update(
            &mut pid,
            &err,
            &rates,
            &s.gains,
            weight,
            &(sp.acceleration * model.mass),
            dt,
        );
        let sol = allocator.allocate(&AllocatorInput {
            q: seen.q,
            force,
            torque,
        })?;
        let usable = sol.converged && sol.u.iter().chain(&sol.a).all(|v| v.is_finite());
        if usable {
            u_cmd = sol.u.iter().map(|u| u.clamp(0.0, 1.0)).collect();
            a_cmd = sol.a.clone();
        } else {
            log::warn!(
                "t = {t:.3} s: allocator did not converge ({} iterations, residual {:.3e}); holding commands",
                sol.iterations,
                sol.residual
            );
        }

        rows.push(LogRow {
            t,
            state,
            setpoint_position: sp.position,
            setpoint_q: sp.q,
            u: u_cmd.clone(),
            a_cmd: a_cmd.clone(),
            a: servos.iter().map(|s| s.angle).collect(),
            iterations: sol.iterations,
            converged: usable,
            position_error: (sp.position - state.position).norm(),
            orientation_error: geodesic_angle(&sp.q, &state.q),
        });

        for _ in 0..substeps {
            for (servo, &cmd) in servos.iter_mut().zip(&a_cmd) {
                servo.step(cmd, h);
            }
            for (act, &cmd) in u_act.iter_mut().zip(&u_cmd) {
                *act += (cmd - *act) * motor_blend;
            }
            let angles: Vec<f64> = servos.iter().map(|s| s.angle).collect();
            let (forces, torques) = arm_loads(model, &u_act, &angles);
            state = rigid_body_step(&state, &forces, &torques, model, h);
        }
        if !state.is_finite() {
            return Err(Error::Numerical(format!("plant state became non-finite at t = {t:.3} s")));
        }
    }

    Ok(FlightLog { dt, n_arms: n, rows })
}

const STATE_COLUMNS: [&str; 21] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "sp_px",
    "sp_py", "sp_pz", "sp_qw", "sp_qx", "sp_qy", "sp_qz",
];
const TAIL_COLUMNS: [&str; 4] = ["iterations", "converged", "position_error", "orientation_error"];

fn header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = STATE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for prefix in ["u", "a_cmd", "a"] {
        h.extend((0..n).map(|i| format!("{prefix}{i}")));
    }
    h.extend(TAIL_COLUMNS.iter().map(|s| s.to_string()));
    h
}

impl FlightLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn non_converged(&self) -> usize {
        self.rows.iter().filter(|r| !r.converged).count()
    }

    /// One row per tick, every real number with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header(self.n_arms))?;
        for r in &self.rows {
            let s = &r.state;
            let mut rec: Vec<String> = Vec::with_capacity(25 + 3 * self.n_arms);
            rec.push(fmt_f64(r.t));
            for v in [&s.position, &s.velocity] {
                rec.extend(v.iter().map(|x| fmt_f64(*x)));
            }
            rec.extend(quat_to_wxyz(&s.q).iter().map(|x| fmt_f64(*x)));
            rec.extend(s.omega.iter().map(|x| fmt_f64(*x)));
            rec.extend(r.setpoint_position.iter().map(|x| fmt_f64(*x)));
            rec.extend(quat_to_wxyz(&r.setpoint_q).iter().map(|x| fmt_f64(*x)));
            for v in [&r.u, &r.a_cmd, &r.a] {
                rec.extend(v.iter().map(|x| fmt_f64(*x)));
            }
            rec.push(r.iterations.to_string());
            rec.push(u8::from(r.converged).to_string());
            rec.push(fmt_f64(r.position_error));
            rec.push(fmt_f64(r.orientation_error));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<FlightLog> {
        let mut r = csv::Reader::from_reader(input);
        let names: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let fixed = STATE_COLUMNS.len() + TAIL_COLUMNS.len();
        if names.len() < fixed || !(names.len() - fixed).is_multiple_of(3) {
            return Err(Error::invalid(format!("flight log has {} columns", names.len())));
        }
        let n = (names.len() - fixed) / 3;
        if names != header(n) {
            return Err(Error::invalid("flight log columns do not match the expected layout"));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let f: Vec<&str> = rec.iter().collect();
            let num = |i: usize| parse_f64(f[i], &names[i]);
            let v3 = |i: usize| -> Result<Vec3> { Ok(Vec3::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
            let q4 = |i: usize| quat_from_wxyz(num(i)?, num(i + 1)?, num(i + 2)?, num(i + 3)?);
            let vec_n = |start: usize| (start..start + n).map(num).collect::<Result<Vec<f64>>>();
            let base = STATE_COLUMNS.len();
            let tail = base + 3 * n;
            let iterations = f[tail]
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("column `iterations`: cannot parse `{}`", f[tail])))?;
            let converged = match f[tail + 1] {
                "1" => true,
                "0" => false,
                other => return Err(Error::invalid(format!("column `converged`: cannot parse `{other}`"))),
            };
            rows.push(LogRow {
                t: num(0)?,
                state: RigidBodyState {
                    position: v3(1)?,
                    velocity: v3(4)?,
                    q: q4(7)?,
                    omega: v3(11)?,
                },
                setpoint_position: v3(14)?,
                setpoint_q: q4(17)?,
                u: vec_n(base)?,
                a_cmd: vec_n(base + n)?,
                a: vec_n(base + 2 * n)?,
                iterations,
                converged,
                position_error: num(tail + 2)?,
                orientation_error: num(tail + 3)?,
            });
        }
        let dt = match rows.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => 0.0,
        };
        Ok(FlightLog { dt, n_arms: n, rows })
    }
}
