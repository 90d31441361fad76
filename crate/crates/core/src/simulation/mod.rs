//! Closed-loop flight simulation of the sweep maneuvers.
//!
//! Each control tick reads the sweep setpoint, runs the pose PID, allocates
//! the wrench with the chosen allocator and hands throttles and arm angles to
//! the actuator models; the plant then advances in finer substeps.

pub mod control;
pub mod flight;
pub mod plant;
pub mod servo;
pub mod stats;
pub mod trajectory;

pub use control::{pid_update, PidAxisGains, PidGains, PidState, PoseError, Rates};
pub use flight::{flight_weights, run_flight, AllocatorKind, FlightLog, FlightSettings, LogRow, NoiseSettings, Scenario};
pub use plant::{arm_loads, rigid_body_step, RigidBodyState};
pub use servo::{servo_update, ServoParams, ServoState};
pub use stats::{
    compare_flights, max_command_step, max_servo_step, paired_peaks, paired_test, peak_position_error,
    singularity_instants, summarize, CompareSettings, Comparison, ErrorStats, Stat,
};
pub use trajectory::{sweep_setpoint, trapezoid, PoseSetpoint, SignedAxis, SweepSpec};
