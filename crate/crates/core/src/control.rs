//! Centralized feedback-linearizing controller.
//!
//! The task error obeys `ë + k_d ė + k_p e = 0` when the plant matches the
//! model: `f = D_q(ẍ_d + k_d ė + k_p e) + G_q`. Cable lengths are tracked by
//! a separate velocity loop on each winch, clamped by the motor's
//! speed-torque line. A quaternion-error PD law turns each thrust vector into
//! an attitude and a body moment.

use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::inverse_dynamics;
use crate::error::{Error, Result};
use crate::model::{JointState, SystemDescription, TaskState};
use crate::wrench::attitude_from_thrust;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// ω_c (rad/s)
    pub omega_c: f64,
    pub zeta: f64,
    /// k_c (1/s)
    pub k_c: f64,
    /// ω_att (rad/s)
    pub omega_att: f64,
    pub zeta_att: f64,
    /// Per-axis multipliers on k_p and k_d (all ones when absent).
    pub axis_weights: Option<Vec<f64>>,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            omega_c: 2.0,
            zeta: 1.0,
            k_c: 2.0,
            omega_att: 20.0,
            zeta_att: 1.0,
            axis_weights: None,
        }
    }
}

impl ControllerGains {
    pub fn k_p(&self) -> f64 {
        self.omega_c * self.omega_c
    }

    pub fn k_d(&self) -> f64 {
        2.0 * self.zeta * self.omega_c
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega_c", self.omega_c),
            ("zeta", self.zeta),
            ("k_c", self.k_c),
            ("omega_att", self.omega_att),
            ("zeta_att", self.zeta_att),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invariant(name, format!("gain must be positive, got {v}")));
            }
        }
        if let Some(w) = &self.axis_weights {
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::invariant("axis_weights", "weights must be non-negative"));
            }
        }
        Ok(())
    }

    fn weights(&self, dim: usize) -> Result<DVector<f64>> {
        match &self.axis_weights {
            None => Ok(DVector::from_element(dim, 1.0)),
            Some(w) if w.len() == dim => Ok(DVector::from_column_slice(w)),
            Some(w) => Err(Error::Dimension(format!(
                "{} axis weights for a {dim}-dimensional task",
                w.len()
            ))),
        }
    }
}

/// Desired task trajectory sample: poses and rates in `state`, plus ẍ_t.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReference {
    pub state: TaskState,
    pub acceleration: DVector<f64>,
}

impl TaskReference {
    /// Constant reference at `state` (rates and acceleration zeroed).
    pub fn hold(state: &TaskState, point_mass: bool) -> Self {
        let mut s = state.clone();
        let dim = s.rate_vector(point_mass).len();
        s.set_rates(&DVector::zeros(dim), point_mass);
        Self {
            state: s,
            acceleration: DVector::zeros(dim),
        }
    }
}

/// Output of the task-space law.
#[derive(Debug, Clone, PartialEq)]
pub struct ThrustDemand {
    /// f_d, 3n (N, world frame)
    pub thrust: DVector<f64>,
    /// ẍ_d + k_d ė + k_p e
    pub commanded_acceleration: DVector<f64>,
    /// W⁺(M_p ẍ_cmd + c), used by the winch saturation
    pub tension_estimate: DVector<f64>,
    /// x_d − x
    pub error: DVector<f64>,
}

/// Thrust vectors that make the task error a critically damped (for ζ = 1)
/// second-order system.
pub fn desired_thrust(
    sys: &SystemDescription,
    task: &TaskState,
    joints: &JointState,
    reference: &TaskReference,
    gains: &ControllerGains,
) -> Result<ThrustDemand> {
    let pm = sys.point_mass();
    let error = reference.state.difference(task, pm);
    let error_rate = reference.state.rate_vector(pm) - task.rate_vector(pm);
    let w = gains.weights(error.len())?;
    if reference.acceleration.len() != error.len() {
        return Err(Error::Dimension(format!(
            "reference acceleration has {} entries, expected {}",
            reference.acceleration.len(),
            error.len()
        )));
    }
    let cmd = &reference.acceleration + (error_rate * gains.k_d() + &error * gains.k_p()).component_mul(&w);
    let inv = inverse_dynamics(sys, task, joints, &cmd, None)?;
    Ok(ThrustDemand {
        thrust: inv.thrust,
        commanded_acceleration: cmd,
        tension_estimate: inv.tensions,
        error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinchCommand {
    /// (l̇_d + k_c(l_d − l)) / r_d
    pub raw: f64,
    /// After the clamp.
    pub rate: f64,
    /// safety · ω_max(τ)
    pub limit: f64,
    pub saturated: bool,
}

/// Drum rate command with the speed-torque clamp at the estimated tension.
pub fn winch_rate(
    sys: &SystemDescription,
    i: usize,
    length: f64,
    length_ref: f64,
    length_rate_ref: f64,
    tension: f64,
    k_c: f64,
) -> WinchCommand {
    let w = sys.winch(i);
    let raw = (length_rate_ref + k_c * (length_ref - length)) / w.drum_radius;
    let limit = w.safety_fraction * w.max_rate_at(w.drum_radius * tension.max(0.0));
    let rate = raw.clamp(-limit, limit);
    WinchCommand {
        raw,
        rate,
        limit,
        saturated: raw.abs() > limit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeCommand {
    pub attitude: UnitQuaternion<f64>,
    /// f_z (N)
    pub collective: f64,
}

/// Body z along the thrust, heading at `yaw`; collective is the thrust
/// projected on the current body z axis.
pub fn attitude_command(thrust: &Vector3<f64>, yaw: f64, current: &UnitQuaternion<f64>) -> Result<AttitudeCommand> {
    if thrust.norm() < 1e-9 {
        return Err(Error::ZeroThrust { norm: thrust.norm() });
    }
    if thrust.z <= 0.0 {
        return Err(Error::ThrustReversal { z: thrust.z });
    }
    let attitude = attitude_from_thrust(thrust, yaw)?;
    Ok(AttitudeCommand {
        attitude,
        collective: thrust.dot(&(current * Vector3::z())),
    })
}

/// Body moment from a second-order quaternion-error law plus gyroscopic and
/// optional feed-forward terms. `angular_velocity` is world frame.
pub fn attitude_track(
    inertia: &Matrix3<f64>,
    attitude: &UnitQuaternion<f64>,
    angular_velocity: &Vector3<f64>,
    desired: &UnitQuaternion<f64>,
    gains: &ControllerGains,
    feedforward: Option<&Vector3<f64>>,
) -> Vector3<f64> {
    let w_b = attitude.inverse() * angular_velocity;
    let e_r = (desired.inverse() * attitude).scaled_axis();
    let wn = gains.omega_att;
    let mut m = -(inertia * (e_r * (wn * wn) + w_b * (2.0 * gains.zeta_att * wn))) + w_b.cross(&(inertia * w_b));
    if let Some(ff) = feedforward {
        m += ff;
    }
    m
}

/// Everything one main-loop tick emits.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub thrust: Vec<Vector3<f64>>,
    pub attitudes: Vec<UnitQuaternion<f64>>,
    pub collectives: Vec<f64>,
    pub winches: Vec<WinchCommand>,
    pub tension_estimate: DVector<f64>,
    pub task_error: DVector<f64>,
    /// ‖f_j‖ above 4 f̄_p
    pub thrust_over_limit: Vec<bool>,
}

/// One evaluation of the full law. `lengths` are the measured drum lengths.
pub fn control_step(
    sys: &SystemDescription,
    task: &TaskState,
    joints: &JointState,
    lengths: &[f64],
    reference: &TaskReference,
    gains: &ControllerGains,
    yaw: f64,
) -> Result<ControlOutput> {
    let demand = desired_thrust(sys, task, joints, reference, gains)?;
    let n = sys.quadrotor_count();
    let mut thrust = Vec::with_capacity(n);
    let mut attitudes = Vec::with_capacity(n);
    let mut collectives = Vec::with_capacity(n);
    let mut over = Vec::with_capacity(n);
    for j in 0..n {
        let f = Vector3::new(demand.thrust[3 * j], demand.thrust[3 * j + 1], demand.thrust[3 * j + 2]);
        let cmd = attitude_command(&f, yaw, &joints.quadrotors[j].attitude)?;
        over.push(f.norm() > 4.0 * sys.quadrotor(j).thrust_max);
        thrust.push(f);
        attitudes.push(cmd.attitude);
        collectives.push(cmd.collective);
    }
    let winches = (0..sys.cable_count())
        .map(|i| {
            let r = &reference.state.cables[i];
            winch_rate(
                sys,
                i,
                lengths[i],
                r.length,
                r.length_rate,
                demand.tension_estimate[i],
                gains.k_c,
            )
        })
        .collect();
    Ok(ControlOutput {
        thrust,
        attitudes,
        collectives,
        winches,
        tension_estimate: demand.tension_estimate,
        task_error: demand.error,
        thrust_over_limit: over,
    })
}
