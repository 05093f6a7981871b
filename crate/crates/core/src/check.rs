//! Model consistency suite run by `vacts-kit check` and the acceptance tests.
//!
//! Every check draws seeded random non-degenerate states around the system's
//! nominal configuration and compares an analytic quantity against an
//! independent evaluation: inverse kinematics after tracking, central finite
//! differences of the loop closure, and the mixer inverse.

use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{mix, unmix};
use crate::error::{Error, Result};
use crate::kinematics::{first_order, joints_from_task, loop_closure_residual, task_from_tracking};
use crate::model::{check_degenerate, CableCoord, JointState, PayloadState, Pose, QuadrotorState, SystemDescription, TaskState};

pub const LOOP_CLOSURE_TOL: f64 = 1e-9;
pub const FINITE_DIFFERENCE_TOL: f64 = 1e-5;
pub const MIXER_TOL: f64 = 1e-12;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// Worst error seen (absolute for loop closure, relative otherwise).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub states: usize,
    pub checks: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| !c.passed)
    }
}

fn base_task(sys: &SystemDescription) -> TaskState {
    if let Some(n) = sys.nominal() {
        return n.task_state();
    }
    let m = sys.cable_count();
    TaskState {
        payload: PayloadState::at(Vector3::new(0.0, 0.0, 0.5)),
        cables: (0..m)
            .map(|i| CableCoord::new(std::f64::consts::TAU * i as f64 / m as f64, 0.5, 1.2))
            .collect(),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, a: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-a..a), rng.random_range(-a..a), rng.random_range(-a..a))
}

fn random_state(sys: &SystemDescription, base: &TaskState, rng: &mut ChaCha8Rng) -> Result<(TaskState, JointState)> {
    let rigid = !sys.point_mass();
    let mut task = base.clone();
    task.payload = PayloadState {
        pose: Pose::new(
            base.payload.pose.translation + random_vec(rng, 0.5),
            if rigid {
                UnitQuaternion::from_scaled_axis(random_vec(rng, 0.4)) * base.payload.pose.rotation
            } else {
                UnitQuaternion::identity()
            },
        ),
        linear_velocity: random_vec(rng, 1.0),
        angular_velocity: if rigid { random_vec(rng, 1.0) } else { Vector3::zeros() },
    };
    for c in &mut task.cables {
        *c = CableCoord::new(
            c.azimuth + rng.random_range(-0.3..0.3),
            (c.inclination + rng.random_range(-0.3..0.3)).clamp(0.2, 1.3),
            (c.length + rng.random_range(-0.3..0.3)).max(0.3),
        );
    }
    // Each quadrotor hangs on its first cable; the others (coupled cables)
    // follow from tracking, so the loop closes for every cable.
    let r_p = task.payload.pose.rotation;
    let quadrotors = sys
        .composites()
        .iter()
        .map(|comp| {
            let i = comp.cables[0];
            let c = &task.cables[i];
            let exit = task.payload.pose.translation + r_p * (sys.payload().attachments[i] + c.unit_vector() * c.length);
            let attitude = UnitQuaternion::from_scaled_axis(Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-3.0..3.0),
            ));
            QuadrotorState {
                position: exit - attitude * sys.exit_point(i),
                velocity: random_vec(rng, 1.0),
                attitude,
                angular_velocity: random_vec(rng, 1.0),
            }
        })
        .collect();
    let joints = JointState {
        quadrotors,
        ..Default::default()
    };
    let task = task_from_tracking(sys, &task.payload, &joints)?;
    Ok((task, joints))
}

fn advance(sys: &SystemDescription, payload: &PayloadState, joints: &JointState, h: f64) -> Result<TaskState> {
    let mut p = *payload;
    p.pose.translation += p.linear_velocity * h;
    if !sys.point_mass() {
        p.pose.rotation = UnitQuaternion::from_scaled_axis(p.angular_velocity * h) * p.pose.rotation;
    }
    let mut j = joints.clone();
    for q in &mut j.quadrotors {
        q.position += q.velocity * h;
        q.attitude = UnitQuaternion::from_scaled_axis(q.angular_velocity * h) * q.attitude;
    }
    task_from_tracking(sys, &p, &j)
}

/// Payload-side loop vectors `x_p + R_p ᵖx_Bi + l_i R_p ᵖu_i`, stacked.
fn payload_side(sys: &SystemDescription, task: &TaskState) -> DVector<f64> {
    let r = task.payload.pose.rotation;
    let mut v = DVector::zeros(3 * sys.cable_count());
    for (i, c) in task.cables.iter().enumerate() {
        let p = task.payload.pose.translation + r * (sys.payload().attachments[i] + c.unit_vector() * c.length);
        v.fixed_rows_mut::<3>(3 * i).copy_from(&p);
    }
    v
}

/// Task state moved by `h` along its own rates.
fn drift(sys: &SystemDescription, task: &TaskState, h: f64) -> TaskState {
    let mut t = task.clone();
    t.payload.pose.translation += t.payload.linear_velocity * h;
    if !sys.point_mass() {
        t.payload.pose.rotation = UnitQuaternion::from_scaled_axis(t.payload.angular_velocity * h) * t.payload.pose.rotation;
    }
    for c in &mut t.cables {
        c.azimuth += c.azimuth_rate * h;
        c.inclination += c.inclination_rate * h;
        c.length += c.length_rate * h;
    }
    t
}

fn relative(err: f64, scale: f64) -> f64 {
    err / scale.max(1e-12)
}

struct Worst {
    loop_closure: f64,
    forward: f64,
    c_matrix: f64,
    jacobian: f64,
}

fn check_state(sys: &SystemDescription, task: &TaskState, joints: &JointState, w: &mut Worst) -> Result<()> {
    let pm = sys.point_mass();
    // Inverse kinematics reproduces the joints the task was tracked from.
    let attitudes: Vec<_> = joints.quadrotors.iter().map(|q| q.attitude).collect();
    let rates: Vec<_> = joints.quadrotors.iter().map(|q| q.angular_velocity).collect();
    let back = joints_from_task(sys, task, &attitudes, &rates)?;
    for (a, b) in back.quadrotors.iter().zip(&joints.quadrotors) {
        w.loop_closure = w
            .loop_closure
            .max((a.position - b.position).norm())
            .max((a.velocity - b.velocity).norm());
    }
    for r in loop_closure_residual(sys, task, joints)? {
        w.loop_closure = w.loop_closure.max(r.norm());
    }

    // A ẋ_t against the derivative of the payload-side loop.
    let k = first_order(sys, task, joints)?;
    let xdot = task.rate_vector(pm);
    let fd = (payload_side(sys, &drift(sys, task, STEP)) - payload_side(sys, &drift(sys, task, -STEP))) / (2.0 * STEP);
    let analytic = &k.forward * &xdot;
    w.forward = w.forward.max(relative((&fd - &analytic).norm(), analytic.norm()));

    for c in &task.cables {
        let cm = c.c_matrix();
        let at = |phi: f64, theta: f64| CableCoord::new(phi, theta, 1.0).unit_vector();
        let d_phi = (at(c.azimuth + STEP, c.inclination) - at(c.azimuth - STEP, c.inclination)) / (2.0 * STEP);
        let d_theta = (at(c.azimuth, c.inclination + STEP) - at(c.azimuth, c.inclination - STEP)) / (2.0 * STEP);
        w.c_matrix = w
            .c_matrix
            .max(relative((cm.column(0) - d_phi).norm(), d_phi.norm()))
            .max(relative((cm.column(1) - d_theta).norm(), d_theta.norm()));
    }

    // J q̇ + a against the finite-difference task rate. The payload twist is
    // taken from the prediction so the rate lies in the row space of A.
    let predicted = &k.jacobian * joints.velocity_vector() + &k.velocity_bias;
    let mut payload = task.payload;
    payload.linear_velocity = Vector3::new(predicted[0], predicted[1], predicted[2]);
    if !pm {
        payload.angular_velocity = Vector3::new(predicted[3], predicted[4], predicted[5]);
    }
    let plus = advance(sys, &payload, joints, STEP)?;
    let minus = advance(sys, &payload, joints, -STEP)?;
    let fd = plus.difference(&minus, pm) / (2.0 * STEP);
    w.jacobian = w.jacobian.max(relative((&fd - &predicted).norm(), predicted.norm()));
    Ok(())
}

fn mixer_worst(sys: &SystemDescription, rng: &mut ChaCha8Rng, samples: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..sys.quadrotor_count() {
        let q = sys.quadrotor(j);
        for _ in 0..samples {
            let fz = rng.random_range(0.0..4.0 * q.thrust_max);
            let m = Vector3::new(
                rng.random_range(-1.0..1.0) * q.arm_length * q.thrust_max,
                rng.random_range(-1.0..1.0) * q.arm_length * q.thrust_max,
                rng.random_range(-1.0..1.0) * q.drag_ratio() * q.thrust_max,
            );
            let (fz2, m2) = unmix(q, &mix(q, fz, &m).propeller_thrusts);
            let scale = fz.abs().max(m.amax()).max(1.0);
            worst = worst.max((fz2 - fz).abs() / scale).max((m2 - m).amax() / scale);
        }
    }
    worst
}

/// Fails with [`Error::Degenerate`] when the nominal configuration has a
/// cable on a pole of its chart.
pub fn check_nominal(sys: &SystemDescription) -> Result<()> {
    match sys.nominal() {
        Some(n) => check_degenerate(&n.task_state()),
        None => Ok(()),
    }
}

/// Runs the suite on `states` random states.
pub fn consistency_suite(sys: &SystemDescription, states: usize, seed: u64) -> Result<CheckReport> {
    if states == 0 {
        return Err(Error::InvalidArgument("consistency suite needs at least one state".into()));
    }
    check_nominal(sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = base_task(sys);
    let mut w = Worst {
        loop_closure: 0.0,
        forward: 0.0,
        c_matrix: 0.0,
        jacobian: 0.0,
    };
    let mut done = 0;
    let mut attempts = 0;
    while done < states {
        attempts += 1;
        if attempts > 20 * states {
            return Err(Error::InvalidArgument("could not draw enough non-degenerate states".into()));
        }
        let Ok((task, joints)) = random_state(sys, &base, &mut rng) else {
            continue;
        };
        if check_degenerate(&task).is_err() || task.cables.iter().any(|c| !(0.1..1.45).contains(&c.inclination)) {
            continue;
        }
        check_state(sys, &task, &joints, &mut w)?;
        done += 1;
    }
    let mixer = mixer_worst(sys, &mut rng, states);
    let outcome = |name, worst: f64, tolerance| CheckOutcome {
        name,
        worst,
        tolerance,
        passed: worst <= tolerance,
    };
    Ok(CheckReport {
        states,
        checks: vec![
            outcome("loop_closure_round_trip", w.loop_closure, LOOP_CLOSURE_TOL),
            outcome("forward_matrix_finite_difference", w.forward, FINITE_DIFFERENCE_TOL),
            outcome("c_matrix_finite_difference", w.c_matrix, FINITE_DIFFERENCE_TOL),
            outcome("jacobian_finite_difference", w.jacobian, FINITE_DIFFERENCE_TOL),
            outcome("mixer_round_trip", mixer, MIXER_TOL),
        ],
    })
}
