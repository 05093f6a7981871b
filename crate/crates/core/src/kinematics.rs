//! Loop closure and the first/second-order kinematic models.
//!
//! Each cable closes a loop payload → attachment → cable → exit point →
//! quadrotor. Differentiating the loop gives `A ẋ_t = B q̇_a + v` with
//! `v_i = ω_j × (R_j ʲx_Ii) + R_j ʲẋ_Ii`, hence `ẋ_t = J q̇_a + a` with
//! `J = A⁺B` and `a = A⁺v`. Differentiating once more gives
//! `B q̈_a = A ẍ_t + b`.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{pinv, skew};
use crate::model::{check_degenerate, CableCoord, JointState, PayloadState, QuadrotorState, SystemDescription, TaskState};

/// Tolerance on the disagreement of two cables hanging from the same quadrotor.
pub const COUPLED_CABLE_TOL: f64 = 1e-6;

/// A, B, J and the velocity/acceleration bias terms at one state.
#[derive(Debug, Clone)]
pub struct KinematicMatrices {
    /// A: 3m × task_dim
    pub forward: DMatrix<f64>,
    /// B: 3m × 3n
    pub inverse: DMatrix<f64>,
    /// A⁺
    pub forward_pinv: DMatrix<f64>,
    pub forward_rank: usize,
    /// J = A⁺B
    pub jacobian: DMatrix<f64>,
    /// v, the stacked exit-point velocity terms (before A⁺)
    pub exit_velocity_terms: DVector<f64>,
    /// a = A⁺v
    pub velocity_bias: DVector<f64>,
    /// b evaluated with zero quadrotor angular acceleration
    pub acceleration_bias: DVector<f64>,
}

/// Output of the second-order model.
#[derive(Debug, Clone)]
pub struct SecondOrder {
    /// q̈_a = B⁺(A ẍ_t + b)
    pub joint_acceleration: DVector<f64>,
    pub acceleration_bias: DVector<f64>,
}

/// Payload-side anchor of cable `i` plus the cable vector, world frame:
/// returns (R_p ᵖx_Bi, l_i R_p ᵖu_i).
fn payload_side(task: &TaskState, sys: &SystemDescription, i: usize) -> (Vector3<f64>, Vector3<f64>) {
    let r = task.payload.pose.rotation;
    let c = &task.cables[i];
    (r * sys.payload().attachments[i], r * (c.unit_vector() * c.length))
}

fn check_dims(sys: &SystemDescription, task: &TaskState, joints: Option<&JointState>) -> Result<()> {
    if task.cables.len() != sys.cable_count() {
        return Err(Error::InvalidArgument(format!(
            "task state has {} cables, system has {}",
            task.cables.len(),
            sys.cable_count()
        )));
    }
    if let Some(j) = joints {
        if j.quadrotors.len() != sys.quadrotor_count() {
            return Err(Error::InvalidArgument(format!(
                "joint state has {} quadrotors, system has {}",
                j.quadrotors.len(),
                sys.quadrotor_count()
            )));
        }
    }
    Ok(())
}

/// Per-cable residual of the loop closure, payload side minus quadrotor side.
pub fn loop_closure_residual(sys: &SystemDescription, task: &TaskState, joints: &JointState) -> Result<Vec<Vector3<f64>>> {
    check_dims(sys, task, Some(joints))?;
    Ok((0..sys.cable_count())
        .map(|i| {
            let (anchor, cable) = payload_side(task, sys, i);
            let q = &joints.quadrotors[sys.owner(i)];
            (task.payload.pose.translation + anchor + cable) - (q.position + q.attitude * sys.exit_point(i))
        })
        .collect())
}

/// Quadrotor positions implied by the task coordinates and the given attitudes.
pub fn quadrotor_positions_from_task(
    sys: &SystemDescription,
    task: &TaskState,
    attitudes: &[UnitQuaternion<f64>],
) -> Result<Vec<Vector3<f64>>> {
    check_dims(sys, task, None)?;
    if attitudes.len() != sys.quadrotor_count() {
        return Err(Error::InvalidArgument(format!(
            "{} attitudes for {} quadrotors",
            attitudes.len(),
            sys.quadrotor_count()
        )));
    }
    let mut out = Vec::with_capacity(sys.quadrotor_count());
    for (j, comp) in sys.composites().iter().enumerate() {
        let mut first: Option<Vector3<f64>> = None;
        for &i in &comp.cables {
            let (anchor, cable) = payload_side(task, sys, i);
            let x = task.payload.pose.translation + anchor + cable - attitudes[j] * sys.exit_point(i);
            match first {
                None => first = Some(x),
                Some(f) => {
                    let gap = (f - x).norm();
                    if gap > COUPLED_CABLE_TOL {
                        return Err(Error::CoupledCableMismatch { owner: j, gap });
                    }
                }
            }
        }
        out.push(first.expect("every quadrotor owns at least one cable"));
    }
    Ok(out)
}

/// Full joint state consistent with a task state (positions and velocities),
/// for the given attitudes and world-frame angular velocities. Exit points are
/// taken as fixed in the body.
pub fn joints_from_task(
    sys: &SystemDescription,
    task: &TaskState,
    attitudes: &[UnitQuaternion<f64>],
    angular_velocities: &[Vector3<f64>],
) -> Result<JointState> {
    let positions = quadrotor_positions_from_task(sys, task, attitudes)?;
    let w_p = payload_angular_velocity(sys, &task.payload);
    let r_p = task.payload.pose.rotation;
    let mut quadrotors = Vec::with_capacity(positions.len());
    for (j, comp) in sys.composites().iter().enumerate() {
        let i = comp.cables[0];
        let c = &task.cables[i];
        let (anchor, cable) = payload_side(task, sys, i);
        // Velocity of the exit point from the payload side of the loop.
        let exit_vel = task.payload.linear_velocity
            + w_p.cross(&(anchor + cable))
            + r_p * (c.unit_vector_rate() * c.length + c.unit_vector() * c.length_rate);
        let w_j = angular_velocities[j];
        let v = exit_vel - w_j.cross(&(attitudes[j] * sys.exit_point(i)));
        quadrotors.push(QuadrotorState {
            position: positions[j],
            velocity: v,
            attitude: attitudes[j],
            angular_velocity: w_j,
        });
    }
    Ok(JointState {
        quadrotors,
        winches: task
            .cables
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let r = sys.winch(i).drum_radius;
                crate::model::WinchState {
                    angle: c.length / r,
                    rate: c.length_rate / r,
                }
            })
            .collect(),
        exit_velocity: Vec::new(),
        exit_acceleration: Vec::new(),
    })
}

fn payload_angular_velocity(sys: &SystemDescription, p: &PayloadState) -> Vector3<f64> {
    if sys.point_mass() {
        Vector3::zeros()
    } else {
        p.angular_velocity
    }
}

/// Recovers cable coordinates (and their rates) from tracked poses and twists.
///
/// A cable along the payload z axis is returned with φ = 0 and φ̇ = 0; the
/// downstream Jacobians reject it as degenerate.
pub fn task_from_tracking(sys: &SystemDescription, payload: &PayloadState, joints: &JointState) -> Result<TaskState> {
    if joints.quadrotors.len() != sys.quadrotor_count() {
        return Err(Error::InvalidArgument(format!(
            "joint state has {} quadrotors, system has {}",
            joints.quadrotors.len(),
            sys.quadrotor_count()
        )));
    }
    let r_p = payload.pose.rotation;
    let w_p = payload_angular_velocity(sys, payload);
    let mut cables = Vec::with_capacity(sys.cable_count());
    for i in 0..sys.cable_count() {
        let q = &joints.quadrotors[sys.owner(i)];
        let exit_world = q.attitude * sys.exit_point(i);
        let d = q.position + exit_world - payload.pose.translation;
        let d_dot =
            q.velocity + q.angular_velocity.cross(&exit_world) + q.attitude * joints.exit_velocity(i) - payload.linear_velocity;
        let v = r_p.inverse() * d - sys.payload().attachments[i];
        let v_dot = r_p.inverse() * (d_dot - w_p.cross(&d));
        let length = v.norm();
        if length < 1e-9 {
            return Err(Error::Degenerate {
                cable: i,
                message: format!("cable vector has near-zero length {length:.3e} m"),
            });
        }
        let horizontal = (v.x * v.x + v.y * v.y).sqrt();
        let inclination = horizontal.atan2(v.z);
        let mut c = CableCoord::new(0.0, inclination, length);
        let degenerate = c.is_degenerate();
        if !degenerate {
            c.azimuth = v.y.atan2(v.x);
        }
        let cm = c.c_matrix();
        c.length_rate = v.dot(&v_dot) / length;
        c.inclination_rate = cm.column(1).dot(&v_dot) / length;
        c.azimuth_rate = if degenerate {
            0.0
        } else {
            cm.column(0).dot(&v_dot) / (length * inclination.sin().powi(2))
        };
        cables.push(c);
    }
    let mut p = *payload;
    if sys.point_mass() {
        p.angular_velocity = Vector3::zeros();
    }
    Ok(TaskState { payload: p, cables })
}

/// A: 3m × (dof + 3m). Block row i is [I₃, A_i2, l_i R_p C_i, R_p ᵖu_i] with
/// A_i2 = [R_p(ᵖx_Bi + l_i ᵖu_i)]ₓᵀ; the A_i2 block is absent in point-mass mode.
pub fn forward_matrix(sys: &SystemDescription, task: &TaskState) -> DMatrix<f64> {
    let m = sys.cable_count();
    let dof = sys.payload_dof();
    let mut a = DMatrix::zeros(3 * m, dof + 3 * m);
    let r = task.payload.pose.rotation.to_rotation_matrix().into_inner();
    for i in 0..m {
        let c = &task.cables[i];
        let row = 3 * i;
        a.fixed_view_mut::<3, 3>(row, 0).copy_from(&nalgebra::Matrix3::identity());
        if dof == 6 {
            let arm = r * (sys.payload().attachments[i] + c.unit_vector() * c.length);
            a.fixed_view_mut::<3, 3>(row, 3).copy_from(&skew(&arm).transpose());
        }
        let col = dof + 3 * i;
        a.fixed_view_mut::<3, 2>(row, col).copy_from(&(r * c.c_matrix() * c.length));
        a.fixed_view_mut::<3, 1>(row, col + 2).copy_from(&(r * c.unit_vector()));
    }
    a
}

/// B: 3m × 3n, an identity block at (cable i, owner of i).
pub fn inverse_matrix(sys: &SystemDescription) -> DMatrix<f64> {
    let m = sys.cable_count();
    let n = sys.quadrotor_count();
    let mut b = DMatrix::zeros(3 * m, 3 * n);
    for i in 0..m {
        b.fixed_view_mut::<3, 3>(3 * i, 3 * sys.owner(i))
            .copy_from(&nalgebra::Matrix3::identity());
    }
    b
}

fn exit_velocity_terms(sys: &SystemDescription, joints: &JointState) -> DVector<f64> {
    let m = sys.cable_count();
    let mut v = DVector::zeros(3 * m);
    for i in 0..m {
        let q = &joints.quadrotors[sys.owner(i)];
        let term = q.angular_velocity.cross(&(q.attitude * sys.exit_point(i))) + q.attitude * joints.exit_velocity(i);
        v.fixed_rows_mut::<3>(3 * i).copy_from(&term);
    }
    v
}

/// b with the given quadrotor angular accelerations (world frame).
pub fn acceleration_bias(
    sys: &SystemDescription,
    task: &TaskState,
    joints: &JointState,
    quad_angular_acceleration: &[Vector3<f64>],
) -> DVector<f64> {
    let m = sys.cable_count();
    let r_p = task.payload.pose.rotation;
    let w_p = payload_angular_velocity(sys, &task.payload);
    let mut b = DVector::zeros(3 * m);
    for i in 0..m {
        let c = &task.cables[i];
        let j = sys.owner(i);
        let q = &joints.quadrotors[j];
        let rates = Vector2::new(c.azimuth_rate, c.inclination_rate);
        let u = r_p * c.unit_vector();
        let u_dot = r_p * (c.c_matrix() * rates);
        let arm = r_p * (sys.payload().attachments[i] + c.unit_vector() * c.length);
        let exit = q.attitude * sys.exit_point(i);
        let w_j = q.angular_velocity;
        let dw_j = quad_angular_acceleration.get(j).copied().unwrap_or_else(Vector3::zeros);
        let term = w_p.cross(&w_p.cross(&arm))
            + w_p.cross(&u) * (2.0 * c.length_rate)
            + u_dot * (2.0 * c.length_rate)
            + w_p.cross(&u_dot) * (2.0 * c.length)
            + r_p * (c.c_matrix_rate() * rates) * c.length
            - dw_j.cross(&exit)
            - w_j.cross(&w_j.cross(&exit))
            - w_j.cross(&(q.attitude * joints.exit_velocity(i))) * 2.0
            - q.attitude * joints.exit_acceleration(i);
        b.fixed_rows_mut::<3>(3 * i).copy_from(&term);
    }
    b
}

/// First-order kinematic model at the given state.
pub fn first_order(sys: &SystemDescription, task: &TaskState, joints: &JointState) -> Result<KinematicMatrices> {
    check_dims(sys, task, Some(joints))?;
    check_degenerate(task)?;
    let forward = forward_matrix(sys, task);
    let inverse = inverse_matrix(sys);
    let p = pinv(&forward);
    let expected = 3 * sys.cable_count();
    if p.rank < expected {
        return Err(Error::RankDeficient {
            what: "forward Jacobian A",
            rank: p.rank,
            expected,
        });
    }
    let jacobian = &p.matrix * &inverse;
    let v = exit_velocity_terms(sys, joints);
    let velocity_bias = &p.matrix * &v;
    let acceleration_bias = acceleration_bias(sys, task, joints, &[]);
    Ok(KinematicMatrices {
        forward,
        inverse,
        forward_pinv: p.matrix,
        forward_rank: p.rank,
        jacobian,
        exit_velocity_terms: v,
        velocity_bias,
        acceleration_bias,
    })
}

/// Second-order model: q̈_a = B⁺ A ẍ_t + B⁺ b (least squares when m > n).
pub fn second_order(
    sys: &SystemDescription,
    task: &TaskState,
    joints: &JointState,
    task_acceleration: &DVector<f64>,
    quad_angular_acceleration: &[Vector3<f64>],
) -> Result<SecondOrder> {
    check_dims(sys, task, Some(joints))?;
    check_degenerate(task)?;
    if task_acceleration.len() != sys.task_dim() {
        return Err(Error::InvalidArgument(format!(
            "task acceleration has {} entries, expected {}",
            task_acceleration.len(),
            sys.task_dim()
        )));
    }
    let a = forward_matrix(sys, task);
    let b_inv = pinv(&inverse_matrix(sys)).matrix;
    let b = acceleration_bias(sys, task, joints, quad_angular_acceleration);
    let joint_acceleration = &b_inv * (a * task_acceleration + &b);
    Ok(SecondOrder {
        joint_acceleration,
        acceleration_bias: b,
    })
}

/// Jacobians of the fixed-length and actuated-length systems used by the
/// manipulability comparison. The task vector is [ẋ_p, (ω_p), φ̇₁, θ̇₁, …] (no
/// lengths). Fixed lengths: joints are q̇_a. Actuated lengths: joints are
/// [q̇_a, l̇₁ … l̇_m].
#[derive(Debug, Clone)]
pub struct LengthSplitJacobians {
    pub fixed_length: DMatrix<f64>,
    pub actuated_length: DMatrix<f64>,
    /// A with the l̇ columns removed.
    pub reduced_forward: DMatrix<f64>,
}

pub fn length_split_jacobians(sys: &SystemDescription, task: &TaskState) -> Result<LengthSplitJacobians> {
    check_dims(sys, task, None)?;
    check_degenerate(task)?;
    let m = sys.cable_count();
    let dof = sys.payload_dof();
    let a = forward_matrix(sys, task);
    let mut keep = Vec::with_capacity(dof + 2 * m);
    keep.extend(0..dof);
    for i in 0..m {
        keep.push(dof + 3 * i);
        keep.push(dof + 3 * i + 1);
    }
    let reduced = a.select_columns(&keep);
    // The l̇ columns move to the right-hand side with a minus sign.
    let mut lengths = DMatrix::zeros(3 * m, m);
    for i in 0..m {
        lengths.column_mut(i).copy_from(&(-a.column(dof + 3 * i + 2)));
    }
    let b = inverse_matrix(sys);
    let rp = pinv(&reduced);
    let fixed_length = &rp.matrix * &b;
    let mut joints = DMatrix::zeros(3 * m, b.ncols() + m);
    joints.view_mut((0, 0), (3 * m, b.ncols())).copy_from(&b);
    joints.view_mut((0, b.ncols()), (3 * m, m)).copy_from(&lengths);
    let actuated_length = &rp.matrix * joints;
    Ok(LengthSplitJacobians {
        fixed_length,
        actuated_length,
        reduced_forward: reduced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::{parse_system, wrap_angle, PayloadState, Pose};
    use crate::presets;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn symmetric_task(theta_deg: f64, length: f64) -> TaskState {
        TaskState {
            payload: PayloadState::default(),
            cables: [0.0f64, 120.0, -120.0]
                .iter()
                .map(|a| CableCoord::new(a.to_radians(), theta_deg.to_radians(), length))
                .collect(),
        }
    }

    fn identity_attitudes(n: usize) -> Vec<UnitQuaternion<f64>> {
        vec![UnitQuaternion::identity(); n]
    }

    fn random_state(sys: &SystemDescription, rng: &mut ChaCha8Rng) -> (TaskState, JointState) {
        let m = sys.cable_count();
        let n = sys.quadrotor_count();
        let mut task = TaskState {
            payload: PayloadState {
                pose: Pose::new(
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.0..2.0),
                    ),
                    if sys.point_mass() {
                        UnitQuaternion::identity()
                    } else {
                        UnitQuaternion::from_scaled_axis(Vector3::new(
                            rng.random_range(-0.5..0.5),
                            rng.random_range(-0.5..0.5),
                            rng.random_range(-3.0..3.0),
                        ))
                    },
                ),
                linear_velocity: Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                angular_velocity: if sys.point_mass() {
                    Vector3::zeros()
                } else {
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                },
            },
            cables: Vec::new(),
        };
        for _ in 0..m {
            task.cables.push(
                CableCoord::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.2..1.3),
                    rng.random_range(0.5..2.0),
                )
                .with_rates(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.3..0.3),
                ),
            );
        }
        let attitudes: Vec<_> = (0..n)
            .map(|_| {
                UnitQuaternion::from_scaled_axis(Vector3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-3.0..3.0),
                ))
            })
            .collect();
        let rates: Vec<_> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let joints = joints_from_task(sys, &task, &attitudes, &rates).unwrap();
        (task, joints)
    }

    /// Consistent state built from the quadrotor side (works for coupled cables).
    fn random_state_from_joints(sys: &SystemDescription, rng: &mut ChaCha8Rng) -> (TaskState, JointState) {
        let n = sys.quadrotor_count();
        let mut quadrotors = Vec::with_capacity(n);
        for j in 0..n {
            let az = std::f64::consts::TAU * j as f64 / n as f64 + rng.random_range(-0.3..0.3);
            let mut q = QuadrotorState::at(Vector3::new(0.7 * az.cos(), 0.7 * az.sin(), rng.random_range(1.0..1.5)));
            q.velocity = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            q.attitude = UnitQuaternion::from_scaled_axis(Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-3.0..3.0),
            ));
            q.angular_velocity = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            quadrotors.push(q);
        }
        let joints = JointState {
            quadrotors,
            ..Default::default()
        };
        let payload = PayloadState {
            linear_velocity: Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ),
            ..Default::default()
        };
        let task = task_from_tracking(sys, &payload, &joints).unwrap();
        (task, joints)
    }

    #[test]
    fn residual_vanishes_for_synthesized_joints_and_is_linear_in_position() {
        let sys = presets::table1().unwrap();
        let task = symmetric_task(30.0, 1.4);
        let mut joints = joints_from_task(&sys, &task, &identity_attitudes(3), &[Vector3::zeros(); 3]).unwrap();
        for r in loop_closure_residual(&sys, &task, &joints).unwrap() {
            assert!(r.norm() < 1e-12);
        }
        joints.quadrotors[1].position.z += 0.01;
        let r = loop_closure_residual(&sys, &task, &joints).unwrap();
        assert_relative_eq!(r[1], Vector3::new(0.0, 0.0, -0.01), epsilon = 1e-12);
        assert!(r[0].norm() < 1e-12);
    }

    #[test]
    fn residual_vanishes_with_rotated_rigid_payload() {
        let sys = presets::rigid_payload().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut task, _) = random_state(&sys, &mut rng);
        task.payload.pose.rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let joints = joints_from_task(&sys, &task, &identity_attitudes(3), &[Vector3::zeros(); 3]).unwrap();
        for r in loop_closure_residual(&sys, &task, &joints).unwrap() {
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn quadrotor_position_hand_evaluation() {
        // Point mass at the origin, θ = 30°, l = 1.4 m, exit point [0, 0, −6.4] cm.
        let sys = presets::prototype().unwrap();
        let task = symmetric_task(30.0, 1.4);
        let x = quadrotor_positions_from_task(&sys, &task, &identity_attitudes(3)).unwrap();
        assert_relative_eq!(x[0], Vector3::new(0.7, 0.0, 1.212436 + 0.064), epsilon = 1e-6);
        // l → 0: the quadrotor sits at the attachment minus the exit offset.
        let short = symmetric_task(30.0, 1e-12);
        let x = quadrotor_positions_from_task(&sys, &short, &identity_attitudes(3)).unwrap();
        assert_relative_eq!(x[2], Vector3::new(0.0, 0.0, 0.064), epsilon = 1e-9);
        // Inverse route recovers the task.
        let joints = joints_from_task(&sys, &task, &identity_attitudes(3), &[Vector3::zeros(); 3]).unwrap();
        let back = task_from_tracking(&sys, &task.payload, &joints).unwrap();
        for (a, b) in back.cables.iter().zip(&task.cables) {
            assert!((wrap_angle(a.azimuth - b.azimuth)).abs() < 1e-10);
            assert!((a.inclination - b.inclination).abs() < 1e-10);
            assert!((a.length - b.length).abs() < 1e-10);
        }
    }

    #[test]
    fn coupled_cables_must_agree() {
        let sys = presets::coupled_pair().unwrap();
        // Two cables of quadrotor 1 pointing at different places.
        let task = TaskState {
            payload: PayloadState::default(),
            cables: vec![
                CableCoord::new(0.0, 0.5, 1.0),
                CableCoord::new(2.0, 0.5, 1.0),
                CableCoord::new(-2.0, 0.5, 1.0),
            ],
        };
        match quadrotor_positions_from_task(&sys, &task, &identity_attitudes(2)) {
            Err(Error::CoupledCableMismatch { owner, .. }) => assert_eq!(owner, 1),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn tracking_round_trip_on_random_states() {
        for sys in [presets::table1().unwrap(), presets::rigid_payload().unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let (task, joints) = random_state(&sys, &mut rng);
                let back = task_from_tracking(&sys, &task.payload, &joints).unwrap();
                for (a, b) in back.cables.iter().zip(&task.cables) {
                    worst = worst
                        .max(wrap_angle(a.azimuth - b.azimuth).abs())
                        .max((a.inclination - b.inclination).abs())
                        .max((a.length - b.length).abs())
                        .max((a.azimuth_rate - b.azimuth_rate).abs())
                        .max((a.inclination_rate - b.inclination_rate).abs())
                        .max((a.length_rate - b.length_rate).abs());
                }
            }
            assert!(worst < 1e-9, "worst coordinate error {worst}");
        }
    }

    #[test]
    fn pole_cable_is_flagged_with_zero_azimuth() {
        let sys = presets::table1().unwrap();
        let mut joints = joints_from_task(
            &sys,
            &symmetric_task(30.0, 1.4),
            &identity_attitudes(3),
            &[Vector3::zeros(); 3],
        )
        .unwrap();
        joints.quadrotors[0].position = Vector3::new(0.0, 0.0, 1.5) - sys.exit_point(0);
        let task = task_from_tracking(&sys, &PayloadState::default(), &joints).unwrap();
        assert_eq!(task.cables[0].azimuth, 0.0);
        assert!(task.cables[0].is_degenerate());
        assert_relative_eq!(task.cables[0].length, 1.5, epsilon = 1e-12);
        assert!(matches!(
            first_order(&sys, &task, &joints),
            Err(Error::Degenerate { cable: 0, .. })
        ));
    }

    #[test]
    fn tracking_is_translation_invariant() {
        let sys = presets::rigid_payload().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (task, mut joints) = random_state(&sys, &mut rng);
        let base = task_from_tracking(&sys, &task.payload, &joints).unwrap();
        let shift = Vector3::new(12.0, -3.5, 7.25);
        let mut payload = task.payload;
        payload.pose.translation += shift;
        for q in &mut joints.quadrotors {
            q.position += shift;
        }
        let moved = task_from_tracking(&sys, &payload, &joints).unwrap();
        for (a, b) in moved.cables.iter().zip(&base.cables) {
            assert_relative_eq!(a.length, b.length, epsilon = 1e-12);
            assert_relative_eq!(a.inclination, b.inclination, epsilon = 1e-12);
            assert_relative_eq!(a.azimuth, b.azimuth, epsilon = 1e-12);
        }
    }

    #[test]
    fn tracking_is_invariant_under_world_rotation() {
        let sys = presets::rigid_payload().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (task, joints) = random_state(&sys, &mut rng);
        let base = task_from_tracking(&sys, &task.payload, &joints).unwrap();
        let rot = UnitQuaternion::from_scaled_axis(Vector3::new(0.4, -1.1, 0.7));
        let mut payload = task.payload;
        payload.pose = Pose::new(rot * payload.pose.translation, rot * payload.pose.rotation);
        payload.linear_velocity = rot * payload.linear_velocity;
        payload.angular_velocity = rot * payload.angular_velocity;
        let mut rotated = joints.clone();
        for q in &mut rotated.quadrotors {
            q.position = rot * q.position;
            q.velocity = rot * q.velocity;
            q.attitude = rot * q.attitude;
            q.angular_velocity = rot * q.angular_velocity;
        }
        let moved = task_from_tracking(&sys, &payload, &rotated).unwrap();
        for (a, b) in moved.cables.iter().zip(&base.cables) {
            assert_relative_eq!(a.length, b.length, epsilon = 1e-12);
            assert_relative_eq!(a.inclination, b.inclination, epsilon = 1e-12);
            assert!(wrap_angle(a.azimuth - b.azimuth).abs() < 1e-12);
            assert_relative_eq!(a.length_rate, b.length_rate, epsilon = 1e-12);
        }
        let residual = loop_closure_residual(&sys, &moved, &rotated).unwrap();
        assert!(residual.iter().all(|r| r.norm() < 1e-12));
    }

    #[test]
    fn hover_has_zero_velocity_bias() {
        let sys = presets::prototype().unwrap();
        let task = symmetric_task(30.0, 1.4);
        let joints = joints_from_task(&sys, &task, &identity_attitudes(3), &[Vector3::zeros(); 3]).unwrap();
        let k = first_order(&sys, &task, &joints).unwrap();
        assert_eq!(k.velocity_bias.norm(), 0.0);
        assert_eq!(k.acceleration_bias.norm(), 0.0);
        assert_eq!(k.forward.shape(), (9, 12));
        assert_eq!(k.jacobian.shape(), (12, 9));
    }

    #[test]
    fn forward_matrix_sparsity() {
        let sys = presets::rigid_payload().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (task, _) = random_state(&sys, &mut rng);
        let a = forward_matrix(&sys, &task);
        let m = sys.cable_count();
        for i in 0..m {
            for c in 0..m {
                if c != i {
                    for r in 0..3 {
                        for k in 0..3 {
                            assert_eq!(a[(3 * i + r, 6 + 3 * c + k)], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pseudo_inverse_identities_and_minimum_norm() {
        let sys = presets::rigid_payload().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (task, joints) = random_state(&sys, &mut rng);
            let k = first_order(&sys, &task, &joints).unwrap();
            let a = &k.forward;
            let ap = &k.forward_pinv;
            assert!((a * ap * a - a).amax() < 1e-9);
            let bp = linalg::pinv(&k.inverse).matrix;
            assert!((&bp * &k.inverse * &bp - &bp).amax() < 1e-9);
            // Any x with A x = y is at least as long as A⁺ y.
            let x = DVector::from_fn(a.ncols(), |_, _| rng.random_range(-1.0..1.0));
            let y = a * &x;
            assert!((ap * &y).norm() <= x.norm() + 1e-12);
        }
    }

    #[test]
    fn point_mass_fixed_length_form_is_square_and_invertible() {
        let sys = presets::table1().unwrap();
        let task = symmetric_task(30.0, 1.4);
        let split = length_split_jacobians(&sys, &task).unwrap();
        assert_eq!(split.reduced_forward.shape(), (9, 9));
        assert_eq!(linalg::rank(&split.reduced_forward), 9);
        let inv = split.reduced_forward.clone().try_inverse().unwrap();
        let direct = inv * inverse_matrix(&sys);
        assert!((direct - &split.fixed_length).amax() < 1e-10);
    }

    #[test]
    fn velocity_constraint_holds_exactly_and_jacobian_projects() {
        for sys in [
            presets::table1().unwrap(),
            presets::rigid_payload().unwrap(),
            presets::coupled_pair().unwrap(),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            for _ in 0..20 {
                let (task, joints) = if sys.winch_counts().contains(&2) {
                    random_state_from_joints(&sys, &mut rng)
                } else {
                    random_state(&sys, &mut rng)
                };
                let k = first_order(&sys, &task, &joints).unwrap();
                let xdot = task.rate_vector(sys.point_mass());
                let qdot = joints.velocity_vector();
                let lhs = &k.forward * &xdot;
                let rhs = &k.inverse * &qdot + &k.exit_velocity_terms;
                assert!((lhs - rhs).amax() < 1e-12);
                let projected = &k.forward_pinv * &k.forward * &xdot;
                let predicted = &k.jacobian * &qdot + &k.velocity_bias;
                assert!((projected - predicted).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn m3_point_mass_second_order_is_a_xddot_plus_b() {
        let sys = presets::table1().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (task, joints) = random_state(&sys, &mut rng);
        let xdd = DVector::from_fn(sys.task_dim(), |_, _| rng.random_range(-1.0..1.0));
        let so = second_order(&sys, &task, &joints, &xdd, &[]).unwrap();
        let bp = linalg::pinv(&inverse_matrix(&sys)).matrix;
        assert!((bp - DMatrix::identity(9, 9)).amax() < 1e-12);
        let direct = forward_matrix(&sys, &task) * &xdd + &so.acceleration_bias;
        assert!((so.joint_acceleration - direct).amax() < 1e-12);
    }

    #[test]
    fn second_order_at_rest_is_zero() {
        let sys = presets::prototype().unwrap();
        let task = symmetric_task(30.0, 1.4);
        let joints = joints_from_task(&sys, &task, &identity_attitudes(3), &[Vector3::zeros(); 3]).unwrap();
        let so = second_order(&sys, &task, &joints, &DVector::zeros(12), &[]).unwrap();
        assert_eq!(so.joint_acceleration.norm(), 0.0);
    }

    #[test]
    fn coupled_pair_b_matrix_pattern() {
        let sys = presets::coupled_pair().unwrap();
        let b = inverse_matrix(&sys);
        let expected = DMatrix::from_row_slice(
            9,
            6,
            &[
                1., 0., 0., 0., 0., 0., //
                0., 1., 0., 0., 0., 0., //
                0., 0., 1., 0., 0., 0., //
                0., 0., 0., 1., 0., 0., //
                0., 0., 0., 0., 1., 0., //
                0., 0., 0., 0., 0., 1., //
                0., 0., 0., 1., 0., 0., //
                0., 0., 0., 0., 1., 0., //
                0., 0., 0., 0., 0., 1., //
            ],
        );
        assert_eq!(b, expected);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let sys = parse_system(&crate::presets::table1_text()).unwrap();
        let task = TaskState::default();
        assert!(matches!(
            quadrotor_positions_from_task(&sys, &task, &identity_attitudes(3)),
            Err(Error::InvalidArgument(_))
        ));
    }
}
