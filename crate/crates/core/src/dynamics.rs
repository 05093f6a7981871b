//! Newton–Euler balances of payload, winches and quadrotors, the inverse
//! dynamic model `f = D_q ẍ_t + G_q`, and the propeller mixer.
//!
//! Sign conventions: `ᵖu_i` points from the payload attachment towards the
//! quadrotor, so a taut cable pulls the payload along `+u` and the quadrotor
//! along `−u`. The quadrotor balance is `f_j + m_j g − Σ t_k u_k = m_j ẍ_j`,
//! which gives the gravity term `d_j = −m_j g` in `f = M_q q̈_a + U t + d`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics;
use crate::linalg::{null_space, pinv};
use crate::model::{check_degenerate, JointState, QuadrotorParams, SystemDescription, TaskState};

/// Minimum-norm tension solution of the payload balance.
#[derive(Debug, Clone)]
pub struct TensionSolve {
    /// t (N); negative entries are kept and reported, never clamped.
    pub tensions: DVector<f64>,
    /// W: 3×m (point mass) or 6×m
    pub wrench_matrix: DMatrix<f64>,
    /// c
    pub bias: DVector<f64>,
    /// ‖W t − (M_p ẍ + c)‖
    pub residual: f64,
    /// Orthonormal basis of 𝒩(W) (columns).
    pub null_space: DMatrix<f64>,
    pub rank: usize,
}

impl TensionSolve {
    pub fn has_negative(&self) -> bool {
        self.tensions.iter().any(|&t| t < 0.0)
    }
}

/// World-frame cable direction `⁰R_p ᵖu_i` for every cable.
pub fn cable_directions(task: &TaskState) -> Vec<Vector3<f64>> {
    task.cables
        .iter()
        .map(|c| task.payload.pose.rotation * c.unit_vector())
        .collect()
}

/// W: column i is `[R_p u_i; R_p(x_Bi × u_i)]` (force rows only in point-mass mode).
pub fn wrench_matrix(sys: &SystemDescription, task: &TaskState) -> DMatrix<f64> {
    let m = sys.cable_count();
    let dof = sys.payload_dof();
    let r = task.payload.pose.rotation;
    let mut w = DMatrix::zeros(dof, m);
    for (i, c) in task.cables.iter().enumerate() {
        let u = c.unit_vector();
        w.fixed_view_mut::<3, 1>(0, i).copy_from(&(r * u));
        if dof == 6 {
            let arm = sys.payload().attachments[i];
            w.fixed_view_mut::<3, 1>(3, i).copy_from(&(r * arm.cross(&u)));
        }
    }
    w
}

/// Payload inertia about its COM expressed in the world frame, `R_p I_p R_pᵀ`.
pub fn payload_inertia_world(sys: &SystemDescription, task: &TaskState) -> nalgebra::Matrix3<f64> {
    let r = task.payload.pose.rotation_matrix();
    r * sys.payload().inertia * r.transpose()
}

/// M_p = diag(m_p I₃, R_p I_p R_pᵀ), or m_p I₃ in point-mass mode.
pub fn payload_mass_matrix(sys: &SystemDescription, task: &TaskState) -> DMatrix<f64> {
    let dof = sys.payload_dof();
    let mut m = DMatrix::zeros(dof, dof);
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(nalgebra::Matrix3::identity() * sys.payload().mass));
    if dof == 6 {
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&payload_inertia_world(sys, task));
    }
    m
}

/// c = [0; ω×(I ω)] − [m_p g; (R_p x_C) × m_p g] − w_e.
pub fn payload_bias(sys: &SystemDescription, task: &TaskState, external: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let dof = sys.payload_dof();
    let p = sys.payload();
    let weight = sys.gravity() * p.mass;
    let mut c = DVector::zeros(dof);
    c.fixed_rows_mut::<3>(0).copy_from(&(-weight));
    if dof == 6 {
        let w = task.payload.angular_velocity;
        let com = task.payload.pose.rotation * p.com;
        let gyro = w.cross(&(payload_inertia_world(sys, task) * w));
        c.fixed_rows_mut::<3>(3).copy_from(&(gyro - com.cross(&weight)));
    }
    if let Some(we) = external {
        if we.len() != dof {
            return Err(Error::Dimension(format!(
                "external wrench has {} entries, expected {dof}",
                we.len()
            )));
        }
        c -= we;
    }
    Ok(c)
}

/// Tensions `t = W⁺(M_p ẍ + c)` for a payload acceleration `[ẍ_p, (ω̇_p)]`.
pub fn payload_tensions(
    sys: &SystemDescription,
    task: &TaskState,
    acceleration: &DVector<f64>,
    external: Option<&DVector<f64>>,
) -> Result<TensionSolve> {
    check_degenerate(task)?;
    let dof = sys.payload_dof();
    if acceleration.len() != dof {
        return Err(Error::Dimension(format!(
            "payload acceleration has {} entries, expected {dof}",
            acceleration.len()
        )));
    }
    if task.cables.len() != sys.cable_count() {
        return Err(Error::Dimension(format!(
            "task state has {} cables, system has {}",
            task.cables.len(),
            sys.cable_count()
        )));
    }
    let w = wrench_matrix(sys, task);
    let c = payload_bias(sys, task, external)?;
    let rhs = payload_mass_matrix(sys, task) * acceleration + &c;
    let p = pinv(&w);
    let expected = dof.min(sys.cable_count());
    if p.rank < expected {
        return Err(Error::RankDeficient {
            what: "wrench matrix W",
            rank: p.rank,
            expected,
        });
    }
    let tensions = &p.matrix * &rhs;
    let residual = (&w * &tensions - rhs).norm();
    Ok(TensionSolve {
        tensions,
        null_space: null_space(&w),
        rank: p.rank,
        wrench_matrix: w,
        bias: c,
        residual,
    })
}

/// Drum rate from cable length rate, `ω_r = l̇ / r_d`.
pub fn drum_rate(sys: &SystemDescription, i: usize, length_rate: f64) -> f64 {
    length_rate / sys.winch(i).drum_radius
}

/// Cable length rate from drum rate, `l̇ = r_d ω_r`.
pub fn length_rate(sys: &SystemDescription, i: usize, drum_rate: f64) -> f64 {
    sys.winch(i).drum_radius * drum_rate
}

/// Scalar drum torque approximation `r_d · t` (tension tangent to the drum).
pub fn drum_torque_scalar(sys: &SystemDescription, i: usize, tension: f64) -> f64 {
    sys.winch(i).drum_radius * tension
}

/// Cable direction `ʷu_i` in the winch frame.
pub fn cable_direction_in_winch(sys: &SystemDescription, i: usize, task: &TaskState, joints: &JointState) -> Vector3<f64> {
    let q = &joints.quadrotors[sys.owner(i)];
    let u = task.payload.pose.rotation * task.cables[i].unit_vector();
    sys.winch(i).mount.rotation.inverse() * (q.attitude.inverse() * u)
}

/// Drum torque balance `τ = I_xx ω̇_r + k·(ʷx_I × t ʷu)`.
pub fn winch_torque(
    sys: &SystemDescription,
    i: usize,
    tension: f64,
    drum_acceleration: f64,
    direction_in_winch: &Vector3<f64>,
) -> f64 {
    let w = sys.winch(i);
    w.drum_inertia() * drum_acceleration + w.exit_point.cross(&(direction_in_winch * tension)).x
}

/// Force and body moment quadrotor `j` must generate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorBalance {
    /// f_j, world frame (N)
    pub force: Vector3<f64>,
    /// moment about the frame origin, body frame (N·m)
    pub moment: Vector3<f64>,
}

/// Solves the quadrotor force and moment balances for the actuation.
///
/// `acceleration` is ⁰ẍ_j and `angular_acceleration` is ⁰ω̇_j (world). The
/// cable force is applied at the exit point with its world direction rotated
/// into the body frame, so the moment is frame-consistent:
/// `m = I ω̇ + ω×Iω + Σ ʲx_I × t R_jᵀu − ʲx_G × m_j R_jᵀ g`.
pub fn quadrotor_wrench_balance(
    sys: &SystemDescription,
    j: usize,
    task: &TaskState,
    joints: &JointState,
    tensions: &DVector<f64>,
    acceleration: &Vector3<f64>,
    angular_acceleration: &Vector3<f64>,
) -> QuadrotorBalance {
    let comp = sys.composite(j);
    let q = &joints.quadrotors[j];
    let g = sys.gravity();
    let r_inv = q.attitude.inverse();
    let mut force = acceleration * comp.mass - g * comp.mass;
    let w_b = r_inv * q.angular_velocity;
    let dw_b = r_inv * angular_acceleration;
    let mut moment = comp.inertia * dw_b + w_b.cross(&(comp.inertia * w_b)) - comp.com.cross(&(r_inv * g * comp.mass));
    for &i in &comp.cables {
        let pull = task.payload.pose.rotation * task.cables[i].unit_vector() * tensions[i];
        force += pull;
        moment += sys.exit_point(i).cross(&(r_inv * pull));
    }
    QuadrotorBalance { force, moment }
}

/// Inverse dynamic model at one state.
#[derive(Debug, Clone)]
pub struct InverseDynamics {
    /// D_q: 3n × task_dim
    pub d_q: DMatrix<f64>,
    /// G_q: 3n
    pub g_q: DVector<f64>,
    /// f = D_q ẍ_t + G_q
    pub thrust: DVector<f64>,
    /// Tensions implied by the requested payload acceleration.
    pub tensions: DVector<f64>,
}

/// M_q = diag(m_j I₃).
pub fn quadrotor_mass_matrix(sys: &SystemDescription) -> DMatrix<f64> {
    let n = sys.quadrotor_count();
    DMatrix::from_diagonal(&DVector::from_iterator(
        3 * n,
        sys.composites().iter().flat_map(|c| [c.mass; 3]),
    ))
}

/// U: 3n × m with column i = R_p u_i in the owner's block row.
pub fn tension_map(sys: &SystemDescription, task: &TaskState) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(3 * sys.quadrotor_count(), sys.cable_count());
    for (i, dir) in cable_directions(task).into_iter().enumerate() {
        u.fixed_view_mut::<3, 1>(3 * sys.owner(i), i).copy_from(&dir);
    }
    u
}

/// d = −m_j g stacked.
pub fn gravity_term(sys: &SystemDescription) -> DVector<f64> {
    let g = sys.gravity();
    DVector::from_iterator(
        3 * sys.quadrotor_count(),
        sys.composites()
            .iter()
            .flat_map(|c| (-g * c.mass).iter().copied().collect::<Vec<_>>()),
    )
}

/// `D_q = M_q B⁺A + U W⁺[M_p 0]`, `G_q = M_q B⁺b + U W⁺c + d` and `f`.
pub fn inverse_dynamics(
    sys: &SystemDescription,
    task: &TaskState,
    joints: &JointState,
    task_acceleration: &DVector<f64>,
    external: Option<&DVector<f64>>,
) -> Result<InverseDynamics> {
    check_degenerate(task)?;
    let dim = sys.task_dim();
    if task_acceleration.len() != dim {
        return Err(Error::Dimension(format!(
            "task acceleration has {} entries, expected {dim}",
            task_acceleration.len()
        )));
    }
    let dof = sys.payload_dof();
    let a = kinematics::forward_matrix(sys, task);
    let b_pinv = pinv(&kinematics::inverse_matrix(sys)).matrix;
    let bias = kinematics::acceleration_bias(sys, task, joints, &[]);
    let w = wrench_matrix(sys, task);
    let wp = pinv(&w);
    if wp.rank < dof.min(sys.cable_count()) {
        return Err(Error::RankDeficient {
            what: "wrench matrix W",
            rank: wp.rank,
            expected: dof.min(sys.cable_count()),
        });
    }
    let c = payload_bias(sys, task, external)?;
    let mq = quadrotor_mass_matrix(sys);
    let u = tension_map(sys, task);
    let mut mp_ext = DMatrix::zeros(dof, dim);
    mp_ext.view_mut((0, 0), (dof, dof)).copy_from(&payload_mass_matrix(sys, task));
    let uw = &u * &wp.matrix;
    let d_q = &mq * &b_pinv * &a + &uw * &mp_ext;
    let g_q = &mq * &b_pinv * &bias + &uw * &c + gravity_term(sys);
    let thrust = &d_q * task_acceleration + &g_q;
    let tensions = &wp.matrix * (&mp_ext * task_acceleration + &c);
    Ok(InverseDynamics {
        d_q,
        g_q,
        thrust,
        tensions,
    })
}

/// Propeller allocation for one quadrotor (see [`mixer_matrix`] for the layout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerCommand {
    /// f_pk (N)
    pub propeller_thrusts: [f64; 4],
    pub collective: f64,
    /// [m_x, m_y, m_z] (N·m)
    pub moments: [f64; 3],
    /// Ω_k = sqrt(f_pk / k_f), zero for negative thrust
    pub rotor_rates: [f64; 4],
    /// Indices of propellers outside [f_min, f_max].
    pub saturated: Vec<usize>,
}

impl MixerCommand {
    pub fn is_saturated(&self) -> bool {
        !self.saturated.is_empty()
    }
}

/// The 4×4 map from propeller thrusts to `[f_z, m_x, m_y, m_z]`.
///
/// Rows: `[1 1 1 1]`, `[0 r 0 −r]`, `[−r 0 r 0]`, `κ[−1 1 −1 1]` with
/// `κ = k_m/k_f`. The rows place propellers 1–4 at +x, +y, −x, −y, with 1 and
/// 3 spinning opposite to 2 and 4.
pub fn mixer_matrix(quad: &QuadrotorParams) -> Matrix4<f64> {
    let r = quad.arm_length;
    let k = quad.drag_ratio();
    Matrix4::new(1.0, 1.0, 1.0, 1.0, 0.0, r, 0.0, -r, -r, 0.0, r, 0.0, -k, k, -k, k)
}

/// Solves for propeller thrusts and flags those outside the bounds.
pub fn mix(quad: &QuadrotorParams, collective: f64, moments: &Vector3<f64>) -> MixerCommand {
    let inv = mixer_matrix(quad)
        .try_inverse()
        .expect("mixer matrix is invertible for r > 0 and k_m/k_f > 0");
    let f = inv * Vector4::new(collective, moments.x, moments.y, moments.z);
    let tol = 1e-12 * quad.thrust_max.max(1.0);
    let mut saturated = Vec::new();
    let mut thrusts = [0.0; 4];
    let mut rates = [0.0; 4];
    for k in 0..4 {
        thrusts[k] = f[k];
        rates[k] = (f[k].max(0.0) / quad.thrust_coefficient).sqrt();
        if f[k] < quad.thrust_min - tol || f[k] > quad.thrust_max + tol {
            saturated.push(k);
        }
    }
    MixerCommand {
        propeller_thrusts: thrusts,
        collective,
        moments: [moments.x, moments.y, moments.z],
        rotor_rates: rates,
        saturated,
    }
}

/// Collective and body moments produced by the given propeller thrusts.
pub fn unmix(quad: &QuadrotorParams, thrusts: &[f64; 4]) -> (f64, Vector3<f64>) {
    let w = mixer_matrix(quad) * Vector4::from_column_slice(thrusts);
    (w[0], Vector3::new(w[1], w[2], w[3]))
}

/// Clips propeller thrusts to their box and returns the realised wrench.
pub fn saturate(quad: &QuadrotorParams, cmd: &MixerCommand) -> (f64, Vector3<f64>) {
    let clipped = cmd.propeller_thrusts.map(|f| f.clamp(quad.thrust_min, quad.thrust_max));
    unmix(quad, &clipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::joints_from_task;
    use crate::model::{CableCoord, PayloadState, Pose};
    use crate::presets;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
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

    fn hover_joints(sys: &SystemDescription, task: &TaskState) -> JointState {
        let n = sys.quadrotor_count();
        joints_from_task(sys, task, &vec![UnitQuaternion::identity(); n], &vec![Vector3::zeros(); n]).unwrap()
    }

    #[test]
    fn symmetric_hover_tensions() {
        let sys = presets::table1().unwrap();
        for theta in [15.0f64, 30.0, 45.0, 60.0] {
            let task = symmetric_task(theta, 1.4);
            let s = payload_tensions(&sys, &task, &DVector::zeros(3), None).unwrap();
            let expected = 9.81 / (3.0 * theta.to_radians().cos());
            for t in s.tensions.iter() {
                assert!((t - expected).abs() < 1e-9, "θ={theta}: {t} vs {expected}");
            }
            assert!(s.residual < 1e-10);
            assert_eq!(s.null_space.ncols(), 0);
        }
        let s = payload_tensions(&sys, &symmetric_task(30.0, 1.4), &DVector::zeros(3), None).unwrap();
        assert_relative_eq!(s.tensions[0], 3.7759, epsilon = 1e-4);
    }

    #[test]
    fn supported_payload_needs_no_tension() {
        let sys = presets::table1().unwrap();
        let support = DVector::from_column_slice((-sys.gravity() * sys.payload().mass).as_slice());
        let s = payload_tensions(&sys, &symmetric_task(30.0, 1.4), &DVector::zeros(3), Some(&support)).unwrap();
        assert!(s.tensions.norm() < 1e-12);
    }

    #[test]
    fn generic_three_cable_solve_matches_direct_inverse() {
        let sys = presets::table1().unwrap();
        let task = TaskState {
            payload: PayloadState::default(),
            cables: vec![
                CableCoord::new(0.2, 0.4, 1.0),
                CableCoord::new(2.3, 0.7, 1.2),
                CableCoord::new(-2.0, 0.5, 0.9),
            ],
        };
        let acc = DVector::from_column_slice(&[0.3, -0.2, 0.5]);
        let s = payload_tensions(&sys, &task, &acc, None).unwrap();
        let direct = s.wrench_matrix.clone().try_inverse().unwrap() * (&acc * sys.payload().mass + &s.bias);
        assert!((&s.tensions - direct).amax() < 1e-10);
        assert!(s.residual < 1e-10);
        // Newton check on the payload.
        let dirs = cable_directions(&task);
        let sum: Vector3<f64> = dirs.iter().enumerate().map(|(i, u)| u * s.tensions[i]).sum();
        let newton = sum + sys.gravity() * sys.payload().mass - Vector3::new(acc[0], acc[1], acc[2]) * sys.payload().mass;
        assert!(newton.norm() < 1e-9);
    }

    #[test]
    fn rigid_payload_newton_euler_residuals() {
        let sys = presets::rigid_six().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = sys.payload().clone();
        for _ in 0..20 {
            let rot = UnitQuaternion::from_scaled_axis(Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-3.0..3.0),
            ));
            let mut task = TaskState {
                payload: PayloadState {
                    pose: Pose::new(Vector3::zeros(), rot),
                    linear_velocity: Vector3::zeros(),
                    angular_velocity: Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                },
                cables: Vec::new(),
            };
            for i in 0..6 {
                let az = (60.0 * i as f64).to_radians() + rng.random_range(-0.2..0.2);
                task.cables.push(CableCoord::new(az, rng.random_range(0.3..0.8), 1.2));
            }
            let acc = DVector::from_fn(6, |_, _| rng.random_range(-0.5..0.5));
            let we = DVector::from_fn(6, |_, _| rng.random_range(-0.2..0.2));
            let s = payload_tensions(&sys, &task, &acc, Some(&we)).unwrap();
            let r = rot;
            let mut force = Vector3::new(we[0], we[1], we[2]) + sys.gravity() * p.mass;
            let mut moment = Vector3::new(we[3], we[4], we[5]) + (r * p.com).cross(&(sys.gravity() * p.mass));
            for (i, c) in task.cables.iter().enumerate() {
                force += r * c.unit_vector() * s.tensions[i];
                moment += r * p.attachments[i].cross(&(c.unit_vector() * s.tensions[i]));
            }
            let w = task.payload.angular_velocity;
            let dw = Vector3::new(acc[3], acc[4], acc[5]);
            let inertia = r.to_rotation_matrix() * p.inertia * r.to_rotation_matrix().transpose();
            assert!((force - Vector3::new(acc[0], acc[1], acc[2]) * p.mass).norm() < 1e-9);
            assert!((moment - (inertia * dw + w.cross(&(inertia * w)))).norm() < 1e-9);
        }
    }

    #[test]
    fn winch_torque_cases() {
        let sys = presets::table1().unwrap();
        // Cable leaving tangentially along +z of the winch frame.
        let up = Vector3::z();
        assert_relative_eq!(winch_torque(&sys, 0, 29.42, 0.0, &up), 0.5884, epsilon = 1e-4);
        assert_relative_eq!(
            winch_torque(&sys, 0, 29.42, 0.0, &up),
            drum_torque_scalar(&sys, 0, 29.42),
            epsilon = 1e-12
        );
        assert_relative_eq!(winch_torque(&sys, 0, 0.0, 10.0, &up), 1e-4, epsilon = 1e-15);
        assert_relative_eq!(drum_rate(&sys, 0, 0.02), 1.0, epsilon = 1e-15);
        assert_relative_eq!(length_rate(&sys, 0, 1.0), 0.02, epsilon = 1e-15);
    }

    #[test]
    fn hover_quadrotor_force_and_moment() {
        let sys = presets::table1().unwrap();
        let task = symmetric_task(30.0, 1.4);
        let joints = hover_joints(&sys, &task);
        let t = payload_tensions(&sys, &task, &DVector::zeros(3), None).unwrap().tensions;
        let bal = quadrotor_wrench_balance(&sys, 0, &task, &joints, &t, &Vector3::zeros(), &Vector3::zeros());
        assert_relative_eq!(bal.force, Vector3::new(1.888, 0.0, 15.042), epsilon = 1e-3);
    }

    #[test]
    fn compensation_moment_vanishes_through_com_and_matches_cross_product() {
        let mut spec = presets::prototype().unwrap().into_spec();
        let t_dir = symmetric_task(30.0, 1.4);
        // Cable through the COM.
        let mut through = spec.clone();
        for w in &mut through.winches {
            w.mount = Pose::identity();
            w.exit_point = Vector3::zeros();
            w.com = Vector3::zeros();
        }
        for q in &mut through.quadrotors {
            q.com = Vector3::zeros();
        }
        let sys = SystemDescription::new(through).unwrap();
        let joints = hover_joints(&sys, &t_dir);
        let t = payload_tensions(&sys, &t_dir, &DVector::zeros(3), None).unwrap().tensions;
        let bal = quadrotor_wrench_balance(&sys, 0, &t_dir, &joints, &t, &Vector3::zeros(), &Vector3::zeros());
        assert!(bal.moment.norm() < 1e-15);
        // Offset exit point only.
        for q in &mut spec.quadrotors {
            q.com = Vector3::zeros();
        }
        for w in &mut spec.winches {
            w.com = -w.mount.translation;
        }
        let sys = SystemDescription::new(spec).unwrap();
        assert!(sys.composite(0).com.norm() < 1e-15);
        let joints = hover_joints(&sys, &t_dir);
        let t = payload_tensions(&sys, &t_dir, &DVector::zeros(3), None).unwrap().tensions;
        let bal = quadrotor_wrench_balance(&sys, 0, &t_dir, &joints, &t, &Vector3::zeros(), &Vector3::zeros());
        let x_i = Vector3::new(0.0, 0.0, -0.064);
        let expected = x_i.cross(&(t_dir.cables[0].unit_vector() * t[0]));
        assert_relative_eq!(bal.moment, expected, epsilon = 1e-12);
        assert!(bal.moment.y.abs() > 0.05);
    }

    #[test]
    fn hover_thrust_equals_quadrotor_balance() {
        for sys in [presets::table1().unwrap(), presets::prototype().unwrap()] {
            let task = symmetric_task(30.0, 1.4);
            let joints = hover_joints(&sys, &task);
            let id = inverse_dynamics(&sys, &task, &joints, &DVector::zeros(sys.task_dim()), None).unwrap();
            assert!((&id.thrust - &id.g_q).norm() == 0.0);
            for j in 0..3 {
                let bal = quadrotor_wrench_balance(&sys, j, &task, &joints, &id.tensions, &Vector3::zeros(), &Vector3::zeros());
                let f = Vector3::new(id.thrust[3 * j], id.thrust[3 * j + 1], id.thrust[3 * j + 2]);
                assert!((f - bal.force).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn massless_winches_and_payload_leave_only_gravity() {
        let mut spec = presets::table1().unwrap().into_spec();
        spec.payload.mass = 1e-13;
        for w in &mut spec.winches {
            w.mass = 0.0;
        }
        let sys = SystemDescription::new(spec).unwrap();
        let task = symmetric_task(30.0, 1.4);
        let joints = hover_joints(&sys, &task);
        let id = inverse_dynamics(&sys, &task, &joints, &DVector::zeros(sys.task_dim()), None).unwrap();
        for j in 0..3 {
            let f = Vector3::new(id.thrust[3 * j], id.thrust[3 * j + 1], id.thrust[3 * j + 2]);
            assert!((f + sys.gravity() * 1.05).norm() < 1e-9);
        }
    }

    #[test]
    fn inverse_dynamics_is_compositional() {
        let sys = presets::table1().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mut task = symmetric_task(rng.random_range(20.0..50.0), rng.random_range(0.8..1.6));
            for c in &mut task.cables {
                c.azimuth += rng.random_range(-0.2..0.2);
                c.azimuth_rate = rng.random_range(-0.3..0.3);
                c.inclination_rate = rng.random_range(-0.3..0.3);
                c.length_rate = rng.random_range(-0.2..0.2);
            }
            task.payload.linear_velocity = Vector3::new(0.1, -0.2, 0.05);
            let joints = hover_joints(&sys, &task);
            let xdd = DVector::from_fn(sys.task_dim(), |_, _| rng.random_range(-1.0..1.0));
            let id = inverse_dynamics(&sys, &task, &joints, &xdd, None).unwrap();
            let so = kinematics::second_order(&sys, &task, &joints, &xdd, &[]).unwrap();
            let t = payload_tensions(&sys, &task, &xdd.rows(0, 3).into_owned(), None)
                .unwrap()
                .tensions;
            let composed =
                quadrotor_mass_matrix(&sys) * so.joint_acceleration + tension_map(&sys, &task) * t + gravity_term(&sys);
            assert!((composed - id.thrust).amax() < 1e-9);
        }
    }

    #[test]
    fn mixer_examples() {
        let sys = presets::table1().unwrap();
        let q = sys.quadrotor(0);
        let (fz, m) = unmix(q, &[1.0; 4]);
        assert_relative_eq!(fz, 4.0, epsilon = 1e-15);
        assert!(m.norm() < 1e-15);
        assert_relative_eq!(q.drag_ratio(), 0.0152113, epsilon = 1e-7);
        let (_, m) = unmix(q, &[1.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(m.z, -2.0 * q.drag_ratio(), epsilon = 1e-15);
        let cmd = mix(q, 18.0, &Vector3::zeros());
        for f in cmd.propeller_thrusts {
            assert_relative_eq!(f, 4.5, epsilon = 1e-12);
        }
        assert!(!cmd.is_saturated());
        assert_relative_eq!(cmd.rotor_rates[0], (4.5f64 / 3.55e-6).sqrt(), epsilon = 1e-9);
        let over = mix(q, 18.2, &Vector3::zeros());
        assert_eq!(over.saturated, vec![0, 1, 2, 3]);
        let (fz, _) = saturate(q, &over);
        assert_relative_eq!(fz, 18.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn mix_unmix_round_trip(fz in 0.0f64..18.0, mx in -0.5f64..0.5, my in -0.5f64..0.5, mz in -0.05f64..0.05) {
            let sys = presets::table1().unwrap();
            let q = sys.quadrotor(0);
            let cmd = mix(q, fz, &Vector3::new(mx, my, mz));
            let (f2, m2) = unmix(q, &cmd.propeller_thrusts);
            prop_assert!((f2 - fz).abs() < 1e-12);
            prop_assert!((m2 - Vector3::new(mx, my, mz)).amax() < 1e-12);
        }
    }
}
