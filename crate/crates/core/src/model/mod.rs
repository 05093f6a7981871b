//! Domain types, frame conventions and elementary spatial algebra.
//!
//! Frames: `0` is the world frame (z up, gravity along −z), `p` the payload
//! frame, `j` the frame of quadrotor `j` (origin at its geometric centre) and
//! `w` the frame of a winch (x along the drum axis). Quaternions are stored
//! scalar-first and converted to matrices where they are used.

mod config;
pub(crate) mod units;

pub use config::{load_system, parse_system, serialize_system, NominalConfiguration, SystemSpec};
pub use units::{parse_quantity, UnitKind};

use nalgebra::{DVector, Matrix3, Matrix3x2, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sin θ` below this marks a cable as sitting on a pole of its spherical chart.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Rigid transform: translation plus unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation * p
    }
}

/// Spherical coordinates of one cable, expressed in the payload frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CableCoord {
    /// φ (rad)
    pub azimuth: f64,
    /// θ (rad), measured from the payload z axis
    pub inclination: f64,
    /// l (m)
    pub length: f64,
    pub azimuth_rate: f64,
    pub inclination_rate: f64,
    pub length_rate: f64,
}

impl CableCoord {
    pub fn new(azimuth: f64, inclination: f64, length: f64) -> Self {
        Self {
            azimuth,
            inclination,
            length,
            ..Default::default()
        }
    }

    pub fn with_rates(mut self, azimuth_rate: f64, inclination_rate: f64, length_rate: f64) -> Self {
        self.azimuth_rate = azimuth_rate;
        self.inclination_rate = inclination_rate;
        self.length_rate = length_rate;
        self
    }

    pub fn unit_vector(&self) -> Vector3<f64> {
        cable_unit_vector(self)
    }

    pub fn c_matrix(&self) -> Matrix3x2<f64> {
        c_matrix(self)
    }

    /// Time derivative of [`c_matrix`] given the stored angle rates.
    pub fn c_matrix_rate(&self) -> Matrix3x2<f64> {
        let (sp, cp) = self.azimuth.sin_cos();
        let (st, ct) = self.inclination.sin_cos();
        let (dp, dt) = (self.azimuth_rate, self.inclination_rate);
        Matrix3x2::new(
            -cp * st * dp - sp * ct * dt,
            -sp * ct * dp - cp * st * dt,
            -sp * st * dp + cp * ct * dt,
            cp * ct * dp - sp * st * dt,
            0.0,
            -ct * dt,
        )
    }

    /// Payload-frame derivative of the unit vector, `C [φ̇ θ̇]ᵀ`.
    pub fn unit_vector_rate(&self) -> Vector3<f64> {
        self.c_matrix() * nalgebra::Vector2::new(self.azimuth_rate, self.inclination_rate)
    }

    /// True when `C` loses rank (θ at a pole).
    pub fn is_degenerate(&self) -> bool {
        self.inclination.sin().abs() < DEGENERACY_TOL
    }
}

/// `ᵖu = [cosφ sinθ, sinφ sinθ, cosθ]`.
pub fn cable_unit_vector(c: &CableCoord) -> Vector3<f64> {
    let (sp, cp) = c.azimuth.sin_cos();
    let (st, ct) = c.inclination.sin_cos();
    Vector3::new(cp * st, sp * st, ct)
}

/// `∂ᵖu/∂(φ, θ)` as a 3×2 matrix.
pub fn c_matrix(c: &CableCoord) -> Matrix3x2<f64> {
    let (sp, cp) = c.azimuth.sin_cos();
    let (st, ct) = c.inclination.sin_cos();
    Matrix3x2::new(-sp * st, cp * ct, cp * st, sp * ct, 0.0, -st)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    /// m_q (kg), body only
    pub mass: f64,
    /// ʲx_Q: body COM in the quadrotor frame (m)
    pub com: Vector3<f64>,
    /// inertia about the body COM (kg·m²)
    pub inertia: Matrix3<f64>,
    /// r: propeller distance from the centre (m)
    pub arm_length: f64,
    /// k_f (N·s²/rad²)
    pub thrust_coefficient: f64,
    /// k_m (N·m·s²/rad²)
    pub drag_coefficient: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
}

impl QuadrotorParams {
    /// k_m / k_f
    pub fn drag_ratio(&self) -> f64 {
        self.drag_coefficient / self.thrust_coefficient
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinchParams {
    /// Index of the quadrotor carrying this winch.
    pub owner: usize,
    pub mass: f64,
    pub drum_radius: f64,
    /// Full winch inertia in the winch frame; only the drum-axis entry enters the dynamics.
    pub inertia: Matrix3<f64>,
    /// ʲT_wi
    pub mount: Pose,
    /// ʷx_Ii: where the cable leaves the winch, winch frame (m)
    pub exit_point: Vector3<f64>,
    /// ʷx_A: winch COM, winch frame (m)
    pub com: Vector3<f64>,
    /// τ̄_w (N·m)
    pub stall_torque: f64,
    /// ω_r_max at zero load (rad/s)
    pub max_rate: f64,
    pub safety_fraction: f64,
}

impl WinchParams {
    pub fn drum_inertia(&self) -> f64 {
        self.inertia[(0, 0)]
    }

    /// ʲx_Ii: cable exit point expressed in the owning quadrotor's frame.
    pub fn exit_point_in_body(&self) -> Vector3<f64> {
        self.mount.transform_point(&self.exit_point)
    }

    /// Linear speed-torque characteristic `ω_max(τ) = ω_r_max (1 − τ/τ̄_w)`, floored at zero.
    pub fn max_rate_at(&self, torque: f64) -> f64 {
        (self.max_rate * (1.0 - torque.abs() / self.stall_torque)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadParams {
    pub mass: f64,
    /// ᵖx_C
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
    /// ᵖx_Bi, one per cable
    pub attachments: Vec<Vector3<f64>>,
}

/// Per-quadrotor quantities derived once at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    /// m_j = m_q + Σ m_w over the owned winches
    pub mass: f64,
    /// ʲx_G
    pub com: Vector3<f64>,
    /// I_j about ʲx_G (parallel-axis theorem)
    pub inertia: Matrix3<f64>,
    /// Cable indices owned by this quadrotor, ascending.
    pub cables: Vec<usize>,
}

impl Composite {
    pub fn winch_count(&self) -> usize {
        self.cables.len()
    }
}

/// Validated static description of a system. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDescription {
    spec: SystemSpec,
    composites: Vec<Composite>,
    exit_points: Vec<Vector3<f64>>,
}

impl SystemDescription {
    /// Validate a raw specification and populate the derived quantities.
    pub fn new(spec: SystemSpec) -> Result<Self> {
        config::validate(&spec)?;
        let n = spec.quadrotors.len();
        let mut composites = Vec::with_capacity(n);
        for (j, quad) in spec.quadrotors.iter().enumerate() {
            let cables: Vec<usize> = spec
                .winches
                .iter()
                .enumerate()
                .filter(|(_, w)| w.owner == j)
                .map(|(i, _)| i)
                .collect();
            composites.push(composite(quad, cables.iter().map(|&i| &spec.winches[i]), cables.clone()));
        }
        let exit_points = spec.winches.iter().map(|w| w.exit_point_in_body()).collect();
        Ok(Self {
            spec,
            composites,
            exit_points,
        })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn into_spec(self) -> SystemSpec {
        self.spec
    }

    /// n
    pub fn quadrotor_count(&self) -> usize {
        self.spec.quadrotors.len()
    }

    /// m
    pub fn cable_count(&self) -> usize {
        self.spec.winches.len()
    }

    /// s_j for every quadrotor.
    pub fn winch_counts(&self) -> Vec<usize> {
        self.composites.iter().map(Composite::winch_count).collect()
    }

    pub fn quadrotor(&self, j: usize) -> &QuadrotorParams {
        &self.spec.quadrotors[j]
    }

    pub fn winch(&self, i: usize) -> &WinchParams {
        &self.spec.winches[i]
    }

    pub fn payload(&self) -> &PayloadParams {
        &self.spec.payload
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.spec.gravity
    }

    pub fn point_mass(&self) -> bool {
        self.spec.point_mass
    }

    pub fn composite(&self, j: usize) -> &Composite {
        &self.composites[j]
    }

    pub fn composites(&self) -> &[Composite] {
        &self.composites
    }

    /// Owner quadrotor of cable `i`.
    pub fn owner(&self, i: usize) -> usize {
        self.spec.winches[i].owner
    }

    /// ʲx_Ii of cable `i`.
    pub fn exit_point(&self, i: usize) -> Vector3<f64> {
        self.exit_points[i]
    }

    pub fn nominal(&self) -> Option<&NominalConfiguration> {
        self.spec.configuration.as_ref()
    }

    /// Payload degrees of freedom: 3 in point-mass mode, 6 otherwise.
    pub fn payload_dof(&self) -> usize {
        if self.point_mass() {
            3
        } else {
            6
        }
    }

    /// Dimension of the task vector (payload block plus 3 per cable).
    pub fn task_dim(&self) -> usize {
        self.payload_dof() + 3 * self.cable_count()
    }

    /// Dimension of the joint vector q_a.
    pub fn joint_dim(&self) -> usize {
        3 * self.quadrotor_count()
    }
}

fn composite<'a>(
    quad: &QuadrotorParams,
    winches: impl Iterator<Item = &'a WinchParams> + Clone,
    cables: Vec<usize>,
) -> Composite {
    let mut mass = quad.mass;
    let mut moment = quad.com * quad.mass;
    for w in winches.clone() {
        mass += w.mass;
        moment += w.mount.transform_point(&w.com) * w.mass;
    }
    let com = moment / mass;
    let parallel = |m: f64, d: Vector3<f64>| (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * m;
    let mut inertia = quad.inertia + parallel(quad.mass, quad.com - com);
    for w in winches {
        let r = w.mount.rotation_matrix();
        let c = w.mount.transform_point(&w.com);
        inertia += r * w.inertia * r.transpose() + parallel(w.mass, c - com);
    }
    // Symmetrise away rounding in the rotated terms.
    let inertia = (inertia + inertia.transpose()) * 0.5;
    Composite {
        mass,
        com,
        inertia,
        cables,
    }
}

/// Payload pose and twist (world frame).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PayloadState {
    pub pose: Pose,
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl PayloadState {
    pub fn at(position: Vector3<f64>) -> Self {
        Self {
            pose: Pose::from_translation(position),
            ..Default::default()
        }
    }
}

/// Task-space state: payload pose/twist plus spherical cable coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskState {
    pub payload: PayloadState,
    pub cables: Vec<CableCoord>,
}

impl TaskState {
    /// The velocity vector ẋ_t = [ẋ_p, (ω_p), φ̇₁, θ̇₁, l̇₁, …].
    pub fn rate_vector(&self, point_mass: bool) -> DVector<f64> {
        let dof = if point_mass { 3 } else { 6 };
        let mut v = DVector::zeros(dof + 3 * self.cables.len());
        v.fixed_rows_mut::<3>(0).copy_from(&self.payload.linear_velocity);
        if !point_mass {
            v.fixed_rows_mut::<3>(3).copy_from(&self.payload.angular_velocity);
        }
        for (i, c) in self.cables.iter().enumerate() {
            v[dof + 3 * i] = c.azimuth_rate;
            v[dof + 3 * i + 1] = c.inclination_rate;
            v[dof + 3 * i + 2] = c.length_rate;
        }
        v
    }

    /// Writes a velocity vector back into the rate fields.
    pub fn set_rates(&mut self, v: &DVector<f64>, point_mass: bool) {
        let dof = if point_mass { 3 } else { 6 };
        self.payload.linear_velocity = Vector3::new(v[0], v[1], v[2]);
        if !point_mass {
            self.payload.angular_velocity = Vector3::new(v[3], v[4], v[5]);
        }
        for (i, c) in self.cables.iter_mut().enumerate() {
            c.azimuth_rate = v[dof + 3 * i];
            c.inclination_rate = v[dof + 3 * i + 1];
            c.length_rate = v[dof + 3 * i + 2];
        }
    }

    /// Coordinate difference `self − other` on the task manifold: translation
    /// difference, rotation vector of `R_self R_otherᵀ` (world frame), and wrapped
    /// angle differences for the cables.
    pub fn difference(&self, other: &TaskState, point_mass: bool) -> DVector<f64> {
        let dof = if point_mass { 3 } else { 6 };
        let mut e = DVector::zeros(dof + 3 * self.cables.len());
        e.fixed_rows_mut::<3>(0)
            .copy_from(&(self.payload.pose.translation - other.payload.pose.translation));
        if !point_mass {
            let dq = self.payload.pose.rotation * other.payload.pose.rotation.inverse();
            e.fixed_rows_mut::<3>(3).copy_from(&dq.scaled_axis());
        }
        for (i, (a, b)) in self.cables.iter().zip(&other.cables).enumerate() {
            e[dof + 3 * i] = wrap_angle(a.azimuth - b.azimuth);
            e[dof + 3 * i + 1] = a.inclination - b.inclination;
            e[dof + 3 * i + 2] = a.length - b.length;
        }
        e
    }
}

/// Wrap an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    /// ⁰ω_j, world frame
    pub angular_velocity: Vector3<f64>,
}

impl QuadrotorState {
    pub fn at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WinchState {
    /// drum angle (rad); cable length is `r_d · angle`
    pub angle: f64,
    /// ω_ri (rad/s)
    pub rate: f64,
}

/// Joint-space state: quadrotor poses/twists and winch drums.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub quadrotors: Vec<QuadrotorState>,
    pub winches: Vec<WinchState>,
    /// ʲẋ_Ii overrides (zero for a fixed guide hole).
    pub exit_velocity: Vec<Vector3<f64>>,
    /// ʲẍ_Ii overrides.
    pub exit_acceleration: Vec<Vector3<f64>>,
}

impl JointState {
    pub fn exit_velocity(&self, i: usize) -> Vector3<f64> {
        self.exit_velocity.get(i).copied().unwrap_or_else(Vector3::zeros)
    }

    pub fn exit_acceleration(&self, i: usize) -> Vector3<f64> {
        self.exit_acceleration.get(i).copied().unwrap_or_else(Vector3::zeros)
    }

    /// q_a
    pub fn position_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.quadrotors.len(),
            self.quadrotors
                .iter()
                .flat_map(|q| q.position.iter().copied().collect::<Vec<_>>()),
        )
    }

    /// q̇_a
    pub fn velocity_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.quadrotors.len(),
            self.quadrotors
                .iter()
                .flat_map(|q| q.velocity.iter().copied().collect::<Vec<_>>()),
        )
    }
}

/// Checks every cable for a pole singularity.
pub fn check_degenerate(task: &TaskState) -> Result<()> {
    for (i, c) in task.cables.iter().enumerate() {
        if c.is_degenerate() {
            return Err(Error::Degenerate {
                cable: i,
                message: format!("inclination {:.3e} rad is on a pole of the cable chart", c.inclination),
            });
        }
        if !(c.length > 0.0) {
            return Err(Error::Degenerate {
                cable: i,
                message: format!("length {} m is not positive", c.length),
            });
        }
    }
    Ok(())
}
