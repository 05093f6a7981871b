//! Wrench feasibility: propeller space P → thrust space H → tension space T →
//! available wrench set W_a, the capacity margin γ, and manipulability.

mod manipulability;
mod sweep;
mod zonotope;

pub use manipulability::{manipulability, ManipulabilityReport};
pub use sweep::{
    apply_axis, format_number, monotonicity, sweep, thread_count, CellDetail, Metric, Monotonicity, SweepAxis, SweepCell,
    SweepRow, SweepSpec, SweepTable, Trend, THREADS_ENV,
};
pub use zonotope::{box_image, zonotope, ConvexPolytope, Halfspace, IntervalBox, MAX_DIM, MAX_VERTEX_GENERATORS};

use nalgebra::{DVector, Matrix3, Rotation3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{mixer_matrix, payload_bias, wrench_matrix};
use crate::error::{Error, Result};
use crate::model::{check_degenerate, Pose, QuadrotorParams, SystemDescription, TaskState};

/// Fixed-length cables through the quadrotor COM (ACTS) or winch-actuated
/// cables with their mounting offsets (VACTS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Acts,
    Vacts,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Acts => "acts",
            Variant::Vacts => "vacts",
        }
    }
}

/// The classical counterpart of a system: all COM offsets, winch mounts and
/// exit points zeroed, masses kept.
pub fn acts_equivalent(sys: &SystemDescription) -> Result<SystemDescription> {
    let mut spec = sys.spec().clone();
    for q in &mut spec.quadrotors {
        q.com = Vector3::zeros();
    }
    for w in &mut spec.winches {
        w.mount = Pose::identity();
        w.exit_point = Vector3::zeros();
        w.com = Vector3::zeros();
    }
    SystemDescription::new(spec)
}

/// Collective limits of one quadrotor at a fixed moment demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrustLimits {
    /// f̄_z
    pub max: f64,
    pub min: f64,
    /// Propeller thrusts at the maximum.
    pub maximizer: [f64; 4],
    pub minimizer: [f64; 4],
}

/// Largest and smallest collective with the three moment rows fixed.
///
/// With the moments fixed the feasible allocations form the line
/// `f = p + (f_z/4)·[1 1 1 1]`, `p = M⁻¹[0, m]`, so the LP optimum is where
/// the first propeller reaches its bound.
pub fn max_collective_thrust(quad: &QuadrotorParams, moments: &Vector3<f64>) -> Result<ThrustLimits> {
    let inv = mixer_matrix(quad)
        .try_inverse()
        .expect("mixer matrix is invertible for r > 0 and k_m/k_f > 0");
    let p = inv * Vector4::new(0.0, moments.x, moments.y, moments.z);
    let max = 4.0 * p.iter().map(|pk| quad.thrust_max - pk).fold(f64::INFINITY, f64::min);
    let min = 4.0 * p.iter().map(|pk| quad.thrust_min - pk).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * quad.thrust_max.max(1.0);
    if min > max + tol {
        return Err(Error::InfeasibleMoment {
            quadrotor: usize::MAX,
            demand: [moments.x, moments.y, moments.z],
        });
    }
    let max = max.max(min);
    let at = |fz: f64| {
        let mut f = [0.0; 4];
        for k in 0..4 {
            f[k] = p[k] + fz / 4.0;
        }
        f
    };
    Ok(ThrustLimits {
        max,
        min,
        maximizer: at(max),
        minimizer: at(min),
    })
}

/// Options of the tension-bound computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Include the winch torque bound `τ̄_w·safety/r_d`.
    pub winch_limit: bool,
    /// Yaw of the quasi-static attitude (rad).
    pub yaw: f64,
    pub max_iterations: usize,
    /// Fixed-point tolerance on the tension (N).
    pub tolerance: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            winch_limit: true,
            yaw: 0.0,
            max_iterations: 20,
            tolerance: 1e-6,
        }
    }
}

/// Admissible tension interval of one cable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensionBound {
    pub min: f64,
    pub max: f64,
    /// Largest tension the owner's propellers can hold statically.
    pub thrust_limit: f64,
    /// `τ̄_w·safety/r_d`, when enabled.
    pub winch_limit: Option<f64>,
    pub iterations: usize,
    /// Body moment demand at `thrust_limit`.
    pub moment: [f64; 3],
    /// Collective interval at `thrust_limit`.
    pub collective: [f64; 2],
}

/// Rotation whose z axis is `z` and whose heading is `yaw`.
pub fn attitude_from_thrust(z: &Vector3<f64>, yaw: f64) -> Result<UnitQuaternion<f64>> {
    let norm = z.norm();
    if !(norm > 1e-9) {
        return Err(Error::ZeroThrust { norm });
    }
    let zb = z / norm;
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut yb = zb.cross(&heading);
    if yb.norm() < 1e-9 {
        // Thrust along the heading: fall back to the world y axis.
        yb = zb.cross(&Vector3::y()).cross(&zb);
    }
    let yb = yb.normalize();
    let xb = yb.cross(&zb);
    let m = Matrix3::from_columns(&[xb, yb, zb]);
    Ok(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)))
}

/// Static moment demand on quadrotor `j` when it supplies `force` and its
/// cables pull with `pulls` (world frame, one per owned cable).
fn static_moment(
    sys: &SystemDescription,
    j: usize,
    attitude: &UnitQuaternion<f64>,
    pulls: &[(usize, Vector3<f64>)],
) -> Vector3<f64> {
    let comp = sys.composite(j);
    let inv = attitude.inverse();
    let mut m = -comp.com.cross(&(inv * sys.gravity() * comp.mass));
    for (i, pull) in pulls {
        m += sys.exit_point(*i).cross(&(inv * pull));
    }
    m
}

/// Tension interval `[0, t_max]` of cable `i` at a quasi-static state.
///
/// The thrust-derived bound is the largest `t` with
/// `‖−m_j g + t Σu‖ = f̄_z(m(t))`, iterated from `t = 0` because the moment
/// demand depends on the tension. Cables that share a quadrotor are assumed
/// to carry equal tension.
pub fn tension_bounds(sys: &SystemDescription, i: usize, task: &TaskState, opts: &BoundOptions) -> Result<TensionBound> {
    check_degenerate(task)?;
    let j = sys.owner(i);
    let comp = sys.composite(j);
    let quad = sys.quadrotor(j);
    let weight = -sys.gravity() * comp.mass;
    let dirs: Vec<(usize, Vector3<f64>)> = comp
        .cables
        .iter()
        .map(|&k| (k, task.payload.pose.rotation * task.cables[k].unit_vector()))
        .collect();
    let u_sum: Vector3<f64> = dirs.iter().map(|(_, u)| u).sum();
    let demand = |t: f64| -> Result<(Vector3<f64>, ThrustLimits)> {
        let force = weight + u_sum * t;
        let att = attitude_from_thrust(&force, opts.yaw)?;
        let pulls: Vec<_> = dirs.iter().map(|(k, u)| (*k, u * t)).collect();
        let m = static_moment(sys, j, &att, &pulls);
        let lim = max_collective_thrust(quad, &m).map_err(|e| match e {
            Error::InfeasibleMoment { demand, .. } => Error::InfeasibleMoment { quadrotor: j, demand },
            other => other,
        })?;
        Ok((m, lim))
    };
    // Largest root of ‖w + t U‖ = F.
    let solve = |f: f64| -> f64 {
        let a = u_sum.norm_squared();
        let b = weight.dot(&u_sum);
        let c = weight.norm_squared() - f * f;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return 0.0;
        }
        ((-b + disc.sqrt()) / a).max(0.0)
    };
    // Collective headroom at tension t; an infeasible moment counts as none.
    let headroom = |t: f64| -> Result<f64> {
        match demand(t) {
            Ok((_, l)) => Ok(l.max - (weight + u_sum * t).norm()),
            Err(Error::InfeasibleMoment { .. }) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    };
    let mut t = 0.0;
    let mut iterations = 0;
    let mut converged = headroom(0.0)? < 0.0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let Ok((_, lim)) = demand(t) else { break };
        let next = solve(lim.max);
        converged = (next - t).abs() < opts.tolerance;
        t = next;
    }
    if !converged || headroom(t)? < -opts.tolerance {
        // The plain iteration oscillates when the moment demand grows fast
        // with t. Fall back to the largest sign change of the headroom.
        t = largest_root(&headroom, solve(4.0 * quad.thrust_max), opts.tolerance, &mut iterations)?;
    }
    let (moment, lim) = demand(t)?;
    let w = sys.winch(i);
    let winch_limit = opts.winch_limit.then(|| w.stall_torque * w.safety_fraction / w.drum_radius);
    let max = winch_limit.map_or(t, |wl| t.min(wl));
    Ok(TensionBound {
        min: 0.0,
        max,
        thrust_limit: t,
        winch_limit,
        iterations,
        moment: [moment.x, moment.y, moment.z],
        collective: [lim.min, lim.max],
    })
}

/// Largest `t` in `[0, hi]` with `g(t) ≥ 0`, by a coarse scan and bisection.
fn largest_root(g: &dyn Fn(f64) -> Result<f64>, hi: f64, tol: f64, iterations: &mut usize) -> Result<f64> {
    const SCAN: usize = 64;
    if g(0.0)? < 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut up = hi;
    for k in (1..=SCAN).rev() {
        let t = hi * k as f64 / SCAN as f64;
        if g(t)? >= 0.0 {
            lo = t;
            up = (hi * (k + 1) as f64 / SCAN as f64).min(hi);
            break;
        }
        up = t;
    }
    if lo >= up {
        return Ok(lo);
    }
    while up - lo > tol {
        *iterations += 1;
        if *iterations > 200 {
            return Err(Error::NoConvergence {
                iterations: *iterations,
                last: lo,
            });
        }
        let mid = 0.5 * (lo + up);
        if g(mid)? >= 0.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    Ok(lo)
}

/// Options for [`capacity_margin`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityOptions {
    pub bounds: BoundOptions,
    /// Task wrench; defaults to the static payload wrench `−m_p g` (plus its
    /// COM moment in rigid mode).
    pub task_wrench: Option<Vec<f64>>,
    /// Moment rows are divided by this length (m) in rigid-payload mode.
    pub characteristic_length: f64,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        Self {
            bounds: BoundOptions::default(),
            task_wrench: None,
            characteristic_length: 1.0,
        }
    }
}

/// γ and the spaces it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub variant: Variant,
    /// γ (N, or scaled wrench units in rigid mode)
    pub gamma: f64,
    pub binding_facet: usize,
    pub task_wrench: Vec<f64>,
    /// P: one 4-propeller box per quadrotor.
    pub propeller_space: Vec<IntervalBox>,
    /// H: collective interval per quadrotor at its bound tension.
    pub thrust_space: Vec<IntervalBox>,
    /// T
    pub tension_space: IntervalBox,
    pub tension_bounds: Vec<TensionBound>,
    /// W_a
    pub wrench_space: ConvexPolytope,
}

/// Capacity margin of `sys` (as the given variant) at a task configuration.
pub fn capacity_margin(
    sys: &SystemDescription,
    task: &TaskState,
    variant: Variant,
    opts: &CapacityOptions,
) -> Result<CapacityReport> {
    let owned;
    let (sys, winch_limit) = match variant {
        Variant::Vacts => (sys, opts.bounds.winch_limit),
        Variant::Acts => {
            owned = acts_equivalent(sys)?;
            (&owned, false)
        }
    };
    let bopts = BoundOptions {
        winch_limit,
        ..opts.bounds
    };
    let mut bounds = Vec::with_capacity(sys.cable_count());
    for i in 0..sys.cable_count() {
        bounds.push(tension_bounds(sys, i, task, &bopts)?);
    }
    let tension_space = IntervalBox::new(bounds.iter().map(|b| b.min).collect(), bounds.iter().map(|b| b.max).collect())?;
    let mut w = wrench_matrix(sys, task);
    let scale = if sys.point_mass() {
        1.0
    } else {
        1.0 / opts.characteristic_length
    };
    if !sys.point_mass() {
        w.rows_mut(3, 3).scale_mut(scale);
    }
    let wrench_space = box_image(&w, &tension_space)?;
    let mut wt = match &opts.task_wrench {
        Some(v) => {
            if v.len() != w.nrows() {
                return Err(Error::Dimension(format!(
                    "task wrench has {} entries, expected {}",
                    v.len(),
                    w.nrows()
                )));
            }
            DVector::from_column_slice(v)
        }
        None => payload_bias(sys, &at_rest(task), None)?,
    };
    if !sys.point_mass() && opts.task_wrench.is_none() {
        wt.rows_mut(3, 3).scale_mut(scale);
    }
    let (gamma, binding_facet) = wrench_space.signed_distance(&wt);
    let propeller_space = (0..sys.quadrotor_count())
        .map(|j| {
            let q = sys.quadrotor(j);
            IntervalBox::new(vec![q.thrust_min; 4], vec![q.thrust_max; 4])
        })
        .collect::<Result<Vec<_>>>()?;
    let thrust_space = (0..sys.quadrotor_count())
        .map(|j| {
            let b = &bounds[sys.composite(j).cables[0]];
            IntervalBox::new(vec![b.collective[0]], vec![b.collective[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CapacityReport {
        variant,
        gamma,
        binding_facet,
        task_wrench: wt.iter().copied().collect(),
        propeller_space,
        thrust_space,
        tension_space,
        tension_bounds: bounds,
        wrench_space,
    })
}

fn at_rest(task: &TaskState) -> TaskState {
    let mut t = task.clone();
    t.payload.linear_velocity = Vector3::zeros();
    t.payload.angular_velocity = Vector3::zeros();
    t
}
