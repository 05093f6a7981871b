//! Constrained multibody plant: quadrotors, winches and payload coupled by
//! taut, tension-only cables.
//!
//! Tensions are Lagrange multipliers chosen so every taut cable satisfies
//! `φ̈ + 2α φ̇ + α² φ = 0` with `φ = ‖p_I − p_B‖ − l`; a cable whose
//! multiplier would be negative goes slack instead (a small LCP). Bodies
//! resting on their supports (before takeoff) do not move until the net
//! force on them points up.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::joints_from_task;
use crate::model::{JointState, PayloadState, QuadrotorState, SystemDescription, TaskState, WinchState};

/// How much of the vehicle the plant resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Thrust vectors applied directly, attitudes frozen, ideal winches.
    Exact,
    /// Attitude dynamics, mixer saturation and lagged winches.
    Attitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub fidelity: Fidelity,
    /// Baumgarte pole (rad/s).
    pub baumgarte: f64,
    /// First-order winch lag (s); `None` makes `l̇ = r_d ω_cmd` exactly.
    pub winch_time_constant: Option<f64>,
    /// A taut cable shorter than `l` by this much (m) switches to slack.
    pub slack_tolerance: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            fidelity: Fidelity::Exact,
            baumgarte: 100.0,
            winch_time_constant: None,
            slack_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub time: f64,
    pub payload: PayloadState,
    pub quadrotors: Vec<QuadrotorState>,
    pub winches: Vec<WinchState>,
    pub taut: Vec<bool>,
    pub payload_supported: bool,
    pub quadrotor_supported: Vec<bool>,
}

impl PlantState {
    /// Rest state matching `task`, every cable taut.
    pub fn from_task(
        sys: &SystemDescription,
        task: &TaskState,
        attitudes: &[UnitQuaternion<f64>],
        supported: bool,
    ) -> Result<Self> {
        let n = sys.quadrotor_count();
        let joints = joints_from_task(sys, task, attitudes, &vec![Vector3::zeros(); n])?;
        Ok(Self {
            time: 0.0,
            payload: task.payload,
            quadrotors: joints.quadrotors,
            winches: joints.winches,
            taut: vec![true; sys.cable_count()],
            payload_supported: supported,
            quadrotor_supported: vec![supported; n],
        })
    }

    pub fn lengths(&self, sys: &SystemDescription) -> Vec<f64> {
        self.winches
            .iter()
            .enumerate()
            .map(|(i, w)| w.angle * sys.winch(i).drum_radius)
            .collect()
    }

    pub fn joints(&self) -> JointState {
        JointState {
            quadrotors: self.quadrotors.clone(),
            winches: self.winches.clone(),
            exit_velocity: Vec::new(),
            exit_acceleration: Vec::new(),
        }
    }

    pub fn airborne(&self) -> bool {
        !self.payload_supported && self.quadrotor_supported.iter().all(|s| !s)
    }
}

/// Per-quadrotor actuation held over a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Actuation {
    /// World-frame force at the frame origin; no moment.
    Force(Vector3<f64>),
    /// Collective along body z and body moment.
    Body { collective: f64, moment: Vector3<f64> },
}

impl Actuation {
    fn force(&self, attitude: &UnitQuaternion<f64>) -> Vector3<f64> {
        match self {
            Actuation::Force(f) => *f,
            Actuation::Body { collective, .. } => attitude * Vector3::z() * *collective,
        }
    }

    fn moment(&self) -> Vector3<f64> {
        match self {
            Actuation::Force(_) => Vector3::zeros(),
            Actuation::Body { moment, .. } => *moment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantInput {
    pub actuation: Vec<Actuation>,
    /// ω_cmd per winch (rad/s)
    pub winch_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Tensions at the start of the step (N).
    pub tensions: DVector<f64>,
    /// max |φ| over taut cables after the step (m)
    pub constraint_residual: f64,
    /// Cables that changed mode during the step.
    pub mode_changes: Vec<usize>,
    pub released: bool,
}

const BODY: usize = 13;

#[derive(Debug, Clone)]
struct Accelerations {
    payload_linear: Vector3<f64>,
    payload_angular: Vector3<f64>,
    quad_linear: Vec<Vector3<f64>>,
    quad_angular: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone)]
struct CableGeometry {
    u: Vector3<f64>,
    length: f64,
    d_dot: Vector3<f64>,
    r_exit: Vector3<f64>,
    r_anchor: Vector3<f64>,
}

pub struct Plant<'a> {
    sys: &'a SystemDescription,
    config: PlantConfig,
}

impl<'a> Plant<'a> {
    pub fn new(sys: &'a SystemDescription, config: PlantConfig) -> Self {
        Self { sys, config }
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    fn geometry(&self, s: &PlantState) -> Vec<CableGeometry> {
        let sys = self.sys;
        let r_p = s.payload.pose.rotation;
        let w_p = self.payload_omega(s);
        (0..sys.cable_count())
            .map(|i| {
                let q = &s.quadrotors[sys.owner(i)];
                let r_exit = q.attitude * sys.exit_point(i);
                let r_anchor = r_p * sys.payload().attachments.get(i).copied().unwrap_or_else(Vector3::zeros);
                let d = q.position + r_exit - s.payload.pose.translation - r_anchor;
                let d_dot = q.velocity + q.angular_velocity.cross(&r_exit) - s.payload.linear_velocity - w_p.cross(&r_anchor);
                let length = d.norm();
                CableGeometry {
                    u: d / length,
                    length,
                    d_dot,
                    r_exit,
                    r_anchor,
                }
            })
            .collect()
    }

    fn payload_omega(&self, s: &PlantState) -> Vector3<f64> {
        if self.sys.point_mass() {
            Vector3::zeros()
        } else {
            s.payload.angular_velocity
        }
    }

    fn length_rate(&self, s: &PlantState, i: usize) -> f64 {
        s.winches[i].rate * self.sys.winch(i).drum_radius
    }

    fn length_acceleration(&self, s: &PlantState, input: &PlantInput, i: usize) -> f64 {
        match self.config.winch_time_constant {
            Some(tau) => (input.winch_rates[i] - s.winches[i].rate) / tau * self.sys.winch(i).drum_radius,
            None => 0.0,
        }
    }

    fn accelerations(&self, s: &PlantState, geo: &[CableGeometry], input: &PlantInput, t: &DVector<f64>) -> Accelerations {
        let sys = self.sys;
        let g = sys.gravity();
        let n = sys.quadrotor_count();
        let mut quad_linear = vec![Vector3::zeros(); n];
        let mut quad_angular = vec![Vector3::zeros(); n];
        for j in 0..n {
            if s.quadrotor_supported[j] {
                continue;
            }
            let comp = sys.composite(j);
            let q = &s.quadrotors[j];
            let act = &input.actuation[j];
            let mut f = act.force(&q.attitude) + g * comp.mass;
            for &i in &comp.cables {
                f -= geo[i].u * t[i];
            }
            quad_linear[j] = f / comp.mass;
            if self.config.fidelity == Fidelity::Attitude {
                let r_inv = q.attitude.inverse();
                let w_b = r_inv * q.angular_velocity;
                let mut m = act.moment() - w_b.cross(&(comp.inertia * w_b)) + comp.com.cross(&(r_inv * g * comp.mass));
                for &i in &comp.cables {
                    m -= sys.exit_point(i).cross(&(r_inv * geo[i].u * t[i]));
                }
                let dw_b = comp.inertia.try_inverse().expect("composite inertia is positive definite") * m;
                quad_angular[j] = q.attitude * dw_b;
            }
        }
        let mut payload_linear = Vector3::zeros();
        let mut payload_angular = Vector3::zeros();
        if !s.payload_supported {
            let p = sys.payload();
            let mut f = Vector3::zeros();
            for (i, c) in geo.iter().enumerate() {
                f += c.u * t[i];
            }
            payload_linear = g + f / p.mass;
            if !sys.point_mass() {
                let r = s.payload.pose.rotation.to_rotation_matrix();
                let iw: Matrix3<f64> = r.matrix() * p.inertia * r.matrix().transpose();
                let w = s.payload.angular_velocity;
                let mut m = (r * p.com).cross(&(g * p.mass)) - w.cross(&(iw * w));
                for (i, c) in geo.iter().enumerate() {
                    m += c.r_anchor.cross(&(c.u * t[i]));
                }
                payload_angular = iw.try_inverse().expect("payload inertia is positive definite") * m;
            }
        }
        Accelerations {
            payload_linear,
            payload_angular,
            quad_linear,
            quad_angular,
        }
    }

    /// φ̈ for every cable under the given accelerations.
    fn constraint_acceleration(
        &self,
        s: &PlantState,
        geo: &[CableGeometry],
        input: &PlantInput,
        acc: &Accelerations,
    ) -> DVector<f64> {
        let sys = self.sys;
        let w_p = self.payload_omega(s);
        DVector::from_iterator(
            sys.cable_count(),
            (0..sys.cable_count()).map(|i| {
                let j = sys.owner(i);
                let q = &s.quadrotors[j];
                let c = &geo[i];
                let w_j = q.angular_velocity;
                let a_exit = acc.quad_linear[j] + acc.quad_angular[j].cross(&c.r_exit) + w_j.cross(&w_j.cross(&c.r_exit));
                let a_anchor = acc.payload_linear + acc.payload_angular.cross(&c.r_anchor) + w_p.cross(&w_p.cross(&c.r_anchor));
                let ud = c.u.dot(&c.d_dot);
                c.u.dot(&(a_exit - a_anchor)) + (c.d_dot.norm_squared() - ud * ud) / c.length
                    - self.length_acceleration(s, input, i)
            }),
        )
    }

    fn active(&self, s: &PlantState) -> Vec<usize> {
        (0..self.sys.cable_count())
            .filter(|&i| s.taut[i] && !(s.payload_supported && s.quadrotor_supported[self.sys.owner(i)]))
            .collect()
    }

    /// Tensions at `s` under `input`.
    pub fn tensions(&self, s: &PlantState, input: &PlantInput) -> Result<DVector<f64>> {
        let geo = self.geometry(s);
        self.solve_tensions(s, &geo, input)
    }

    fn solve_tensions(&self, s: &PlantState, geo: &[CableGeometry], input: &PlantInput) -> Result<DVector<f64>> {
        let m = self.sys.cable_count();
        let zero = DVector::zeros(m);
        let active = self.active(s);
        if active.is_empty() {
            return Ok(zero);
        }
        let base = self.constraint_acceleration(s, geo, input, &self.accelerations(s, geo, input, &zero));
        let mut k = DMatrix::zeros(m, m);
        for &c in &active {
            let mut e = DVector::zeros(m);
            e[c] = 1.0;
            let col = self.constraint_acceleration(s, geo, input, &self.accelerations(s, geo, input, &e)) - &base;
            k.set_column(c, &col);
        }
        let alpha = self.config.baumgarte;
        let target = DVector::from_iterator(
            m,
            (0..m).map(|i| {
                let phi = geo[i].length - s.winches[i].angle * self.sys.winch(i).drum_radius;
                let phi_dot = geo[i].u.dot(&geo[i].d_dot) - self.length_rate(s, i);
                -2.0 * alpha * phi_dot - alpha * alpha * phi
            }),
        );
        let scale = 1.0 + target.amax() + base.amax();
        for size in (1..=active.len()).rev() {
            for subset in active.iter().copied().combinations(size) {
                let ka = DMatrix::from_fn(size, size, |r, c| k[(subset[r], subset[c])]);
                let rhs = DVector::from_iterator(size, subset.iter().map(|&i| target[i] - base[i]));
                let Some(ta) = ka.lu().solve(&rhs) else { continue };
                if ta.iter().any(|&x| !x.is_finite() || x < -1e-9 * scale) {
                    continue;
                }
                let mut t = DVector::zeros(m);
                for (r, &i) in subset.iter().enumerate() {
                    t[i] = ta[r].max(0.0);
                }
                let phi_dd = &base + &k * &t;
                let ok = active
                    .iter()
                    .filter(|i| !subset.contains(i))
                    .all(|&i| phi_dd[i] <= target[i] + 1e-9 * scale);
                if ok {
                    return Ok(t);
                }
            }
        }
        // No cable can carry load consistently: all slack this instant.
        let ok = active.iter().all(|&i| base[i] <= target[i] + 1e-9 * scale);
        if ok {
            return Ok(zero);
        }
        Err(Error::ConstraintSolve {
            cables: active,
            residual: (0..m).map(|i| (base[i] - target[i]).abs()).fold(0.0, f64::max),
        })
    }

    fn pack(&self, s: &PlantState) -> DVector<f64> {
        let n = s.quadrotors.len();
        let m = s.winches.len();
        let mut y = DVector::zeros(BODY * (n + 1) + 2 * m);
        let put =
            |y: &mut DVector<f64>, o: usize, x: &Vector3<f64>, v: &Vector3<f64>, q: &UnitQuaternion<f64>, w: &Vector3<f64>| {
                y.fixed_rows_mut::<3>(o).copy_from(x);
                y.fixed_rows_mut::<3>(o + 3).copy_from(v);
                y.fixed_rows_mut::<4>(o + 6).copy_from(&q.as_ref().coords);
                y.fixed_rows_mut::<3>(o + 10).copy_from(w);
            };
        let p = &s.payload;
        put(
            &mut y,
            0,
            &p.pose.translation,
            &p.linear_velocity,
            &p.pose.rotation,
            &p.angular_velocity,
        );
        for (j, q) in s.quadrotors.iter().enumerate() {
            put(
                &mut y,
                BODY * (j + 1),
                &q.position,
                &q.velocity,
                &q.attitude,
                &q.angular_velocity,
            );
        }
        let o = BODY * (n + 1);
        for (i, w) in s.winches.iter().enumerate() {
            y[o + 2 * i] = w.angle;
            y[o + 2 * i + 1] = w.rate;
        }
        debug_assert_eq!(y.len(), o + 2 * m);
        y
    }

    fn unpack(&self, y: &DVector<f64>, template: &PlantState) -> PlantState {
        let mut s = template.clone();
        let get = |o: usize| {
            let v3 = |k: usize| Vector3::new(y[o + k], y[o + k + 1], y[o + k + 2]);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(y[o + 9], y[o + 6], y[o + 7], y[o + 8]));
            (v3(0), v3(3), q, v3(10))
        };
        let (x, v, q, w) = get(0);
        s.payload.pose.translation = x;
        s.payload.linear_velocity = v;
        s.payload.pose.rotation = q;
        s.payload.angular_velocity = w;
        for j in 0..s.quadrotors.len() {
            let (x, v, q, w) = get(BODY * (j + 1));
            let qs = &mut s.quadrotors[j];
            qs.position = x;
            qs.velocity = v;
            qs.attitude = q;
            qs.angular_velocity = w;
        }
        let o = BODY * (s.quadrotors.len() + 1);
        for i in 0..s.winches.len() {
            s.winches[i].angle = y[o + 2 * i];
            s.winches[i].rate = y[o + 2 * i + 1];
        }
        s
    }

    fn derivative(&self, s: &PlantState, input: &PlantInput) -> Result<(DVector<f64>, DVector<f64>)> {
        let geo = self.geometry(s);
        let t = self.solve_tensions(s, &geo, input)?;
        let acc = self.accelerations(s, &geo, input, &t);
        let n = s.quadrotors.len();
        let mut dy = DVector::zeros(BODY * (n + 1) + 2 * s.winches.len());
        let put = |dy: &mut DVector<f64>,
                   o: usize,
                   v: &Vector3<f64>,
                   a: &Vector3<f64>,
                   q: &UnitQuaternion<f64>,
                   w: &Vector3<f64>,
                   dw: &Vector3<f64>| {
            dy.fixed_rows_mut::<3>(o).copy_from(v);
            dy.fixed_rows_mut::<3>(o + 3).copy_from(a);
            let qd = Quaternion::from_imag(*w) * q.into_inner() * 0.5;
            dy.fixed_rows_mut::<4>(o + 6).copy_from(&qd.coords);
            dy.fixed_rows_mut::<3>(o + 10).copy_from(dw);
        };
        let p = &s.payload;
        if !s.payload_supported {
            put(
                &mut dy,
                0,
                &p.linear_velocity,
                &acc.payload_linear,
                &p.pose.rotation,
                &self.payload_omega(s),
                &acc.payload_angular,
            );
        }
        for (j, q) in s.quadrotors.iter().enumerate() {
            if !s.quadrotor_supported[j] {
                put(
                    &mut dy,
                    BODY * (j + 1),
                    &q.velocity,
                    &acc.quad_linear[j],
                    &q.attitude,
                    &q.angular_velocity,
                    &acc.quad_angular[j],
                );
            }
        }
        let o = BODY * (n + 1);
        for i in 0..s.winches.len() {
            dy[o + 2 * i] = s.winches[i].rate;
            dy[o + 2 * i + 1] = match self.config.winch_time_constant {
                Some(tau) => (input.winch_rates[i] - s.winches[i].rate) / tau,
                None => 0.0,
            };
        }
        Ok((dy, t))
    }

    /// Net vertical force on each supported body with the current tensions;
    /// positive releases it.
    fn release_supports(&self, s: &mut PlantState, input: &PlantInput) -> Result<bool> {
        if s.airborne() {
            return Ok(false);
        }
        let sys = self.sys;
        let geo = self.geometry(s);
        let t = self.solve_tensions(s, &geo, input)?;
        let g = sys.gravity();
        let mut released = false;
        for j in 0..sys.quadrotor_count() {
            if !s.quadrotor_supported[j] {
                continue;
            }
            let comp = sys.composite(j);
            let mut f = input.actuation[j].force(&s.quadrotors[j].attitude) + g * comp.mass;
            for &i in &comp.cables {
                f -= geo[i].u * t[i];
            }
            if f.z > 0.0 {
                s.quadrotor_supported[j] = false;
                released = true;
            }
        }
        if s.payload_supported {
            // Tensions with the payload still held.
            let t = self.solve_tensions(s, &geo, input)?;
            let mut f = g * sys.payload().mass;
            for (i, c) in geo.iter().enumerate() {
                f += c.u * t[i];
            }
            if f.z > 0.0 {
                s.payload_supported = false;
                released = true;
            }
        }
        Ok(released)
    }

    /// Signed constraint values φ_i (m).
    pub fn constraint_values(&self, s: &PlantState) -> Vec<f64> {
        self.geometry(s)
            .iter()
            .enumerate()
            .map(|(i, c)| c.length - s.winches[i].angle * self.sys.winch(i).drum_radius)
            .collect()
    }

    /// One RK4 step of length `dt` with the input held.
    pub fn step(&self, state: &PlantState, input: &PlantInput, dt: f64) -> Result<(PlantState, StepInfo)> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let sys = self.sys;
        if input.actuation.len() != sys.quadrotor_count() || input.winch_rates.len() != sys.cable_count() {
            return Err(Error::Dimension("plant input does not match the system".into()));
        }
        let mut s = state.clone();
        let released = self.release_supports(&mut s, input)?;
        if self.config.winch_time_constant.is_none() {
            for (w, &r) in s.winches.iter_mut().zip(&input.winch_rates) {
                w.rate = r;
            }
        }
        let y0 = self.pack(&s);
        let (k1, tensions) = self.derivative(&s, input)?;
        let (k2, _) = self.derivative(&self.unpack(&(&y0 + &k1 * (dt / 2.0)), &s), input)?;
        let (k3, _) = self.derivative(&self.unpack(&(&y0 + &k2 * (dt / 2.0)), &s), input)?;
        let (k4, _) = self.derivative(&self.unpack(&(&y0 + &k3 * dt), &s), input)?;
        let y = &y0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let mut next = self.unpack(&y, &s);
        next.time = state.time + dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConstraintSolve {
                cables: (0..sys.cable_count()).collect(),
                residual: f64::NAN,
            });
        }
        // Slack/taut switching with hysteresis.
        let geo = self.geometry(&next);
        let phi = self.constraint_values(&next);
        let mut mode_changes = Vec::new();
        for i in 0..sys.cable_count() {
            let phi_dot = geo[i].u.dot(&geo[i].d_dot) - self.length_rate(&next, i);
            if next.taut[i] && phi[i] < -self.config.slack_tolerance {
                next.taut[i] = false;
                mode_changes.push(i);
            } else if !next.taut[i] && phi[i] >= 0.0 && phi_dot >= 0.0 {
                next.taut[i] = true;
                mode_changes.push(i);
            }
        }
        let constraint_residual = (0..sys.cable_count())
            .filter(|&i| next.taut[i])
            .map(|i| phi[i].abs())
            .fold(0.0, f64::max);
        Ok((
            next,
            StepInfo {
                tensions,
                constraint_residual,
                mode_changes,
                released,
            },
        ))
    }

    /// Kinetic plus gravitational potential energy (J).
    pub fn energy(&self, s: &PlantState) -> f64 {
        let sys = self.sys;
        let g = sys.gravity();
        let p = sys.payload();
        let mut e = 0.5 * p.mass * s.payload.linear_velocity.norm_squared() - p.mass * g.dot(&s.payload.pose.translation);
        if !sys.point_mass() {
            let r = s.payload.pose.rotation.to_rotation_matrix();
            let iw = r.matrix() * p.inertia * r.matrix().transpose();
            let w = s.payload.angular_velocity;
            e += 0.5 * w.dot(&(iw * w)) - p.mass * g.dot(&(r * p.com));
        }
        for (j, q) in s.quadrotors.iter().enumerate() {
            let comp = sys.composite(j);
            let w_b = q.attitude.inverse() * q.angular_velocity;
            e += 0.5 * comp.mass * q.velocity.norm_squared() + 0.5 * w_b.dot(&(comp.inertia * w_b))
                - comp.mass * g.dot(&(q.position + q.attitude * comp.com));
        }
        e
    }
}
