//! System-description file format (TOML with unit-suffixed quantities).

use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::units::{self, Q, QV};
use super::{CableCoord, PayloadParams, PayloadState, Pose, QuadrotorParams, SystemDescription, TaskState, WinchParams};
use crate::error::{Error, Result};

/// Raw (validated-on-construction) system parameters in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub quadrotors: Vec<QuadrotorParams>,
    pub winches: Vec<WinchParams>,
    pub payload: PayloadParams,
    pub gravity: Vector3<f64>,
    pub point_mass: bool,
    pub configuration: Option<NominalConfiguration>,
}

/// Nominal geometry used by checks, sweeps and scenarios when none is given.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalConfiguration {
    pub payload_position: Vector3<f64>,
    pub payload_attitude: UnitQuaternion<f64>,
    pub azimuths: Vec<f64>,
    pub inclinations: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl NominalConfiguration {
    /// Task state at rest in this configuration.
    pub fn task_state(&self) -> TaskState {
        TaskState {
            payload: PayloadState {
                pose: Pose::new(self.payload_position, self.payload_attitude),
                ..Default::default()
            },
            cables: self
                .azimuths
                .iter()
                .zip(&self.inclinations)
                .zip(&self.lengths)
                .map(|((&a, &i), &l)| CableCoord::new(a, i, l))
                .collect(),
        }
    }
}

/// Reads and validates a system-description file.
pub fn load_system(path: impl AsRef<Path>) -> Result<SystemDescription> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_system(&text)
}

/// Parses and validates a system description from text.
pub fn parse_system(text: &str) -> Result<SystemDescription> {
    let raw: RawSystem = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    SystemDescription::new(raw.into_spec()?)
}

/// Writes a description back in the same format, all quantities in SI.
pub fn serialize_system(sys: &SystemDescription) -> String {
    let spec = sys.spec();
    let out = OutSystem {
        point_mass: spec.point_mass,
        gravity: spec.gravity.into(),
        payload: OutPayload {
            mass: spec.payload.mass,
            com: spec.payload.com.into(),
            inertia: rows(&spec.payload.inertia),
            attachments: spec.payload.attachments.iter().map(|&a| a.into()).collect(),
        },
        quadrotor: spec
            .quadrotors
            .iter()
            .map(|q| OutQuad {
                mass: q.mass,
                com: q.com.into(),
                inertia: rows(&q.inertia),
                arm_length: q.arm_length,
                k_f: q.thrust_coefficient,
                k_m: q.drag_coefficient,
                thrust_min: q.thrust_min,
                thrust_max: q.thrust_max,
            })
            .collect(),
        winch: spec
            .winches
            .iter()
            .map(|w| {
                let q = w.mount.rotation.quaternion();
                OutWinch {
                    owner: w.owner,
                    mass: w.mass,
                    drum_radius: w.drum_radius,
                    inertia: rows(&w.inertia),
                    mount_translation: w.mount.translation.into(),
                    mount_quaternion: [q.w, q.i, q.j, q.k],
                    exit_point: w.exit_point.into(),
                    com: w.com.into(),
                    stall_torque: w.stall_torque,
                    max_rate: w.max_rate,
                    safety_fraction: w.safety_fraction,
                }
            })
            .collect(),
        configuration: spec.configuration.as_ref().map(|c| {
            let q = c.payload_attitude.quaternion();
            OutConfiguration {
                payload_position: c.payload_position.into(),
                payload_quaternion: [q.w, q.i, q.j, q.k],
                azimuths: c.azimuths.clone(),
                inclinations: c.inclinations.clone(),
                lengths: c.lengths.clone(),
            }
        }),
    };
    toml::to_string(&out).expect("system description serializes")
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

// ---------------------------------------------------------------------------
// Input schema

#[derive(Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Full(Vec<Vec<f64>>),
    Diagonal(Vec<f64>),
}

impl RawMatrix {
    fn into_matrix(self, field: &str) -> Result<Matrix3<f64>> {
        match self {
            RawMatrix::Diagonal(d) if d.len() == 3 => Ok(Matrix3::from_diagonal(&Vector3::new(d[0], d[1], d[2]))),
            RawMatrix::Full(r) if r.len() == 3 && r.iter().all(|row| row.len() == 3) => Ok(Matrix3::from_fn(|i, j| r[i][j])),
            _ => Err(Error::invariant(field, "expected a 3-element diagonal or a 3×3 row list")),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawAttachments {
    List(Vec<QV<units::Length>>),
    Count(usize),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(default = "default_true")]
    point_mass: bool,
    gravity: Option<QV<units::Length>>,
    payload: RawPayload,
    #[serde(rename = "quadrotor", default)]
    quadrotors: Vec<RawQuad>,
    #[serde(rename = "winch", default)]
    winches: Vec<RawWinch>,
    configuration: Option<RawConfiguration>,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPayload {
    mass: Q<units::Mass>,
    com: Option<QV<units::Length>>,
    inertia: Option<RawMatrix>,
    /// Either explicit points or a cable count (all at the payload origin).
    attachments: RawAttachments,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuad {
    #[serde(default = "one")]
    count: usize,
    mass: Q<units::Mass>,
    com: Option<QV<units::Length>>,
    inertia: RawMatrix,
    arm_length: Q<units::Length>,
    k_f: f64,
    k_m: f64,
    thrust_min: Option<Q<units::Force>>,
    thrust_max: Q<units::Force>,
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWinch {
    owner: usize,
    mass: Q<units::Mass>,
    drum_radius: Q<units::Length>,
    inertia: RawMatrix,
    mount_translation: Option<QV<units::Length>>,
    /// [w, x, y, z]
    mount_quaternion: Option<[f64; 4]>,
    /// Rotation about the quadrotor z axis, alternative to `mount_quaternion`.
    mount_rotz: Option<Q<units::Angle>>,
    exit_point: QV<units::Length>,
    com: Option<QV<units::Length>>,
    stall_torque: Q<units::Torque>,
    max_rate: Q<units::AngularRate>,
    safety_fraction: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfiguration {
    payload_position: Option<QV<units::Length>>,
    payload_quaternion: Option<[f64; 4]>,
    azimuths: QV<units::Angle>,
    inclinations: QV<units::Angle>,
    lengths: QV<units::Length>,
}

fn vec3(v: Option<QV<units::Length>>, field: &str) -> Result<Vector3<f64>> {
    match v {
        None => Ok(Vector3::zeros()),
        Some(QV(v, _)) if v.len() == 3 => Ok(Vector3::new(v[0], v[1], v[2])),
        Some(QV(v, _)) => Err(Error::invariant(field, format!("expected 3 components, got {}", v.len()))),
    }
}

fn quaternion(q: [f64; 4], field: &str) -> Result<UnitQuaternion<f64>> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = raw.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invariant(field, "quaternion has zero norm"));
    }
    // Keep already-normalised input bit-exact so serialisation round-trips.
    if (norm - 1.0).abs() <= 1e-12 {
        Ok(UnitQuaternion::new_unchecked(raw))
    } else {
        Ok(UnitQuaternion::from_quaternion(raw))
    }
}

impl RawSystem {
    fn into_spec(self) -> Result<SystemSpec> {
        let gravity = match self.gravity {
            None => Vector3::new(0.0, 0.0, -9.81),
            some => vec3(some, "gravity")?,
        };
        let attachments = match self.payload.attachments {
            RawAttachments::Count(m) => vec![Vector3::zeros(); m],
            RawAttachments::List(list) => list
                .into_iter()
                .enumerate()
                .map(|(i, v)| vec3(Some(v), &format!("payload.attachments[{i}]")))
                .collect::<Result<_>>()?,
        };
        let payload = PayloadParams {
            mass: self.payload.mass.0,
            com: vec3(self.payload.com, "payload.com")?,
            inertia: match self.payload.inertia {
                Some(m) => m.into_matrix("payload.inertia")?,
                None => Matrix3::zeros(),
            },
            attachments,
        };
        let mut quadrotors = Vec::new();
        for (k, q) in self.quadrotors.into_iter().enumerate() {
            let field = format!("quadrotor[{k}]");
            let params = QuadrotorParams {
                mass: q.mass.0,
                com: vec3(q.com, &format!("{field}.com"))?,
                inertia: q.inertia.into_matrix(&format!("{field}.inertia"))?,
                arm_length: q.arm_length.0,
                thrust_coefficient: q.k_f,
                drag_coefficient: q.k_m,
                thrust_min: q.thrust_min.map(|t| t.0).unwrap_or(0.0),
                thrust_max: q.thrust_max.0,
            };
            if q.count == 0 {
                return Err(Error::invariant(format!("{field}.count"), "must be at least 1"));
            }
            for _ in 0..q.count {
                quadrotors.push(params.clone());
            }
        }
        let mut winches = Vec::new();
        for (i, w) in self.winches.into_iter().enumerate() {
            let field = format!("winch[{i}]");
            let rotation = match (w.mount_quaternion, w.mount_rotz) {
                (Some(_), Some(_)) => {
                    return Err(Error::invariant(
                        format!("{field}.mount_rotz"),
                        "give either mount_quaternion or mount_rotz, not both",
                    ))
                }
                (Some(q), None) => quaternion(q, &format!("{field}.mount_quaternion"))?,
                (None, Some(a)) => UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a.0),
                (None, None) => UnitQuaternion::identity(),
            };
            winches.push(WinchParams {
                owner: w.owner,
                mass: w.mass.0,
                drum_radius: w.drum_radius.0,
                inertia: w.inertia.into_matrix(&format!("{field}.inertia"))?,
                mount: Pose::new(vec3(w.mount_translation, &format!("{field}.mount_translation"))?, rotation),
                exit_point: vec3(Some(w.exit_point), &format!("{field}.exit_point"))?,
                com: vec3(w.com, &format!("{field}.com"))?,
                stall_torque: w.stall_torque.0,
                max_rate: w.max_rate.0,
                safety_fraction: w.safety_fraction.unwrap_or(0.7),
            });
        }
        let configuration = match self.configuration {
            None => None,
            Some(c) => Some(NominalConfiguration {
                payload_position: vec3(c.payload_position, "configuration.payload_position")?,
                payload_attitude: match c.payload_quaternion {
                    Some(q) => quaternion(q, "configuration.payload_quaternion")?,
                    None => UnitQuaternion::identity(),
                },
                azimuths: c.azimuths.0,
                inclinations: c.inclinations.0,
                lengths: c.lengths.0,
            }),
        };
        Ok(SystemSpec {
            quadrotors,
            winches,
            payload,
            gravity,
            point_mass: self.point_mass,
            configuration,
        })
    }
}

// ---------------------------------------------------------------------------
// Output schema (SI numbers only, same keys as the input)

#[derive(Serialize)]
struct OutSystem {
    point_mass: bool,
    gravity: [f64; 3],
    payload: OutPayload,
    quadrotor: Vec<OutQuad>,
    winch: Vec<OutWinch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    configuration: Option<OutConfiguration>,
}

#[derive(Serialize)]
struct OutPayload {
    mass: f64,
    com: [f64; 3],
    inertia: [[f64; 3]; 3],
    attachments: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct OutQuad {
    mass: f64,
    com: [f64; 3],
    inertia: [[f64; 3]; 3],
    arm_length: f64,
    k_f: f64,
    k_m: f64,
    thrust_min: f64,
    thrust_max: f64,
}

#[derive(Serialize)]
struct OutWinch {
    owner: usize,
    mass: f64,
    drum_radius: f64,
    inertia: [[f64; 3]; 3],
    mount_translation: [f64; 3],
    mount_quaternion: [f64; 4],
    exit_point: [f64; 3],
    com: [f64; 3],
    stall_torque: f64,
    max_rate: f64,
    safety_fraction: f64,
}

#[derive(Serialize)]
struct OutConfiguration {
    payload_position: [f64; 3],
    payload_quaternion: [f64; 4],
    azimuths: Vec<f64>,
    inclinations: Vec<f64>,
    lengths: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Validation

fn is_spd(m: &Matrix3<f64>) -> bool {
    let sym = (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0);
    sym && m.cholesky().is_some()
}

pub(super) fn validate(spec: &SystemSpec) -> Result<()> {
    let n = spec.quadrotors.len();
    let m = spec.winches.len();
    if n == 0 {
        return Err(Error::invariant("quadrotor", "at least one quadrotor is required"));
    }
    if m < n {
        return Err(Error::invariant(
            "winch",
            format!("cable count m = {m} must be at least the quadrotor count n = {n}"),
        ));
    }
    for (j, q) in spec.quadrotors.iter().enumerate() {
        let f = |name: &str| format!("quadrotor[{j}].{name}");
        if !(q.mass > 0.0) {
            return Err(Error::invariant(f("mass"), format!("{} must be > 0", q.mass)));
        }
        if !(q.thrust_coefficient > 0.0) {
            return Err(Error::invariant(f("k_f"), format!("{} must be > 0", q.thrust_coefficient)));
        }
        if !(q.drag_coefficient > 0.0) {
            return Err(Error::invariant(f("k_m"), format!("{} must be > 0", q.drag_coefficient)));
        }
        if !(q.arm_length > 0.0) {
            return Err(Error::invariant(f("arm_length"), format!("{} must be > 0", q.arm_length)));
        }
        if !(q.thrust_min >= 0.0 && q.thrust_min < q.thrust_max) {
            return Err(Error::invariant(
                f("thrust_max"),
                format!("need 0 ≤ thrust_min ({}) < thrust_max ({})", q.thrust_min, q.thrust_max),
            ));
        }
        if !is_spd(&q.inertia) {
            return Err(Error::invariant(f("inertia"), "must be symmetric positive-definite"));
        }
        let owned = spec.winches.iter().filter(|w| w.owner == j).count();
        if !(1..=2).contains(&owned) {
            return Err(Error::invariant(
                f("winches"),
                format!("carries {owned} winches; each quadrotor must carry 1 or 2"),
            ));
        }
    }
    for (i, w) in spec.winches.iter().enumerate() {
        let f = |name: &str| format!("winch[{i}].{name}");
        if w.owner >= n {
            return Err(Error::invariant(
                f("owner"),
                format!("{} is not a quadrotor index (< {n})", w.owner),
            ));
        }
        if !(w.mass >= 0.0) {
            return Err(Error::invariant(f("mass"), format!("{} must be ≥ 0", w.mass)));
        }
        if !(w.drum_radius > 0.0) {
            return Err(Error::invariant(f("drum_radius"), format!("{} must be > 0", w.drum_radius)));
        }
        if !(w.stall_torque > 0.0) {
            return Err(Error::invariant(f("stall_torque"), format!("{} must be > 0", w.stall_torque)));
        }
        if !(w.max_rate > 0.0) {
            return Err(Error::invariant(f("max_rate"), format!("{} must be > 0", w.max_rate)));
        }
        if !(w.safety_fraction > 0.0 && w.safety_fraction <= 1.0) {
            return Err(Error::invariant(
                f("safety_fraction"),
                format!("{} must lie in (0, 1]", w.safety_fraction),
            ));
        }
        let sym = (w.inertia - w.inertia.transpose()).abs().max() <= 1e-12 * w.inertia.abs().max().max(1.0);
        if !sym || w.inertia.diagonal().iter().any(|&d| d < 0.0) {
            return Err(Error::invariant(f("inertia"), "must be symmetric with non-negative diagonal"));
        }
        if (w.mount.rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invariant(f("mount_quaternion"), "quaternion norm must be 1"));
        }
    }
    let p = &spec.payload;
    if !(p.mass > 0.0) {
        return Err(Error::invariant("payload.mass", format!("{} must be > 0", p.mass)));
    }
    if p.attachments.len() != m {
        return Err(Error::invariant(
            "payload.attachments",
            format!("{} attachment points for {m} cables", p.attachments.len()),
        ));
    }
    if !spec.point_mass && !is_spd(&p.inertia) {
        return Err(Error::invariant(
            "payload.inertia",
            "must be symmetric positive-definite for a rigid payload",
        ));
    }
    if let Some(c) = &spec.configuration {
        for (name, v) in [
            ("azimuths", &c.azimuths),
            ("inclinations", &c.inclinations),
            ("lengths", &c.lengths),
        ] {
            if v.len() != m {
                return Err(Error::invariant(
                    format!("configuration.{name}"),
                    format!("{} entries for {m} cables", v.len()),
                ));
            }
        }
        if let Some(l) = c.lengths.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::invariant("configuration.lengths", format!("{l} must be > 0")));
        }
    }
    Ok(())
}
