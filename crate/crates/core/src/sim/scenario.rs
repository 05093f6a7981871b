//! Scenario file format (TOML, unit-suffixed quantities like the system file).

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Deserialize;

use super::plant::Fidelity;
use crate::control::ControllerGains;
use crate::error::{Error, Result};
use crate::model::units::{self, Q, QV};
use crate::model::{CableCoord, PayloadState, Pose, SystemDescription, TaskState};

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConfiguration {
    pub payload_position: Vector3<f64>,
    pub azimuths: Vec<f64>,
    pub inclinations: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl InitialConfiguration {
    pub fn task_state(&self) -> TaskState {
        TaskState {
            payload: PayloadState {
                pose: Pose::from_translation(self.payload_position),
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

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub gains: ControllerGains,
    /// Hz
    pub main_rate: f64,
    /// Hz
    pub attitude_rate: f64,
    pub yaw: f64,
    /// Add the cable and gravity moments the model predicts to the attitude law.
    pub moment_feedforward: bool,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            gains: ControllerGains::default(),
            main_rate: 50.0,
            attitude_rate: 200.0,
            yaw: 0.0,
            moment_feedforward: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub dt: f64,
    pub fidelity: Fidelity,
    pub divergence_bound: f64,
    /// Used only at attitude fidelity.
    pub winch_time_constant: f64,
    /// Standard deviations used when noise is switched on.
    pub noise_position: f64,
    pub noise_attitude: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            fidelity: Fidelity::Exact,
            divergence_bound: 1.0,
            winch_time_constant: 0.02,
            noise_position: 0.002,
            noise_attitude: 0.5f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseKind {
    /// Open-loop collective ramp to hover feed-forward over `ramp`, then a
    /// quintic payload climb to `payload_position`.
    Takeoff { ramp: f64, payload_position: Vector3<f64> },
    /// Hold; an optional payload position is applied as a step.
    Hover { payload_position: Option<Vector3<f64>> },
    /// Quintic cable lengths with payload and cable angles held.
    CableLengths { lengths: Vec<f64> },
}

impl PhaseKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhaseKind::Takeoff { .. } => "takeoff",
            PhaseKind::Hover { .. } => "hover",
            PhaseKind::CableLengths { .. } => "cable_lengths",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub kind: PhaseKind,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// System path as written in the file, resolved against the scenario's directory.
    pub system_path: Option<PathBuf>,
    pub initial: InitialConfiguration,
    pub controller: ControllerSettings,
    pub simulation: SimulationSettings,
    pub phases: Vec<Phase>,
}

impl Scenario {
    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Checks the scenario against a system.
    pub fn validate(&self, sys: &SystemDescription) -> Result<()> {
        let m = sys.cable_count();
        let i = &self.initial;
        for (name, len) in [
            ("azimuths", i.azimuths.len()),
            ("inclinations", i.inclinations.len()),
            ("lengths", i.lengths.len()),
        ] {
            if len != m {
                return Err(Error::invariant(
                    format!("initial.{name}"),
                    format!("expected {m} entries, got {len}"),
                ));
            }
        }
        self.controller.gains.validate()?;
        let c = &self.controller;
        if !(c.main_rate > 0.0) || !(c.attitude_rate >= c.main_rate) {
            return Err(Error::invariant(
                "controller",
                "rates must satisfy 0 < main_rate ≤ attitude_rate",
            ));
        }
        let s = &self.simulation;
        if !(s.dt > 0.0) || s.dt * c.attitude_rate > 1.0 + 1e-9 {
            return Err(Error::invariant(
                "simulation.dt",
                "dt must be positive and no longer than the attitude period",
            ));
        }
        if !(s.divergence_bound > 0.0) || !(s.winch_time_constant > 0.0) || s.noise_position < 0.0 || s.noise_attitude < 0.0 {
            return Err(Error::invariant(
                "simulation",
                "bounds, time constants and noise levels must be positive",
            ));
        }
        if self.phases.is_empty() {
            return Err(Error::invariant("phase", "scenario has no phases"));
        }
        for (k, p) in self.phases.iter().enumerate() {
            if !(p.duration > 0.0) {
                return Err(Error::invariant(format!("phase[{k}].duration"), "must be positive"));
            }
            match &p.kind {
                PhaseKind::Takeoff { ramp, .. } => {
                    if k != 0 {
                        return Err(Error::invariant(format!("phase[{k}]"), "takeoff must be the first phase"));
                    }
                    if !(*ramp > 0.0 && *ramp < p.duration) {
                        return Err(Error::invariant(format!("phase[{k}].ramp"), "ramp must lie inside the phase"));
                    }
                }
                PhaseKind::CableLengths { lengths } => {
                    if lengths.len() != m || lengths.iter().any(|&l| !(l > 0.0)) {
                        return Err(Error::invariant(
                            format!("phase[{k}].lengths"),
                            format!("expected {m} positive lengths"),
                        ));
                    }
                }
                PhaseKind::Hover { .. } => {}
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    system: Option<String>,
    initial: RawInitial,
    #[serde(default)]
    controller: Option<RawController>,
    #[serde(default)]
    simulation: Option<RawSimulation>,
    phase: Vec<RawPhase>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    payload_position: Option<QV<units::Length>>,
    azimuths: QV<units::Angle>,
    inclinations: QV<units::Angle>,
    lengths: QV<units::Length>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    omega_c: Option<Q<units::AngularRate>>,
    zeta: Option<f64>,
    k_c: Option<f64>,
    omega_att: Option<Q<units::AngularRate>>,
    zeta_att: Option<f64>,
    main_rate: Option<f64>,
    attitude_rate: Option<f64>,
    yaw: Option<Q<units::Angle>>,
    moment_feedforward: Option<bool>,
    axis_weights: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    dt: Option<Q<units::Time>>,
    fidelity: Option<Fidelity>,
    divergence_bound: Option<Q<units::Length>>,
    winch_time_constant: Option<Q<units::Time>>,
    noise_position: Option<Q<units::Length>>,
    noise_attitude: Option<Q<units::Angle>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    kind: String,
    duration: Q<units::Time>,
    ramp: Option<Q<units::Time>>,
    payload_position: Option<QV<units::Length>>,
    lengths: Option<QV<units::Length>>,
}

fn vec3(v: QV<units::Length>, field: &str) -> Result<Vector3<f64>> {
    if v.0.len() != 3 {
        return Err(Error::invariant(field, format!("expected 3 components, got {}", v.0.len())));
    }
    Ok(Vector3::new(v.0[0], v.0[1], v.0[2]))
}

/// Parses scenario text. Relative system paths are kept as written.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse {
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1),
        message: e.message().to_string(),
    })?;
    let initial = InitialConfiguration {
        payload_position: match raw.initial.payload_position {
            Some(v) => vec3(v, "initial.payload_position")?,
            None => Vector3::zeros(),
        },
        azimuths: raw.initial.azimuths.0,
        inclinations: raw.initial.inclinations.0,
        lengths: raw.initial.lengths.0,
    };
    let mut controller = ControllerSettings::default();
    if let Some(c) = raw.controller {
        let g = &mut controller.gains;
        if let Some(v) = c.omega_c {
            g.omega_c = v.0;
        }
        if let Some(v) = c.zeta {
            g.zeta = v;
        }
        if let Some(v) = c.k_c {
            g.k_c = v;
        }
        if let Some(v) = c.omega_att {
            g.omega_att = v.0;
        }
        if let Some(v) = c.zeta_att {
            g.zeta_att = v;
        }
        g.axis_weights = c.axis_weights;
        if let Some(v) = c.main_rate {
            controller.main_rate = v;
        }
        if let Some(v) = c.attitude_rate {
            controller.attitude_rate = v;
        }
        if let Some(v) = c.yaw {
            controller.yaw = v.0;
        }
        if let Some(v) = c.moment_feedforward {
            controller.moment_feedforward = v;
        }
    }
    let mut simulation = SimulationSettings::default();
    if let Some(s) = raw.simulation {
        let get = |q: Option<Q<units::Time>>, d: f64| q.map_or(d, |q| q.0);
        simulation.dt = get(s.dt, simulation.dt);
        simulation.winch_time_constant = get(s.winch_time_constant, simulation.winch_time_constant);
        if let Some(f) = s.fidelity {
            simulation.fidelity = f;
        }
        if let Some(v) = s.divergence_bound {
            simulation.divergence_bound = v.0;
        }
        if let Some(v) = s.noise_position {
            simulation.noise_position = v.0;
        }
        if let Some(v) = s.noise_attitude {
            simulation.noise_attitude = v.0;
        }
    }
    let mut phases = Vec::with_capacity(raw.phase.len());
    for (k, p) in raw.phase.into_iter().enumerate() {
        let field = |f: &str| format!("phase[{k}].{f}");
        let kind = match p.kind.as_str() {
            "takeoff" => PhaseKind::Takeoff {
                ramp: p
                    .ramp
                    .ok_or_else(|| Error::invariant(field("ramp"), "takeoff needs a ramp time"))?
                    .0,
                payload_position: vec3(
                    p.payload_position
                        .ok_or_else(|| Error::invariant(field("payload_position"), "takeoff needs a target"))?,
                    &field("payload_position"),
                )?,
            },
            "hover" => PhaseKind::Hover {
                payload_position: p.payload_position.map(|v| vec3(v, &field("payload_position"))).transpose()?,
            },
            "cable_lengths" => PhaseKind::CableLengths {
                lengths: p
                    .lengths
                    .ok_or_else(|| Error::invariant(field("lengths"), "cable_lengths needs target lengths"))?
                    .0,
            },
            other => {
                return Err(Error::invariant(
                    field("kind"),
                    format!("unknown phase kind `{other}` (expected takeoff, hover, cable_lengths)"),
                ))
            }
        };
        phases.push(Phase {
            kind,
            duration: p.duration.0,
        });
    }
    Ok(Scenario {
        system_path: raw.system.map(PathBuf::from),
        initial,
        controller,
        simulation,
        phases,
    })
}

/// Reads a scenario and resolves its system path relative to the file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut s = parse_scenario(&text)?;
    if let Some(p) = &s.system_path {
        if p.is_relative() {
            s.system_path = Some(path.parent().unwrap_or(Path::new(".")).join(p));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    #[test]
    fn shipped_scenario_parses() {
        let s = parse_scenario(presets::RESIZE_HOVER_SCN).unwrap();
        assert_eq!(s.phases.len(), 6);
        assert_relative_eq!(s.duration(), 20.0, epsilon = 1e-12);
        assert_relative_eq!(s.initial.azimuths[1], 120f64.to_radians(), epsilon = 1e-15);
        assert_eq!(s.simulation.fidelity, Fidelity::Exact);
        assert_relative_eq!(s.simulation.dt, 1e-3);
        assert_relative_eq!(s.simulation.noise_attitude, 0.5f64.to_radians(), epsilon = 1e-15);
        assert!(matches!(s.phases[0].kind, PhaseKind::Takeoff { ramp, .. } if (ramp - 2.0).abs() < 1e-12));
        s.validate(&presets::prototype().unwrap()).unwrap();
    }

    #[test]
    fn bad_inputs_are_reported() {
        let base = presets::RESIZE_HOVER_SCN;
        let err = parse_scenario(&base.replace("kind = \"hover\"", "kind = \"loiter\"")).unwrap_err();
        assert!(err.to_string().contains("loiter"));
        let err = parse_scenario(&base.replace("dt = \"1 ms\"", "dt = \"1 kg\"")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let s = parse_scenario(&base.replace("lengths = [1.4, 1.4, 1.4]", "lengths = [1.4, 1.4]")).unwrap();
        assert!(s.validate(&presets::prototype().unwrap()).is_err());
    }
}
