//! Closed-loop scenario execution.
//!
//! The task-space law runs at the main rate with its output held in between.
//! At attitude fidelity an inner loop turns each thrust vector into an
//! attitude set-point and body moment, mixes and saturates them, and the
//! winches follow their rate commands through a first-order lag.

use nalgebra::{DVector, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::plant::{Actuation, Fidelity, Plant, PlantConfig, PlantInput, PlantState};
use super::quintic::QuinticSegment;
use super::scenario::{Phase, PhaseKind, Scenario};
use super::stats::ErrorStats;
use crate::control::{attitude_command, attitude_track, control_step, TaskReference};
use crate::dynamics::{inverse_dynamics, mix, quadrotor_wrench_balance, saturate};
use crate::error::{Error, Result};
use crate::kinematics::task_from_tracking;
use crate::model::{JointState, PayloadState, SystemDescription, TaskState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Add Gaussian pose noise to the controller's measurements.
    pub noise: bool,
    pub seed: u64,
}

/// One main-loop tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub time: f64,
    pub phase: usize,
    pub phase_kind: &'static str,
    /// Thrust came from the takeoff ramp rather than the feedback law.
    pub open_loop: bool,
    pub payload: Vector3<f64>,
    pub payload_reference: Vector3<f64>,
    pub lengths: Vec<f64>,
    pub length_references: Vec<f64>,
    pub azimuths: Vec<f64>,
    pub inclinations: Vec<f64>,
    pub azimuth_references: Vec<f64>,
    pub inclination_references: Vec<f64>,
    pub tensions: Vec<f64>,
    pub taut: Vec<bool>,
    pub quadrotors: Vec<Vector3<f64>>,
    pub constraint_residual: f64,
    pub thrust: Vec<Vector3<f64>>,
    pub collectives: Vec<f64>,
    pub winch_raw: Vec<f64>,
    pub winch_rates: Vec<f64>,
    pub winch_limits: Vec<f64>,
    pub winch_saturated: Vec<bool>,
}

impl Sample {
    pub fn payload_error(&self) -> Vector3<f64> {
        self.payload - self.payload_reference
    }

    pub fn length_errors(&self) -> Vec<f64> {
        self.lengths.iter().zip(&self.length_references).map(|(l, r)| l - r).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub index: usize,
    pub kind: &'static str,
    pub start: f64,
    pub end: f64,
    /// actual − reference per axis (m)
    pub payload_error: ErrorStats,
    /// actual − reference per cable (m)
    pub length_error: ErrorStats,
    pub saturated_ticks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub completed: bool,
    pub abort_reason: Option<String>,
    pub simulated_time: f64,
    /// Statistics over every tick after the takeoff phase.
    pub payload_error: ErrorStats,
    pub length_error: ErrorStats,
    /// Largest ‖x_p − x_p,ref‖ after takeoff (m).
    pub max_payload_drift: f64,
    pub max_constraint_residual: f64,
    pub saturated_ticks: Vec<usize>,
    pub slack_events: usize,
    pub phases: Vec<PhaseSummary>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub samples: Vec<Sample>,
    pub summary: RunSummary,
    /// Runtime failure that stopped the run; `samples` hold the partial log.
    pub aborted: Option<Error>,
}

/// Reference at `tau` seconds into `phase`, starting from `start`.
fn phase_reference(sys: &SystemDescription, phase: &Phase, start: &TaskReference, tau: f64) -> TaskReference {
    let pm = sys.point_mass();
    let mut r = TaskReference::hold(&start.state, pm);
    let dof = sys.payload_dof();
    match &phase.kind {
        PhaseKind::Takeoff { ramp, payload_position } => {
            if tau > *ramp {
                let p0 = start.state.payload.pose.translation;
                for k in 0..3 {
                    let seg =
                        QuinticSegment::new(p0[k], payload_position[k], phase.duration - ramp).expect("validated phase timing");
                    let (s, v, a) = seg.evaluate(tau - ramp);
                    r.state.payload.pose.translation[k] = s;
                    r.state.payload.linear_velocity[k] = v;
                    r.acceleration[k] = a;
                }
            }
        }
        PhaseKind::Hover { payload_position } => {
            if let Some(p) = payload_position {
                r.state.payload.pose.translation = *p;
            }
        }
        PhaseKind::CableLengths { lengths } => {
            for (i, c) in r.state.cables.iter_mut().enumerate() {
                let seg = QuinticSegment::new(start.state.cables[i].length, lengths[i], phase.duration)
                    .expect("validated phase timing");
                let (s, v, a) = seg.evaluate(tau);
                c.length = s;
                c.length_rate = v;
                r.acceleration[dof + 3 * i + 2] = a;
            }
        }
    }
    r
}

struct Noise {
    rng: ChaCha8Rng,
    position: Option<Normal<f64>>,
    attitude: Option<Normal<f64>>,
}

impl Noise {
    fn new(scenario: &Scenario, opts: &RunOptions) -> Result<Self> {
        let make = |sigma: f64| -> Result<Option<Normal<f64>>> {
            if !opts.noise || sigma == 0.0 {
                return Ok(None);
            }
            Normal::new(0.0, sigma)
                .map(Some)
                .map_err(|e| Error::invariant("simulation.noise", e.to_string()))
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            position: make(scenario.simulation.noise_position)?,
            attitude: make(scenario.simulation.noise_attitude)?,
        })
    }

    fn position(&mut self, p: &Vector3<f64>) -> Vector3<f64> {
        match &self.position {
            Some(d) => p + Vector3::from_fn(|_, _| d.sample(&mut self.rng)),
            None => *p,
        }
    }

    fn attitude(&mut self, q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
        match &self.attitude {
            Some(d) => UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| d.sample(&mut self.rng))) * q,
            None => *q,
        }
    }
}

/// Measured payload and joint state as the main loop sees them.
fn measure(state: &PlantState, noise: &mut Noise) -> (PayloadState, JointState) {
    let mut payload = state.payload;
    payload.pose.translation = noise.position(&payload.pose.translation);
    let mut joints = state.joints();
    for q in &mut joints.quadrotors {
        q.position = noise.position(&q.position);
        q.attitude = noise.attitude(&q.attitude);
    }
    (payload, joints)
}

fn split(v: &DVector<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

/// Main-loop output held until the next tick.
struct Held {
    thrust: Vec<Vector3<f64>>,
    winch_rates: Vec<f64>,
    tensions: DVector<f64>,
    task: TaskState,
}

/// Runs `scenario` on `sys`. Setup errors are returned; failures during the
/// run stop it and are reported in [`ScenarioResult::aborted`].
pub fn run_scenario(sys: &SystemDescription, scenario: &Scenario, opts: &RunOptions) -> Result<ScenarioResult> {
    scenario.validate(sys)?;
    let sim = &scenario.simulation;
    let ctl = &scenario.controller;
    let n = sys.quadrotor_count();
    let m = sys.cable_count();
    let pm = sys.point_mass();
    let attitude_mode = sim.fidelity == Fidelity::Attitude;
    let plant = Plant::new(
        sys,
        PlantConfig {
            fidelity: sim.fidelity,
            winch_time_constant: attitude_mode.then_some(sim.winch_time_constant),
            ..PlantConfig::default()
        },
    );
    let task0 = scenario.initial.task_state();
    let takeoff = matches!(scenario.phases[0].kind, PhaseKind::Takeoff { .. });
    let mut state = PlantState::from_task(sys, &task0, &vec![UnitQuaternion::identity(); n], takeoff)?;
    // Hover feed-forward at the initial configuration scales the takeoff ramp.
    let hover = inverse_dynamics(sys, &task0, &state.joints(), &DVector::zeros(sys.task_dim()), None)?.g_q;

    let main_every = ((1.0 / (ctl.main_rate * sim.dt)).round() as usize).max(1);
    let att_every = ((1.0 / (ctl.attitude_rate * sim.dt)).round() as usize).max(1);
    let mut noise = Noise::new(scenario, opts)?;
    let mut held = Held {
        thrust: (0..n).map(|j| split(&hover, j) * 0.0).collect(),
        winch_rates: vec![0.0; m],
        tensions: DVector::zeros(m),
        task: task0.clone(),
    };
    let mut actuation: Vec<Actuation> = held.thrust.iter().map(|f| Actuation::Force(*f)).collect();

    let mut samples: Vec<Sample> = Vec::new();
    let mut slack_events = 0;
    let mut aborted = None;
    let mut start = TaskReference::hold(&task0, pm);
    let mut k_global = 0usize;

    'phases: for (p_idx, phase) in scenario.phases.iter().enumerate() {
        let steps = (phase.duration / sim.dt).round() as usize;
        for s in 0..steps {
            let tau = s as f64 * sim.dt;
            if k_global.is_multiple_of(main_every) {
                let reference = phase_reference(sys, phase, &start, tau);
                let truth = match task_from_tracking(sys, &state.payload, &state.joints()) {
                    Ok(t) => t,
                    Err(e) => {
                        aborted = Some(e);
                        break 'phases;
                    }
                };
                let (payload_meas, joints_meas) = measure(&state, &mut noise);
                let lengths_true = state.lengths(sys);
                let ramp = match phase.kind {
                    PhaseKind::Takeoff { ramp, .. } if tau < ramp => Some(tau / ramp),
                    _ => None,
                };
                let mut sample = Sample {
                    time: state.time,
                    phase: p_idx,
                    phase_kind: phase.kind.name(),
                    open_loop: ramp.is_some(),
                    payload: state.payload.pose.translation,
                    payload_reference: reference.state.payload.pose.translation,
                    lengths: lengths_true.clone(),
                    length_references: reference.state.cables.iter().map(|c| c.length).collect(),
                    azimuths: truth.cables.iter().map(|c| c.azimuth).collect(),
                    inclinations: truth.cables.iter().map(|c| c.inclination).collect(),
                    azimuth_references: reference.state.cables.iter().map(|c| c.azimuth).collect(),
                    inclination_references: reference.state.cables.iter().map(|c| c.inclination).collect(),
                    tensions: Vec::new(),
                    taut: state.taut.clone(),
                    quadrotors: state.quadrotors.iter().map(|q| q.position).collect(),
                    constraint_residual: 0.0,
                    thrust: Vec::new(),
                    collectives: Vec::new(),
                    winch_raw: vec![0.0; m],
                    winch_rates: vec![0.0; m],
                    winch_limits: vec![0.0; m],
                    winch_saturated: vec![false; m],
                };
                let error = sample.payload_error().norm();
                if error > sim.divergence_bound {
                    aborted = Some(Error::Divergence {
                        time: state.time,
                        error,
                        bound: sim.divergence_bound,
                    });
                    samples.push(sample);
                    break 'phases;
                }
                if let Some(s) = ramp {
                    held.thrust = (0..n).map(|j| split(&hover, j) * s).collect();
                    held.winch_rates = vec![0.0; m];
                    held.task = truth;
                } else {
                    let task_meas = match task_from_tracking(sys, &payload_meas, &joints_meas) {
                        Ok(t) => t,
                        Err(e) => {
                            aborted = Some(e);
                            samples.push(sample);
                            break 'phases;
                        }
                    };
                    let lengths_meas: Vec<f64> = lengths_true.clone();
                    match control_step(sys, &task_meas, &joints_meas, &lengths_meas, &reference, &ctl.gains, ctl.yaw) {
                        Ok(out) => {
                            held.thrust = out.thrust.clone();
                            held.winch_rates = out.winches.iter().map(|w| w.rate).collect();
                            held.tensions = out.tension_estimate.clone();
                            held.task = task_meas;
                            sample.collectives = out.collectives;
                            for (i, w) in out.winches.iter().enumerate() {
                                sample.winch_raw[i] = w.raw;
                                sample.winch_rates[i] = w.rate;
                                sample.winch_limits[i] = w.limit;
                                sample.winch_saturated[i] = w.saturated;
                            }
                        }
                        Err(e) => {
                            aborted = Some(e);
                            samples.push(sample);
                            break 'phases;
                        }
                    }
                }
                sample.thrust = held.thrust.clone();
                if !attitude_mode {
                    actuation = held.thrust.iter().map(|f| Actuation::Force(*f)).collect();
                }
                samples.push(sample);
            }
            if attitude_mode && k_global.is_multiple_of(att_every) {
                let joints = state.joints();
                let mut next = Vec::with_capacity(n);
                for j in 0..n {
                    let q = &state.quadrotors[j];
                    if held.thrust[j].norm() < 1e-9 {
                        // Start of the takeoff ramp: rotors idle.
                        next.push(Actuation::Body {
                            collective: 0.0,
                            moment: Vector3::zeros(),
                        });
                        continue;
                    }
                    let cmd = match attitude_command(&held.thrust[j], ctl.yaw, &q.attitude) {
                        Ok(c) => c,
                        Err(e) => {
                            aborted = Some(e);
                            break 'phases;
                        }
                    };
                    let comp = sys.composite(j);
                    let ff = ctl.moment_feedforward.then(|| {
                        let b = quadrotor_wrench_balance(
                            sys,
                            j,
                            &held.task,
                            &joints,
                            &held.tensions,
                            &Vector3::zeros(),
                            &Vector3::zeros(),
                        );
                        let w_b = q.attitude.inverse() * q.angular_velocity;
                        b.moment - w_b.cross(&(comp.inertia * w_b))
                    });
                    let moment = attitude_track(
                        &comp.inertia,
                        &q.attitude,
                        &q.angular_velocity,
                        &cmd.attitude,
                        &ctl.gains,
                        ff.as_ref(),
                    );
                    let quad = sys.quadrotor(j);
                    let (collective, moment) = saturate(quad, &mix(quad, cmd.collective, &moment));
                    next.push(Actuation::Body { collective, moment });
                }
                actuation = next;
            }
            let input = PlantInput {
                actuation: actuation.clone(),
                winch_rates: held.winch_rates.clone(),
            };
            match plant.step(&state, &input, sim.dt) {
                Ok((next, info)) => {
                    if k_global.is_multiple_of(main_every) {
                        if let Some(last) = samples.last_mut() {
                            last.tensions = info.tensions.iter().copied().collect();
                            last.constraint_residual = info.constraint_residual;
                        }
                    }
                    slack_events += info.mode_changes.iter().filter(|&&i| !next.taut[i]).count();
                    state = next;
                }
                Err(e) => {
                    aborted = Some(e);
                    break 'phases;
                }
            }
            k_global += 1;
        }
        start = TaskReference::hold(&phase_reference(sys, phase, &start, phase.duration).state, pm);
    }

    let summary = summarize(scenario, &samples, slack_events, state.time, aborted.as_ref(), m);
    Ok(ScenarioResult {
        samples,
        summary,
        aborted,
    })
}

fn error_stats<'a>(samples: impl Iterator<Item = &'a Sample> + Clone, m: usize) -> (ErrorStats, ErrorStats) {
    let pos: Vec<Vec<f64>> = samples.clone().map(|s| s.payload_error().iter().copied().collect()).collect();
    let len: Vec<Vec<f64>> = samples.map(|s| s.length_errors()).collect();
    (ErrorStats::from_rows(&pos, 3), ErrorStats::from_rows(&len, m))
}

fn saturation_counts<'a>(samples: impl Iterator<Item = &'a Sample>, m: usize) -> Vec<usize> {
    let mut c = vec![0; m];
    for s in samples {
        for (i, &sat) in s.winch_saturated.iter().enumerate() {
            c[i] += sat as usize;
        }
    }
    c
}

fn summarize(
    scenario: &Scenario,
    samples: &[Sample],
    slack_events: usize,
    time: f64,
    aborted: Option<&Error>,
    m: usize,
) -> RunSummary {
    let flying = samples.iter().filter(|s| s.phase_kind != "takeoff");
    let (payload_error, length_error) = error_stats(flying.clone(), m);
    let mut phases = Vec::new();
    let mut t0 = 0.0;
    for (k, p) in scenario.phases.iter().enumerate() {
        let these = samples.iter().filter(move |s| s.phase == k);
        let (pe, le) = error_stats(these.clone(), m);
        phases.push(PhaseSummary {
            index: k,
            kind: p.kind.name(),
            start: t0,
            end: t0 + p.duration,
            payload_error: pe,
            length_error: le,
            saturated_ticks: saturation_counts(these, m),
        });
        t0 += p.duration;
    }
    RunSummary {
        completed: aborted.is_none(),
        abort_reason: aborted.map(|e| e.to_string()),
        simulated_time: time,
        payload_error,
        length_error,
        max_payload_drift: flying.clone().map(|s| s.payload_error().norm()).fold(0.0, f64::max),
        max_constraint_residual: samples.iter().map(|s| s.constraint_residual).fold(0.0, f64::max),
        saturated_ticks: saturation_counts(samples.iter(), m),
        slack_events,
        phases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::sim::{fit_double_pole, parse_scenario};

    fn shipped(fidelity: &str) -> Scenario {
        parse_scenario(&presets::RESIZE_HOVER_SCN.replace("fidelity = \"exact\"", &format!("fidelity = \"{fidelity}\""))).unwrap()
    }

    /// Starts airborne at 0.5 m and holds for one second before `phases`.
    fn airborne(phases: Vec<Phase>) -> Scenario {
        let mut s = shipped("exact");
        s.initial.payload_position = Vector3::new(0.0, 0.0, 0.5);
        s.phases = vec![Phase {
            kind: PhaseKind::Hover { payload_position: None },
            duration: 1.0,
        }];
        s.phases.extend(phases);
        s
    }

    #[test]
    fn resize_hover_tracks_at_exact_fidelity() {
        let sys = presets::prototype().unwrap();
        let r = run_scenario(&sys, &shipped("exact"), &RunOptions::default()).unwrap();
        assert!(r.aborted.is_none(), "{:?}", r.aborted);
        assert!(r.summary.max_payload_drift < 0.05);
        assert!(r.summary.length_error.mean.iter().all(|e| e.abs() < 0.01));
        assert_eq!(r.summary.slack_events, 0);
        assert!(r.summary.max_constraint_residual < 1e-3);
        let last = r.samples.last().unwrap();
        assert!((last.payload - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-3);
        assert!(last.lengths.iter().all(|l| (l - 1.0).abs() < 1e-3));
    }

    #[test]
    fn step_response_has_the_designed_pole() {
        let sys = presets::prototype().unwrap();
        for axis in 0..3 {
            let mut target = Vector3::new(0.0, 0.0, 0.5);
            target[axis] += 0.05;
            let sc = airborne(vec![Phase {
                kind: PhaseKind::Hover {
                    payload_position: Some(target),
                },
                duration: 6.0,
            }]);
            let r = run_scenario(&sys, &sc, &RunOptions::default()).unwrap();
            assert!(r.aborted.is_none());
            let step: Vec<&Sample> = r.samples.iter().filter(|s| s.phase == 1).collect();
            let t: Vec<f64> = step.iter().map(|s| s.time - 1.0).collect();
            let e: Vec<f64> = step.iter().map(|s| s.payload_error()[axis]).collect();
            let lambda = fit_double_pole(&t, &e, 5e-4).unwrap();
            assert!((lambda - 2.0).abs() < 0.1, "axis {axis}: λ = {lambda}");
        }
    }

    #[test]
    fn fast_retraction_saturates_the_winches() {
        let sys = presets::prototype().unwrap();
        let sc = airborne(vec![
            Phase {
                kind: PhaseKind::CableLengths { lengths: vec![0.8; 3] },
                duration: 0.5,
            },
            Phase {
                kind: PhaseKind::Hover { payload_position: None },
                duration: 3.0,
            },
        ]);
        let r = run_scenario(&sys, &sc, &RunOptions::default()).unwrap();
        assert!(r.aborted.is_none(), "{:?}", r.aborted);
        assert!(r.summary.saturated_ticks.iter().all(|&c| c > 0));
        let w = sys.winch(0);
        let bound = w.safety_fraction * w.max_rate * w.drum_radius;
        for pair in r.samples.windows(2) {
            let dt = pair[1].time - pair[0].time;
            for i in 0..3 {
                assert!((pair[1].lengths[i] - pair[0].lengths[i]).abs() / dt <= bound + 1e-9);
            }
        }
        // The winches catch up once the reference stops.
        assert!(r.samples.last().unwrap().lengths.iter().all(|l| (l - 0.8).abs() < 0.01));
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let sys = presets::prototype().unwrap();
        let sc = airborne(vec![Phase {
            kind: PhaseKind::CableLengths { lengths: vec![1.3; 3] },
            duration: 1.0,
        }]);
        let opts = RunOptions { noise: true, seed: 11 };
        let a = run_scenario(&sys, &sc, &opts).unwrap();
        let b = run_scenario(&sys, &sc, &opts).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = run_scenario(&sys, &sc, &RunOptions { noise: true, seed: 12 }).unwrap();
        assert_ne!(a.samples, c.samples);
        let quiet = run_scenario(&sys, &sc, &RunOptions { noise: false, seed: 11 }).unwrap();
        let quiet2 = run_scenario(&sys, &sc, &RunOptions { noise: false, seed: 99 }).unwrap();
        assert_eq!(quiet.samples, quiet2.samples);
    }

    #[test]
    fn moment_feedforward_reduces_drift_at_attitude_fidelity() {
        let sys = presets::prototype().unwrap();
        let mut sc = shipped("attitude");
        let with = run_scenario(&sys, &sc, &RunOptions::default()).unwrap();
        sc.controller.moment_feedforward = false;
        let without = run_scenario(&sys, &sc, &RunOptions::default()).unwrap();
        assert!(with.aborted.is_none() && without.aborted.is_none());
        assert!(with.summary.max_payload_drift < 0.05);
        assert!(with.summary.max_payload_drift < without.summary.max_payload_drift);
    }

    #[test]
    fn divergence_stops_the_run_with_a_partial_log() {
        let sys = presets::prototype().unwrap();
        let mut sc = airborne(vec![Phase {
            kind: PhaseKind::Hover {
                payload_position: Some(Vector3::new(0.0, 0.0, 0.7)),
            },
            duration: 2.0,
        }]);
        sc.simulation.divergence_bound = 0.1;
        let r = run_scenario(&sys, &sc, &RunOptions::default()).unwrap();
        assert!(matches!(r.aborted, Some(Error::Divergence { .. })));
        assert!(!r.summary.completed);
        assert!((r.samples.last().unwrap().time - 1.0).abs() < 1e-9);
    }
}
