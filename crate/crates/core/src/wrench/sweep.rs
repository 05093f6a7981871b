//! One-axis parameter sweeps of γ or 1/w_s over a system template.

use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{capacity_margin, manipulability, CapacityOptions, CapacityReport, ManipulabilityReport, Variant};
use crate::error::{Error, Result};
use crate::model::{SystemDescription, TaskState};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "VACTS_KIT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// All cable inclinations (deg).
    Inclination,
    /// Drum radius of every winch (m); the exit point follows at `y = r_d`.
    DrumRadius,
    /// Distance of every winch mount from the quadrotor centre along its
    /// current direction (m, default direction −z).
    WinchOffset,
    /// Rotation of every winch mount about the body z axis (deg).
    RotZ,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Inclination => "inclination",
            SweepAxis::DrumRadius => "drum_radius",
            SweepAxis::WinchOffset => "winch_offset",
            SweepAxis::RotZ => "rotz",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SweepAxis::Inclination | SweepAxis::RotZ => "deg",
            SweepAxis::DrumRadius | SweepAxis::WinchOffset => "m",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inclination" => Ok(Self::Inclination),
            "drum_radius" | "rd" | "r_d" => Ok(Self::DrumRadius),
            "winch_offset" | "offset" => Ok(Self::WinchOffset),
            "rotz" | "rot_z" => Ok(Self::RotZ),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis `{other}` (expected inclination, drum_radius, winch_offset, rotz)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CapacityMargin,
    /// Reported as 1/w_s.
    Manipulability,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::CapacityMargin => "capacity_margin",
            Metric::Manipulability => "inverse_manipulability",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capacity_margin" | "gamma" => Ok(Self::CapacityMargin),
            "manipulability" => Ok(Self::Manipulability),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric `{other}` (expected capacity_margin or manipulability)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub metric: Metric,
    pub variants: Vec<Variant>,
    pub capacity: CapacityOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: Variant,
    pub value: Option<f64>,
    pub error: Option<String>,
    /// Full report behind `value` (JSON output only).
    pub detail: Option<CellDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellDetail {
    Capacity(Box<CapacityReport>),
    Manipulability(ManipulabilityReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub cells: Vec<SweepCell>,
}

/// Shape of a metric along the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Constant,
    NonDecreasing,
    NonIncreasing,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub variant: Variant,
    pub argmax: Option<f64>,
    pub max: Option<f64>,
    pub monotonicity: Monotonicity,
    pub failed_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub metric: Metric,
    pub variants: Vec<Variant>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn column(&self, variant: Variant) -> Vec<Option<f64>> {
        let k = self.variants.iter().position(|&v| v == variant);
        self.rows.iter().map(|r| k.and_then(|k| r.cells[k].value)).collect()
    }

    pub fn trends(&self) -> Vec<Trend> {
        self.variants
            .iter()
            .map(|&variant| {
                let col = self.column(variant);
                let pts: Vec<(f64, f64)> = self
                    .rows
                    .iter()
                    .zip(&col)
                    .filter_map(|(r, v)| v.map(|v| (r.parameter, v)))
                    .collect();
                let best = pts.iter().copied().fold(None, |acc: Option<(f64, f64)>, p| match acc {
                    Some(a) if a.1 >= p.1 => Some(a),
                    _ => Some(p),
                });
                Trend {
                    variant,
                    argmax: best.map(|b| b.0),
                    max: best.map(|b| b.1),
                    monotonicity: monotonicity(&pts.iter().map(|p| p.1).collect::<Vec<_>>(), 1e-9),
                    failed_cells: col.len() - pts.len(),
                }
            })
            .collect()
    }

    /// CSV with one column per variant plus an error column per variant.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![format!("{}_{}", self.axis.name(), self.axis.unit())];
        for v in &self.variants {
            header.push(format!("{}_{}", self.metric.name(), v.name()));
        }
        for v in &self.variants {
            header.push(format!("error_{}", v.name()));
        }
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for row in &self.rows {
            let mut rec = vec![format_number(row.parameter)];
            rec.extend(row.cells.iter().map(|c| c.value.map(format_number).unwrap_or_default()));
            rec.extend(row.cells.iter().map(|c| c.error.clone().unwrap_or_default()));
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Fixed-precision rendering so repeated runs are byte-identical.
pub fn format_number(x: f64) -> String {
    format!("{x:.9e}")
}

pub fn monotonicity(values: &[f64], tol: f64) -> Monotonicity {
    let mut up = false;
    let mut down = false;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        let scale = tol * w[0].abs().max(w[1].abs()).max(1.0);
        if d > scale {
            up = true;
        } else if d < -scale {
            down = true;
        }
    }
    match (up, down) {
        (false, false) => Monotonicity::Constant,
        (true, false) => Monotonicity::NonDecreasing,
        (false, true) => Monotonicity::NonIncreasing,
        (true, true) => Monotonicity::Mixed,
    }
}

/// Thread cap from `VACTS_KIT_THREADS`, if set to a positive integer.
pub fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Applies one axis value to a copy of the template.
pub fn apply_axis(
    sys: &SystemDescription,
    task: &TaskState,
    axis: SweepAxis,
    value: f64,
) -> Result<(SystemDescription, TaskState)> {
    let mut spec = sys.spec().clone();
    let mut task = task.clone();
    match axis {
        SweepAxis::Inclination => {
            for c in &mut task.cables {
                c.inclination = value.to_radians();
            }
        }
        SweepAxis::DrumRadius => {
            for w in &mut spec.winches {
                w.drum_radius = value;
                w.exit_point.y = value;
            }
        }
        SweepAxis::WinchOffset => {
            for w in &mut spec.winches {
                let t = w.mount.translation;
                let dir = if t.norm() > 1e-12 { t.normalize() } else { -Vector3::z() };
                w.mount.translation = dir * value;
            }
        }
        SweepAxis::RotZ => {
            for w in &mut spec.winches {
                w.mount.rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), value.to_radians());
            }
        }
    }
    Ok((SystemDescription::new(spec)?, task))
}

fn evaluate(sys: &SystemDescription, task: &TaskState, spec: &SweepSpec, variant: Variant) -> Result<(f64, CellDetail)> {
    match spec.metric {
        Metric::CapacityMargin => {
            let r = capacity_margin(sys, task, variant, &spec.capacity)?;
            Ok((r.gamma, CellDetail::Capacity(Box::new(r))))
        }
        Metric::Manipulability => {
            let r = manipulability(sys, task, variant)?;
            Ok((r.inverse, CellDetail::Manipulability(r)))
        }
    }
}

/// Runs the sweep on the rayon pool (capped by `VACTS_KIT_THREADS`). Row
/// order follows `spec.values`; failing cells carry their error message.
pub fn sweep(sys: &SystemDescription, task: &TaskState, spec: &SweepSpec) -> Result<SweepTable> {
    if spec.values.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    if spec.variants.is_empty() {
        return Err(Error::InvalidArgument("no variant selected".into()));
    }
    if spec.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sweep grid contains a non-finite value".into()));
    }
    let run = || {
        spec.values
            .par_iter()
            .map(|&p| {
                let cells = match apply_axis(sys, task, spec.axis, p) {
                    Ok((s, t)) => spec
                        .variants
                        .iter()
                        .map(|&variant| match evaluate(&s, &t, spec, variant) {
                            Ok((v, d)) => SweepCell {
                                variant,
                                value: Some(v),
                                error: None,
                                detail: Some(d),
                            },
                            Err(e) => SweepCell {
                                variant,
                                value: None,
                                error: Some(e.to_string()),
                                detail: None,
                            },
                        })
                        .collect(),
                    Err(e) => spec
                        .variants
                        .iter()
                        .map(|&variant| SweepCell {
                            variant,
                            value: None,
                            error: Some(e.to_string()),
                            detail: None,
                        })
                        .collect(),
                };
                SweepRow { parameter: p, cells }
            })
            .collect::<Vec<_>>()
    };
    let rows = match thread_count() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(SweepTable {
        axis: spec.axis,
        metric: spec.metric,
        variants: spec.variants.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    fn run(axis: SweepAxis, values: Vec<f64>, variants: Vec<Variant>) -> SweepTable {
        let sys = presets::table1().unwrap();
        let task = sys.nominal().unwrap().task_state();
        let spec = SweepSpec {
            axis,
            values,
            metric: Metric::CapacityMargin,
            variants,
            capacity: CapacityOptions::default(),
        };
        sweep(&sys, &task, &spec).unwrap()
    }

    #[test]
    fn acts_inclination_optimum_near_fifty_degrees() {
        let t = run(
            SweepAxis::Inclination,
            linspace(10.0, 80.0, 71),
            vec![Variant::Acts, Variant::Vacts],
        );
        let tr = t.trends();
        let arg = tr[0].argmax.unwrap();
        assert!((arg - 50.0).abs() <= 5.0, "ACTS argmax at {arg}");
        assert_eq!(tr[0].failed_cells, 0);
    }

    #[test]
    fn margin_does_not_grow_with_offset() {
        let t = run(SweepAxis::WinchOffset, linspace(0.0, 0.1, 11), vec![Variant::Vacts]);
        let tr = &t.trends()[0];
        assert!(
            matches!(tr.monotonicity, Monotonicity::NonIncreasing | Monotonicity::Constant),
            "{t:?}"
        );
    }

    #[test]
    fn larger_drums_degrade_margin() {
        let t = run(SweepAxis::DrumRadius, vec![0.01, 0.02, 0.03, 0.04], vec![Variant::Vacts]);
        let c: Vec<f64> = t.column(Variant::Vacts).into_iter().map(Option::unwrap).collect();
        assert!(c[0] >= c[1] && c[1] >= c[2] && c[2] >= c[3], "{c:?}");
        assert!(c[3] < c[1]);
    }

    #[test]
    fn failing_cells_are_recorded() {
        let t = run(SweepAxis::Inclination, vec![0.0, 30.0], vec![Variant::Vacts]);
        assert!(t.rows[0].cells[0].error.is_some());
        assert!(t.rows[1].cells[0].value.is_some());
        assert_eq!(t.trends()[0].failed_cells, 1);
    }

    #[test]
    fn csv_is_stable() {
        let a = run(SweepAxis::RotZ, linspace(0.0, 90.0, 4), vec![Variant::Acts, Variant::Vacts]);
        let b = run(SweepAxis::RotZ, linspace(0.0, 90.0, 4), vec![Variant::Acts, Variant::Vacts]);
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert!(a
            .to_csv()
            .unwrap()
            .starts_with("rotz_deg,capacity_margin_acts,capacity_margin_vacts,error_acts,error_vacts\n"));
    }

    #[test]
    fn monotonicity_classes() {
        assert_eq!(monotonicity(&[1.0, 1.0], 1e-9), Monotonicity::Constant);
        assert_eq!(monotonicity(&[1.0, 2.0, 2.0], 1e-9), Monotonicity::NonDecreasing);
        assert_eq!(monotonicity(&[3.0, 2.0], 1e-9), Monotonicity::NonIncreasing);
        assert_eq!(monotonicity(&[1.0, 2.0, 1.0], 1e-9), Monotonicity::Mixed);
    }
}
