//! CSV and JSON renderings of scenario and sweep results.
//!
//! Numbers use [`format_number`] (`{:.9e}`, period decimal separator) so that
//! identical runs produce identical bytes. Column order is fixed and listed in
//! the README; JSON documents carry [`SCHEMA_VERSION`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{RunSummary, Sample, Scenario};
use crate::wrench::{format_number, SweepRow, SweepTable, Trend};

pub const SCHEMA_VERSION: u32 = 1;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Header of [`timeseries_csv`] for `n` quadrotors and `m` cables.
pub fn timeseries_header(n: usize, m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["time_s", "phase", "phase_kind", "open_loop"].map(String::from).to_vec();
    for prefix in ["payload", "payload_ref", "payload_err"] {
        for a in ["x", "y", "z"] {
            h.push(format!("{prefix}_{a}_m"));
        }
    }
    for i in 1..=m {
        h.extend([
            format!("length{i}_m"),
            format!("length{i}_ref_m"),
            format!("length{i}_err_m"),
            format!("azimuth{i}_rad"),
            format!("azimuth{i}_ref_rad"),
            format!("inclination{i}_rad"),
            format!("inclination{i}_ref_rad"),
            format!("tension{i}_N"),
            format!("taut{i}"),
        ]);
    }
    for j in 1..=n {
        for a in ["x", "y", "z"] {
            h.push(format!("quad{j}_{a}_m"));
        }
    }
    h.push("constraint_residual_m".into());
    h
}

/// One row per main-loop tick: states, references, errors and tensions.
pub fn timeseries_csv(samples: &[Sample], n: usize, m: usize) -> Result<String> {
    let mut w = writer();
    w.write_record(timeseries_header(n, m)).map_err(io)?;
    for s in samples {
        let mut r = vec![
            format_number(s.time),
            s.phase.to_string(),
            s.phase_kind.to_string(),
            flag(s.open_loop),
        ];
        let err = s.payload_error();
        for v in [&s.payload, &s.payload_reference, &err] {
            r.extend(v.iter().map(|x| format_number(*x)));
        }
        for i in 0..m {
            r.extend([
                format_number(s.lengths[i]),
                format_number(s.length_references[i]),
                format_number(s.lengths[i] - s.length_references[i]),
                format_number(s.azimuths[i]),
                format_number(s.azimuth_references[i]),
                format_number(s.inclinations[i]),
                format_number(s.inclination_references[i]),
                s.tensions.get(i).map(|t| format_number(*t)).unwrap_or_default(),
                flag(s.taut[i]),
            ]);
        }
        for q in &s.quadrotors {
            r.extend(q.iter().map(|x| format_number(*x)));
        }
        r.push(format_number(s.constraint_residual));
        w.write_record(&r).map_err(io)?;
    }
    finish(w)
}

/// Header of [`commands_csv`].
pub fn commands_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["time_s".to_string(), "open_loop".to_string()];
    for j in 1..=n {
        for a in ["x", "y", "z"] {
            h.push(format!("thrust{j}_{a}_N"));
        }
        h.push(format!("collective{j}_N"));
    }
    for i in 1..=m {
        h.extend([
            format!("winch{i}_raw_rad_s"),
            format!("winch{i}_cmd_rad_s"),
            format!("winch{i}_limit_rad_s"),
            format!("winch{i}_saturated"),
        ]);
    }
    h
}

/// Command log: thrust vectors, collectives and winch commands per tick.
/// Collectives are empty during the open-loop takeoff ramp.
pub fn commands_csv(samples: &[Sample], n: usize, m: usize) -> Result<String> {
    let mut w = writer();
    w.write_record(commands_header(n, m)).map_err(io)?;
    for s in samples {
        let mut r = vec![format_number(s.time), flag(s.open_loop)];
        for j in 0..n {
            match s.thrust.get(j) {
                Some(f) => r.extend(f.iter().map(|x| format_number(*x))),
                None => r.extend(std::iter::repeat_n(String::new(), 3)),
            }
            r.push(s.collectives.get(j).map(|c| format_number(*c)).unwrap_or_default());
        }
        for i in 0..m {
            r.extend([
                format_number(s.winch_raw[i]),
                format_number(s.winch_rates[i]),
                format_number(s.winch_limits[i]),
                flag(s.winch_saturated[i]),
            ]);
        }
        w.write_record(&r).map_err(io)?;
    }
    finish(w)
}

#[derive(Serialize)]
struct ScenarioSummaryDoc<'a> {
    schema_version: u32,
    duration: f64,
    phases: Vec<&'static str>,
    noise: bool,
    seed: u64,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

/// JSON summary of a run.
pub fn summary_json(scenario: &Scenario, summary: &RunSummary, noise: bool, seed: u64) -> Result<String> {
    let doc = ScenarioSummaryDoc {
        schema_version: SCHEMA_VERSION,
        duration: scenario.duration(),
        phases: scenario.phases.iter().map(|p| p.kind.name()).collect(),
        noise,
        seed,
        summary,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))
}

#[derive(Serialize)]
struct SweepDoc<'a> {
    schema_version: u32,
    axis: &'static str,
    unit: &'static str,
    metric: &'static str,
    trends: Vec<Trend>,
    rows: &'a [SweepRow],
}

/// JSON sweep document with the full per-cell reports and the trend verdicts.
pub fn sweep_json(table: &SweepTable) -> Result<String> {
    let doc = SweepDoc {
        schema_version: SCHEMA_VERSION,
        axis: table.axis.name(),
        unit: table.axis.unit(),
        metric: table.metric.name(),
        trends: table.trends(),
        rows: &table.rows,
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::sim::{parse_scenario, run_scenario, Phase, PhaseKind, RunOptions};
    use crate::wrench::{sweep, Metric, SweepAxis, SweepSpec, Variant};

    fn short_run() -> (Scenario, crate::sim::ScenarioResult) {
        let sys = presets::prototype().unwrap();
        let mut sc = parse_scenario(presets::RESIZE_HOVER_SCN).unwrap();
        sc.phases.truncate(1);
        sc.phases.push(Phase {
            kind: PhaseKind::Hover { payload_position: None },
            duration: 0.5,
        });
        let r = run_scenario(&sys, &sc, &RunOptions::default()).unwrap();
        (sc, r)
    }

    #[test]
    fn csv_rows_match_header() {
        let (_, r) = short_run();
        for text in [
            timeseries_csv(&r.samples, 3, 3).unwrap(),
            commands_csv(&r.samples, 3, 3).unwrap(),
        ] {
            let mut lines = text.lines();
            let cols = lines.next().unwrap().split(',').count();
            let mut rows = 0;
            for l in lines {
                assert_eq!(l.split(',').count(), cols);
                rows += 1;
            }
            assert_eq!(rows, r.samples.len());
        }
        assert_eq!(timeseries_header(3, 3).len(), 4 + 9 + 27 + 9 + 1);
    }

    #[test]
    fn summary_is_versioned_json() {
        let (sc, r) = short_run();
        let v: serde_json::Value = serde_json::from_str(&summary_json(&sc, &r.summary, false, 0).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["completed"], true);
        assert_eq!(v["length_error"]["mean"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn sweep_json_carries_reports() {
        let sys = presets::table1().unwrap();
        let task = sys.nominal().unwrap().task_state();
        let spec = SweepSpec {
            axis: SweepAxis::Inclination,
            values: vec![30.0, 40.0],
            metric: Metric::CapacityMargin,
            variants: vec![Variant::Acts],
            capacity: Default::default(),
        };
        let table = sweep(&sys, &task, &spec).unwrap();
        let v: serde_json::Value = serde_json::from_str(&sweep_json(&table).unwrap()).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 2);
        assert!(v["rows"][0]["cells"][0]["detail"]["capacity"]["gamma"].is_number());
        assert_eq!(v["trends"][0]["variant"], "acts");
    }
}
