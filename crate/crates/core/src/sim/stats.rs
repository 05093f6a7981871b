use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed mean, standard deviation and worst magnitude per channel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub max_abs: Vec<f64>,
    pub samples: usize,
}

impl ErrorStats {
    /// `rows` holds one vector of channel values per sample.
    pub fn from_rows(rows: &[Vec<f64>], channels: usize) -> Self {
        let n = rows.len();
        if n == 0 {
            return Self {
                mean: vec![0.0; channels],
                std: vec![0.0; channels],
                mean_abs: vec![0.0; channels],
                max_abs: vec![0.0; channels],
                samples: 0,
            };
        }
        let mut mean = vec![0.0; channels];
        let mut mean_abs = vec![0.0; channels];
        let mut max_abs = vec![0.0f64; channels];
        for r in rows {
            for c in 0..channels {
                mean[c] += r[c];
                mean_abs[c] += r[c].abs();
                max_abs[c] = max_abs[c].max(r[c].abs());
            }
        }
        for c in 0..channels {
            mean[c] /= n as f64;
            mean_abs[c] /= n as f64;
        }
        let mut std = vec![0.0; channels];
        for r in rows {
            for c in 0..channels {
                std[c] += (r[c] - mean[c]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / n as f64).sqrt();
        }
        Self {
            mean,
            std,
            mean_abs,
            max_abs,
            samples: n,
        }
    }
}

/// Fits `|e(t)| = C (1 + λt) e^{−λt}`, the error envelope of a critically
/// damped second-order system with a double pole at `−λ`, to samples with
/// `|e| > floor`. Returns λ.
pub fn fit_double_pole(times: &[f64], errors: &[f64], floor: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(errors)
        .filter(|(_, e)| e.abs() > floor)
        .map(|(&t, &e)| (t, e.abs().ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(
            "too few samples above the noise floor to fit a decay rate".into(),
        ));
    }
    let sse = |lambda: f64| {
        let shape = |t: f64| -lambda * t + (lambda * t).ln_1p();
        let c = pts.iter().map(|(t, y)| y - shape(*t)).sum::<f64>() / pts.len() as f64;
        pts.iter().map(|(t, y)| (y - c - shape(*t)).powi(2)).sum::<f64>()
    };
    // Golden-section search on log λ.
    let (mut a, mut b) = (1e-3f64.ln(), 1e3f64.ln());
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (sse(x1.exp()), sse(x2.exp()));
    for _ in 0..200 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = sse(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = sse(x2.exp());
        }
        if b - a < 1e-12 {
            break;
        }
    }
    Ok((0.5 * (a + b)).exp())
}
