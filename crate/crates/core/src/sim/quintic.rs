use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rest-to-rest fifth-order segment from `start` to `end` over `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuinticSegment {
    pub start: f64,
    pub end: f64,
    pub duration: f64,
}

impl QuinticSegment {
    pub fn new(start: f64, end: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quintic duration must be positive, got {duration}"
            )));
        }
        Ok(Self { start, end, duration })
    }

    /// Polynomial coefficients a₀..a₅ in `t`.
    pub fn coefficients(&self) -> [f64; 6] {
        let d = self.end - self.start;
        let t = self.duration;
        [
            self.start,
            0.0,
            0.0,
            10.0 * d / t.powi(3),
            -15.0 * d / t.powi(4),
            6.0 * d / t.powi(5),
        ]
    }

    /// (s, ṡ, s̈) at `t`, clamped to `[0, T]`.
    pub fn evaluate(&self, t: f64) -> (f64, f64, f64) {
        let tau = (t / self.duration).clamp(0.0, 1.0);
        let d = self.end - self.start;
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let s = self.start + d * t3 * (10.0 - 15.0 * tau + 6.0 * t2);
        let v = d / self.duration * 30.0 * t2 * (1.0 - tau) * (1.0 - tau);
        let a = d / (self.duration * self.duration) * 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau);
        (s, v, a)
    }

    /// |ṡ| at mid-segment, `15|Δ|/(8T)`.
    pub fn peak_speed(&self) -> f64 {
        15.0 * (self.end - self.start).abs() / (8.0 * self.duration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn resize_segment() {
        let q = QuinticSegment::new(1.4, 1.0, 4.0).unwrap();
        assert_relative_eq!(q.evaluate(2.0).0, 1.2, epsilon = 1e-15);
        assert_eq!(q.evaluate(0.0), (1.4, 0.0, 0.0));
        let (s, v, a) = q.evaluate(4.0);
        assert_relative_eq!(s, 1.0, epsilon = 1e-15);
        assert_eq!((v, a), (0.0, 0.0));
        assert_relative_eq!(q.peak_speed(), 0.1875, epsilon = 1e-15);
        assert_relative_eq!(q.evaluate(2.0).1.abs(), 0.1875, epsilon = 1e-15);
        assert!(QuinticSegment::new(0.0, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn derivatives_match_polynomial(s0 in -2.0..2.0f64, s1 in -2.0..2.0f64, t in 0.1..10.0f64, f in 0.0..1.0f64) {
            let q = QuinticSegment::new(s0, s1, t).unwrap();
            let c = q.coefficients();
            let x = f * t;
            let p: f64 = (0..6).map(|k| c[k] * x.powi(k as i32)).sum();
            let dp: f64 = (1..6).map(|k| k as f64 * c[k] * x.powi(k as i32 - 1)).sum();
            let ddp: f64 = (2..6).map(|k| (k * (k - 1)) as f64 * c[k] * x.powi(k as i32 - 2)).sum();
            let (s, v, a) = q.evaluate(x);
            prop_assert!((s - p).abs() < 1e-9 && (v - dp).abs() < 1e-9 && (a - ddp).abs() < 1e-8);
            prop_assert!(v.abs() <= q.peak_speed() + 1e-12);
        }
    }
}
