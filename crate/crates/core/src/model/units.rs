//! Unit-suffixed quantities accepted by the system-description format.
//!
//! A bare number is taken as SI. A string carries a trailing unit, e.g.
//! `"6 kgcm"`, `"120 deg"` or `"[0, 0, -2] cm"`.

use std::fmt;
use std::marker::PhantomData;

use serde::de::{self, Deserializer};
use serde::Deserialize;

/// Physical dimension of a configuration field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Length,
    Mass,
    Angle,
    Force,
    Torque,
    AngularRate,
    Time,
    Dimensionless,
}

impl UnitKind {
    fn factor(self, unit: &str) -> Option<f64> {
        use UnitKind::*;
        let f = match (self, unit) {
            (Length, "m") => 1.0,
            (Length, "cm") => 1e-2,
            (Length, "mm") => 1e-3,
            (Mass, "kg") => 1.0,
            (Mass, "g") => 1e-3,
            (Angle, "rad") => 1.0,
            (Angle, "deg") => std::f64::consts::PI / 180.0,
            (Force, "N") => 1.0,
            (Force, "kgf") => 9.80665,
            (Torque, "Nm" | "N*m" | "N.m" | "N·m") => 1.0,
            (Torque, "kgcm" | "kg*cm" | "kg.cm" | "kg·cm") => 0.0980665,
            (AngularRate, "rad/s") => 1.0,
            (AngularRate, "deg/s") => std::f64::consts::PI / 180.0,
            (AngularRate, "rpm") => std::f64::consts::TAU / 60.0,
            (Time, "s") => 1.0,
            (Time, "ms") => 1e-3,
            _ => return None,
        };
        Some(f)
    }

    fn name(self) -> &'static str {
        match self {
            UnitKind::Length => "length (m, cm, mm)",
            UnitKind::Mass => "mass (kg, g)",
            UnitKind::Angle => "angle (rad, deg)",
            UnitKind::Force => "force (N, kgf)",
            UnitKind::Torque => "torque (Nm, kgcm)",
            UnitKind::AngularRate => "angular rate (rad/s, deg/s, rpm)",
            UnitKind::Time => "time (s, ms)",
            UnitKind::Dimensionless => "dimensionless",
        }
    }
}

fn split_unit(text: &str) -> (&str, Option<&str>) {
    let text = text.trim();
    // The unit is the trailing token after the last ']' or whitespace.
    let cut = match text.rfind(']') {
        Some(p) => p + 1,
        None => match text.rfind(char::is_whitespace) {
            Some(p) => p,
            None => {
                // Allow glued suffixes like "2cm".
                let p = text
                    .char_indices()
                    .find(|(_, c)| c.is_alphabetic() && *c != 'e' && *c != 'E')
                    .map(|(i, _)| i)
                    .unwrap_or(text.len());
                p
            }
        },
    };
    let (value, unit) = text.split_at(cut);
    let unit = unit.trim();
    (value.trim(), if unit.is_empty() { None } else { Some(unit) })
}

fn scale(kind: UnitKind, unit: Option<&str>) -> Result<f64, String> {
    match unit {
        None => Ok(1.0),
        Some(u) => kind
            .factor(u)
            .ok_or_else(|| format!("unknown unit `{u}` for {}", kind.name())),
    }
}

/// Parses `"<number> <unit>"` into SI.
pub fn parse_quantity(text: &str, kind: UnitKind) -> Result<f64, String> {
    let (value, unit) = split_unit(text);
    let v: f64 = value
        .parse()
        .map_err(|_| format!("`{text}` is not a number with an optional unit"))?;
    Ok(v * scale(kind, unit)?)
}

/// Parses `"[a, b, c] <unit>"` (or whitespace separated) into SI.
pub fn parse_vector(text: &str, kind: UnitKind) -> Result<Vec<f64>, String> {
    let (value, unit) = split_unit(text);
    let s = scale(kind, unit)?;
    let body = value.trim().trim_start_matches('[').trim_end_matches(']');
    body.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map(|v| v * s)
                .map_err(|_| format!("`{t}` in `{text}` is not a number"))
        })
        .collect()
}

pub(crate) trait Dim {
    const KIND: UnitKind;
}

macro_rules! dims {
    ($($name:ident => $kind:ident),* $(,)?) => {
        $(
            #[derive(Debug, Clone, Copy)]
            pub(crate) struct $name;
            impl Dim for $name {
                const KIND: UnitKind = UnitKind::$kind;
            }
        )*
    };
}

dims! {
    Length => Length,
    Mass => Mass,
    Angle => Angle,
    Force => Force,
    Torque => Torque,
    AngularRate => AngularRate,
    Time => Time,
}

/// Scalar quantity in SI after deserialization.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Q<D>(pub f64, pub PhantomData<D>);

/// Vector quantity in SI after deserialization.
#[derive(Debug, Clone)]
pub(crate) struct QV<D>(pub Vec<f64>, pub PhantomData<D>);

#[derive(Deserialize)]
#[serde(untagged)]
enum RawScalar {
    Num(f64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawVector {
    Nums(Vec<f64>),
    Text(String),
}

impl<'de, D: Dim> Deserialize<'de> for Q<D> {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let v = match RawScalar::deserialize(d)
            .map_err(|_| de::Error::custom(format!("expected a number or a string with a {} unit", D::KIND.name())))?
        {
            RawScalar::Num(v) => v,
            RawScalar::Text(t) => parse_quantity(&t, D::KIND).map_err(de::Error::custom)?,
        };
        Ok(Q(v, PhantomData))
    }
}

impl<'de, D: Dim> Deserialize<'de> for QV<D> {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let v = match RawVector::deserialize(d).map_err(|_| {
            de::Error::custom(format!(
                "expected an array of numbers or a string like \"[1, 2, 3] unit\" ({})",
                D::KIND.name()
            ))
        })? {
            RawVector::Nums(v) => v,
            RawVector::Text(t) => parse_vector(&t, D::KIND).map_err(de::Error::custom)?,
        };
        Ok(QV(v, PhantomData))
    }
}

impl<D> fmt::Display for Q<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stall_torque_in_kgcm() {
        assert_relative_eq!(parse_quantity("6 kgcm", UnitKind::Torque).unwrap(), 0.588399, epsilon = 1e-12);
    }

    #[test]
    fn angles_and_lengths() {
        assert_relative_eq!(
            parse_quantity("120 deg", UnitKind::Angle).unwrap(),
            120f64.to_radians(),
            epsilon = 1e-15
        );
        assert_relative_eq!(parse_quantity("2cm", UnitKind::Length).unwrap(), 0.02, epsilon = 1e-15);
        assert_relative_eq!(parse_quantity("1.5e-2", UnitKind::Length).unwrap(), 0.015, epsilon = 1e-15);
        let v = parse_vector("[0, 0, -6.4] cm", UnitKind::Length).unwrap();
        assert_relative_eq!(v[2], -0.064, epsilon = 1e-15);
    }

    #[test]
    fn wrong_unit_is_rejected() {
        let err = parse_quantity("3 kg", UnitKind::Length).unwrap_err();
        assert!(err.contains("unknown unit `kg`"), "{err}");
    }
}
