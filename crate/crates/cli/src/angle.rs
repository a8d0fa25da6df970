//! Angles given as plain radians or as multiples of π: `pi`, `-pi/4`,
//! `2pi/3`, `3*pi/4`.

use std::f64::consts::PI;

use crate::error::{CliError, Result};

pub fn parse_angle(token: &str) -> Result<f64> {
    let t = token.trim();
    let bad = || CliError::Parameter(format!("cannot parse angle {token:?}; use radians or a form like pi/6"));
    let Some(at) = t.find("pi") else {
        return t.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
    };
    let (head, tail) = (&t[..at], &t[at + 2..]);
    let head = head.strip_suffix('*').unwrap_or(head);
    let numerator = match head {
        "" | "+" => 1.0,
        "-" => -1.0,
        h => h.parse::<f64>().map_err(|_| bad())?,
    };
    let denominator = match tail {
        "" => 1.0,
        d => d.strip_prefix('/').ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?,
    };
    let value = numerator * PI / denominator;
    if denominator == 0.0 || !value.is_finite() {
        return Err(bad());
    }
    Ok(value)
}
