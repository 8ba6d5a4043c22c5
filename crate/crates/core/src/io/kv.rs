//! `key=value` report lines.
//!
//! Floats are rounded to 7 significant digits (the precision of values read
//! from 32-bit float files), then to 10 decimal places, and printed without
//! trailing zeros, keeping at least one decimal (`0.2`, `1.0`, `20.0`).
//! Infinities print as `inf`/`-inf`, integers as plain digits.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KvValue {
    Float(f64),
    Int(u64),
}

impl From<f64> for KvValue {
    fn from(v: f64) -> Self {
        KvValue::Float(v)
    }
}

impl From<usize> for KvValue {
    fn from(v: usize) -> Self {
        KvValue::Int(v as u64)
    }
}

pub fn format_value(v: KvValue) -> String {
    match v {
        KvValue::Int(i) => i.to_string(),
        KvValue::Float(f) if f.is_nan() => "nan".into(),
        KvValue::Float(f) if f.is_infinite() => if f > 0.0 { "inf" } else { "-inf" }.into(),
        KvValue::Float(f) => {
            let f: f64 = format!("{f:.6e}").parse().unwrap_or(f);
            let mut s = format!("{f:.10}");
            while s.ends_with('0') && !s.ends_with(".0") {
                s.pop();
            }
            if s == "-0.0" {
                s.remove(0);
            }
            s
        }
    }
}

/// Joins entries into one space-separated line (no trailing newline).
pub fn format_kv<I, V>(entries: I) -> String
where
    I: IntoIterator<Item = (&'static str, V)>,
    V: Into<KvValue>,
{
    let mut line = String::new();
    for (k, v) in entries {
        if !line.is_empty() {
            line.push(' ');
        }
        let _ = write!(line, "{k}={}", format_value(v.into()));
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_rules() {
        assert_eq!(format_value(1.0.into()), "1.0");
        assert_eq!(format_value(0.19999999999999996.into()), "0.2");
        assert_eq!(format_value(0.9999999999999998.into()), "1.0");
        assert_eq!(format_value(20.000000000000004.into()), "20.0");
        assert_eq!(format_value(f64::INFINITY.into()), "inf");
        assert_eq!(format_value(1.25e-3.into()), "0.00125");
        assert_eq!(format_value(f64::from(1.2f32).into()), "1.2");
        assert_eq!(format_value(0.0075407723.into()), "0.007540772");
        assert_eq!(format_value(27.534567891.into()), "27.53457");
        assert_eq!(format_value(KvValue::Float(-1e-12)), "0.0");
        assert_eq!(format_value(KvValue::Int(42)), "42");
    }

    #[test]
    fn joins_entries() {
        assert_eq!(format_kv([("psnr", f64::INFINITY), ("ssim", 1.0)]), "psnr=inf ssim=1.0");
    }
}
