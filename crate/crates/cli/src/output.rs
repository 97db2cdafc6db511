//! Emission of JSON documents and RFC-4180 CSV tables with numbers fixed at
//! 12 significant digits.

use std::io::Write;

use anyhow::Result;
use serde_json::Value;

pub const SIG_DIGITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Nearest double to `x` written with [`SIG_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round_sig(x);
    if r != 0.0 && (r.abs() < 1e-6 || r.abs() >= 1e15) {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Rounds every floating-point number in the document in place.
pub fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("checked f64"));
            if let Some(r) = serde_json::Number::from_f64(x) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn emit_json(mut doc: Value) -> Result<()> {
    round_value(&mut doc);
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    Ok(())
}

pub fn emit_csv(header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Users as a space-separated list of 1-based indices.
pub fn users(list: &[usize]) -> String {
    list.iter()
        .map(|u| (u + 1).to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(num(31.0 / 21.0), "1.47619047619");
        assert_eq!(num(2.0), "2");
        assert_eq!(num(1.0 / 3.0 * 1e-9), "3.33333333333e-10");
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
    }

    #[test]
    fn rounds_nested_values() {
        let mut v = serde_json::json!({"a": [0.1 + 0.2, 3], "b": {"c": 2.0 / 3.0}});
        round_value(&mut v);
        assert_eq!(v["a"][0], 0.3);
        assert_eq!(v["a"][1], 3);
        assert_eq!(v["b"]["c"], 0.666666666667);
    }
}
