//! Reading data files, system descriptions and flag values.

use std::path::Path;

use monospline::kernel::StateSpace;
use monospline::linalg::{matrix_from_rows, Matrix};
use monospline::problem::{DataSet, EqualityConstraint, EqualityKind};
use monospline::realization::parse_transfer_function;
use monospline::spline::BoxBound;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct DataRow {
    t: f64,
    alpha: f64,
    #[serde(default)]
    w: Option<f64>,
}

/// CSV with header `t,alpha[,w]`; rows without `w` take `default_weight`.
pub fn read_data(path: &Path, default_weight: f64, smoothing: f64) -> Result<DataSet, String> {
    let shown = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot read data file {shown}: {e}"))?;
    let headers = reader.headers().map_err(|e| format!("data file {shown}: {e}"))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(format!("data file {shown} is empty; expected a header `t,alpha[,w]`"));
    }
    for required in ["t", "alpha"] {
        if !headers.iter().any(|h| h == required) {
            return Err(format!("data file {shown}: header lacks a `{required}` column"));
        }
    }
    let (mut times, mut values, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<DataRow>().enumerate() {
        let row = row.map_err(|e| format!("data file {shown}, record {}: {e}", i + 1))?;
        times.push(row.t);
        values.push(row.alpha);
        weights.push(row.w.unwrap_or(default_weight));
    }
    if times.is_empty() {
        return Err(format!("data file {shown} contains no samples"));
    }
    DataSet::new(times, values, weights, smoothing).map_err(|e| format!("data file {shown}: {e}"))
}

fn coefficients(text: &str, what: &str) -> Result<Vec<f64>, String> {
    let coeffs = text
        .split_whitespace()
        .map(|c| {
            c.parse::<f64>()
                .map_err(|e| format!("--system-tf: bad {what} coefficient {c:?}: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if coeffs.is_empty() {
        return Err(format!("--system-tf: {what} has no coefficients"));
    }
    Ok(coeffs)
}

/// `"NUM,DEN"` with space-separated coefficients in descending powers,
/// e.g. `"1,1 0 1 0 0"` for `1/(s⁴ + s²)`.
pub fn system_from_tf(text: &str, horizon: f64) -> Result<StateSpace, String> {
    let (num, den) = text
        .split_once(',')
        .ok_or_else(|| format!("--system-tf: expected \"NUM,DEN\", got {text:?}"))?;
    let num = coefficients(num, "numerator")?;
    let den = coefficients(den, "denominator")?;
    parse_transfer_function(&num, &den, horizon).map_err(|e| format!("--system-tf: {e}"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateSpaceFile {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// JSON object `{"a": [[..], ..], "b": [..], "c": [..]}`; `a` is given by rows.
pub fn system_from_file(path: &Path, horizon: f64) -> Result<StateSpace, String> {
    let shown = path.display();
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read system file {shown}: {e}"))?;
    let raw: StateSpaceFile = serde_json::from_str(&text).map_err(|e| format!("system file {shown}: {e}"))?;
    let a = matrix_from_rows(&raw.a).map_err(|e| format!("system file {shown}, field a: {e}"))?;
    let b = Matrix::from_column_slice(raw.b.len(), 1, &raw.b);
    let c = Matrix::from_row_slice(1, raw.c.len(), &raw.c);
    StateSpace::new(a, b, c, horizon).map_err(|e| format!("system file {shown}: {e}"))
}

pub fn parse_box(text: &str) -> Result<BoxBound, String> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(BoxBound::Auto);
    }
    let r: f64 = text
        .parse()
        .map_err(|_| format!("expected a number or \"auto\", got {text:?}"))?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(format!("r must be positive and finite, got {r}"));
    }
    Ok(BoxBound::Fixed(r))
}

/// `kind:t:target` with kind `value`/`y` or `derivative`/`ydot`.
pub fn parse_equality(text: &str) -> Result<EqualityConstraint, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let [kind, t, target] = parts[..] else {
        return Err(format!("expected kind:t:target, got {text:?}"));
    };
    let kind = match kind.trim() {
        "value" | "y" => EqualityKind::Value,
        "derivative" | "ydot" => EqualityKind::Derivative,
        other => return Err(format!("unknown equality kind {other:?}; use value or derivative")),
    };
    let number = |s: &str, name: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad {name} {s:?} in {text:?}"))
    };
    Ok(EqualityConstraint {
        kind,
        t: number(t, "time")?,
        target: number(target, "target")?,
    })
}

pub fn parse_positive(text: &str) -> Result<f64, String> {
    let v: f64 = text.parse().map_err(|_| format!("expected a number, got {text:?}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive and finite, got {v}"))
    }
}
