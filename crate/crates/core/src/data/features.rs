//! Image-feature files: a `dim D count N` header, then N lines of D
//! space-separated decimals, line i belonging to sentence i.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn parse_features(text: &str, expected_count: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format("feature file", "missing header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (dim, count) = match parts.as_slice() {
        ["dim", d, "count", n] => (
            d.parse::<usize>()
                .map_err(|_| Error::format("feature file", format!("bad dim {d:?}")))?,
            n.parse::<usize>()
                .map_err(|_| Error::format("feature file", format!("bad count {n:?}")))?,
        ),
        _ => {
            return Err(Error::format(
                "feature file",
                format!("header must read `dim D count N`, got {header:?}"),
            ))
        }
    };
    if dim == 0 {
        return Err(Error::format("feature file", "dim must be positive"));
    }
    if let Some(expected) = expected_count {
        if expected != count {
            return Err(Error::format(
                "feature file",
                format!("expected {expected} vectors, header declares {count}"),
            ));
        }
    }
    let rows = lines
        .map(|(i, line)| {
            let row = line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| {
                            Error::format(
                                "feature file",
                                format!("line {}: bad value {v:?}", i + 1),
                            )
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != dim {
                return Err(Error::format(
                    "feature file",
                    format!("line {}: expected {dim} values, found {}", i + 1, row.len()),
                ));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.len() != count {
        return Err(Error::format(
            "feature file",
            format!("expected {count} vectors, found {}", rows.len()),
        ));
    }
    Ok(rows)
}

pub fn load_features(
    path: impl AsRef<Path>,
    expected_count: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_features(&text, expected_count)
}

/// Renders with 17 significant digits, which round-trips every `f64`.
pub fn format_features(rows: &[Vec<f64>]) -> Result<String> {
    let dim = rows.first().map_or(0, Vec::len);
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Invalid(
            "feature rows must be non-empty and equal length".into(),
        ));
    }
    let mut out = format!("dim {dim} count {}\n", rows.len());
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_features(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    fs::write(path.as_ref(), format_features(rows)?).map_err(|e| Error::io(path, e))
}
