use std::fs;
use std::path::Path;

use serde::Deserialize;

use pottab::bayes::BetaPrior;
use pottab::table::{parse_counts, read_count_rows};
use pottab::{Method, ObservedTable};

use crate::commands::Failure;
use crate::TableSource;

pub fn counts_arg(s: &str) -> Result<[u64; 4], String> {
    parse_counts(s).map_err(|e| e.to_string())
}

pub fn prior_arg(s: &str) -> Result<BetaPrior, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| format!("'{f}': {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a1, b1, a0, b0] => BetaPrior::new(a1, b1, a0, b0).map_err(|e| e.to_string()),
        _ => Err(format!("expected alpha1,beta1,alpha0,beta0, got {} values", v.len())),
    }
}

pub fn level_arg(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("level must lie in (0, 1), got {v}"))
    }
}

pub fn study_arg(s: &str) -> Result<pottab::sim::StudyId, String> {
    s.parse().map_err(|e: pottab::Error| e.to_string())
}

pub fn method_arg(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: pottab::Error| e.to_string())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonTable {
    Named { n11: u64, n10: u64, n01: u64, n00: u64 },
    Cells([u64; 4]),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonTables {
    One(JsonTable),
    Many(Vec<JsonTable>),
}

fn read_file(path: &Path) -> Result<Vec<[u64; 4]>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let bad = |e: String| Failure::usage(format!("{}: {e}", path.display()));
    let rows = if text.trim_start().starts_with(['{', '[']) {
        let cells = |t: JsonTable| match t {
            JsonTable::Named { n11, n10, n01, n00 } => [n11, n10, n01, n00],
            JsonTable::Cells(c) => c,
        };
        match serde_json::from_str::<JsonTables>(&text).map_err(|e| bad(e.to_string()))? {
            JsonTables::One(t) => vec![cells(t)],
            JsonTables::Many(ts) => ts.into_iter().map(cells).collect(),
        }
    } else {
        read_count_rows(text.as_bytes()).map_err(|e| bad(e.to_string()))?
    };
    if rows.is_empty() {
        return Err(bad("no tables found".into()));
    }
    Ok(rows)
}

/// Observed tables named by the arguments. Malformed input is a usage
/// error; tables that parse but cannot be analysed are analysis errors.
pub fn tables(source: &TableSource) -> Result<Vec<ObservedTable>, Failure> {
    let rows = match (&source.table, &source.file) {
        (Some(c), _) => vec![*c],
        (None, Some(path)) => read_file(path)?,
        (None, None) => return Err(Failure::usage("need --table or --file".into())),
    };
    rows.into_iter()
        .map(|[a, b, c, d]| ObservedTable::new(a, b, c, d).map_err(Failure::analysis))
        .collect()
}
