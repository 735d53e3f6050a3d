use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a metrics CSV: `case_id,method,layer,rmse,snr,ssim`; `layer`
/// is empty for single-stage methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub case_id: String,
    pub method: String,
    pub layer: Option<usize>,
    pub rmse: f64,
    pub snr: f64,
    pub ssim: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::format(path, e.to_string()),
    })?;
    rd.deserialize()
        .collect::<std::result::Result<Vec<MetricRow>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Quartiles {
    /// Quantiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Quartiles {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: v[0],
            max: v[v.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub layer: Option<usize>,
    pub count: usize,
    pub rmse: Quartiles,
    pub snr: Quartiles,
    pub ssim: Quartiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<MetricSummary>,
}

/// Statistics per (method, layer), ordered by method then layer.
pub fn summarize(rows: &[MetricRow]) -> Result<Summary> {
    if rows.is_empty() {
        return Err(Error::arg("no metric rows to summarize"));
    }
    let mut groups: BTreeMap<(String, Option<usize>), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.layer))
            .or_default()
            .push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((method, layer), rs)| {
            let col = |f: fn(&MetricRow) -> f64| {
                Quartiles::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            MetricSummary {
                method,
                layer,
                count: rs.len(),
                rmse: col(|r| r.rmse),
                snr: col(|r| r.snr),
                ssim: col(|r| r.ssim),
            }
        })
        .collect();
    Ok(Summary { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, layer: Option<usize>, rmse: f64) -> MetricRow {
        MetricRow {
            case_id: "c".into(),
            method: method.into(),
            layer,
            rmse,
            snr: 20.0,
            ssim: 0.9,
        }
    }

    #[test]
    fn single_row_summary() {
        let s = summarize(&[row("fbp", None, 12.5)]).unwrap();
        assert_eq!(s.groups.len(), 1);
        let q = s.groups[0].rmse;
        assert_eq!((q.mean, q.median, q.q1, q.q3), (12.5, 12.5, 12.5, 12.5));
    }

    #[test]
    fn quartiles_match_sorting_oracle() {
        let v = [7.0, 1.0, 4.0, 9.0, 3.0, 5.0, 8.0, 2.0, 6.0];
        let q = Quartiles::of(&v);
        // Sorted 1..=9: positions 2, 4, 6.
        assert_eq!(
            (q.q1, q.median, q.q3, q.min, q.max, q.mean),
            (3.0, 5.0, 7.0, 1.0, 9.0, 5.0)
        );
        let q = Quartiles::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let rows = vec![row("fbp", None, 1.5), row("super-ep", Some(3), 0.25)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("case_id,method,layer,rmse,snr,ssim\nc,fbp,,1.5,"));
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
        std::fs::write(&p, "case_id,method\nx,y\n").unwrap();
        assert!(matches!(read_metrics_csv(&p), Err(Error::Format { .. })));
    }
}
