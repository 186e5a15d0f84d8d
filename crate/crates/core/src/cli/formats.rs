//! On-disk formats. Floats are written in shortest round-trip form so files
//! are byte-stable across runs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distance::SignedDistance;
use crate::distribution::SkinDistribution;
use crate::error::{Error, Result};
use crate::estimator::{BayesEstimator, EvalRecord};
use crate::mitigation::WeightRow;
use crate::trainer::TrainHistory;

pub const DISTRIBUTION_HEADER: &str = "sample_id,n";
pub const DISTANCES_HEADER: [&str; 5] = ["sample_id", "baseline_id", "magnitude", "sign", "value"];
pub const RECORDS_HEADER: [&str; 5] = ["sample_id", "score", "predicted", "label", "distance"];
pub const WEIGHTS_HEADER: [&str; 4] = ["sample_id", "distance", "epsilon", "penalty_weight"];
pub const HISTORY_HEADER: [&str; 5] = ["epoch", "loss", "val_f1", "val_accuracy", "penalized"];
pub const CURVE_HEADER: [&str; 5] = ["distance", "mean", "std", "lower", "upper"];
pub const HISTOGRAM_HEADER: [&str; 5] = ["sample_id", "bin_lo", "bin_hi", "count", "density"];
pub const DATASET_HEADER: [&str; 8] = [
    "sample_id",
    "label",
    "tone",
    "mean",
    "std",
    "median",
    "lower_spread",
    "upper_spread",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn parse_bit(s: &str, path: &Path, what: &str) -> Result<bool> {
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::format(path, format!("{what} must be 0 or 1, got `{other}`"))),
    }
}

fn parse_f64(s: &str, path: &Path, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("{what} is not a number: `{s}`")))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `sample_id,n` header, then `<id>,<n>`, then one ITA value per line.
pub fn write_distribution(path: &Path, d: &SkinDistribution) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{DISTRIBUTION_HEADER}").map_err(io)?;
    writeln!(w, "{},{}", d.source_id(), d.len()).map_err(io)?;
    for v in d.samples() {
        writeln!(w, "{v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_distribution(path: &Path) -> Result<SkinDistribution> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(|e| Error::io(path, e)) };
    let header = next()?.ok_or_else(|| Error::format(path, "empty file"))?;
    if header.trim() != DISTRIBUTION_HEADER {
        return Err(Error::format(path, format!("expected header `{DISTRIBUTION_HEADER}`")));
    }
    let meta = next()?.ok_or_else(|| Error::format(path, "missing sample line"))?;
    let (id, n) = meta
        .trim()
        .rsplit_once(',')
        .ok_or_else(|| Error::format(path, "sample line must be `<id>,<n>`"))?;
    let n: usize = n
        .trim()
        .parse()
        .map_err(|_| Error::format(path, format!("bad sample count `{n}`")))?;
    let mut values = Vec::with_capacity(n);
    while let Some(line) = next()? {
        if line.trim().is_empty() {
            continue;
        }
        values.push(parse_f64(&line, path, "ITA value")?);
    }
    if values.len() != n {
        return Err(Error::format(
            path,
            format!("declared {n} values, found {}", values.len()),
        ));
    }
    SkinDistribution::new(id.trim(), values)
}

pub fn write_distances(path: &Path, rows: &[SignedDistance]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(DISTANCES_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample_id.clone(),
            r.baseline_id.clone(),
            r.magnitude.to_string(),
            r.sign.to_string(),
            r.value.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn read_distances(path: &Path) -> Result<Vec<SignedDistance>> {
    let mut rdr = csv_reader(path)?;
    let rows: Vec<SignedDistance> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::format(path, "no distance rows"));
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    sample_id: String,
    score: f64,
    #[serde(default)]
    predicted: Option<String>,
    label: String,
    #[serde(default)]
    distance: Option<f64>,
}

/// Records with an optional `distance` column. A missing `predicted` column
/// is derived from `score >= threshold`.
pub fn read_records(path: &Path, threshold: f64) -> Result<Vec<(EvalRecord, bool)>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    for need in ["sample_id", "score", "label"] {
        if !headers.iter().any(|h| h == need) {
            return Err(Error::format(path, format!("missing `{need}` column")));
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: RecordRow = row?;
        let predicted = match row.predicted.as_deref().filter(|s| !s.is_empty()) {
            Some(p) => parse_bit(p, path, "predicted")?,
            None => row.score >= threshold,
        };
        let has_distance = row.distance.is_some();
        out.push((
            EvalRecord {
                sample_id: row.sample_id,
                score: row.score,
                predicted,
                label: parse_bit(&row.label, path, "label")?,
                distance: row.distance.unwrap_or(f64::NAN),
            },
            has_distance,
        ));
    }
    if out.is_empty() {
        return Err(Error::format(path, "no records"));
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record([
            r.sample_id.clone(),
            r.score.to_string(),
            bit(r.predicted).into(),
            bit(r.label).into(),
            r.distance.to_string(),
        ])?;
    }
    finish(w, path)
}

/// `sample_id -> value` from a two-column CSV with a header.
fn read_pairs(path: &Path, key: &str, value: &str) -> Result<Vec<(String, String)>> {
    let mut rdr = csv_reader(path)?;
    let h = rdr.headers()?.clone();
    let ki = h.iter().position(|c| c == key);
    let vi = h.iter().position(|c| c == value);
    let (Some(ki), Some(vi)) = (ki, vi) else {
        return Err(Error::format(path, format!("expected `{key}` and `{value}` columns")));
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push((rec[ki].to_owned(), rec[vi].to_owned()));
    }
    Ok(out)
}

/// `sample_id,group` with groups 0 or 1.
pub fn read_groups(path: &Path) -> Result<HashMap<String, u8>> {
    read_pairs(path, "sample_id", "group")?
        .into_iter()
        .map(|(k, v)| Ok((k, u8::from(parse_bit(&v, path, "group")?))))
        .collect()
}

/// `sample_id,label` with labels 0 or 1.
pub fn read_labels(path: &Path) -> Result<HashMap<String, bool>> {
    read_pairs(path, "sample_id", "label")?
        .into_iter()
        .map(|(k, v)| Ok((k, parse_bit(&v, path, "label")?)))
        .collect()
}

pub fn write_weights(path: &Path, rows: &[WeightRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(WEIGHTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.sample_id.clone(),
            r.distance.to_string(),
            r.epsilon.to_string(),
            r.penalty_weight.to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in &h.rows {
        w.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            opt(r.val_f1),
            r.val_accuracy.to_string(),
            bit(r.penalized).into(),
        ])?;
    }
    finish(w, path)
}

/// Predictive mean and a one-standard-deviation band over `points` evenly
/// spaced distances in `[lo, hi]`.
pub fn write_curve(path: &Path, est: &BayesEstimator, lo: f64, hi: f64, points: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CURVE_HEADER)?;
    for (d, mean, std) in curve_points(est, lo, hi, points) {
        w.write_record([
            d.to_string(),
            mean.to_string(),
            std.to_string(),
            (mean - std).to_string(),
            (mean + std).to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn curve_points(est: &BayesEstimator, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64, f64)> {
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let d = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            (d, est.predict(d), est.predictive_variance(d).sqrt())
        })
        .collect()
}

pub fn write_histograms(path: &Path, dists: &[SkinDistribution], bins: usize) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HISTOGRAM_HEADER)?;
    for d in dists {
        for b in d.histogram(bins, -90.0, 90.0)? {
            w.write_record([
                d.source_id().to_owned(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
                b.density.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_estimator(path: &Path) -> Result<BayesEstimator> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BayesEstimator::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let d = SkinDistribution::new("img_01", vec![45.0, -12.345678901234567, 0.1]).unwrap();
        write_distribution(&p, &d).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sample_id,n\nimg_01,3\n"));
        assert_eq!(read_distribution(&p).unwrap(), d);
    }

    #[test]
    fn distribution_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "sample_id,n\nx,3\n1.0\n2.0\n").unwrap();
        assert!(matches!(read_distribution(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn records_without_predicted_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        std::fs::write(&p, "sample_id,score,label\na,0.7,1\nb,0.2,0\n").unwrap();
        let r = read_records(&p, 0.5).unwrap();
        assert!(r[0].0.predicted && !r[1].0.predicted);
        assert!(!r[0].1);
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let recs = vec![EvalRecord::new("a", 0.25, true, -3.5, 0.5)];
        write_records(&p, &recs).unwrap();
        let back = read_records(&p, 0.5).unwrap();
        assert_eq!(back[0].0, recs[0]);
        assert!(back[0].1);
    }
}
