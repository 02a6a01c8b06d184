//! CSV artifacts. Floats are written in Rust's shortest round-trip form, so
//! reading a file back reproduces the exact values.

use std::path::Path;

use ebmgeo_core::ebm::EbmLogRow;
use ebmgeo_core::eval::PathRecord;
use ebmgeo_core::geodesic::GeodesicPath;
use ebmgeo_core::Tensor;

use crate::error::{PipelineError, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| PipelineError::format(path, e))
}

pub fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| PipelineError::format(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| PipelineError::format(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// Header and string fields of every record.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| PipelineError::format(path, e))?;
    let header = r.headers().map_err(|e| PipelineError::format(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| PipelineError::format(path, e))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| PipelineError::format(path, format!("row {line}: cannot parse {field:?}")))
}

fn expect_header(path: &Path, found: &[String], expected: &[&str]) -> Result<()> {
    if found != expected {
        return Err(PipelineError::format(path, format!("expected header {expected:?}, found {found:?}")));
    }
    Ok(())
}

fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

/// One point per row, columns `x0, x1, …`.
pub fn write_points(path: &Path, points: &Tensor) -> Result<()> {
    let header = coord_header("x", points.cols());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &header, (0..points.rows()).map(|i| points.row(i).iter().map(f64::to_string).collect()))
}

pub fn read_points(path: &Path) -> Result<Tensor> {
    let (header, rows) = read_rows(path)?;
    let d = header.len();
    expect_header(path, &header, &coord_header("x", d).iter().map(String::as_str).collect::<Vec<_>>())?;
    let mut data = Vec::with_capacity(rows.len() * d);
    for (i, row) in rows.iter().enumerate() {
        for f in row {
            data.push(parse(path, f, i + 1)?);
        }
    }
    Tensor::matrix(rows.len(), d, data).map_err(|e| PipelineError::format(path, e))
}

/// Endpoint pairs: `pair_id, start_x0, …, end_x0, …`.
pub fn write_pairs(path: &Path, starts: &Tensor, ends: &Tensor) -> Result<()> {
    let d = starts.cols();
    let mut header = vec![String::from("pair_id")];
    header.extend(coord_header("start_x", d));
    header.extend(coord_header("end_x", d));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        path,
        &header,
        (0..starts.rows()).map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(starts.row(i).iter().chain(ends.row(i)).map(f64::to_string));
            row
        }),
    )
}

pub fn read_pairs(path: &Path) -> Result<(Tensor, Tensor)> {
    let (header, rows) = read_rows(path)?;
    if header.first().map(String::as_str) != Some("pair_id") || header.len() % 2 != 1 {
        return Err(PipelineError::format(path, "expected pair_id followed by start and end coordinates"));
    }
    let d = header.len() / 2;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, row) in rows.iter().enumerate() {
        if parse::<usize>(path, &row[0], i + 1)? != i {
            return Err(PipelineError::format(path, format!("row {}: pair ids must count up from 0", i + 1)));
        }
        for j in 0..d {
            a.push(parse(path, &row[1 + j], i + 1)?);
            b.push(parse(path, &row[1 + d + j], i + 1)?);
        }
    }
    let n = rows.len();
    Ok((
        Tensor::matrix(n, d, a).map_err(|e| PipelineError::format(path, e))?,
        Tensor::matrix(n, d, b).map_err(|e| PipelineError::format(path, e))?,
    ))
}

/// Paths in long form: `pair_id, t, x0, x1, …`, one row per grid point.
/// Pairs without a path are simply absent.
pub fn write_paths(path: &Path, paths: &[Option<GeodesicPath>]) -> Result<()> {
    let d = paths.iter().flatten().next().map_or(2, |p| p.dim());
    let mut header = vec![String::from("pair_id"), String::from("t")];
    header.extend(coord_header("x", d));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = paths.iter().enumerate().filter_map(|(i, p)| p.as_ref().map(|p| (i, p))).flat_map(|(i, p)| {
        (0..p.len()).map(move |k| {
            let mut row = vec![i.to_string(), (k as f64 * p.dt()).to_string()];
            row.extend(p.point(k).iter().map(f64::to_string));
            row
        })
    });
    write_rows(path, &header, rows)
}

/// Reads paths for `n_pairs` pairs; slots with no rows come back as `None`.
pub fn read_paths(path: &Path, n_pairs: usize) -> Result<Vec<Option<GeodesicPath>>> {
    let (header, rows) = read_rows(path)?;
    if header.len() < 3 || header[0] != "pair_id" || header[1] != "t" {
        return Err(PipelineError::format(path, "expected columns pair_id, t, x0, …"));
    }
    let d = header.len() - 2;
    let mut buffers: Vec<Vec<f64>> = vec![Vec::new(); n_pairs];
    for (i, row) in rows.iter().enumerate() {
        let id: usize = parse(path, &row[0], i + 1)?;
        if id >= n_pairs {
            return Err(PipelineError::format(path, format!("row {}: pair {id} out of range", i + 1)));
        }
        for f in &row[2..] {
            buffers[id].push(parse(path, f, i + 1)?);
        }
    }
    buffers
        .into_iter()
        .map(|b| {
            if b.is_empty() {
                return Ok(None);
            }
            let t = b.len() / d;
            let pts = Tensor::matrix(t, d, b).map_err(|e| PipelineError::format(path, e))?;
            GeodesicPath::new(pts).map(Some).map_err(|e| PipelineError::format(path, e))
        })
        .collect()
}

pub fn write_ebm_log(path: &Path, log: &[EbmLogRow]) -> Result<()> {
    write_rows(
        path,
        &["step", "cd_loss", "reg_loss", "mean_e_pos", "mean_e_neg"],
        log.iter().map(|r| {
            vec![
                r.step.to_string(),
                r.cd_loss.to_string(),
                r.reg_loss.to_string(),
                r.mean_e_pos.to_string(),
                r.mean_e_neg.to_string(),
            ]
        }),
    )
}

pub fn write_loss_log(path: &Path, losses: &[f64]) -> Result<()> {
    write_rows(path, &["step", "loss"], losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]))
}

pub fn write_records(path: &Path, records: &[PathRecord]) -> Result<()> {
    write_rows(
        path,
        &["metric", "solver", "pair_id", "acc_prob_raw", "acc_prob_normalized", "rmse"],
        records.iter().map(|r| {
            vec![
                r.metric.clone(),
                r.solver.clone(),
                r.pair_id.to_string(),
                r.acc_prob_raw.to_string(),
                r.acc_prob_normalized.to_string(),
                r.rmse.map(|v| v.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

/// Step-size profile of one path per metric: `metric, step, size`.
pub fn write_step_sizes(path: &Path, curves: &[(String, Vec<f64>)]) -> Result<()> {
    write_rows(
        path,
        &["metric", "step", "size"],
        curves
            .iter()
            .flat_map(|(m, sizes)| sizes.iter().enumerate().map(move |(k, s)| vec![m.clone(), k.to_string(), s.to_string()])),
    )
}

pub fn read_step_sizes(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &["metric", "step", "size"])?;
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let v = parse(path, &row[2], i + 1)?;
        match curves.last_mut() {
            Some((m, sizes)) if *m == row[0] => sizes.push(v),
            _ => curves.push((row[0].clone(), vec![v])),
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_and_paths_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let pts = Tensor::from_rows(&[[0.1, -1.0 / 3.0], [1e-300, 7.25e12]]).unwrap();
        let p = dir.path().join("pts.csv");
        write_points(&p, &pts).unwrap();
        assert_eq!(read_points(&p).unwrap(), pts);

        let path = GeodesicPath::straight(&[0.0, 1.0], &[2.0 / 3.0, -5.0], 7).unwrap();
        let f = dir.path().join("paths.csv");
        write_paths(&f, &[None, Some(path.clone()), None]).unwrap();
        let back = read_paths(&f, 3).unwrap();
        assert!(back[0].is_none() && back[2].is_none());
        assert_eq!(back[1].as_ref().unwrap().points(), path.points());
    }

    #[test]
    fn pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[[-1.0, 0.5], [0.25, 9.0]]).unwrap();
        let f = dir.path().join("pairs.csv");
        write_pairs(&f, &a, &b).unwrap();
        assert_eq!(read_pairs(&f).unwrap(), (a, b));
    }

    #[test]
    fn malformed_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("bad.csv");
        std::fs::write(&f, "x0,x1\n1.0,abc\n").unwrap();
        assert!(matches!(read_points(&f), Err(PipelineError::Format { .. })));
        std::fs::write(&f, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_points(&f), Err(PipelineError::Format { .. })));
    }
}
