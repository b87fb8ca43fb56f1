//! CSV output for densities, histories, trajectories and kernels.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spectral::KernelMatrix;
use crate::transport::BirthHistory;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn row<W: Write>(w: &mut csv::Writer<W>, fields: &[String]) -> Result<()> {
    Ok(w.write_record(fields)?)
}

/// `s,value`.
pub fn write_density(path: &Path, grid: &Grid, p: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    row(&mut w, &["s".into(), "value".into()])?;
    for (s, v) in grid.nodes().iter().zip(p) {
        row(&mut w, &[s.to_string(), v.to_string()])?;
    }
    Ok(w.flush()?)
}

/// Reads an `s,value` file back into its two columns.
pub fn read_density(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut s, mut v) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|x| x.trim().parse().ok())
                .ok_or_else(|| Error::Io(format!("{}: bad record {rec:?}", path.display())))
        };
        s.push(num(0)?);
        v.push(num(1)?);
    }
    Ok((s, v))
}

/// `s,t,value` with `t = -q·dt` for lag `q`.
pub fn write_history(path: &Path, grid: &Grid, history: &BirthHistory) -> Result<()> {
    let mut w = writer(path)?;
    row(&mut w, &["s".into(), "t".into(), "value".into()])?;
    for q in (0..=history.steps()).rev() {
        let t = -(q as f64) * history.dt;
        for (s, v) in grid.nodes().iter().zip(history.at_lag(q)) {
            row(&mut w, &[s.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    Ok(w.flush()?)
}

/// `t,s,value` for a sequence of columns.
pub fn write_trajectory(path: &Path, grid: &Grid, times: &[f64], columns: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    row(&mut w, &["t".into(), "s".into(), "value".into()])?;
    for (t, col) in times.iter().zip(columns) {
        for (s, v) in grid.nodes().iter().zip(col) {
            row(&mut w, &[t.to_string(), s.to_string(), v.to_string()])?;
        }
    }
    Ok(w.flush()?)
}

/// `i,j,value` for every entry.
pub fn write_kernel(path: &Path, k: &KernelMatrix) -> Result<()> {
    let mut w = writer(path)?;
    row(&mut w, &["i".into(), "j".into(), "value".into()])?;
    for (i, j, v) in k.triples() {
        row(&mut w, &[i.to_string(), j.to_string(), v.to_string()])?;
    }
    Ok(w.flush()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn density_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let grid = make_grid(10).unwrap();
        let p: Vec<f64> = grid.nodes().iter().map(|s| (3.0 * s).sin() / 7.0).collect();
        write_density(&path, &grid, &p).unwrap();
        let (s, v) = read_density(&path).unwrap();
        assert_eq!(s, grid.nodes());
        assert_eq!(v, p);
    }

    #[test]
    fn history_and_trajectory_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let grid = make_grid(4).unwrap();
        let h = BirthHistory::zeros(5, 2, 0.5);
        write_history(&dir.path().join("h.csv"), &grid, &h).unwrap();
        let text = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "s,t,value");
        assert_eq!(lines[1], "0,-1,0");
        assert_eq!(lines.len(), 1 + 15);

        write_trajectory(&dir.path().join("t.csv"), &grid, &[0.0, 0.25], &[vec![1.0; 5], vec![2.0; 5]]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text.lines().nth(6), Some("0.25,0,2"));
    }
}
