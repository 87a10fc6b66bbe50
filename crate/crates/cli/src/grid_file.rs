//! Grid field files.
//!
//! A grid file is CSV preceded by `#` metadata lines:
//!
//! ```text
//! # field = sigma
//! # periods = 10,10
//! # shape = 64,64
//! # ncomp = 4
//! i1,i2,v1,v2,v3,v4
//! 0,0,0.0,0.0,0.0,0.0
//! ...
//! ```
//!
//! `periods` fixes the dimension; node `(i1, ..., in)` sits at
//! `x_k = i_k tau_k / shape_k`. Rows are written in row-major order (last index
//! fastest); on reading, any order is accepted but every node must appear
//! exactly once.

use std::fs;
use std::path::Path;

use homog_core::field::PeriodicGrid;
use homog_core::torus::{ravel, unravel};
use homog_core::Torus;

use crate::error::CliError;

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<Vec<T>, _>>()
        .map_err(|_| CliError::Config(format!("grid file: cannot parse `{key} = {value}`")))
}

/// Reads a grid file; returns the field name and the grid.
pub fn read(path: &Path) -> Result<(String, PeriodicGrid), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut name = String::new();
    let mut periods: Option<Vec<f64>> = None;
    let mut shape: Option<Vec<usize>> = None;
    let mut ncomp: Option<usize> = None;
    let mut body = String::new();
    for line in text.lines() {
        if let Some(meta) = line.strip_prefix('#') {
            let Some((k, v)) = meta.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "field" => name = v.to_string(),
                "periods" => periods = Some(parse_list(k, v)?),
                "shape" => shape = Some(parse_list(k, v)?),
                "ncomp" => ncomp = Some(parse_list::<usize>(k, v)?[0]),
                _ => {}
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let missing = |what: &str| CliError::Config(format!("grid file {}: missing `# {what} = ...`", path.display()));
    let periods = periods.ok_or_else(|| missing("periods"))?;
    let shape = shape.ok_or_else(|| missing("shape"))?;
    let ncomp = ncomp.ok_or_else(|| missing("ncomp"))?;
    let torus = Torus::new(periods)?;
    let n = torus.dim();
    if shape.len() != n {
        return Err(CliError::Config(format!("grid file {}: shape has {} entries for a {n}-torus", path.display(), shape.len())));
    }
    let nodes: usize = shape.iter().product();
    let mut values = vec![0.0; nodes * ncomp];
    let mut seen = vec![false; nodes];
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let mut idx = vec![0usize; n];
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Config(format!("grid file {}: {e}", path.display())))?;
        if record.len() != n + ncomp {
            return Err(CliError::Config(format!(
                "grid file {}: expected {} columns, found {}",
                path.display(),
                n + ncomp,
                record.len()
            )));
        }
        let bad = |s: &str| CliError::Config(format!("grid file {}: bad number `{s}`", path.display()));
        for i in 0..n {
            idx[i] = record[i].trim().parse().map_err(|_| bad(&record[i]))?;
            if idx[i] >= shape[i] {
                return Err(CliError::Config(format!("grid file {}: index out of range", path.display())));
            }
        }
        let k = ravel(&idx, &shape);
        if seen[k] {
            return Err(CliError::Config(format!("grid file {}: node {idx:?} appears twice", path.display())));
        }
        seen[k] = true;
        for c in 0..ncomp {
            values[k * ncomp + c] = record[n + c].trim().parse().map_err(|_| bad(&record[n + c]))?;
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        unravel(k, &shape, &mut idx);
        return Err(CliError::Config(format!("grid file {}: node {idx:?} is missing", path.display())));
    }
    Ok((name, PeriodicGrid::new(torus, shape, ncomp, values)?))
}

/// Writes `grid` in the format read by [`read`].
pub fn write(path: &Path, name: &str, grid: &PeriodicGrid) -> Result<(), CliError> {
    let n = grid.torus.dim();
    let join = |v: Vec<String>| v.join(",");
    let mut out = String::new();
    out.push_str(&format!("# field = {name}\n"));
    out.push_str(&format!("# periods = {}\n", join(grid.torus.periods().iter().map(|p| p.to_string()).collect())));
    out.push_str(&format!("# shape = {}\n", join(grid.shape.iter().map(|s| s.to_string()).collect())));
    out.push_str(&format!("# ncomp = {}\n", grid.ncomp));
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (1..=n).map(|i| format!("i{i}")).chain((1..=grid.ncomp).map(|c| format!("v{c}"))).collect();
    w.write_record(&header).map_err(|e| CliError::io(path, e.into()))?;
    let mut idx = vec![0usize; n];
    for k in 0..grid.n_nodes() {
        unravel(k, &grid.shape, &mut idx);
        let row: Vec<String> = idx
            .iter()
            .map(|i| i.to_string())
            .chain(grid.values[k * grid.ncomp..(k + 1) * grid.ncomp].iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&row).map_err(|e| CliError::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let torus = Torus::new(vec![1.0, 2.0]).unwrap();
        let grid = PeriodicGrid::sample(torus, vec![3, 4], 2, |x, o| {
            o[0] = x[0] + 10.0 * x[1];
            o[1] = -x[0];
        })
        .unwrap();
        write(&path, "probe", &grid).unwrap();
        let (name, back) = read(&path).unwrap();
        assert_eq!(name, "probe");
        assert_eq!(back, grid);
    }

    #[test]
    fn missing_node_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        fs::write(&path, "# periods = 1\n# shape = 2\n# ncomp = 1\ni1,v1\n0,1.0\n").unwrap();
        assert!(matches!(read(&path), Err(CliError::Config(_))));
    }
}
