//! Artifact files: CSV tables, JSON summaries and their fingerprints.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fs;
use std::path::{Path, PathBuf};

use homog_core::clt::CltReport;
use homog_core::corrector::CorrectorField;
use homog_core::ergodic::{InvariantMeasureEstimate, MixingDiagnostic};
use homog_core::feynman_kac::{FeynmanKacEstimate, StepLadder, StudyReport};
use homog_core::sde::{HittingStats, PathBatch};
use homog_core::torus::unravel;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One written file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// A header plus rows of already formatted cells.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("writing to memory");
        for r in &self.rows {
            w.write_record(r).expect("writing to memory");
        }
        w.into_inner().expect("writing to memory")
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

fn nums(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|x| num(*x))
}

fn cols(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Writes artifacts into one directory and remembers their fingerprints.
pub struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write_bytes(name, &table.to_bytes())
    }
}

/// `path,time,x_1..x_n` with unwrapped positions.
pub fn paths_table(batch: &PathBatch) -> Table {
    let mut t = Table::new(["path".to_string(), "time".to_string()].into_iter().chain(cols("x", batch.dim)).collect());
    for p in 0..batch.n_paths() {
        for (k, time) in batch.times.iter().enumerate() {
            t.push([p.to_string(), num(*time)].into_iter().chain(nums(batch.state(p, k))).collect());
        }
    }
    t
}

/// `start_1..start_n,fraction,q10,q50,q90,q100`: hit fraction and quantiles
/// of the hitting time among paths that hit.
pub fn hitting_table(stats: &[HittingStats], dim: usize) -> Table {
    let qs: Vec<f64> = stats.first().map(|s| s.quantiles.iter().map(|q| q.0).collect()).unwrap_or_default();
    let header = cols("start", dim)
        .chain(["fraction".to_string()])
        .chain(qs.iter().map(|q| format!("q{}", (q * 100.0).round() as u32)))
        .collect();
    let mut t = Table::new(header);
    for s in stats {
        t.push(nums(&s.start).chain([num(s.fraction)]).chain(s.quantiles.iter().map(|q| num(q.1))).collect());
    }
    t
}

/// `bin_index_1..n,center_1..n,mass`.
pub fn histogram_table(m: &InvariantMeasureEstimate) -> Table {
    let n = m.bins.len();
    let mut t = Table::new(cols("bin_index", n).chain(cols("center", n)).chain(["mass".to_string()]).collect());
    let mut idx = vec![0usize; n];
    let mut c = vec![0.0; n];
    for k in 0..m.n_bins() {
        unravel(k, &m.bins, &mut idx);
        m.center(k, &mut c);
        t.push(idx.iter().map(|i| i.to_string()).chain(nums(&c)).chain([num(m.mass[k])]).collect());
    }
    t
}

/// `t,estimate,stderr` with the total-variation estimate.
pub fn mixing_table(m: &MixingDiagnostic) -> Table {
    let mut t = Table::new(vec!["t".into(), "estimate".into(), "stderr".into()]);
    for ((time, est), se) in m.time_grid.iter().zip(&m.tv_estimates).zip(&m.stderr) {
        t.push(vec![num(*time), num(*est), num(*se)]);
    }
    t
}

/// `node_index_1..n,x_1..n,<name>_1..k,stderr_1..k`.
pub fn corrector_table(f: &CorrectorField, name: &str) -> Table {
    let n = f.torus.dim();
    let k = f.ncomp;
    let mut t = Table::new(
        cols("node_index", n)
            .chain(cols("x", n))
            .chain(if k == 1 { vec![name.to_string()] } else { cols(name, k).collect() })
            .chain(cols("stderr", k))
            .collect(),
    );
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    for node in 0..f.n_nodes() {
        unravel(node, &f.shape, &mut idx);
        f.node_position(node, &mut x);
        t.push(
            idx.iter()
                .map(|i| i.to_string())
                .chain(nums(&x))
                .chain(nums(&f.values[node * k..(node + 1) * k]))
                .chain(nums(&f.stderr[node * k..(node + 1) * k]))
                .collect(),
        );
    }
    t
}

/// `node_index_1..n,x_1..n,d_<c>_<j>...`: the derivative of component `c`
/// along axis `j`.
pub fn jacobian_table(f: &CorrectorField) -> Option<Table> {
    let jac = f.jacobian.as_ref()?;
    let n = f.torus.dim();
    let k = f.ncomp;
    let names = (1..=k).flat_map(|c| (1..=n).map(move |j| format!("d_{c}_{j}")));
    let mut t = Table::new(cols("node_index", n).chain(cols("x", n)).chain(names).collect());
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let w = k * n;
    for node in 0..f.n_nodes() {
        unravel(node, &f.shape, &mut idx);
        f.node_position(node, &mut x);
        t.push(idx.iter().map(|i| i.to_string()).chain(nums(&x)).chain(nums(&jac[node * w..(node + 1) * w])).collect());
    }
    Some(t)
}

/// `epsilon,t,i,j,emp_cov,stderr,target` (indices from 1; target `A t`).
pub fn clt_table(r: &CltReport) -> Table {
    let n = r.target.dim;
    let mut t = Table::new(["epsilon", "t", "i", "j", "emp_cov", "stderr", "target"].map(String::from).to_vec());
    for (e, eps) in r.epsilons.iter().enumerate() {
        for (ti, time) in r.times.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let k = i * n + j;
                    t.push(vec![
                        num(*eps),
                        num(*time),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        num(r.empirical_cov[e][ti][k]),
                        num(r.cov_stderr[e][ti][k]),
                        num(r.target.cov_a[k] * time),
                    ]);
                }
            }
        }
    }
    t
}

/// `epsilon,x_1..n,u_eps,stderr_eps,u0,stderr_0,gap,z`.
pub fn study_table(r: &StudyReport) -> Table {
    let n = r.rows.first().map_or(0, |row| row.x.len());
    let mut t = Table::new(
        ["epsilon".to_string()]
            .into_iter()
            .chain(cols("x", n))
            .chain(["u_eps", "stderr_eps", "u0", "stderr_0", "gap", "z"].map(String::from))
            .collect(),
    );
    for row in &r.rows {
        t.push(
            [num(row.epsilon)]
                .into_iter()
                .chain(nums(&row.x))
                .chain([row.u_eps, row.stderr_eps, row.u0, row.stderr_0, row.gap, row.z].map(num))
                .collect(),
        );
    }
    t
}

/// `x_1..n,value,stderr,mean_exit_time,truncated_fraction`.
pub fn solution_table(points: &[Vec<f64>], values: &[(f64, f64, &FeynmanKacEstimate)]) -> Table {
    let n = points.first().map_or(0, Vec::len);
    let mut t = Table::new(
        cols("x", n)
            .chain(["value", "stderr", "mean_exit_time", "truncated_fraction"].map(String::from))
            .collect(),
    );
    for (x, (v, se, est)) in points.iter().zip(values) {
        t.push(
            nums(x)
                .chain([num(*v), num(*se), num(est.mean_exit_time.unwrap_or(f64::NAN)), num(est.truncated_fraction)])
                .collect(),
        );
    }
    t
}

/// `x_1..n,level,step,value,stderr,difference,difference_stderr`; the
/// differences are between consecutive levels (empty on the first).
pub fn ladder_table(points: &[Vec<f64>], ladders: &[StepLadder]) -> Table {
    let n = points.first().map_or(0, Vec::len);
    let mut t = Table::new(
        cols("x", n)
            .chain(["level", "step", "value", "stderr", "difference", "difference_stderr"].map(String::from))
            .collect(),
    );
    for (x, l) in points.iter().zip(ladders) {
        for (k, (h, est)) in l.steps.iter().zip(&l.estimates).enumerate() {
            let (d, dse) = if k == 0 {
                (String::new(), String::new())
            } else {
                (num(l.differences[k - 1]), num(l.difference_stderr[k - 1]))
            };
            t.push(nums(x).chain([k.to_string(), num(*h), num(est.value), num(est.stderr), d, dse]).collect());
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn artifacts_are_fingerprinted_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::new(dir.path()).unwrap();
        let mut t = Table::new(vec!["a".into(), "b".into()]);
        t.push(vec!["1".into(), num(0.5)]);
        out.write_table("t.csv", &t).unwrap();
        out.write_table("t.csv", &t).unwrap();
        assert_eq!(out.artifacts().len(), 1);
        assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap(), "a,b\n1,0.5\n");
        assert_eq!(out.artifacts()[0].sha256, sha256_hex(b"a,b\n1,0.5\n"));
    }
}
