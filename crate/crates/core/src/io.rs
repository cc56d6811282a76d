//! File formats: trajectory CSVs, JSON artifacts, dataset directories and
//! the provenance line written at the top of every CSV.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datagen::DatasetManifest;
use crate::error::{Result, SdoError};
use crate::pwr::{SimState, Trajectory};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Identifies the code version, configuration and seed behind an output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            version: VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn line(&self) -> String {
        format!("# sdo {} config={} seed={}", self.version, self.config_hash, self.seed)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SdoError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| SdoError::io(path, e))?))
}

fn csv_writer(path: &Path, prov: Option<&Provenance>) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = create(path)?;
    if let Some(p) = prov {
        writeln!(out, "{}", p.line()).map_err(|e| SdoError::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(out))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| SdoError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

/// Serializable rows to CSV, optionally preceded by the provenance line.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T], prov: Option<&Provenance>) -> Result<()> {
    let mut wr = csv_writer(path, prov)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush().map_err(|e| SdoError::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    csv_reader(path)?.deserialize().map(|r| r.map_err(SdoError::from)).collect()
}

/// Headerless-record writer used for table-shaped outputs.
pub fn write_records(path: &Path, records: &[Vec<String>], prov: Option<&Provenance>) -> Result<()> {
    let mut wr = csv_writer(path, prov)?;
    for r in records {
        wr.write_record(r)?;
    }
    wr.flush().map_err(|e| SdoError::io(path, e))
}

/// One row per state: `t`, the state columns, then the control and load
/// applied from that state (empty on the final row).
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory, n_z: usize, prov: Option<&Provenance>) -> Result<()> {
    let mut wr = csv_writer(path, prov)?;
    let mut header = vec!["t".to_string()];
    header.extend(SimState::column_names(n_z));
    header.push("u".into());
    header.push("w".into());
    wr.write_record(&header)?;
    for (k, s) in traj.states.iter().enumerate() {
        let mut rec = vec![format!("{}", k as f64 * traj.dt)];
        rec.extend(s.to_vec().iter().map(|v| format!("{v:?}")));
        match (traj.u.get(k), traj.w.get(k)) {
            (Some(u), Some(w)) => {
                rec.push(format!("{u:?}"));
                rec.push(format!("{w:?}"));
            }
            _ => {
                rec.push(String::new());
                rec.push(String::new());
            }
        }
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| SdoError::io(path, e))
}

pub fn read_trajectory_csv(path: &Path, n_z: usize) -> Result<Trajectory> {
    let mut rd = csv_reader(path)?;
    let expect = 3 * n_z + 3 + 3;
    let bad = |msg: String| SdoError::Dataset(format!("{}: {msg}", path.display()));
    let header = rd.headers()?.clone();
    if header.len() != expect {
        return Err(bad(format!("{} columns, expected {expect} for n_z = {n_z}", header.len())));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let (mut u, mut w) = (Vec::new(), Vec::new());
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|e| bad(format!("row {i}, column {}: {e}", header[j].to_string())))
        };
        times.push(num(0)?);
        let v: Vec<f64> = (1..expect - 2).map(num).collect::<Result<_>>()?;
        states.push(SimState::from_slice(n_z, &v)?);
        if !rec[expect - 2].is_empty() {
            u.push(num(expect - 2)?);
            w.push(num(expect - 1)?);
        }
    }
    if states.is_empty() || u.len() + 1 != states.len() {
        return Err(bad(format!("{} states but {} controls", states.len(), u.len())));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(Trajectory { dt, states, u, w })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| SdoError::io(path, e))?;
    out.flush().map_err(|e| SdoError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| SdoError::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub const MANIFEST: &str = "manifest.json";

/// Trajectory CSVs plus a manifest listing them.
pub fn save_trajectories(
    dir: &Path,
    trajectories: &[Trajectory],
    n_z: usize,
    manifest: &mut DatasetManifest,
    prov: Option<&Provenance>,
) -> Result<()> {
    manifest.files.clear();
    for (i, t) in trajectories.iter().enumerate() {
        let name = format!("traj_{i:05}.csv");
        write_trajectory_csv(&dir.join(&name), t, n_z, prov)?;
        manifest.files.push(name);
    }
    manifest.count = trajectories.len();
    write_json(&dir.join(MANIFEST), manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dir.join(MANIFEST))?;
    m.validate()?;
    Ok(m)
}

pub fn load_trajectories(dir: &Path, n_z: usize) -> Result<(Vec<Trajectory>, DatasetManifest)> {
    let m = load_manifest(dir)?;
    let trajs = m
        .files
        .iter()
        .map(|f| read_trajectory_csv(&dir.join(f), n_z))
        .collect::<Result<Vec<_>>>()?;
    Ok((trajs, m))
}

/// Path helper: `out/name`, creating `out`.
pub fn out_path(out: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| SdoError::io(out, e))?;
    Ok(out.join(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwr::{ModelParams, PwrModel};

    #[test]
    fn trajectory_round_trip_is_exact() {
        let model = PwrModel::new(ModelParams::default()).unwrap();
        let x0 = model.steady_state(0.9).unwrap();
        let u = vec![0.01, -0.03, 0.02];
        let w = vec![0.9, 0.85, 0.8];
        let traj = model.simulate(&x0, &u, &w, 600.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let prov = Provenance::new("abc", 7);
        write_trajectory_csv(&path, &traj, 6, Some(&prov)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# sdo "));
        assert_eq!(text.lines().count(), 1 + 1 + 4);
        let back = read_trajectory_csv(&path, 6).unwrap();
        assert_eq!(back.u, traj.u);
        assert_eq!(back.w, traj.w);
        assert_eq!(back.dt, 600.0);
        for (a, b) in back.states.iter().zip(&traj.states) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
        assert!(read_trajectory_csv(&path, 4).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ModelParams::default();
        let mut b = a.clone();
        assert_eq!(hash_json(&a).unwrap(), hash_json(&b).unwrap());
        b.n_sub += 1;
        assert_ne!(hash_json(&a).unwrap(), hash_json(&b).unwrap());
        assert_eq!(hash_json(&a).unwrap().len(), 64);
    }
}
