//! On-disk formats.
//!
//! * Trajectories: CSV with header `t,c0,..,c{m-1}` plus a `<stem>.meta.json`
//!   sidecar holding the manifold name and time step.
//! * Datasets: a `sndoe-data-v1` JSON manifest naming the goal and the demo
//!   files (paths relative to the manifest).
//! * Models: a `sndoe-v1` JSON document wrapping the whole stable field.
//! * Training configs: TOML or JSON, chosen by extension.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snmode_core::data::Dataset;
use snmode_core::field::StableField;
use snmode_core::geometry::ManifoldKind;
use snmode_core::solve::Trajectory;
use snmode_core::train::{EpochMetrics, TrainConfig};

use crate::error::{Error, Result};

pub const TRAJECTORY_FORMAT: &str = "sndoe-traj-v1";
pub const DATASET_FORMAT: &str = "sndoe-data-v1";
pub const MODEL_FORMAT: &str = "sndoe-v1";

/// Tolerance on the time column of a trajectory file.
const TIME_TOL: f64 = 1e-9;

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    s.push('\n');
    write_bytes(path, s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_string(path)?).map_err(|e| Error::format(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryMeta {
    format: String,
    manifold: String,
    dt: f64,
}

/// Sidecar path for a trajectory CSV: `demo_0.csv` → `demo_0.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

/// Write `traj` as CSV plus sidecar. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let m = traj.manifold.ambient_dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..m).map(|j| format!("c{j}"))).collect();
    w.write_record(&header).map_err(|e| Error::format(path, e))?;
    for (i, p) in traj.points.iter().enumerate() {
        let row: Vec<String> = std::iter::once(i as f64 * traj.dt).chain(p.iter().copied()).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
    write_bytes(path, bytes)?;
    let meta = TrajectoryMeta { format: TRAJECTORY_FORMAT.into(), manifold: traj.manifold.name(), dt: traj.dt };
    write_json(&sidecar_path(path), &meta)
}

/// Read a trajectory CSV and its sidecar. Points are checked against the
/// manifold with a 1e-6 tolerance but returned unmodified.
pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let meta_path = sidecar_path(path);
    let meta: TrajectoryMeta = read_json(&meta_path)?;
    if meta.format != TRAJECTORY_FORMAT {
        return Err(Error::format(&meta_path, format!("format tag {:?}, expected {TRAJECTORY_FORMAT:?}", meta.format)));
    }
    if !(meta.dt > 0.0) {
        return Err(Error::format(&meta_path, format!("dt must be positive, got {}", meta.dt)));
    }
    let manifold = ManifoldKind::parse(&meta.manifold).map_err(|e| Error::format(&meta_path, e))?;
    let m = manifold.ambient_dim();
    let text = read_string(path)?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::format(path, e))?.clone();
    if header.len() != m + 1 || &header[0] != "t" {
        return Err(Error::format(path, format!("header has {} columns, expected t and {m} coordinates for {}", header.len(), meta.manifold)));
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        if vals.len() != m + 1 {
            return Err(Error::format(path, format!("row {} has {} columns, expected {}", i + 1, vals.len(), m + 1)));
        }
        let t = i as f64 * meta.dt;
        if (vals[0] - t).abs() > TIME_TOL * t.abs().max(1.0) {
            return Err(Error::format(path, format!("row {}: time {} off the uniform grid (expected {t})", i + 1, vals[0])));
        }
        let p = vals[1..].to_vec();
        manifold.validate_tol(&p, 1e-6).map_err(|e| Error::format(path, format!("row {}: {e}", i + 1)))?;
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::format(path, "no samples"));
    }
    Ok(Trajectory { manifold, dt: meta.dt, points })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub name: String,
    pub manifold: String,
    pub goal: Vec<f64>,
    /// Demo CSV paths, relative to the manifest.
    pub demos: Vec<PathBuf>,
}

/// Write `ds` into `dir` as `dataset.json` and `demo_<k>.csv`. Returns the
/// files written.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut demos = Vec::new();
    for (k, d) in ds.demos.iter().enumerate() {
        let rel = PathBuf::from(format!("demo_{k}.csv"));
        let path = dir.join(&rel);
        save_trajectory(&path, d)?;
        written.push(path.clone());
        written.push(sidecar_path(&path));
        demos.push(rel);
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        name: ds.name.clone(),
        manifold: ds.manifold.name(),
        goal: ds.goal.clone(),
        demos,
    };
    let path = dir.join("dataset.json");
    write_json(&path, &manifest)?;
    written.push(path);
    Ok(written)
}

/// Load a dataset from its manifest (or a directory holding
/// `dataset.json`). Quaternion signs are made continuous along each demo
/// before validation.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let path = if path.is_dir() { path.join("dataset.json") } else { path.to_path_buf() };
    let man: DatasetManifest = read_json(&path)?;
    if man.format != DATASET_FORMAT {
        return Err(Error::format(&path, format!("format tag {:?}, expected {DATASET_FORMAT:?}", man.format)));
    }
    let manifold = ManifoldKind::parse(&man.manifold).map_err(|e| Error::format(&path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut demos = Vec::new();
    for rel in &man.demos {
        let p = base.join(rel);
        let d = load_trajectory(&p)?;
        if d.manifold != manifold {
            return Err(Error::format(&p, format!("demo is on {}, dataset is on {}", d.manifold.name(), man.manifold)));
        }
        demos.push(d);
    }
    let mut ds = Dataset { name: man.name, manifold, goal: man.goal, demos };
    ds.repair_hemispheres();
    ds.validate()?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    field: StableField,
}

pub fn save_model(path: &Path, field: &StableField) -> Result<()> {
    let doc = ModelFile { format: MODEL_FORMAT.into(), field: field.clone() };
    write_json(path, &doc)
}

pub fn load_model(path: &Path) -> Result<StableField> {
    let doc: ModelFile = read_json(path)?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::format(path, format!("format tag {:?}, expected {MODEL_FORMAT:?}", doc.format)));
    }
    let mut field = doc.field;
    field.manifold.validate(&field.goal).map_err(|e| Error::format(path, format!("goal: {e}")))?;
    if field.nets.input_dim() != field.manifold.ambient_dim() {
        return Err(Error::format(
            path,
            format!("networks take {} inputs, {} has {} coordinates", field.nets.input_dim(), field.manifold.name(), field.manifold.ambient_dim()),
        ));
    }
    field.refresh();
    Ok(field)
}

/// TOML for `.toml` files, JSON otherwise. Missing keys take defaults.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let s = read_string(path)?;
    let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&s).map_err(|e| Error::format(path, e))?
    } else {
        serde_json::from_str(&s).map_err(|e| Error::format(path, e))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Per-epoch metrics without wall-clock columns, so reruns produce the same
/// file.
pub fn save_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::format(path, e);
    w.write_record(["stage", "epoch", "loss", "shot", "certificate_violations", "decay_fraction"]).map_err(err)?;
    for m in metrics {
        let decay = m.decay_fraction.map(|d| d.to_string()).unwrap_or_default();
        w.write_record([
            m.stage.name().to_string(),
            m.epoch.to_string(),
            m.loss.to_string(),
            m.shot.to_string(),
            m.certificate_violations.to_string(),
            decay,
        ])
        .map_err(err)?;
    }
    write_bytes(path, w.into_inner().map_err(|e| Error::format(path, e))?)
}

/// Rows of `(header, values)` as CSV.
pub fn save_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::format(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::format(path, e))?;
    }
    write_bytes(path, w.into_inner().map_err(|e| Error::format(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar_path(Path::new("a/demo_3.csv")), PathBuf::from("a/demo_3.meta.json"));
    }

    #[test]
    fn awkward_floats_survive_text() {
        for v in [0.1 + 0.2, 1e-300, -2.5e17, f64::MIN_POSITIVE, 1.0 / 3.0] {
            assert_eq!(v.to_string().parse::<f64>().unwrap(), v);
        }
    }
}
