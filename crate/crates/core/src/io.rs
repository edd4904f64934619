//! On-disk formats: model documents, trajectory CSVs and dataset manifests.
//!
//! All structured documents are JSON objects with a `schema_version` field.
//! Floats are written in shortest round-trip form, so save/load is lossless.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Activation, FfnnParams, Layer, NnarxModel, NormalizationStats};
use crate::plant::dataset::Provenance;
use crate::plant::{Dataset, Split, Trajectory};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const MODEL_FORMAT: &str = "nnarx-model";
pub const DATASET_FORMAT: &str = "nnarx-dataset";
pub const STATE_LAYOUT: &str = "N blocks oldest first; block i = [y_1..y_p, u_1..u_m]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixDoc {
    fn from_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self, what: &str) -> Result<Matrix> {
        Matrix::from_row_major(self.rows, self.cols, self.data.clone())
            .map_err(|_| Error::Schema(format!("{what}: payload does not match shape {}x{}", self.rows, self.cols)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub activation: Activation,
    pub lipschitz: f64,
    pub w: MatrixDoc,
    pub u: MatrixDoc,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDoc {
    pub u: MatrixDoc,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub schema_version: u32,
    pub format: String,
    pub horizon: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub state_layout: String,
    pub normalization: NormalizationStats,
    pub layers: Vec<LayerDoc>,
    pub output: OutputDoc,
    /// Free-form provenance (config, seeds) of the run that produced the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl ModelDoc {
    pub fn from_model(model: &NnarxModel, metadata: Option<serde_json::Value>) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            format: MODEL_FORMAT.into(),
            horizon: model.horizon,
            input_dim: model.input_dim,
            output_dim: model.output_dim,
            state_layout: STATE_LAYOUT.into(),
            normalization: model.norm.clone(),
            layers: model
                .ffnn
                .layers
                .iter()
                .map(|l| LayerDoc {
                    activation: l.activation,
                    lipschitz: l.activation.lipschitz(),
                    w: MatrixDoc::from_matrix(&l.w),
                    u: MatrixDoc::from_matrix(&l.u),
                    b: l.b.clone(),
                })
                .collect(),
            output: OutputDoc {
                u: MatrixDoc::from_matrix(&model.ffnn.out_u),
                b: model.ffnn.out_b.clone(),
            },
            metadata,
        }
    }

    pub fn into_model(self) -> Result<NnarxModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Schema(format!("expected format {MODEL_FORMAT:?}, found {:?}", self.format)));
        }
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported model schema_version {}", self.schema_version)));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let idx = i + 1;
            let expected = l.activation.lipschitz();
            if l.lipschitz != expected {
                return Err(Error::Schema(format!(
                    "layer {idx}: Lipschitz constant {} does not match {} activation ({expected})",
                    l.lipschitz,
                    l.activation.tag()
                )));
            }
            layers.push(Layer {
                w: l.w.to_matrix(&format!("W{idx}"))?,
                u: l.u.to_matrix(&format!("U{idx}"))?,
                b: l.b.clone(),
                activation: l.activation,
            });
        }
        let ffnn = FfnnParams {
            layers,
            out_u: self.output.u.to_matrix("U0")?,
            out_b: self.output.b,
        };
        let model = NnarxModel {
            ffnn,
            horizon: self.horizon,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            norm: self.normalization,
        };
        model.validate().map_err(|e| Error::Schema(e.to_string()))?;
        Ok(model)
    }
}

pub fn model_to_json(model: &NnarxModel, metadata: Option<serde_json::Value>) -> String {
    let doc = ModelDoc::from_model(model, metadata);
    serde_json::to_string_pretty(&doc).expect("model documents always serialize")
}

pub fn model_from_json(text: &str) -> Result<(NnarxModel, Option<serde_json::Value>)> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Schema(format!("model file: {e}")))?;
    let meta = doc.metadata.clone();
    Ok((doc.into_model()?, meta))
}

pub fn save_model(path: &Path, model: &NnarxModel, metadata: Option<serde_json::Value>) -> Result<()> {
    write_file(path, &model_to_json(model, metadata))
}

pub fn load_model(path: &Path) -> Result<NnarxModel> {
    let text = fs::read_to_string(path)?;
    Ok(model_from_json(&text)?.0)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn trajectory_header(m: usize, p: usize) -> String {
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=m).map(|j| format!("u_{j}")));
    cols.extend((1..=p).map(|j| format!("y_{j}")));
    cols.join(",")
}

/// CSV with header `k,u_1..u_m,y_1..y_p`.
pub fn trajectory_to_csv(u: &[Vec<f64>], y: &[Vec<f64>]) -> String {
    let m = u.first().map_or(0, |v| v.len());
    let p = y.first().map_or(0, |v| v.len());
    let mut s = trajectory_header(m, p);
    s.push('\n');
    for (k, (uk, yk)) in u.iter().zip(y).enumerate() {
        s.push_str(&k.to_string());
        for v in uk.iter().chain(yk) {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn trajectory_from_csv(text: &str, m: usize, p: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Schema("empty trajectory file".into()))?;
    if header.trim() != trajectory_header(m, p) {
        return Err(Error::Schema(format!(
            "trajectory header {header:?} does not match {:?}",
            trajectory_header(m, p)
        )));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + m + p {
            return Err(Error::Schema(format!("row {row}: expected {} fields", 1 + m + p)));
        }
        let k: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("row {row}: bad sample index")))?;
        if k != row {
            return Err(Error::Schema(format!("row {row}: sample index {k} out of sequence")));
        }
        let vals = fields[1..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Schema(format!("row {row}: {e}")))?;
        u.push(vals[..m].to_vec());
        y.push(vals[m..].to_vec());
    }
    Ok((u, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEntry {
    pub id: usize,
    pub split: Split,
    pub file: String,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub format: String,
    pub sampling_time: f64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub normalization: NormalizationStats,
    pub provenance: Provenance,
    pub trajectories: Vec<TrajectoryEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one CSV per trajectory plus `manifest.json` into `dir`; returns the
/// manifest path.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.trajectories.len());
    for t in &ds.trajectories {
        let file = format!("traj_{:03}_{}.csv", t.id, t.split.as_str());
        write_file(&dir.join(&file), &trajectory_to_csv(&t.u, &t.y))?;
        entries.push(TrajectoryEntry {
            id: t.id,
            split: t.split,
            file,
            length: t.len(),
        });
    }
    let manifest = Manifest {
        schema_version: DATASET_SCHEMA_VERSION,
        format: DATASET_FORMAT.into(),
        sampling_time: ds.sampling_time,
        input_dim: ds.input_dim(),
        output_dim: ds.output_dim(),
        normalization: ds.norm.clone(),
        provenance: ds.provenance.clone(),
        trajectories: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    write_file(
        &path,
        &serde_json::to_string_pretty(&manifest).expect("manifest always serializes"),
    )?;
    Ok(path)
}

/// Loads a dataset from its directory or from the manifest path itself.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("dataset manifest: {e}")))?;
    if manifest.format != DATASET_FORMAT || manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported dataset manifest {:?} v{}",
            manifest.format, manifest.schema_version
        )));
    }
    manifest
        .normalization
        .validate(manifest.input_dim, manifest.output_dim)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
    for e in &manifest.trajectories {
        let text = fs::read_to_string(dir.join(&e.file))?;
        let (u, y) = trajectory_from_csv(&text, manifest.input_dim, manifest.output_dim)?;
        if u.len() != e.length {
            return Err(Error::Schema(format!(
                "{}: manifest says {} samples, file has {}",
                e.file,
                e.length,
                u.len()
            )));
        }
        trajectories.push(Trajectory {
            id: e.id,
            split: e.split,
            u,
            y,
        });
    }
    Ok(Dataset {
        trajectories,
        sampling_time: manifest.sampling_time,
        norm: manifest.normalization,
        provenance: manifest.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_model() -> NnarxModel {
        let mut ffnn = FfnnParams::zeros(4, 1, 1, &[3, 2], Activation::Tanh);
        let flat: Vec<f64> = (0..ffnn.num_params()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        ffnn.set_flat(&flat).unwrap();
        ffnn.layers[1].activation = Activation::ScaledTanh { scale: 0.5 };
        NnarxModel::new(ffnn, 2, 1, 1).unwrap()
    }

    #[test]
    fn model_document_roundtrip() {
        let model = sample_model();
        let json = model_to_json(&model, Some(serde_json::json!({"seed": 4})));
        let (back, meta) = model_from_json(&json).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta.unwrap()["seed"], 4);
    }

    #[test]
    fn wrong_lipschitz_is_schema_error() {
        let json = model_to_json(&sample_model(), None);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["layers"][0]["lipschitz"] = serde_json::json!(0.5);
        assert!(matches!(model_from_json(&v.to_string()), Err(Error::Schema(_))));
    }

    #[test]
    fn bad_shape_is_schema_error() {
        let json = model_to_json(&sample_model(), None);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["output"]["u"]["cols"] = serde_json::json!(5);
        assert!(matches!(model_from_json(&v.to_string()), Err(Error::Schema(_))));
        assert!(matches!(model_from_json("{not json"), Err(Error::Schema(_))));
    }

    #[test]
    fn trajectory_csv_header() {
        let csv = trajectory_to_csv(&[vec![1.0, 2.0]], &[vec![0.5]]);
        assert_eq!(csv, "k,u_1,u_2,y_1\n0,1,2,0.5\n");
        assert!(trajectory_from_csv(&csv, 1, 2).is_err());
    }

    proptest! {
        #[test]
        fn trajectory_csv_is_lossless(rows in proptest::collection::vec((any::<f64>(), any::<f64>()), 1..40)) {
            let rows: Vec<(f64, f64)> = rows.into_iter().filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
            let u: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0]).collect();
            let y: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1]).collect();
            let (u2, y2) = trajectory_from_csv(&trajectory_to_csv(&u, &y), 1, 1).unwrap();
            prop_assert_eq!(u, u2);
            prop_assert_eq!(y, y2);
        }
    }
}
