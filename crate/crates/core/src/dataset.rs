//! Dataset persistence: a versioned JSON header line followed by one scene
//! per line. Loading restores every scalar bit-exactly, so a dataset file is
//! a reproducibility anchor — its SHA-256 goes into run manifests.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::TaskSplit;
use crate::scalar::Scalar;
use crate::world::{ClassSpec, Scene, SceneParams, WorldConfig};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
}

/// Everything needed to regenerate or validate the scene stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader<S: Scalar> {
    pub schema_version: u32,
    pub seed: u64,
    pub world: WorldConfig<S>,
    pub scene_params: SceneParams<S>,
    pub classes: Vec<ClassSpec<S>>,
    pub tasks: Vec<TaskSplit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile<S: Scalar> {
    pub header: DatasetHeader<S>,
    pub scenes: Vec<Scene<S>>,
}

impl<S: Scalar> DatasetFile<S> {
    /// Structural validation: supported version, unique scene ids, and a
    /// single feature dimension everywhere.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.header.schema_version != DATASET_SCHEMA_VERSION {
            return Err(DatasetError::Schema(format!(
                "schema version {} unsupported (expected {DATASET_SCHEMA_VERSION})",
                self.header.schema_version
            )));
        }
        let d = self.header.world.d;
        for class in &self.header.classes {
            if class.prototype.len() != d {
                return Err(DatasetError::Schema(format!(
                    "class {} prototype has dimension {}, header says {d}",
                    class.class_id,
                    class.prototype.len()
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for scene in &self.scenes {
            if !seen.insert(scene.scene_id) {
                return Err(DatasetError::Schema(format!(
                    "duplicate scene id {}",
                    scene.scene_id
                )));
            }
            for (i, p) in scene.proposals.iter().enumerate() {
                if p.feature.len() != d {
                    return Err(DatasetError::Schema(format!(
                        "scene {} proposal {i} has feature dimension {}, header says {d}",
                        scene.scene_id,
                        p.feature.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn save_dataset<S: Scalar + Serialize>(ds: &DatasetFile<S>, path: &Path) -> Result<(), DatasetError> {
    ds.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::to_string(&ds.header)
        .map_err(|source| DatasetError::Parse { line: 1, source })?;
    writeln!(w, "{header}")?;
    for (i, scene) in ds.scenes.iter().enumerate() {
        let line = serde_json::to_string(scene)
            .map_err(|source| DatasetError::Parse { line: i + 2, source })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset<S: Scalar + DeserializeOwned>(path: &Path) -> Result<DatasetFile<S>, DatasetError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| DatasetError::Schema("empty file: missing header line".into()))??;
    let header: DatasetHeader<S> = serde_json::from_str(&header_line)
        .map_err(|source| DatasetError::Parse { line: 1, source })?;
    let mut scenes = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene<S> = serde_json::from_str(&line)
            .map_err(|source| DatasetError::Parse { line: i + 2, source })?;
        scenes.push(scene);
    }
    let ds = DatasetFile { header, scenes };
    ds.validate()?;
    Ok(ds)
}

/// Hex SHA-256 of a file's bytes, for run manifests.
pub fn file_sha256(path: &Path) -> Result<String, std::io::Error> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::world::{generate_scene, generate_world};

    fn small_dataset(n_scenes: usize) -> DatasetFile<f64> {
        let world_cfg = WorldConfig {
            n_known: 4,
            n_unknown: 2,
            d: 8,
            shift_min: 1.0,
            shift_max: 2.0,
            spread: 0.2,
        };
        let classes = generate_world(&world_cfg, 3).unwrap();
        let params = SceneParams {
            objects_min: 1,
            objects_max: 2,
            copies_min: 2,
            copies_max: 2,
            n_bg: 3,
            jitter: 0.15,
            sigma_bg: 0.15,
            noise: 0.05,
        };
        let known: BTreeSet<u32> = classes
            .iter()
            .filter(|c| c.known)
            .map(|c| c.class_id)
            .collect();
        let weights: Vec<(u32, f64)> = classes
            .iter()
            .map(|c| (c.class_id, 1.0 / classes.len() as f64))
            .collect();
        let scenes: Vec<Scene<f64>> = (0..n_scenes as u64)
            .map(|sid| generate_scene(&classes, &known, &weights, &params, sid, seed::mix(8, sid)))
            .collect();
        DatasetFile {
            header: DatasetHeader {
                schema_version: DATASET_SCHEMA_VERSION,
                seed: 8,
                world: world_cfg,
                scene_params: params,
                classes,
                tasks: Vec::new(),
            },
            scenes,
        }
    }

    #[test]
    fn empty_dataset_round_trips_to_header_only_file() {
        let ds = small_dataset(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back: DatasetFile<f64> = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn single_scene_round_trips_exactly() {
        let ds = small_dataset(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let back: DatasetFile<f64> = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn thousand_scene_round_trip_is_bit_exact() {
        let ds = small_dataset(1000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let back: DatasetFile<f64> = load_dataset(&path).unwrap();
        // PartialEq on f64 fields makes this a bit-exact comparison.
        assert_eq!(back, ds);
    }

    #[test]
    fn malformed_line_error_names_the_line() {
        let ds = small_dataset(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        let third_line_start = text
            .match_indices('\n')
            .nth(1)
            .map(|(i, _)| i + 1)
            .unwrap();
        text.insert_str(third_line_start, "{broken");
        std::fs::write(&path, text).unwrap();
        let err = load_dataset::<f64>(&path).unwrap_err();
        match err {
            DatasetError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_a_schema_error() {
        let mut ds = small_dataset(2);
        ds.scenes[1].proposals[0].feature.push(0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let err = save_dataset(&ds, &path).unwrap_err();
        assert!(matches!(err, DatasetError::Schema(_)));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let ds = small_dataset(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        assert_ne!(bumped, text);
        std::fs::write(&path, bumped).unwrap();
        let err = load_dataset::<f64>(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Schema(_)));
    }

    #[test]
    fn duplicate_scene_ids_are_rejected() {
        let mut ds = small_dataset(2);
        ds.scenes[1].scene_id = ds.scenes[0].scene_id;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let err = save_dataset(&ds, &path).unwrap_err();
        assert!(matches!(err, DatasetError::Schema(_)));
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            file_sha256(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
