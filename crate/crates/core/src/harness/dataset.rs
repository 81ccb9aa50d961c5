//! On-disk datasets: a JSON manifest listing one CSV file per image set.
//!
//! Set files are header-free CSV with one row per feature dimension and
//! one column per frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompressedGalleryCollection, FeatureMatrix, GalleryClass, ImageSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Gallery,
    Query,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class_label: String,
    pub set_id: String,
    /// Relative paths are resolved against the manifest's `root`.
    pub file: PathBuf,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Base directory for entry files; relative roots are taken from the
    /// manifest's own directory, and a missing root means that directory.
    #[serde(default)]
    pub root: Option<PathBuf>,
    pub feature_dim: usize,
    #[serde(default)]
    pub normalize: bool,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// One set per class, in order of first appearance; several gallery
    /// files of the same class are concatenated.
    pub galleries: Vec<ImageSet>,
    /// Query sets carry their true label.
    pub queries: Vec<ImageSet>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads one set file. `expected_dim`, when given, must match the row count.
pub fn read_set_csv(path: &Path, expected_dim: Option<usize>) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.position().map_or(row, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let values = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("column {}: `{field}` is not a finite number", col + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    let dim = rows.len();
    let frames = rows.first().map_or(0, Vec::len);
    if dim == 0 || frames == 0 {
        return Err(Error::Data {
            path: path.to_path_buf(),
            message: "set file has no values".into(),
        });
    }
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(Error::Data {
                path: path.to_path_buf(),
                message: format!("expected {expected} feature rows, found {dim}"),
            });
        }
    }
    let m = DMatrix::from_fn(dim, frames, |i, j| rows[i][j]);
    FeatureMatrix::new(m)
}

pub fn write_set_csv(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    for row in features.matrix().row_iter() {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Data {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: format!("manifest: {e}"),
    })
}

impl DatasetManifest {
    /// Directory that relative entry files are resolved against.
    pub fn base_dir(&self, manifest_path: &Path) -> PathBuf {
        let here = manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();
        match &self.root {
            Some(root) if root.is_absolute() => root.clone(),
            Some(root) => here.join(root),
            None => here,
        }
    }

    pub fn load(&self, base: &Path, frames: Option<usize>) -> Result<Dataset> {
        if self.entries.is_empty() {
            return Err(Error::Empty("manifest has no entries".into()));
        }
        let mut gallery_parts: BTreeMap<usize, (String, Vec<FeatureMatrix>)> = BTreeMap::new();
        let mut class_order: Vec<String> = Vec::new();
        let mut queries = Vec::new();
        for entry in &self.entries {
            let path = base.join(&entry.file);
            let mut features = read_set_csv(&path, Some(self.feature_dim))?;
            if self.normalize {
                features = features.normalized().map_err(|e| Error::Data {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            }
            if let Some(n) = frames {
                features = features.first_frames(n);
            }
            match entry.role {
                Role::Query => queries.push(ImageSet::query(features, Some(entry.class_label.clone()))),
                Role::Gallery => {
                    let k = match class_order.iter().position(|c| c == &entry.class_label) {
                        Some(k) => k,
                        None => {
                            class_order.push(entry.class_label.clone());
                            class_order.len() - 1
                        }
                    };
                    gallery_parts
                        .entry(k)
                        .or_insert_with(|| (entry.class_label.clone(), Vec::new()))
                        .1
                        .push(features);
                }
            }
        }
        let galleries = gallery_parts
            .into_values()
            .map(|(label, parts)| ImageSet::gallery(label, concat_frames(&parts)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { galleries, queries })
    }
}

fn concat_frames(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let dim = parts[0].rows();
    let total: usize = parts.iter().map(FeatureMatrix::cols).sum();
    let mut m = DMatrix::zeros(dim, total);
    let mut at = 0;
    for p in parts {
        m.columns_mut(at, p.cols()).copy_from(p.matrix());
        at += p.cols();
    }
    FeatureMatrix::new(m)
}

/// Loads the manifest at `path` and every set it references, optionally
/// keeping only the first `frames` frames of each set.
pub fn load_dataset(path: &Path, frames: Option<usize>) -> Result<Dataset> {
    let manifest = load_manifest(path)?;
    manifest.load(&manifest.base_dir(path), frames)
}

/// Writes `data` as `manifest.json` plus one CSV per set under `dir`.
pub fn write_dataset(dir: &Path, galleries: &[ImageSet], queries: &[ImageSet]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let dim = galleries
        .first()
        .or(queries.first())
        .map(ImageSet::dim)
        .ok_or_else(|| Error::Empty("no sets to write".into()))?;
    let mut entries = Vec::new();
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    let sets = galleries
        .iter()
        .map(|s| (s, Role::Gallery))
        .chain(queries.iter().map(|s| (s, Role::Query)));
    for (set, role) in sets {
        let label = set
            .label()
            .ok_or_else(|| Error::Empty("every written set needs a label".into()))?
            .to_string();
        let n = per_class.entry(label.clone()).or_insert(0);
        let set_id = format!("{label}-{n}");
        *n += 1;
        let file = PathBuf::from(format!("{set_id}.csv"));
        write_set_csv(&dir.join(&file), &set.features)?;
        entries.push(ManifestEntry {
            class_label: label,
            set_id,
            file,
            role,
        });
    }
    let manifest = DatasetManifest {
        root: None,
        feature_dim: dim,
        normalize: false,
        entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok(path)
}

/// Serialized form of a compressed gallery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryFile {
    pub dimension: usize,
    pub classes: Vec<GalleryFileClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryFileClass {
    pub label: String,
    /// One inner vector per atom.
    pub atoms: Vec<Vec<f64>>,
}

impl From<&CompressedGalleryCollection> for GalleryFile {
    fn from(g: &CompressedGalleryCollection) -> Self {
        GalleryFile {
            dimension: g.dimension(),
            classes: g
                .classes()
                .iter()
                .map(|c| GalleryFileClass {
                    label: c.label.clone(),
                    atoms: c.atoms.matrix().column_iter().map(|col| col.iter().copied().collect()).collect(),
                })
                .collect(),
        }
    }
}

impl GalleryFile {
    pub fn into_gallery(self) -> Result<CompressedGalleryCollection> {
        let classes = self
            .classes
            .into_iter()
            .map(|c| {
                if c.atoms.iter().any(|a| a.len() != self.dimension) {
                    return Err(Error::dim("gallery atom", self.dimension, c.atoms[0].len()));
                }
                Ok(GalleryClass {
                    atoms: FeatureMatrix::from_columns(&c.atoms)?,
                    label: c.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CompressedGalleryCollection::new(classes)
    }
}

pub fn save_gallery(path: &Path, gallery: &CompressedGalleryCollection) -> Result<()> {
    let text = serde_json::to_string(&GalleryFile::from(gallery))?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_gallery(path: &Path) -> Result<CompressedGalleryCollection> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: GalleryFile = serde_json::from_str(&text).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: format!("gallery file: {e}"),
    })?;
    file.into_gallery().map_err(|e| match e {
        Error::Io { .. } | Error::Data { .. } => e,
        other => Error::Data {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}
