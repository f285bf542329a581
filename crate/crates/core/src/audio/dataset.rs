//! Manifests, samples and fold-based splits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::load_clip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Sample {
    /// `1 x L`, standardized.
    pub waveform: Tensor<f32>,
    pub label: usize,
    pub source_id: String,
    pub fold: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub fold: Option<u32>,
    pub class_id: usize,
    pub class_name: String,
}

/// Header names to read; the defaults follow the UrbanSound8K layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub file: String,
    pub fold: Option<String>,
    pub class_id: String,
    pub class_name: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            file: "slice_file_name".into(),
            fold: Some("fold".into()),
            class_id: "classID".into(),
            class_name: Some("class".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Indexed by class id.
    pub class_names: Vec<String>,
}

impl Manifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Validates that ids are dense from zero and that ids and names are in
    /// bijection.
    pub fn from_rows(rows: Vec<ManifestRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("manifest has no rows".into()));
        }
        let mut by_id: BTreeMap<usize, &str> = BTreeMap::new();
        let mut by_name: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if let Some(prev) = by_id.insert(r.class_id, &r.class_name) {
                if prev != r.class_name {
                    return Err(Error::Data(format!(
                        "row {}: class id {} named '{}', earlier '{}'",
                        i + 1,
                        r.class_id,
                        r.class_name,
                        prev
                    )));
                }
            }
            if let Some(prev) = by_name.insert(&r.class_name, r.class_id) {
                if prev != r.class_id {
                    return Err(Error::Data(format!(
                        "row {}: class '{}' has id {}, earlier {}",
                        i + 1,
                        r.class_name,
                        r.class_id,
                        prev
                    )));
                }
            }
        }
        let max = *by_id.keys().next_back().expect("nonempty");
        if max + 1 != by_id.len() {
            let missing: Vec<usize> = (0..=max).filter(|i| !by_id.contains_key(i)).collect();
            return Err(Error::Data(format!("class ids are not dense; missing {missing:?}")));
        }
        let class_names = by_id.values().map(|s| s.to_string()).collect();
        Ok(Manifest { rows, class_names })
    }

    pub fn read_csv<R: std::io::Read>(reader: R, columns: &ColumnMap) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data(format!("manifest has no '{name}' column")))
        };
        let file_col = col(&columns.file)?;
        let id_col = col(&columns.class_id)?;
        let fold_col = columns.fold.as_deref().map(col).transpose()?;
        let name_col = columns.class_name.as_deref().map(col).transpose()?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
            let class_id = field(id_col)
                .parse()
                .map_err(|_| Error::Data(format!("line {line}: bad class id '{}'", field(id_col))))?;
            let fold = match fold_col {
                Some(c) => Some(
                    field(c).parse().map_err(|_| Error::Data(format!("line {line}: bad fold '{}'", field(c))))?,
                ),
                None => None,
            };
            rows.push(ManifestRow {
                file: field(file_col).to_string(),
                fold,
                class_id,
                class_name: name_col.map(|c| field(c).to_string()).unwrap_or_else(|| format!("class{class_id}")),
            });
        }
        Self::from_rows(rows)
    }

    pub fn load(path: &Path, columns: &ColumnMap) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", path.display())))?;
        Self::read_csv(f, columns)
    }
}

/// Test items are those whose fold is in `test_folds`, kept in input order;
/// the rest are shuffled under `seed`. Items without a fold train.
pub fn make_splits<T: Clone>(
    items: &[T],
    fold_of: impl Fn(&T) -> Option<u32>,
    test_folds: &BTreeSet<u32>,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    let (test, mut train): (Vec<T>, Vec<T>) =
        items.iter().cloned().partition(|it| fold_of(it).is_some_and(|f| test_folds.contains(&f)));
    train.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (train, test)
}

/// `data_dir/fold{N}/file` when the row has a fold and that file exists,
/// otherwise `data_dir/file`.
pub fn clip_path(data_dir: &Path, row: &ManifestRow) -> PathBuf {
    if let Some(f) = row.fold {
        let p = data_dir.join(format!("fold{f}")).join(&row.file);
        if p.exists() {
            return p;
        }
    }
    data_dir.join(&row.file)
}

pub fn load_sample(data_dir: &Path, row: &ManifestRow, target_len: usize) -> Result<Sample> {
    let path = clip_path(data_dir, row);
    let bytes = std::fs::read(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let waveform = load_clip(&bytes, target_len).map_err(|e| match e {
        Error::WavParse { offset, reason } => {
            Error::WavParse { offset, reason: format!("{}: {reason}", path.display()) }
        }
        other => other,
    })?;
    Ok(Sample { waveform, label: row.class_id, source_id: row.file.clone(), fold: row.fold })
}

pub fn load_samples(data_dir: &Path, rows: &[ManifestRow], target_len: usize) -> Result<Vec<Sample>> {
    rows.iter().map(|r| load_sample(data_dir, r, target_len)).collect()
}
