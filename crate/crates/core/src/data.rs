//! Score pairs, datasets, CSV ingestion and the nested split protocol.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Lower and upper ends of the score scale.
pub const SCALE_MIN: f64 = 1.0;
pub const SCALE_MAX: f64 = 5.0;

/// One item: the judge's score, the reference score and optional metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub item_id: String,
    pub judge: Option<f64>,
    pub reference: f64,
    pub rubric_id: Option<u32>,
    pub verbose: Option<bool>,
}

impl ScorePair {
    pub fn new(item_id: impl Into<String>, judge: f64, reference: f64) -> Self {
        Self {
            item_id: item_id.into(),
            judge: Some(judge),
            reference,
            rubric_id: None,
            verbose: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<ScorePair>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(pairs: Vec<ScorePair>, provenance: Provenance, seed: Option<u64>) -> Self {
        Self {
            pairs,
            provenance,
            seed,
        }
    }

    /// Builds a synthetic dataset from `(judge, reference)` tuples with ids `0..n`.
    pub fn from_pairs(points: &[(f64, f64)]) -> Self {
        let pairs = points
            .iter()
            .enumerate()
            .map(|(i, &(j, y))| ScorePair::new(i.to_string(), j, y))
            .collect();
        Self::new(pairs, Provenance::Synthetic, None)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn references(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.reference).collect()
    }

    /// Judge scores; fails on the first item without one.
    pub fn judges(&self) -> Result<Vec<f64>> {
        self.pairs
            .iter()
            .map(|p| {
                p.judge
                    .ok_or_else(|| Error::MissingJudge(p.item_id.clone()))
            })
            .collect()
    }

    /// The first `k` items as a dataset of their own.
    pub fn prefix(&self, k: usize) -> Dataset {
        Dataset::new(
            self.pairs[..k.min(self.len())].to_vec(),
            self.provenance,
            self.seed,
        )
    }

    fn subset(&self, items: &[ScorePair]) -> Dataset {
        Dataset::new(items.to_vec(), self.provenance, self.seed)
    }
}

/// Maps the canonical column names onto the headers of a particular file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub item_id: String,
    pub judge: String,
    pub reference: String,
    pub rubric_id: String,
    pub verbose: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            item_id: "item_id".into(),
            judge: "judge".into(),
            reference: "reference".into(),
            rubric_id: "rubric_id".into(),
            verbose: "verbose".into(),
        }
    }
}

fn in_scale(x: f64) -> bool {
    (SCALE_MIN..=SCALE_MAX).contains(&x)
}

/// Reads a CSV of reference scores (and optionally judge scores).
///
/// Rows are numbered from 1, counting data rows only.
pub fn load_dataset(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, columns)
}

pub fn read_dataset<R: std::io::Read>(reader: R, columns: &ColumnMap) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let reference_col =
        find(&columns.reference).ok_or_else(|| Error::MissingColumn(columns.reference.clone()))?;
    let id_col = find(&columns.item_id);
    let judge_col = find(&columns.judge);
    let rubric_col = find(&columns.rubric_id);
    let verbose_col = find(&columns.verbose);

    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        let cell = |col: Option<usize>| col.and_then(|c| record.get(c)).filter(|s| !s.is_empty());
        let parse_score = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            if !in_scale(value) {
                return Err(Error::OutOfRange {
                    row,
                    column: name.to_string(),
                    value,
                });
            }
            Ok(value)
        };

        let reference = parse_score(reference_col, &columns.reference)?;
        let judge = match cell(judge_col) {
            Some(_) => Some(parse_score(judge_col.unwrap(), &columns.judge)?),
            None => None,
        };
        let rubric_id = match cell(rubric_col) {
            Some(raw) => Some(raw.parse::<u32>().map_err(|_| Error::Parse {
                row,
                column: columns.rubric_id.clone(),
                value: raw.to_string(),
            })?),
            None => None,
        };
        let verbose = match cell(verbose_col) {
            Some("1") | Some("true") => Some(true),
            Some("0") | Some("false") => Some(false),
            Some(raw) => {
                return Err(Error::Parse {
                    row,
                    column: columns.verbose.clone(),
                    value: raw.to_string(),
                })
            }
            None => None,
        };
        let item_id = cell(id_col)
            .map(str::to_string)
            .unwrap_or_else(|| idx.to_string());
        if !seen.insert(item_id.clone()) {
            return Err(Error::DuplicateId { row, id: item_id });
        }
        pairs.push(ScorePair {
            item_id,
            judge,
            reference,
            rubric_id,
            verbose,
        });
    }
    Ok(Dataset::new(pairs, Provenance::Ingested, None))
}

/// Writes a dataset with the canonical headers. Scores use the shortest
/// representation that parses back to the same `f64`.
pub fn write_dataset<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["item_id", "judge", "reference", "rubric_id", "verbose"])?;
    for p in &dataset.pairs {
        wtr.write_record([
            p.item_id.clone(),
            p.judge.map(|j| j.to_string()).unwrap_or_default(),
            p.reference.to_string(),
            p.rubric_id.map(|r| r.to_string()).unwrap_or_default(),
            p.verbose
                .map(|v| if v { "1" } else { "0" }.to_string())
                .unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, std::io::BufWriter::new(file))
}

/// Test/pool sizes plus the nested anchor budgets carved from the pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_test: usize,
    pub n_train_pool: usize,
    pub nested_anchor_sizes: Vec<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_test: 200,
            n_train_pool: 1500,
            nested_anchor_sizes: vec![100, 1500],
        }
    }
}

impl SplitSpec {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.n_test + self.n_train_pool > dataset_len {
            return Err(Error::InvalidSplit(format!(
                "test {} + pool {} exceeds dataset size {}",
                self.n_test, self.n_train_pool, dataset_len
            )));
        }
        if !self.nested_anchor_sizes.windows(2).all(|w| w[0] <= w[1]) {
            return Err(Error::InvalidSplit("anchor sizes must be ascending".into()));
        }
        if let Some(&k) = self
            .nested_anchor_sizes
            .iter()
            .find(|&&k| k > self.n_train_pool)
        {
            return Err(Error::InvalidSplit(format!(
                "anchor size {k} exceeds pool size {}",
                self.n_train_pool
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub test: Dataset,
    pub train_pool: Dataset,
    /// One anchor set per entry of `nested_anchor_sizes`, each a prefix of the pool.
    pub anchors: Vec<Dataset>,
}

/// Permutes the dataset with `rng`, then carves test, pool and nested anchors.
pub fn split(dataset: &Dataset, spec: &SplitSpec, rng: &RngStream) -> Result<Split> {
    spec.validate(dataset.len())?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng.rng());
    let permuted: Vec<ScorePair> = order.iter().map(|&i| dataset.pairs[i].clone()).collect();
    let test = dataset.subset(&permuted[..spec.n_test]);
    let train_pool = dataset.subset(&permuted[spec.n_test..spec.n_test + spec.n_train_pool]);
    let anchors = spec
        .nested_anchor_sizes
        .iter()
        .map(|&k| train_pool.prefix(k))
        .collect();
    Ok(Split {
        test,
        train_pool,
        anchors,
    })
}
