//! CSV ingestion, z-scoring, and seeded train/validation/test splits.

pub mod builtin;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Which column is the target and which columns hold categories. Every other
/// column must parse as a number.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub target: Option<String>,
    pub categorical: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<ColumnKind>,
    pub x: Array2<f64>,
    pub target_name: Option<String>,
    pub y: Option<Array1<f64>>,
    /// Ordinal code `k` of a categorical column maps to `encodings[col][k]`.
    pub encodings: BTreeMap<String, Vec<String>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.as_ref().map(|y| y.select(Axis(0), rows)),
            ..self.clone()
        }
    }

    /// Targets as a single-column matrix.
    pub fn targets(&self) -> Result<Array2<f64>> {
        let y = self
            .y
            .as_ref()
            .ok_or_else(|| Error::Argument("dataset has no target column".into()))?;
        Ok(y.view().insert_axis(Axis(1)).to_owned())
    }

    /// Targets as class indices; fails unless every target is a
    /// non-negative integer.
    pub fn labels(&self) -> Result<Vec<usize>> {
        let y = self
            .y
            .as_ref()
            .ok_or_else(|| Error::Argument("dataset has no target column".into()))?;
        y.iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Argument(format!("target {v} is not a class index")))
                }
            })
            .collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

/// Reads a headed CSV. Rows are numbered from 1 after the header.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for name in schema.target.iter().chain(&schema.categorical) {
        if !header.contains(name) {
            return Err(Error::Argument(format!("column \"{name}\" is not in the header")));
        }
    }
    let kinds: Vec<ColumnKind> = header
        .iter()
        .map(|h| {
            if schema.categorical.contains(h) {
                ColumnKind::Categorical
            } else {
                ColumnKind::Numeric
            }
        })
        .collect();
    let mut codes: Vec<HashMap<String, usize>> = vec![HashMap::new(); header.len()];
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (j, name) in header.iter().enumerate() {
            let cell = record.get(j).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Ingestion {
                    row,
                    column: name.clone(),
                    message: "missing value".into(),
                });
            }
            let v = match kinds[j] {
                ColumnKind::Numeric => {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Ingestion {
                            row,
                            column: name.clone(),
                            message: format!("cannot parse \"{cell}\" as a finite number"),
                        })?
                }
                ColumnKind::Categorical => {
                    let next = codes[j].len();
                    let code = *codes[j].entry(cell.to_string()).or_insert_with(|| {
                        levels[j].push(cell.to_string());
                        next
                    });
                    code as f64
                }
            };
            values.push(v);
        }
        if record.len() > header.len() {
            return Err(Error::Ingestion {
                row,
                column: format!("#{}", header.len() + 1),
                message: format!("{} cells for {} columns", record.len(), header.len()),
            });
        }
        rows += 1;
    }
    let all = Array2::from_shape_vec((rows, header.len()), values).expect("row width is enforced");
    let target = schema
        .target
        .as_ref()
        .map(|t| header.iter().position(|h| h == t).expect("checked above"));
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&j| Some(j) != target).collect();
    let encodings = header
        .iter()
        .zip(levels)
        .zip(&kinds)
        .filter(|(_, &k)| k == ColumnKind::Categorical)
        .map(|((h, l), _)| (h.clone(), l))
        .collect();
    Ok(Dataset {
        feature_names: feature_cols.iter().map(|&j| header[j].clone()).collect(),
        feature_kinds: feature_cols.iter().map(|&j| kinds[j]).collect(),
        x: all.select(Axis(1), &feature_cols),
        target_name: schema.target.clone(),
        y: target.map(|j| all.column(j).to_owned()),
        encodings,
    })
}

/// Reads a headerless CSV of numbers into a matrix.
pub fn read_matrix<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let (mut values, mut width, mut rows) = (Vec::new(), None, 0);
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Ingestion {
                row: r + 1,
                column: format!("#{}", record.len()),
                message: format!("expected {} cells", width.unwrap_or(0)),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            values.push(v.ok_or_else(|| Error::Ingestion {
                row: r + 1,
                column: format!("#{}", j + 1),
                message: format!("cannot parse \"{cell}\" as a finite number"),
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Argument("the matrix is empty".into()));
    }
    Ok(Array2::from_shape_vec((rows, width.unwrap_or(0)), values).expect("rows have equal width"))
}

/// Per-column z-scoring with population statistics. A constant column keeps
/// a divisor of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Argument("cannot fit statistics on zero rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Argument(format!(
                "input has {} columns, statistics cover {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        Ok((&x - &self.mean) / &self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub stratified: bool,
    /// Set when stratification was requested but could not be honored.
    pub warning: Option<String>,
}

fn allocate(m: usize, fractions: [f64; 3]) -> (usize, usize) {
    let train = ((m as f64 * fractions[0]).round() as usize).min(m);
    let val = ((m as f64 * fractions[1]).round() as usize).min(m - train);
    (train, val)
}

/// Seeded three-way split of `n` rows. With `labels`, every class is split
/// separately with the same fractions; a class with fewer than 3 members
/// makes that impossible and the split falls back to unstratified.
pub fn split_dataset(n: usize, labels: Option<&[usize]>, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "fractions",
            "split fractions must be in [0, 1] and sum to 1",
        ));
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::Argument(format!("{} labels for {n} rows", l.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warning = None;
    let groups: Vec<Vec<usize>> = match labels {
        Some(l) => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in l.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            if let Some((c, members)) = by_class.iter().find(|(_, m)| m.len() < 3) {
                let msg = format!(
                    "class {c} has {} samples; falling back to an unstratified split",
                    members.len()
                );
                log::warn!("{msg}");
                warning = Some(msg);
                vec![(0..n).collect()]
            } else {
                by_class.into_values().collect()
            }
        }
        None => vec![(0..n).collect()],
    };
    let stratified = labels.is_some() && warning.is_none();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut group in groups {
        group.shuffle(&mut rng);
        let (a, b) = allocate(group.len(), fractions);
        train.extend_from_slice(&group[..a]);
        val.extend_from_slice(&group[a..a + b]);
        test.extend_from_slice(&group[a + b..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.shuffle(&mut rng);
    }
    Ok(SplitIndices {
        train,
        val,
        test,
        stratified,
        warning,
    })
}
