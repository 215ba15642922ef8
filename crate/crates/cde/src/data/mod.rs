//! Dataset ingestion, splitting, standardization, and target
//! discretization. Datasets are immutable once constructed; splits are
//! index sets over the rows.

pub mod idx;
pub mod synthetic;

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DiscretizationGrid;
use crate::rng::{rng_from_seed, shuffle};

/// Feature matrix plus continuous targets, one row per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    /// Where the rows came from (file path or generator summary).
    pub source: String,
}

impl Dataset {
    pub fn new(features: Array2<f64>, targets: Array2<f64>, source: String) -> Result<Self> {
        if features.nrows() != targets.nrows() {
            return Err(Error::Data(format!(
                "{} feature rows vs {} target rows",
                features.nrows(),
                targets.nrows()
            )));
        }
        if features.nrows() == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            features,
            targets,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (
            self.features.select(Axis(0), rows),
            self.targets.select(Axis(0), rows),
        )
    }
}

/// Train/validation/test fractions; the test share is the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !self.train.is_finite()
            || !self.val.is_finite()
            || self.train <= 0.0
            || self.val < 0.0
            || self.train + self.val >= 1.0
        {
            return Err(Error::Config(format!(
                "split fractions train={} val={} must be positive and leave a test remainder",
                self.train, self.val
            )));
        }
        Ok(())
    }
}

/// Row indices of each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded permutation split: floor(n * train) rows to train, then
/// floor(n * val) to validation, remainder to test.
pub fn split(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    fractions.validate()?;
    if n == 0 {
        return Err(Error::Data("cannot split zero rows".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(seed);
    shuffle(&mut order, &mut rng);
    let n_train = (n as f64 * fractions.train).floor() as usize;
    let n_val = (n as f64 * fractions.val).floor() as usize;
    if n_train == 0 || n_train + n_val >= n {
        return Err(Error::Data(format!(
            "split of {n} rows leaves train={n_train}, val={n_val}, no test remainder"
        )));
    }
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        val,
        test,
    })
}

/// Flat bin index per target row. Out-of-range values clamp to boundary
/// bins; non-finite targets are an error.
pub fn discretize(targets: &Array2<f64>, grid: &DiscretizationGrid) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(targets.nrows());
    for row in targets.axis_iter(Axis(0)) {
        labels.push(grid.flat_index(row.as_slice().unwrap())?);
    }
    Ok(labels)
}

/// Per-column affine transform fitted on one subset of rows and applied
/// everywhere, so held-out rows never leak into the statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Mean and population standard deviation of `features` restricted to
    /// `rows`. Constant columns get unit scale so they map to zero.
    pub fn fit(features: &Array2<f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("cannot standardize from zero rows".into()));
        }
        let d = features.ncols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                mean[j] += features[[r, j]];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut std = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                let c = features[[r, j]] - mean[j];
                std[j] += c * c;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, features: &mut Array2<f64>) {
        for mut row in features.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
    }
}

/// Result of a CSV load: the parsed rows plus how many were dropped for
/// missing values.
#[derive(Debug)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub skipped_rows: usize,
}

/// Load a headered CSV, selecting feature and target columns by header
/// name. Rows with empty cells in selected columns are skipped and
/// counted; non-numeric content in a selected column is an error.
pub fn load_csv(path: &Path, feature_cols: &[String], target_cols: &[String]) -> Result<CsvLoad> {
    if feature_cols.is_empty() || target_cols.is_empty() {
        return Err(Error::Config(
            "need at least one feature and one target column".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header of {}: {e}", path.display())))?
        .clone();
    let locate = |name: &String| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in {}", path.display())))
    };
    let f_idx: Vec<usize> = feature_cols.iter().map(locate).collect::<Result<_>>()?;
    let t_idx: Vec<usize> = target_cols.iter().map(locate).collect::<Result<_>>()?;

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut skipped = 0usize;
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::Data(format!(
                "{}: malformed record at row {line}: {e}",
                path.display()
            ))
        })?;
        let mut missing = false;
        for &c in f_idx.iter().chain(&t_idx) {
            if record.get(c).is_none_or(|v| v.trim().is_empty()) {
                missing = true;
                break;
            }
        }
        if missing {
            skipped += 1;
            continue;
        }
        let parse = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap().trim();
            raw.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "{}: row {line}, column '{}': cannot parse '{raw}' as a number",
                    path.display(),
                    &headers[c]
                ))
            })
        };
        for &c in &f_idx {
            features.push(parse(c)?);
        }
        for &c in &t_idx {
            targets.push(parse(c)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: no usable rows", path.display())));
    }
    let features = Array2::from_shape_vec((rows, f_idx.len()), features)
        .map_err(|e| Error::Data(e.to_string()))?;
    let targets = Array2::from_shape_vec((rows, t_idx.len()), targets)
        .map_err(|e| Error::Data(e.to_string()))?;
    let dataset = Dataset::new(features, targets, path.display().to_string())?;
    Ok(CsvLoad {
        dataset,
        skipped_rows: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridAxis;
    use ndarray::array;
    use std::io::Write;

    #[test]
    fn split_arithmetic() {
        let s = split(10, SplitFractions::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));

        let s = split(9999, SplitFractions::default(), 1).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.test.len()),
            (7999, 999, 1001)
        );
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let a = split(100, SplitFractions::default(), 42).unwrap();
        let b = split(100, SplitFractions::default(), 42).unwrap();
        assert_eq!(a, b);
        let c = split(100, SplitFractions::default(), 43).unwrap();
        assert_ne!(a, c);

        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_degenerate_requests() {
        assert!(split(0, SplitFractions::default(), 1).is_err());
        assert!(split(
            100,
            SplitFractions {
                train: 0.9,
                val: 0.1
            },
            1
        )
        .is_err());
        // floor(2 * 0.3) = 0: no training rows survive
        assert!(split(
            2,
            SplitFractions {
                train: 0.3,
                val: 0.1
            },
            1
        )
        .is_err());
        // a single row cannot fill train and test at once
        assert!(split(1, SplitFractions::default(), 1).is_err());
    }

    #[test]
    fn discretize_convention() {
        let grid = DiscretizationGrid::new(vec![GridAxis {
            min: 0.0,
            max: 1.0,
            bins: 4,
        }])
        .unwrap();
        let t = array![[0.1], [0.25], [1.0], [-5.0], [5.0]];
        let labels = discretize(&t, &grid).unwrap();
        assert_eq!(labels, vec![0, 1, 3, 0, 3]);
    }

    #[test]
    fn discretize_2d_row_major() {
        let grid = DiscretizationGrid::new(vec![
            GridAxis {
                min: 0.0,
                max: 1.0,
                bins: 4,
            },
            GridAxis {
                min: 0.0,
                max: 1.0,
                bins: 4,
            },
        ])
        .unwrap();
        let labels = discretize(&array![[0.6, 0.3]], &grid).unwrap();
        assert_eq!(labels, vec![2 * 4 + 1]);
    }

    #[test]
    fn discretize_rejects_non_finite() {
        let grid = DiscretizationGrid::new(vec![GridAxis {
            min: 0.0,
            max: 1.0,
            bins: 4,
        }])
        .unwrap();
        assert!(discretize(&array![[f64::NAN]], &grid).is_err());
    }

    #[test]
    fn standardization_zeroes_training_means() {
        let mut features = array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [100.0, -7.0],];
        let rows = vec![0, 1, 2];
        let s = Standardization::fit(&features, &rows).unwrap();
        s.apply(&mut features);
        for j in 0..2 {
            let m: f64 = rows.iter().map(|&r| features[[r, j]]).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-9);
        }
        // held-out row transformed by the same statistics
        assert!((features[[3, 0]] - (100.0 - 2.0) / (2.0f64 / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constant_columns_standardize_to_zero() {
        let mut features = array![[5.0], [5.0], [5.0]];
        let s = Standardization::fit(&features, &[0, 1, 2]).unwrap();
        s.apply(&mut features);
        assert!(features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,b,y").unwrap();
        writeln!(f, "1.0,2.0,3.0").unwrap();
        writeln!(f, "4.0,5.0,6.0").unwrap();
        writeln!(f, "7.5,-1.25,0.0").unwrap();
        drop(f);
        let load = load_csv(&path, &["a".into(), "b".into()], &["y".into()]).unwrap();
        assert_eq!(load.skipped_rows, 0);
        assert_eq!(
            load.dataset.features,
            array![[1.0, 2.0], [4.0, 5.0], [7.5, -1.25]]
        );
        assert_eq!(load.dataset.targets, array![[3.0], [6.0], [0.0]]);
    }

    #[test]
    fn csv_skips_missing_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gaps.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,y").unwrap();
        writeln!(f, "1.0,2.0").unwrap();
        writeln!(f, ",2.0").unwrap();
        writeln!(f, "3.0,").unwrap();
        writeln!(f, "4.0,5.0").unwrap();
        drop(f);
        let load = load_csv(&path, &["a".into()], &["y".into()]).unwrap();
        assert_eq!(load.skipped_rows, 2);
        assert_eq!(load.dataset.len(), 2);

        let path2 = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&path2).unwrap();
        writeln!(f, "a,y").unwrap();
        writeln!(f, "oops,2.0").unwrap();
        drop(f);
        assert!(load_csv(&path2, &["a".into()], &["y".into()]).is_err());
    }

    #[test]
    fn csv_missing_column_is_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cols.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,y").unwrap();
        writeln!(f, "1,2").unwrap();
        drop(f);
        let err = load_csv(&path, &["nope".into()], &["y".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }
}
