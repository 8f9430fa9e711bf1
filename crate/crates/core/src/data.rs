//! Dataset container, CSV ingestion, preprocessing and the per-run
//! train/test/validation split.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PhcError, Result};
use crate::math::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
}

/// Observations with a binary outcome and a subgroup label per row.
///
/// Subgroups are addressed by a dense index `0..n_groups()`; the original
/// labels are kept in `group_labels` ordered numerically when every label
/// is an integer and lexicographically otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    outcome: Vec<u8>,
    group: Vec<usize>,
    group_labels: Vec<String>,
    columns: Vec<ColumnMeta>,
    group_rows: Vec<Vec<usize>>,
}

fn sort_labels(labels: &mut [String]) {
    let numeric: Option<Vec<i64>> = labels.iter().map(|l| l.parse::<i64>().ok()).collect();
    if numeric.is_some() {
        labels.sort_by_key(|l| l.parse::<i64>().unwrap());
    } else {
        labels.sort();
    }
}

impl Dataset {
    /// Builds a dataset from per-row group labels.
    pub fn from_labels(
        features: Array2<f64>,
        outcome: Vec<u8>,
        row_labels: &[String],
        columns: Vec<ColumnMeta>,
    ) -> Result<Self> {
        let mut labels: Vec<String> = row_labels
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        sort_labels(&mut labels);
        let index: std::collections::HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let group = row_labels.iter().map(|l| index[l.as_str()]).collect();
        Self::from_indices(features, outcome, group, labels, columns)
    }

    /// Builds a dataset from dense subgroup indices into `group_labels`.
    pub fn from_indices(
        features: Array2<f64>,
        outcome: Vec<u8>,
        group: Vec<usize>,
        group_labels: Vec<String>,
        columns: Vec<ColumnMeta>,
    ) -> Result<Self> {
        let n = features.nrows();
        if outcome.len() != n {
            return Err(PhcError::DimensionMismatch {
                expected: n,
                actual: outcome.len(),
            });
        }
        if group.len() != n {
            return Err(PhcError::DimensionMismatch {
                expected: n,
                actual: group.len(),
            });
        }
        if columns.len() != features.ncols() {
            return Err(PhcError::DimensionMismatch {
                expected: features.ncols(),
                actual: columns.len(),
            });
        }
        if let Some(i) = outcome.iter().position(|&y| y > 1) {
            return Err(PhcError::InvalidInput(format!(
                "outcome at row {i} is {} (expected 0 or 1)",
                outcome[i]
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(PhcError::InvalidInput("non-finite feature value".into()));
        }
        let mut group_rows = vec![Vec::new(); group_labels.len()];
        for (row, &g) in group.iter().enumerate() {
            if g >= group_labels.len() {
                return Err(PhcError::InvalidInput(format!(
                    "row {row} has subgroup index {g} but only {} labels",
                    group_labels.len()
                )));
            }
            group_rows[g].push(row);
        }
        if let Some(g) = group_rows.iter().position(Vec::is_empty) {
            return Err(PhcError::InvalidInput(format!(
                "subgroup {} has no rows",
                group_labels[g]
            )));
        }
        Ok(Dataset {
            features,
            outcome,
            group,
            group_labels,
            columns,
            group_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn group(&self) -> &[usize] {
        &self.group
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    /// Row indices of one subgroup, in dataset order.
    pub fn group_rows(&self, g: usize) -> &[usize] {
        &self.group_rows[g]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Returns a copy with the rows selected by `rows`, keeping the full
    /// label set only for subgroups that still have rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let features = self.features.select(ndarray::Axis(0), rows);
        let outcome = rows.iter().map(|&r| self.outcome[r]).collect();
        let labels: Vec<String> = rows
            .iter()
            .map(|&r| self.group_labels[self.group[r]].clone())
            .collect();
        Dataset::from_labels(features, outcome, &labels, self.columns.clone())
    }

    /// Applies the normal scores transform to every continuous column.
    pub fn with_normal_scores(&self) -> Dataset {
        let mut out = self.clone();
        for (j, meta) in self.columns.iter().enumerate() {
            if meta.kind == ColumnKind::Continuous {
                let col: Vec<f64> = self.features.column(j).to_vec();
                let scored = normal_scores_transform(&col);
                out.features
                    .column_mut(j)
                    .iter_mut()
                    .zip(scored)
                    .for_each(|(dst, v)| *dst = v);
            }
        }
        out
    }
}

/// Names of the group and outcome columns in an input CSV. Every other
/// column is a feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub group_column: String,
    pub outcome_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            group_column: "group".into(),
            outcome_column: "y".into(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| PhcError::io(path, e))?;
    read_csv(file, path, schema)
}

fn read_csv<R: std::io::Read>(reader: R, path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| PhcError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(1, format!("missing required column `{name}`")))
    };
    let group_idx = find(&schema.group_column)?;
    let outcome_idx = find(&schema.outcome_column)?;
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != group_idx && i != outcome_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut outcome = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let label = record[group_idx].trim();
        if label.is_empty() {
            return Err(parse_err(line, "missing group label".into()));
        }
        labels.push(label.to_string());
        let y = match record[outcome_idx].trim() {
            "0" | "0.0" => 0u8,
            "1" | "1.0" => 1u8,
            "" => return Err(parse_err(line, "missing outcome value".into())),
            other => return Err(parse_err(line, format!("outcome `{other}` is not 0 or 1"))),
        };
        outcome.push(y);
        for &j in &feature_idx {
            let raw = record[j].trim();
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                return Err(parse_err(
                    line,
                    format!("missing value in column `{}`", &headers[j]),
                ));
            }
            let v: f64 = raw.parse().map_err(|_| {
                parse_err(
                    line,
                    format!("cannot parse `{raw}` in column `{}`", &headers[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("non-finite value in column `{}`", &headers[j]),
                ));
            }
            values.push(v);
        }
    }
    if outcome.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let p = feature_idx.len();
    let features = Array2::from_shape_vec((outcome.len(), p), values)
        .expect("row-major buffer has n*p entries");
    let columns = feature_idx
        .iter()
        .enumerate()
        .map(|(c, &j)| {
            let binary = features.column(c).iter().all(|&v| v == 0.0 || v == 1.0);
            ColumnMeta {
                name: headers[j].trim().to_string(),
                kind: if binary {
                    ColumnKind::Binary
                } else {
                    ColumnKind::Continuous
                },
            }
        })
        .collect();
    Dataset::from_labels(features, outcome, &labels, columns)
}

/// Writes the dataset in the same layout `load_csv` reads. Floats use the
/// shortest representation that parses back to the identical value.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w =
        csv::Writer::from_path(path).map_err(|e| PhcError::io(path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| PhcError::io(path, std::io::Error::other(e));
    let mut header = vec!["group".to_string(), "y".to_string()];
    header.extend(ds.columns.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(io)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        record.clear();
        record.push(ds.group_labels[ds.group[i]].clone());
        record.push(ds.outcome[i].to_string());
        record.extend(ds.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(io)?;
    }
    w.flush().map_err(|e| PhcError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub retained_rows: usize,
    pub total_rows: usize,
    pub retained_groups: usize,
    pub total_groups: usize,
}

impl FilterReport {
    pub fn retained_fraction(&self) -> f64 {
        self.retained_rows as f64 / self.total_rows as f64
    }
}

/// Drops every subgroup with fewer than `min_n` rows.
pub fn filter_min_group_size(ds: &Dataset, min_n: usize) -> Result<(Dataset, FilterReport)> {
    if min_n == 0 {
        return Err(PhcError::InvalidInput("min group size must be >= 1".into()));
    }
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| ds.group_rows[ds.group[i]].len() >= min_n)
        .collect();
    if keep.is_empty() {
        return Err(PhcError::InvalidInput(format!(
            "no subgroup meets threshold of {min_n} rows"
        )));
    }
    let retained_groups = ds.group_rows.iter().filter(|r| r.len() >= min_n).count();
    let report = FilterReport {
        retained_rows: keep.len(),
        total_rows: ds.n_rows(),
        retained_groups,
        total_groups: ds.n_groups(),
    };
    let filtered = if keep.len() == ds.n_rows() {
        ds.clone()
    } else {
        ds.select_rows(&keep)?
    };
    Ok((filtered, report))
}

/// Rank-based map onto standard normal quantiles: `Φ⁻¹((rank − 0.5)/m)`,
/// ties sharing their average rank.
pub fn normal_scores_transform(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; m];
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
        .into_iter()
        .map(|r| normal_quantile((r - 0.5) / m as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
    Validation,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::Test, Role::Validation];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Role::Train => "train",
            Role::Test => "test",
            Role::Validation => "validation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    /// Fraction of each subgroup held out for validation.
    pub validation_fraction: f64,
    /// Fraction of the non-validation rows used for training; the rest is test.
    pub train_fraction: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            validation_fraction: 0.2,
            train_fraction: 2.0 / 3.0,
        }
    }
}

/// Per-row role, fixed for the lifetime of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    roles: Vec<Role>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl SplitAssignment {
    pub fn from_roles(roles: Vec<Role>, seed: u64, ratios: SplitRatios) -> Self {
        SplitAssignment {
            roles,
            seed,
            ratios,
        }
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, row: usize) -> Role {
        self.roles[row]
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    /// Writes `row_index,role` for audit.
    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| PhcError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| PhcError::io(path, e);
        writeln!(w, "row_index,role").map_err(io)?;
        for (i, r) in self.roles.iter().enumerate() {
            writeln!(w, "{i},{r}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn subgroup_role_counts(m: usize, ratios: &SplitRatios) -> [usize; 3] {
    let n_val = ((m as f64 * ratios.validation_fraction).round() as usize).clamp(1, m - 2);
    let rest = m - n_val;
    let n_train = ((rest as f64 * ratios.train_fraction).round() as usize).clamp(1, rest - 1);
    [n_train, rest - n_train, n_val]
}

/// Stratified split by subgroup and outcome class.
///
/// Within a subgroup the rows are shuffled per class, positives placed
/// first, then dealt to roles by largest quota deficit. That yields the
/// exact subgroup-level counts while spreading each class across the roles
/// in proportion.
pub fn assign_splits(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let valid = |f: f64| f > 0.0 && f < 1.0;
    if !valid(ratios.validation_fraction) || !valid(ratios.train_fraction) {
        return Err(PhcError::InvalidInput(format!(
            "split ratios must lie in (0, 1): {ratios:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roles = vec![Role::Train; ds.n_rows()];
    for g in 0..ds.n_groups() {
        let rows = ds.group_rows(g);
        let m = rows.len();
        if m < 3 {
            return Err(PhcError::InvalidInput(format!(
                "subgroup {} has {m} rows; at least 3 are needed to populate train, test and validation",
                ds.group_labels[g]
            )));
        }
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| ds.outcome[r] == 1);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let targets = subgroup_role_counts(m, &ratios);
        let mut dealt = [0usize; 3];
        for (k, row) in pos.into_iter().chain(neg).enumerate() {
            let step = (k + 1) as f64;
            let mut best = 0;
            let mut best_deficit = f64::NEG_INFINITY;
            for (slot, &target) in targets.iter().enumerate() {
                if dealt[slot] >= target {
                    continue;
                }
                let deficit = target as f64 * step / m as f64 - dealt[slot] as f64;
                if deficit > best_deficit {
                    best_deficit = deficit;
                    best = slot;
                }
            }
            dealt[best] += 1;
            roles[row] = Role::ALL[best];
        }
    }
    Ok(SplitAssignment {
        roles,
        seed,
        ratios,
    })
}

/// Rows of a set of subgroups restricted to a set of roles.
#[derive(Debug, Clone)]
pub struct DataView<'a> {
    dataset: &'a Dataset,
    ids: Vec<usize>,
    rows: Vec<usize>,
}

impl<'a> DataView<'a> {
    /// Row indices, grouped by ascending subgroup id and in dataset order
    /// within each subgroup.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn x(&self) -> Array2<f64> {
        self.dataset.features.select(ndarray::Axis(0), &self.rows)
    }

    pub fn y(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&r| self.dataset.outcome[r] as f64)
            .collect()
    }
}

pub fn subgroup_view<'a>(
    ds: &'a Dataset,
    splits: &SplitAssignment,
    ids: &[usize],
    roles: &[Role],
) -> Result<DataView<'a>> {
    if ids.is_empty() {
        return Err(PhcError::InvalidInput("empty subgroup id set".into()));
    }
    if splits.roles.len() != ds.n_rows() {
        return Err(PhcError::DimensionMismatch {
            expected: ds.n_rows(),
            actual: splits.roles.len(),
        });
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&g| g >= ds.n_groups()) {
        return Err(PhcError::InvalidInput(format!("unknown subgroup id {bad}")));
    }
    let rows = sorted
        .iter()
        .flat_map(|&g| ds.group_rows(g).iter().copied())
        .filter(|&r| roles.contains(&splits.roles[r]))
        .collect();
    Ok(DataView {
        dataset: ds,
        ids: sorted,
        rows,
    })
}
