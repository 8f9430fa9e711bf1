//! Synthetic subgroup data with a known block clustering.
//!
//! Random stream order is fixed: coefficients (cluster-major), then `X`
//! column-major, then one uniform per row for the outcome.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::{ColumnKind, ColumnMeta, Dataset};
use crate::error::{PhcError, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_subgroups: usize,
    pub n_true_clusters: usize,
    pub rows_per_subgroup: usize,
    pub n_features: usize,
    pub binary_fraction: f64,
    pub seed: u64,
    /// Fixed coefficients (`n_true_clusters x n_features`) replacing the
    /// random draw. Diagnostic use only.
    #[serde(skip)]
    pub theta_override: Option<Array2<f64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_subgroups: 20,
            n_true_clusters: 4,
            rows_per_subgroup: 1000,
            n_features: 30,
            binary_fraction: 0.5,
            seed: 0,
            theta_override: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.n_subgroups > 0
            && self.n_true_clusters > 0
            && self.rows_per_subgroup > 0
            && self.n_features > 0;
        if !positive {
            return Err(PhcError::InvalidInput(
                "simulation counts must be positive".into(),
            ));
        }
        if self.n_subgroups % self.n_true_clusters != 0 {
            return Err(PhcError::InvalidInput(format!(
                "{} true clusters do not divide {} subgroups",
                self.n_true_clusters, self.n_subgroups
            )));
        }
        if !(0.0..=1.0).contains(&self.binary_fraction) {
            return Err(PhcError::InvalidInput(
                "binary_fraction must lie in [0, 1]".into(),
            ));
        }
        if let Some(theta) = &self.theta_override {
            if theta.dim() != (self.n_true_clusters, self.n_features) {
                return Err(PhcError::InvalidInput(
                    "theta override has the wrong shape".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_binary(&self) -> usize {
        (self.binary_fraction * self.n_features as f64).ceil() as usize
    }

    /// 0-based true cluster of a 0-based subgroup index.
    pub fn block_of(&self, subgroup: usize) -> usize {
        subgroup / (self.n_subgroups / self.n_true_clusters)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta: Array2<f64>,
    /// True cluster (1-based) per subgroup index.
    pub cluster_of: Vec<usize>,
}

impl GroundTruth {
    pub fn assignment(&self) -> ClusterAssignment {
        ClusterAssignment::new(
            self.cluster_of
                .iter()
                .enumerate()
                .map(|(g, &c)| (g, c))
                .collect::<BTreeMap<_, _>>(),
            None,
        )
    }

    /// Writes `subgroup_id,true_cluster` using the dataset's labels.
    pub fn write_csv(&self, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let mut out = String::from("subgroup_id,true_cluster\n");
        for (g, c) in self.cluster_of.iter().enumerate() {
            out.push_str(&format!("{},{}\n", labels[g], c));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| PhcError::io(path, e))
    }
}

/// The contiguous block map: subgroups `1..=s` in cluster 1, and so on.
pub fn true_assignment(cfg: &SimConfig) -> Result<ClusterAssignment> {
    cfg.validate()?;
    Ok(ClusterAssignment::new(
        (0..cfg.n_subgroups)
            .map(|g| (g, cfg.block_of(g) + 1))
            .collect(),
        None,
    ))
}

pub fn simulate(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.n_features;
    let n = cfg.n_subgroups * cfg.rows_per_subgroup;

    let theta = match &cfg.theta_override {
        Some(t) => t.clone(),
        None => {
            let mut t = Array2::zeros((cfg.n_true_clusters, p));
            for v in t.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            t
        }
    };

    let n_binary = cfg.n_binary();
    let mut x = Array2::<f64>::zeros((n, p));
    for j in 0..p {
        for i in 0..n {
            let v: f64 = rng.sample(StandardNormal);
            x[[i, j]] = if j < n_binary {
                f64::from(u8::from(v > 0.0))
            } else {
                v
            };
        }
    }

    let mut outcome = Vec::with_capacity(n);
    let mut group = Vec::with_capacity(n);
    for i in 0..n {
        let g = i / cfg.rows_per_subgroup;
        let c = cfg.block_of(g);
        let eta: f64 = x.row(i).iter().zip(theta.row(c)).map(|(a, b)| a * b).sum();
        let u: f64 = rng.random();
        outcome.push(u8::from(u < sigmoid(eta)));
        group.push(g);
    }

    let columns = (0..p)
        .map(|j| ColumnMeta {
            name: format!("x{}", j + 1),
            kind: if j < n_binary {
                ColumnKind::Binary
            } else {
                ColumnKind::Continuous
            },
        })
        .collect();
    let labels = (1..=cfg.n_subgroups).map(|g| g.to_string()).collect();
    let ds = Dataset::from_indices(x, outcome, group, labels, columns)?;
    let truth = GroundTruth {
        theta,
        cluster_of: (0..cfg.n_subgroups).map(|g| cfg.block_of(g) + 1).collect(),
    };
    Ok((ds, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            rows_per_subgroup: 200,
            ..SimConfig::default()
        }
    }

    #[test]
    fn default_blocks() {
        let a = true_assignment(&SimConfig::default()).unwrap();
        for g in 0..20 {
            assert_eq!(a.cluster_of(g), Some(g / 5 + 1));
        }
        let one = true_assignment(&SimConfig {
            n_true_clusters: 1,
            ..SimConfig::default()
        })
        .unwrap();
        assert_eq!(one.n_clusters(), 1);
        let singles = true_assignment(&SimConfig {
            n_subgroups: 4,
            n_true_clusters: 4,
            ..SimConfig::default()
        })
        .unwrap();
        assert_eq!(singles.n_clusters(), 4);
    }

    #[test]
    fn rejects_non_dividing_blocks() {
        let cfg = SimConfig {
            n_subgroups: 10,
            n_true_clusters: 3,
            ..SimConfig::default()
        };
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_data() {
        let (a, ta) = simulate(&small()).unwrap();
        let (b, tb) = simulate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = simulate(&SimConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn column_moments() {
        let cfg = small();
        let (ds, _) = simulate(&cfg).unwrap();
        let n = ds.n_rows() as f64;
        for (j, meta) in ds.columns().iter().enumerate() {
            let col = ds.features().column(j);
            let mean = col.sum() / n;
            match meta.kind {
                ColumnKind::Binary => assert!((mean - 0.5).abs() <= 3.0 / n.sqrt()),
                ColumnKind::Continuous => {
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    assert!(mean.abs() <= 3.0 / n.sqrt());
                    assert!((var - 1.0).abs() <= 5.0 / n.sqrt());
                }
            }
        }
        assert_eq!(
            ds.columns()
                .iter()
                .filter(|c| c.kind == ColumnKind::Binary)
                .count(),
            15
        );
    }

    #[test]
    fn zero_theta_gives_balanced_outcomes() {
        let cfg = SimConfig {
            theta_override: Some(Array2::zeros((4, 30))),
            ..small()
        };
        let (ds, _) = simulate(&cfg).unwrap();
        let n = ds.n_rows() as f64;
        let rate = ds.outcome().iter().map(|&y| y as f64).sum::<f64>() / n;
        assert!((rate - 0.5).abs() <= 3.0 / n.sqrt());
    }

    #[test]
    fn subgroup_rates_are_non_degenerate() {
        let (ds, _) = simulate(&SimConfig::default()).unwrap();
        for g in 0..ds.n_groups() {
            let rows = ds.group_rows(g);
            let pos: usize = rows.iter().map(|&r| ds.outcome()[r] as usize).sum();
            assert!(pos > 0 && pos < rows.len());
        }
        assert_eq!(ds.n_rows(), 20_000);
    }
}
