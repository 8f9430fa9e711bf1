//! Classical agglomerative clustering of subgroup feature means, the
//! similarity-only baseline PHC is compared against.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::Dataset;
use crate::error::{PhcError, Result};

/// Mean feature vector per subgroup over all rows, one row per subgroup.
pub fn subgroup_means(ds: &Dataset) -> Array2<f64> {
    let p = ds.n_features();
    let mut means = Array2::zeros((ds.n_groups(), p));
    for g in 0..ds.n_groups() {
        let rows = ds.group_rows(g);
        let mut acc = means.row_mut(g);
        for &r in rows {
            acc += &ds.row(r);
        }
        acc /= rows.len() as f64;
    }
    means
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; size * size];
        for a in 0..size {
            for b in a + 1..size {
                let d = f(a, b);
                data[a * size + b] = d;
                data[b * size + a] = d;
            }
        }
        DistanceMatrix { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.size + b]
    }
}

pub fn euclidean_distances(means: ArrayView2<'_, f64>) -> DistanceMatrix {
    DistanceMatrix::from_fn(means.nrows(), |a, b| {
        means
            .row(a)
            .iter()
            .zip(means.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Complete,
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = PhcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(PhcError::InvalidInput(format!(
                "unknown linkage `{other}` (expected complete or average)"
            ))),
        }
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

/// One agglomeration step. Leaves are ids `0..n`, merge `t` creates `n + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageMerge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageDendrogram {
    pub n_leaves: usize,
    pub merges: Vec<LinkageMerge>,
    pub linkage: Linkage,
}

/// Greedy closest-pair merging with Lance-Williams distance updates.
/// Ties go to the lexicographically smallest `(id, id)` pair.
pub fn linkage_cluster(d: &DistanceMatrix, linkage: Linkage) -> Result<LinkageDendrogram> {
    let n = d.size();
    if n < 2 {
        return Err(PhcError::InvalidInput(format!(
            "linkage needs at least 2 points, got {n}"
        )));
    }
    let total = 2 * n - 1;
    let mut dist = vec![f64::NAN; total * total];
    for a in 0..n {
        for b in 0..n {
            dist[a * total + b] = d.get(a, b);
        }
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for t in 0..n - 1 {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for (i, &a) in active.iter().enumerate() {
            for &b in &active[i + 1..] {
                let dab = dist[a * total + b];
                if dab < best.0 || (dab == best.0 && (a, b) < (best.1, best.2)) {
                    best = (dab, a, b);
                }
            }
        }
        let (height, a, b) = best;
        let id = n + t;
        active.retain(|&c| c != a && c != b);
        for &m in &active {
            let (da, db) = (dist[a * total + m], dist[b * total + m]);
            let dk = match linkage {
                Linkage::Complete => da.max(db),
                Linkage::Average => {
                    (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64
                }
            };
            dist[id * total + m] = dk;
            dist[m * total + id] = dk;
        }
        size[id] = size[a] + size[b];
        active.push(id);
        merges.push(LinkageMerge {
            left: a,
            right: b,
            height,
            id,
        });
    }
    Ok(LinkageDendrogram {
        n_leaves: n,
        merges,
        linkage,
    })
}

impl LinkageDendrogram {
    /// Leaf members under every node id.
    fn members(&self) -> Vec<Vec<usize>> {
        let mut members: Vec<Vec<usize>> = (0..self.n_leaves).map(|g| vec![g]).collect();
        for m in &self.merges {
            let mut joined: Vec<usize> = members[m.left]
                .iter()
                .chain(&members[m.right])
                .copied()
                .collect();
            joined.sort_unstable();
            members.push(joined);
        }
        members
    }

    /// Serializes in the PHC dendrogram layout with `height` in place of `r`.
    pub fn to_json(&self, labels: &[String]) -> serde_json::Value {
        let members = self.members();
        let mut nodes = Vec::with_capacity(members.len());
        for (id, m) in members.iter().enumerate() {
            let (children, height) = if id < self.n_leaves {
                (serde_json::Value::Null, 0.0)
            } else {
                let merge = &self.merges[id - self.n_leaves];
                (serde_json::json!([merge.left, merge.right]), merge.height)
            };
            nodes.push(serde_json::json!({
                "id": id,
                "members": m,
                "children": children,
                "height": height,
            }));
        }
        serde_json::json!({
            "linkage": self.linkage,
            "merge_order": self.merges.iter().map(|m| m.id).collect::<Vec<_>>(),
            "nodes": nodes,
            "subgroup_labels": labels,
        })
    }

    pub fn export(&self, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json(labels))?;
        std::fs::write(path, text + "\n").map_err(|e| PhcError::io(path, e))
    }
}

/// Partition into `k` clusters by undoing the last `k - 1` merges.
pub fn cut_k(dendrogram: &LinkageDendrogram, k: usize) -> Result<ClusterAssignment> {
    let n = dendrogram.n_leaves;
    if k == 0 || k > n {
        return Err(PhcError::InvalidInput(format!(
            "cannot cut {n} leaves into {k} clusters"
        )));
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    for m in &dendrogram.merges[..n - k] {
        parent[m.left] = m.id;
        parent[m.right] = m.id;
    }
    let find = |mut x: usize| {
        while parent[x] != x {
            x = parent[x];
        }
        x
    };
    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for g in 0..n {
        by_root.entry(find(g)).or_default().push(g);
    }
    Ok(ClusterAssignment::from_clusters(
        by_root.into_values().collect(),
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnKind, ColumnMeta};
    use ndarray::array;

    fn line(points: &[f64]) -> DistanceMatrix {
        DistanceMatrix::from_fn(points.len(), |a, b| (points[a] - points[b]).abs())
    }

    #[test]
    fn means_per_subgroup() {
        let x = array![[0.0, 0.0], [5.0, 1.0], [2.0, 2.0]];
        let labels: Vec<String> = ["a", "b", "a"].iter().map(|s| s.to_string()).collect();
        let cols = (0..2)
            .map(|j| ColumnMeta {
                name: format!("x{j}"),
                kind: ColumnKind::Continuous,
            })
            .collect();
        let ds = Dataset::from_labels(x, vec![0, 1, 0], &labels, cols).unwrap();
        let m = subgroup_means(&ds);
        assert_eq!(m.row(0).to_vec(), vec![1.0, 1.0]);
        assert_eq!(m.row(1).to_vec(), vec![5.0, 1.0]);
    }

    #[test]
    fn three_four_five() {
        let d = euclidean_distances(array![[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]].view());
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(1, 2), 0.0);
        assert_eq!(d.get(2, 2), 0.0);
    }

    #[test]
    fn line_of_three() {
        let dn = linkage_cluster(&line(&[0.0, 1.0, 10.0]), Linkage::Complete).unwrap();
        assert_eq!((dn.merges[0].left, dn.merges[0].right), (0, 1));
        assert_eq!(dn.merges[0].height, 1.0);
        assert_eq!(dn.merges[1].height, 10.0);
        let avg = linkage_cluster(&line(&[0.0, 1.0, 10.0]), Linkage::Average).unwrap();
        assert_eq!(avg.merges[1].height, 9.5);
    }

    #[test]
    fn two_points() {
        let dn = linkage_cluster(&line(&[2.0, 7.0]), Linkage::Complete).unwrap();
        assert_eq!(dn.merges.len(), 1);
        assert_eq!(dn.merges[0].height, 5.0);
        assert!(linkage_cluster(&line(&[1.0]), Linkage::Complete).is_err());
    }

    #[test]
    fn cut_line_of_four() {
        // 0, 1, 10, 12: merges {0,1}@1, {10,12}@2, root@12.
        let dn = linkage_cluster(&line(&[0.0, 1.0, 10.0, 12.0]), Linkage::Complete).unwrap();
        let two = cut_k(&dn, 2).unwrap();
        assert_eq!(
            two.clusters().into_values().collect::<Vec<_>>(),
            vec![vec![0, 1], vec![2, 3]]
        );
        let three = cut_k(&dn, 3).unwrap();
        assert_eq!(
            three.clusters().into_values().collect::<Vec<_>>(),
            vec![vec![0, 1], vec![2], vec![3]]
        );
        assert_eq!(cut_k(&dn, 1).unwrap().n_clusters(), 1);
        assert_eq!(cut_k(&dn, 4).unwrap().n_clusters(), 4);
        assert!(cut_k(&dn, 0).is_err());
        assert!(cut_k(&dn, 5).is_err());
    }

    #[test]
    fn ties_break_on_smallest_pair() {
        let dn = linkage_cluster(&line(&[0.0, 1.0, 2.0]), Linkage::Complete).unwrap();
        assert_eq!((dn.merges[0].left, dn.merges[0].right), (0, 1));
    }

    #[test]
    fn json_layout() {
        let dn = linkage_cluster(&line(&[0.0, 1.0, 10.0]), Linkage::Average).unwrap();
        let labels: Vec<String> = (1..=3).map(|g| g.to_string()).collect();
        let v = dn.to_json(&labels);
        assert_eq!(v["linkage"], "average");
        assert_eq!(v["merge_order"], serde_json::json!([3, 4]));
        assert_eq!(v["nodes"][4]["members"], serde_json::json!([0, 1, 2]));
        assert_eq!(v["nodes"][3]["height"], 1.0);
    }
}
