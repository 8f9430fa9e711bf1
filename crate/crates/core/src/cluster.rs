//! Many-to-one maps from subgroup index to cluster id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{PhcError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    cluster_of: BTreeMap<usize, usize>,
    /// Cut threshold that produced the assignment, when there was one.
    pub threshold: Option<f64>,
}

impl ClusterAssignment {
    pub fn new(cluster_of: BTreeMap<usize, usize>, threshold: Option<f64>) -> Self {
        ClusterAssignment {
            cluster_of,
            threshold,
        }
    }

    /// Numbers the given member sets `1..` in order of their smallest member.
    pub fn from_clusters(mut clusters: Vec<Vec<usize>>, threshold: Option<f64>) -> Self {
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.retain(|c| !c.is_empty());
        clusters.sort_by_key(|c| c[0]);
        let cluster_of = clusters
            .iter()
            .enumerate()
            .flat_map(|(k, members)| members.iter().map(move |&g| (g, k + 1)))
            .collect();
        ClusterAssignment {
            cluster_of,
            threshold,
        }
    }

    /// Every subgroup in its own cluster.
    pub fn singletons(n_groups: usize) -> Self {
        Self::from_clusters((0..n_groups).map(|g| vec![g]).collect(), None)
    }

    pub fn cluster_of(&self, subgroup: usize) -> Option<usize> {
        self.cluster_of.get(&subgroup).copied()
    }

    pub fn subgroups(&self) -> impl Iterator<Item = usize> + '_ {
        self.cluster_of.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_of.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_of.values().collect::<BTreeSet<_>>().len()
    }

    /// Member lists keyed by cluster id, in ascending id order.
    pub fn clusters(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&g, &c) in &self.cluster_of {
            out.entry(c).or_default().push(g);
        }
        out
    }

    /// Same partition, ids renumbered by smallest member.
    pub fn canonical(&self) -> ClusterAssignment {
        Self::from_clusters(self.clusters().into_values().collect(), self.threshold)
    }

    /// `subgroup_id,cluster_id`, subgroup ids written as labels.
    pub fn write_csv(&self, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("subgroup_id,cluster_id\n");
        for (&g, &c) in &self.cluster_of {
            out.push_str(&format!("{},{}\n", labels[g], c));
        }
        std::fs::write(path, out).map_err(|e| PhcError::io(path, e))
    }

    /// Reads an assignment CSV, resolving labels against `labels`.
    pub fn read_csv(path: impl AsRef<Path>, labels: &[String]) -> Result<ClusterAssignment> {
        let path = path.as_ref();
        let index: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| PhcError::io(path, std::io::Error::other(e)))?;
        let mut cluster_of = BTreeMap::new();
        for record in rdr.records() {
            let record = record.map_err(|e| PhcError::Parse {
                path: path.to_path_buf(),
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| PhcError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            if record.len() != 2 {
                return Err(bad("expected subgroup_id,cluster_id".into()));
            }
            let g = *index
                .get(record[0].trim())
                .ok_or_else(|| bad(format!("unknown subgroup `{}`", &record[0])))?;
            let c: usize = record[1]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad cluster id `{}`", &record[1])))?;
            if cluster_of.insert(g, c).is_some() {
                return Err(bad(format!("subgroup `{}` assigned twice", &record[0])));
            }
        }
        Ok(ClusterAssignment::new(cluster_of, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_clusters_numbers_by_smallest_member() {
        let a = ClusterAssignment::from_clusters(vec![vec![3, 2], vec![0, 4], vec![1]], None);
        assert_eq!(a.cluster_of(0), Some(1));
        assert_eq!(a.cluster_of(4), Some(1));
        assert_eq!(a.cluster_of(1), Some(2));
        assert_eq!(a.cluster_of(2), Some(3));
        assert_eq!(a.n_clusters(), 3);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn csv_round_trip_with_labels() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let a = ClusterAssignment::from_clusters(vec![vec![0, 2], vec![1]], Some(0.5));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        a.write_csv(&labels, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("subgroup_id,cluster_id\na,1\nb,2\nc,1\n"));
        let b = ClusterAssignment::read_csv(&path, &labels).unwrap();
        assert_eq!(b.clusters(), a.clusters());
    }

    #[test]
    fn read_rejects_unknown_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "subgroup_id,cluster_id\nzzz,1\n").unwrap();
        assert!(ClusterAssignment::read_csv(&path, &["a".to_string()]).is_err());
    }
}
