//! Ranking metrics on held-out predictions and partition agreement.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::{subgroup_view, Dataset, Role, SplitAssignment};
use crate::error::{PhcError, Result};
use crate::glm::{fit_with_fallback, predict_proba, GlmOptions};
use crate::math::seed_for_members;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPredictions {
    y_true: Vec<u8>,
    scores: Vec<f64>,
}

impl ScoredPredictions {
    pub fn new(y_true: Vec<u8>, scores: Vec<f64>) -> Result<Self> {
        if y_true.len() != scores.len() {
            return Err(PhcError::DimensionMismatch {
                expected: y_true.len(),
                actual: scores.len(),
            });
        }
        if y_true.iter().any(|&y| y > 1) {
            return Err(PhcError::InvalidInput("labels must be 0 or 1".into()));
        }
        Ok(ScoredPredictions { y_true, scores })
    }

    pub fn y_true(&self) -> &[u8] {
        &self.y_true
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y_true.iter().map(|&y| y as usize).sum()
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let pos = self.positives();
        let neg = self.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(PhcError::UndefinedMetric(format!(
                "undefined AUROC: {pos} positives and {neg} negatives"
            )));
        }
        Ok((pos, neg))
    }

    /// (positives, negatives) per distinct score, highest score first.
    fn tie_groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in order {
            let s = self.scores[i];
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    if self.y_true[i] == 1 {
                        g.1 += 1
                    } else {
                        g.2 += 1
                    }
                }
                _ => groups.push((
                    s,
                    usize::from(self.y_true[i] == 1),
                    usize::from(self.y_true[i] == 0),
                )),
            }
        }
        groups
    }
}

/// Mann-Whitney AUROC: concordant pairs plus half the tied pairs, over
/// positives times negatives.
pub fn auroc(preds: &ScoredPredictions) -> Result<f64> {
    let (pos, neg) = preds.class_counts()?;
    let mut neg_above = 0usize;
    let mut score = 0.0;
    // Walking from the top, each positive beats every negative below it.
    for (_, p, n) in preds.tie_groups() {
        score += p as f64 * (neg - neg_above - n) as f64 + 0.5 * (p * n) as f64;
        neg_above += n;
    }
    Ok(score / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// ROC curve from `(0, 0)` at an infinite threshold down to `(1, 1)`.
pub fn roc_points(preds: &ScoredPredictions) -> Result<Vec<RocPoint>> {
    let (pos, neg) = preds.class_counts()?;
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    for (s, p, n) in preds.tie_groups() {
        tp += p;
        fp += n;
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Precision-recall curve, starting at recall 0 with precision 1.
pub fn pr_points(preds: &ScoredPredictions) -> Result<Vec<PrPoint>> {
    let (pos, _) = preds.class_counts()?;
    let mut points = vec![PrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    for (s, p, n) in preds.tie_groups() {
        tp += p;
        fp += n;
        points.push(PrPoint {
            threshold: s,
            recall: tp as f64 / pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

/// Average precision: `sum (R_k - R_{k-1}) P_k` over the PR steps.
pub fn auprc(preds: &ScoredPredictions) -> Result<f64> {
    let points = pr_points(preds)?;
    Ok(points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * w[1].precision)
        .sum())
}

fn choose2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index of two partitions of the same subgroups.
pub fn adjusted_rand_index(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<f64> {
    let ids_a: Vec<usize> = a.subgroups().collect();
    let ids_b: Vec<usize> = b.subgroups().collect();
    if ids_a != ids_b {
        return Err(PhcError::InvalidInput(
            "assignments cover different subgroups".into(),
        ));
    }
    let n = ids_a.len();
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for &g in &ids_a {
        let (ca, cb) = (a.cluster_of(g).unwrap(), b.cluster_of(g).unwrap());
        *table.entry((ca, cb)).or_default() += 1;
        *rows.entry(ca).or_default() += 1;
        *cols.entry(cb).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = if n < 2 {
        0.0
    } else {
        sum_a * sum_b / choose2(n)
    };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // Both partitions trivial in the same way, or n < 2.
        let same = table.len() == rows.len() && table.len() == cols.len();
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub cluster_id: usize,
    pub members: Vec<usize>,
    pub n: usize,
    pub prevalence: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub lambda: f64,
    /// Why metrics are missing, when they are.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub n: usize,
    pub prevalence: f64,
    pub per_cluster: Vec<ClusterMetrics>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    /// Pooled validation predictions in cluster-id order.
    pub predictions: ScoredPredictions,
}

/// Fits one model per cluster on its train and test rows, scores the
/// validation rows and reports pooled and per-cluster metrics.
pub fn evaluate_clustering(
    ds: &Dataset,
    splits: &SplitAssignment,
    assignment: &ClusterAssignment,
    glm: &GlmOptions,
    seed: u64,
) -> Result<Evaluation> {
    if let Some(g) = (0..ds.n_groups()).find(|&g| assignment.cluster_of(g).is_none()) {
        return Err(PhcError::InvalidInput(format!(
            "subgroup {} missing from assignment",
            ds.group_labels()[g]
        )));
    }
    if let Some(g) = assignment.subgroups().find(|&g| g >= ds.n_groups()) {
        return Err(PhcError::InvalidInput(format!(
            "assignment names subgroup index {g} outside the dataset"
        )));
    }
    let clusters: Vec<(usize, Vec<usize>)> = assignment.clusters().into_iter().collect();
    let per_cluster: Vec<(ClusterMetrics, Vec<u8>, Vec<f64>)> = clusters
        .par_iter()
        .map(|(cid, members)| -> Result<_> {
            let fit_view = subgroup_view(ds, splits, members, &[Role::Train, Role::Test])?;
            let val = subgroup_view(ds, splits, members, &[Role::Validation])?;
            let model = fit_with_fallback(
                fit_view.x().view(),
                &fit_view.y(),
                glm,
                seed_for_members(seed, members),
            )?;
            let scores = predict_proba(&model, val.x().view())?;
            let y: Vec<u8> = val.y().iter().map(|&v| v as u8).collect();
            let preds = ScoredPredictions::new(y.clone(), scores.clone())?;
            let (auroc_c, auprc_c, note) = match (auroc(&preds), auprc(&preds)) {
                (Ok(a), Ok(b)) => (Some(a), Some(b), None),
                (Err(e), _) | (_, Err(e)) => (None, None, Some(e.to_string())),
            };
            let n = y.len();
            Ok((
                ClusterMetrics {
                    cluster_id: *cid,
                    members: members.clone(),
                    n,
                    prevalence: if n == 0 {
                        f64::NAN
                    } else {
                        preds.positives() as f64 / n as f64
                    },
                    auroc: auroc_c,
                    auprc: auprc_c,
                    lambda: model.lambda,
                    note,
                },
                y,
                scores,
            ))
        })
        .collect::<Result<_>>()?;

    let mut y_all = Vec::new();
    let mut s_all = Vec::new();
    let mut metrics = Vec::with_capacity(per_cluster.len());
    for (m, y, s) in per_cluster {
        y_all.extend(y);
        s_all.extend(s);
        metrics.push(m);
    }
    let pooled = ScoredPredictions::new(y_all, s_all)?;
    let report = MetricReport {
        auroc: auroc(&pooled)?,
        auprc: auprc(&pooled)?,
        n: pooled.len(),
        prevalence: pooled.positives() as f64 / pooled.len() as f64,
        per_cluster: metrics,
    };
    Ok(Evaluation {
        report,
        predictions: pooled,
    })
}

fn fmt_threshold(t: f64) -> String {
    if t.is_infinite() {
        "inf".into()
    } else {
        t.to_string()
    }
}

pub fn write_roc_csv(points: &[RocPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_threshold(p.threshold),
            p.fpr,
            p.tpr
        ));
    }
    std::fs::write(path, out).map_err(|e| PhcError::io(path, e))
}

pub fn write_pr_csv(points: &[PrPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("threshold,recall,precision\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_threshold(p.threshold),
            p.recall,
            p.precision
        ));
    }
    std::fs::write(path, out).map_err(|e| PhcError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(y: &[u8], s: &[f64]) -> ScoredPredictions {
        ScoredPredictions::new(y.to_vec(), s.to_vec()).unwrap()
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(
            auroc(&preds(&[1, 1, 0, 0], &[0.9, 0.8, 0.2, 0.1])).unwrap(),
            1.0
        );
        assert_eq!(auroc(&preds(&[1, 0, 1, 0], &[0.5; 4])).unwrap(), 0.5);
        assert_eq!(auroc(&preds(&[1, 0, 1], &[0.9, 0.8, 0.3])).unwrap(), 0.5);
        assert!(matches!(
            auroc(&preds(&[1, 1], &[0.2, 0.3])),
            Err(PhcError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn roc_three_point_example() {
        let pts = roc_points(&preds(&[1, 0, 1], &[0.9, 0.8, 0.3])).unwrap();
        let got: Vec<(f64, f64)> = pts.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(got, vec![(0.0, 0.0), (0.0, 0.5), (1.0, 0.5), (1.0, 1.0)]);
        assert_eq!(pts[1].threshold, 0.9);
    }

    #[test]
    fn roc_perfect_and_constant() {
        let pts = roc_points(&preds(&[1, 0], &[0.9, 0.1])).unwrap();
        assert!(pts.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        let pts = roc_points(&preds(&[1, 0, 0], &[0.4; 3])).unwrap();
        let got: Vec<(f64, f64)> = pts.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(got, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn pr_three_point_example() {
        let pts = pr_points(&preds(&[1, 0, 1], &[0.9, 0.8, 0.3])).unwrap();
        let got: Vec<(f64, f64)> = pts.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(
            got,
            vec![(0.0, 1.0), (0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]
        );
        let ap = auprc(&preds(&[1, 0, 1], &[0.9, 0.8, 0.3])).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn auprc_perfect_and_constant() {
        assert_eq!(auprc(&preds(&[1, 1, 0], &[0.9, 0.8, 0.1])).unwrap(), 1.0);
        let ap = auprc(&preds(&[1, 0, 0, 1, 0], &[0.3; 5])).unwrap();
        assert!((ap - 0.4).abs() < 1e-15);
    }

    fn assign(labels: &[usize]) -> ClusterAssignment {
        ClusterAssignment::new(labels.iter().copied().enumerate().collect(), None)
    }

    #[test]
    fn ari_cases() {
        assert_eq!(
            adjusted_rand_index(&assign(&[1, 1, 2, 2]), &assign(&[7, 7, 3, 3])).unwrap(),
            1.0
        );
        let v = adjusted_rand_index(&assign(&[1, 1, 2, 2]), &assign(&[1, 2, 1, 2])).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
        let v = adjusted_rand_index(&assign(&[1, 1, 2, 3, 3]), &assign(&[1; 5])).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(
            adjusted_rand_index(&assign(&[1, 2, 3]), &assign(&[4, 5, 6])).unwrap(),
            1.0
        );
        let short = assign(&[1, 1]);
        assert!(adjusted_rand_index(&short, &assign(&[1, 1, 1])).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(ScoredPredictions::new(vec![1, 0], vec![0.3]).is_err());
    }

    #[test]
    fn curve_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roc.csv");
        write_roc_csv(&roc_points(&preds(&[1, 0], &[0.7, 0.2])).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("threshold,fpr,tpr\ninf,0,0\n0.7,0,1\n"));
        let p = dir.path().join("pr.csv");
        write_pr_csv(&pr_points(&preds(&[1, 0], &[0.7, 0.2])).unwrap(), &p).unwrap();
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .starts_with("threshold,recall,precision\n"));
    }
}
