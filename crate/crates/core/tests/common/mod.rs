//! Reference implementations shared by the oracle and acceptance tests.
#![allow(dead_code)]

use ndarray::Array2;
use phc::baseline::{DistanceMatrix, Linkage};
use phc::cluster::ClusterAssignment;
use phc::evaluation::ScoredPredictions;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Plain Newton-Raphson on the unpenalized logistic likelihood.
pub fn newton_logistic(x: &Array2<f64>, y: &[f64]) -> Vec<f64> {
    let (n, p) = x.dim();
    let k = p + 1;
    let row = |i: usize| -> Vec<f64> {
        std::iter::once(1.0)
            .chain(x.row(i).iter().copied())
            .collect()
    };
    let mut beta = vec![0.0; k];
    for _ in 0..100 {
        let mut grad = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        for i in 0..n {
            let z = row(i);
            let eta: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            for a in 0..k {
                grad[a] += (y[i] - mu) * z[a];
                for b in 0..k {
                    hess[a][b] += mu * (1.0 - mu) * z[a] * z[b];
                }
            }
        }
        let step = solve(hess, grad);
        let size: f64 = step.iter().map(|s| s.abs()).sum();
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if size < 1e-14 {
            break;
        }
    }
    beta
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Exact rationals for the prior recursion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Q(pub i128, pub i128);

pub fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Q {
    pub fn new(n: i128, d: i128) -> Q {
        let g = gcd(n, d);
        Q(n / g, d / g)
    }
    pub fn add(self, o: Q) -> Q {
        Q::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    pub fn mul(self, o: Q) -> Q {
        Q::new(self.0 * o.0, self.1 * o.1)
    }
    pub fn div(self, o: Q) -> Q {
        Q::new(self.0 * o.1, self.1 * o.0)
    }
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

pub fn factorial(n: i128) -> i128 {
    (1..=n).product()
}

pub fn random_preds(rng: &mut ChaCha8Rng) -> ScoredPredictions {
    loop {
        let n = rng.random_range(2..=50);
        // Coarse scores so ties are common.
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..8u8)) / 8.0)
            .collect();
        let y: Vec<u8> = scores
            .iter()
            .map(|s| u8::from(rng.random::<f64>() < 0.2 + 0.6 * s))
            .collect();
        let pos = y.iter().filter(|&&v| v == 1).count();
        if pos > 0 && pos < n {
            return ScoredPredictions::new(y, scores).unwrap();
        }
    }
}

pub fn brute_auroc(p: &ScoredPredictions) -> f64 {
    let (y, s) = (p.y_true(), p.scores());
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Average precision by thresholding at every distinct score.
pub fn brute_ap(p: &ScoredPredictions) -> f64 {
    let (y, s) = (p.y_true(), p.scores());
    let total_pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let tp = (0..y.len()).filter(|&i| s[i] >= t && y[i] == 1).count() as f64;
        let called = (0..y.len()).filter(|&i| s[i] >= t).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / called);
        prev_recall = recall;
    }
    ap
}

/// Rand index pieces straight from the definition over all pairs.
pub fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1.0;
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            if sa && sb {
                both += 1.0;
            }
            if sa {
                only_a += 1.0;
            }
            if sb {
                only_b += 1.0;
            }
        }
    }
    let expected = only_a * only_b / pairs;
    let max = 0.5 * (only_a + only_b);
    (both - expected) / (max - expected)
}

pub fn assignment(labels: &[usize]) -> ClusterAssignment {
    ClusterAssignment::new(labels.iter().copied().enumerate().collect(), None)
}

/// Cluster distance recomputed from scratch over all member pairs.
pub fn cluster_distance(d: &DistanceMatrix, a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let all = a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j)));
    match linkage {
        Linkage::Complete => all
            .map(|(i, j)| d.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max),
        Linkage::Average => all.map(|(i, j)| d.get(i, j)).sum::<f64>() / (a.len() * b.len()) as f64,
    }
}
