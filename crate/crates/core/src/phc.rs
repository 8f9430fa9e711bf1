//! Predictive hierarchical clustering.
//!
//! Subgroups start as leaves. Every candidate merge fits one lasso-logistic
//! model on the union's training rows and compares its held-out
//! likelihood (merged hypothesis) against the product of the two subtrees'
//! tree likelihoods (split hypothesis), weighted by a Dirichlet-style
//! prior. The pair with the highest posterior merge probability `r` is
//! merged until one tree remains.
//!
//! All likelihood arithmetic is in natural-log space.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::{subgroup_view, Dataset, Role, SplitAssignment};
use crate::error::{PhcError, Result};
use crate::glm::{
    fit_with_fallback, log_predictive_likelihood, predict_proba, FittedModel, GlmOptions,
};
use crate::math::{ln_gamma, logsumexp2, seed_for_members, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhcConfig {
    /// Concentration of the merge prior; larger values favour more clusters.
    pub alpha: f64,
    pub glm: GlmOptions,
    /// Seed for every cross-validation fold assignment.
    pub seed: u64,
    /// Worker threads for candidate scoring; `None` uses every core.
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Reuse scores of untouched pairs across iterations. Disabling it
    /// rescores every active pair each iteration and exists for diagnostics.
    #[serde(skip, default = "cache_on")]
    pub use_cache: bool,
}

fn cache_on() -> bool {
    true
}

impl Default for PhcConfig {
    fn default() -> Self {
        PhcConfig {
            alpha: 1.0,
            glm: GlmOptions::default(),
            seed: 0,
            threads: None,
            use_cache: true,
        }
    }
}

/// Result of the prior recursion at an internal node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorUpdate {
    pub log_d: f64,
    pub log_pi: f64,
    /// `ln(1 - pi)`, computed as `ln(d_left d_right / d_k)`.
    pub log_one_minus_pi: f64,
}

/// `d_k = alpha Gamma(n_k) + d_left d_right`, `pi_k = alpha Gamma(n_k) / d_k`.
pub fn update_prior(n_k: usize, log_d_left: f64, log_d_right: f64, alpha: f64) -> PriorUpdate {
    debug_assert!(n_k >= 2 && alpha > 0.0);
    let own = alpha.ln() + ln_gamma(n_k as f64);
    let split = log_d_left + log_d_right;
    let log_d = logsumexp2(own, split);
    PriorUpdate {
        log_d,
        log_pi: own - log_d,
        log_one_minus_pi: split - log_d,
    }
}

/// Log posterior odds of the merged hypothesis and the matching `r`.
pub fn merge_posterior(
    log_pi: f64,
    log_one_minus_pi: f64,
    log_p_h1: f64,
    log_p_h2: f64,
) -> (f64, f64) {
    let log_odds = (log_pi + log_p_h1) - (log_one_minus_pi + log_p_h2);
    (sigmoid(log_odds), log_odds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    /// Subgroup indices under this node, ascending.
    pub members: Vec<usize>,
    pub children: Option<[usize; 2]>,
    pub r: f64,
    pub log_pi: f64,
    pub log_d: f64,
    pub log_p_h1: f64,
    pub log_p_tree: f64,
    #[serde(skip)]
    pub model: Option<FittedModel>,
}

impl TreeNode {
    pub fn n_k(&self) -> usize {
        self.members.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct MergeCandidate {
    pub pair: (usize, usize),
    pub r: f64,
    pub log_odds: f64,
    pub log_p_h1: f64,
    pub log_p_h2: f64,
    pub log_pi: f64,
    pub log_one_minus_pi: f64,
    pub log_d: f64,
    pub model: FittedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub alpha: f64,
    pub merge_order: Vec<usize>,
    pub nodes: Vec<TreeNode>,
    pub subgroup_labels: Vec<String>,
    pub config: PhcConfig,
    pub status: RunStatus,
    /// Model fits performed for candidate pairs.
    pub candidate_fits: usize,
    /// Pairs whose fit failed, with the failure message.
    pub invalid_candidates: Vec<InvalidCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidCandidate {
    pub members: Vec<usize>,
    pub reason: String,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    /// Nodes that are nobody's child, ascending. A complete tree has one.
    pub fn roots(&self) -> Vec<usize> {
        let children: BTreeSet<usize> = self
            .nodes
            .iter()
            .filter_map(|n| n.children)
            .flat_map(|c| c.into_iter())
            .collect();
        (0..self.nodes.len())
            .filter(|i| !children.contains(i))
            .collect()
    }

    pub fn root(&self) -> Option<usize> {
        match self.roots().as_slice() {
            [single] => Some(*single),
            _ => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }
}

fn node_key(node: &TreeNode) -> usize {
    node.members[0]
}

/// Fits a CV-tuned model on the training rows of `members` and scores it
/// on their test rows. A failed CV fit falls back once to a fixed penalty
/// of `0.01 * lambda_max`.
fn fit_and_score(
    ds: &Dataset,
    splits: &SplitAssignment,
    members: &[usize],
    cfg: &PhcConfig,
) -> Result<(FittedModel, f64)> {
    let train = subgroup_view(ds, splits, members, &[Role::Train])?;
    let test = subgroup_view(ds, splits, members, &[Role::Test])?;
    if test.is_empty() {
        return Err(PhcError::InvalidInput(format!(
            "subgroups {members:?} have no test rows"
        )));
    }
    if train.len() < 2 {
        return Err(PhcError::InvalidInput(format!(
            "subgroups {members:?} have fewer than 2 training rows"
        )));
    }
    let x = train.x();
    let y = train.y();
    let model = fit_with_fallback(x.view(), &y, &cfg.glm, seed_for_members(cfg.seed, members))?;
    let p = predict_proba(&model, test.x().view())?;
    let ll = log_predictive_likelihood(&test.y(), &p)?;
    Ok((model, ll))
}

/// Leaf for one subgroup: `pi = 1`, `d = alpha`, `r = 1`.
pub fn score_leaf(
    ds: &Dataset,
    splits: &SplitAssignment,
    subgroup: usize,
    cfg: &PhcConfig,
) -> Result<TreeNode> {
    let (model, ll) = fit_and_score(ds, splits, &[subgroup], cfg)?;
    Ok(TreeNode {
        id: subgroup,
        members: vec![subgroup],
        children: None,
        r: 1.0,
        log_pi: 0.0,
        log_d: cfg.alpha.ln(),
        log_p_h1: ll,
        log_p_tree: ll,
        model: Some(model),
    })
}

pub fn score_merge(
    ds: &Dataset,
    splits: &SplitAssignment,
    left: &TreeNode,
    right: &TreeNode,
    cfg: &PhcConfig,
) -> Result<MergeCandidate> {
    let mut members: Vec<usize> = left.members.iter().chain(&right.members).copied().collect();
    members.sort_unstable();
    if members.windows(2).any(|w| w[0] == w[1]) {
        return Err(PhcError::InvalidInput(format!(
            "nodes {} and {} share subgroups",
            left.id, right.id
        )));
    }
    let (model, log_p_h1) = fit_and_score(ds, splits, &members, cfg)?;
    let prior = update_prior(members.len(), left.log_d, right.log_d, cfg.alpha);
    let log_p_h2 = left.log_p_tree + right.log_p_tree;
    let (r, log_odds) = merge_posterior(prior.log_pi, prior.log_one_minus_pi, log_p_h1, log_p_h2);
    Ok(MergeCandidate {
        pair: (left.id.min(right.id), left.id.max(right.id)),
        r,
        log_odds,
        log_p_h1,
        log_p_h2,
        log_pi: prior.log_pi,
        log_one_minus_pi: prior.log_one_minus_pi,
        log_d: prior.log_d,
        model,
    })
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| PhcError::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

type Scored = std::result::Result<MergeCandidate, String>;

/// Runs the greedy merge loop to a single tree.
///
/// Each iteration scores only pairs not already cached (with the cache on,
/// exactly the pairs involving the newest node), then merges the valid
/// candidate with the largest posterior log-odds. Ties go to the pair with
/// the lexicographically smallest (min member, min member) key, so results
/// do not depend on node numbering or on the number of worker threads.
///
/// If every remaining candidate fails to fit, the loop stops and the
/// returned dendrogram is marked aborted.
pub fn run_phc(ds: &Dataset, splits: &SplitAssignment, cfg: &PhcConfig) -> Result<Dendrogram> {
    if ds.n_groups() < 2 {
        return Err(PhcError::InvalidInput(format!(
            "need at least 2 subgroups, got {}",
            ds.n_groups()
        )));
    }
    if !(cfg.alpha > 0.0) {
        return Err(PhcError::InvalidInput(format!(
            "alpha must be > 0, got {}",
            cfg.alpha
        )));
    }
    with_pool(cfg.threads, || run_loop(ds, splits, cfg))?
}

fn run_loop(ds: &Dataset, splits: &SplitAssignment, cfg: &PhcConfig) -> Result<Dendrogram> {
    let g = ds.n_groups();
    let mut nodes: Vec<TreeNode> = (0..g)
        .into_par_iter()
        .map(|s| score_leaf(ds, splits, s, cfg))
        .collect::<Result<_>>()?;
    let mut active: BTreeSet<usize> = (0..g).collect();
    let mut cache: BTreeMap<(usize, usize), Scored> = BTreeMap::new();
    let mut merge_order = Vec::with_capacity(g - 1);
    let mut candidate_fits = 0;
    let mut invalid_candidates = Vec::new();
    let mut status = RunStatus::Complete;

    while active.len() > 1 {
        if !cfg.use_cache {
            cache.clear();
        }
        let ids: Vec<usize> = active.iter().copied().collect();
        let pending: Vec<(usize, usize)> = ids
            .iter()
            .enumerate()
            .flat_map(|(k, &a)| ids[k + 1..].iter().map(move |&b| (a, b)))
            .filter(|pair| !cache.contains_key(pair))
            .collect();
        let scored: Vec<Scored> = pending
            .par_iter()
            .map(|&(a, b)| {
                score_merge(ds, splits, &nodes[a], &nodes[b], cfg).map_err(|e| e.to_string())
            })
            .collect();
        candidate_fits += pending.len();
        for (pair, s) in pending.into_iter().zip(scored) {
            if let Err(reason) = &s {
                let mut members: Vec<usize> = nodes[pair.0]
                    .members
                    .iter()
                    .chain(&nodes[pair.1].members)
                    .copied()
                    .collect();
                members.sort_unstable();
                log::warn!("candidate {members:?} invalid: {reason}");
                invalid_candidates.push(InvalidCandidate {
                    members,
                    reason: reason.clone(),
                });
            }
            cache.insert(pair, s);
        }

        let mut best: Option<(&MergeCandidate, (usize, usize))> = None;
        for (&(a, b), s) in &cache {
            let Ok(c) = s else { continue };
            if c.log_odds.is_nan() {
                continue;
            }
            let (ka, kb) = (node_key(&nodes[a]), node_key(&nodes[b]));
            let key = (ka.min(kb), ka.max(kb));
            let better = match best {
                None => true,
                Some((b, bkey)) => {
                    c.log_odds > b.log_odds || (c.log_odds == b.log_odds && key < bkey)
                }
            };
            if better {
                best = Some((c, key));
            }
        }
        let Some((cand, _)) = best else {
            status = RunStatus::Aborted {
                reason: format!(
                    "all {} remaining candidate merges failed to fit",
                    cache.len()
                ),
            };
            break;
        };

        let (a, b) = cand.pair;
        let id = nodes.len();
        let mut members: Vec<usize> = nodes[a]
            .members
            .iter()
            .chain(&nodes[b].members)
            .copied()
            .collect();
        members.sort_unstable();
        let log_p_tree = logsumexp2(
            cand.log_pi + cand.log_p_h1,
            cand.log_one_minus_pi + cand.log_p_h2,
        );
        log::info!(
            "merge {} + {} -> {id}: r={:.6} log p(D|H1)={:.4} log p(D|H2)={:.4}",
            a,
            b,
            cand.r,
            cand.log_p_h1,
            cand.log_p_h2
        );
        let node = TreeNode {
            id,
            members,
            children: Some([a, b]),
            r: cand.r,
            log_pi: cand.log_pi,
            log_d: cand.log_d,
            log_p_h1: cand.log_p_h1,
            log_p_tree,
            model: Some(cand.model.clone()),
        };
        nodes.push(node);
        cache.retain(|&(x, y), _| x != a && x != b && y != a && y != b);
        active.remove(&a);
        active.remove(&b);
        active.insert(id);
        merge_order.push(id);
    }

    Ok(Dendrogram {
        alpha: cfg.alpha,
        merge_order,
        nodes,
        subgroup_labels: ds.group_labels().to_vec(),
        config: cfg.clone(),
        status,
        candidate_fits,
        invalid_candidates,
    })
}

/// Top-down cut: a node with `r >= threshold` becomes one cluster,
/// otherwise both children are visited. Leaves always end the descent.
/// Partial dendrograms are cut from each of their roots.
pub fn cut_tree(dendrogram: &Dendrogram, threshold: f64) -> ClusterAssignment {
    let mut clusters = Vec::new();
    let mut stack: Vec<usize> = dendrogram.roots();
    stack.reverse();
    while let Some(id) = stack.pop() {
        let node = dendrogram.node(id);
        match node.children {
            Some([l, r]) if node.r < threshold => {
                stack.push(r);
                stack.push(l);
            }
            _ => clusters.push(node.members.clone()),
        }
    }
    ClusterAssignment::from_clusters(clusters, Some(threshold))
}

pub fn export_dendrogram(dendrogram: &Dendrogram, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(dendrogram)?;
    std::fs::write(path, json + "\n").map_err(|e| PhcError::io(path, e))
}

pub fn import_dendrogram(path: impl AsRef<Path>) -> Result<Dendrogram> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PhcError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
