//! Validation AUROC of per-cluster models under three partitions: the PHC
//! cut, complete linkage with the same number of clusters, and one model
//! per subgroup.

use phc::baseline::{cut_k, euclidean_distances, linkage_cluster, subgroup_means, Linkage};
use phc::cluster::ClusterAssignment;
use phc::data::{assign_splits, SplitRatios};
use phc::evaluation::evaluate_clustering;
use phc::phc::{cut_tree, run_phc, PhcConfig};
use phc::simulation::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 1;
    let (raw, _) = simulate(&SimConfig {
        n_subgroups: 8,
        n_true_clusters: 2,
        rows_per_subgroup: 600,
        n_features: 10,
        seed,
        ..SimConfig::default()
    })?;
    let ds = raw.with_normal_scores();
    let splits = assign_splits(&ds, SplitRatios::default(), seed)?;
    let cfg = PhcConfig {
        seed,
        ..PhcConfig::default()
    };

    let phc_cut = cut_tree(&run_phc(&ds, &splits, &cfg)?, 0.5);
    let linkage = linkage_cluster(
        &euclidean_distances(subgroup_means(&ds).view()),
        Linkage::Complete,
    )?;
    let linkage_cut = cut_k(&linkage, phc_cut.n_clusters())?;
    let singletons = ClusterAssignment::singletons(ds.n_groups());

    println!(
        "{:<10} {:>8} {:>8} {:>8}",
        "method", "clusters", "AUROC", "AUPRC"
    );
    for (name, assignment) in [
        ("phc", &phc_cut),
        ("linkage", &linkage_cut),
        ("singleton", &singletons),
    ] {
        let report = evaluate_clustering(&ds, &splits, assignment, &cfg.glm, seed)?.report;
        println!(
            "{name:<10} {:>8} {:>8.4} {:>8.4}",
            assignment.n_clusters(),
            report.auroc,
            report.auprc
        );
    }
    Ok(())
}
