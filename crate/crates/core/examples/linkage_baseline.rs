//! Agglomerative clustering of subgroup feature means. Subgroups that
//! differ only in their outcome model have near-identical means, so the
//! linkage tree cannot recover the true blocks.

use phc::baseline::{cut_k, euclidean_distances, linkage_cluster, subgroup_means, Linkage};
use phc::evaluation::adjusted_rand_index;
use phc::simulation::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ds, truth) = simulate(&SimConfig {
        rows_per_subgroup: 300,
        ..SimConfig::default()
    })?;
    let means = subgroup_means(&ds);
    let dist = euclidean_distances(means.view());

    for linkage in [Linkage::Complete, Linkage::Average] {
        let tree = linkage_cluster(&dist, linkage)?;
        let cut = cut_k(&tree, 4)?;
        let last = tree.merges.last().expect("at least one merge");
        println!(
            "{linkage:>8}: root height {:.4}, ARI at k = 4: {:.4}",
            last.height,
            adjusted_rand_index(&cut, &truth.assignment())?
        );
    }
    Ok(())
}
