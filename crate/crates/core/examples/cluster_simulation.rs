//! Simulates subgroups with a known block structure, builds the merge tree
//! and cuts it at r = 0.5.
//!
//! cargo run --release --example cluster_simulation -- [seed]

use phc::data::{assign_splits, SplitRatios};
use phc::evaluation::adjusted_rand_index;
use phc::phc::{cut_tree, run_phc, PhcConfig};
use phc::simulation::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let sim = SimConfig {
        n_subgroups: 8,
        n_true_clusters: 2,
        rows_per_subgroup: 600,
        n_features: 10,
        seed,
        ..SimConfig::default()
    };
    let (raw, truth) = simulate(&sim)?;
    let ds = raw.with_normal_scores();
    let splits = assign_splits(&ds, SplitRatios::default(), seed)?;

    let tree = run_phc(
        &ds,
        &splits,
        &PhcConfig {
            seed,
            ..PhcConfig::default()
        },
    )?;
    for &id in &tree.merge_order {
        let node = tree.node(id);
        let labels: Vec<&str> = node
            .members
            .iter()
            .map(|&g| ds.group_labels()[g].as_str())
            .collect();
        println!("{:>3}  r = {:.4}  {{{}}}", id, node.r, labels.join(","));
    }

    let cut = cut_tree(&tree, 0.5);
    println!("\n{} clusters", cut.n_clusters());
    for (c, members) in cut.clusters() {
        let labels: Vec<&str> = members
            .iter()
            .map(|&g| ds.group_labels()[g].as_str())
            .collect();
        println!("  cluster {c}: {}", labels.join(" "));
    }
    println!(
        "ARI against truth: {:.4}",
        adjusted_rand_index(&cut, &truth.assignment())?
    );
    Ok(())
}
