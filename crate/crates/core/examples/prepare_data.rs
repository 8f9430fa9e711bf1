//! CSV in, analysis-ready data out: drop small subgroups, normal-score the
//! continuous columns and assign train/test/validation roles.

use phc::data::{
    assign_splits, filter_min_group_size, load_csv, write_csv, CsvSchema, Role, SplitRatios,
};
use phc::simulation::{simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("phc-prepare-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("data.csv");

    let (ds, _) = simulate(&SimConfig {
        n_subgroups: 6,
        n_true_clusters: 2,
        rows_per_subgroup: 200,
        n_features: 4,
        ..SimConfig::default()
    })?;
    // Shrink one subgroup below the size cutoff.
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&r| ds.group()[r] != 2 || r % 4 == 0)
        .collect();
    write_csv(&ds.select_rows(&keep)?, &path)?;

    let loaded = load_csv(&path, &CsvSchema::default())?;
    let (filtered, report) = filter_min_group_size(&loaded, 100)?;
    println!(
        "kept {}/{} subgroups, {:.1}% of rows",
        report.retained_groups,
        report.total_groups,
        100.0 * report.retained_fraction()
    );

    let scored = filtered.with_normal_scores();
    for meta in scored.columns() {
        println!("  {:<3} {:?}", meta.name, meta.kind);
    }

    let splits = assign_splits(&scored, SplitRatios::default(), 0)?;
    for role in Role::ALL {
        println!("{role:>10}: {} rows", splits.count(role));
    }
    splits.write_manifest(dir.join("splits.csv"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
