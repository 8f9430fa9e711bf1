//! ROC and precision-recall summaries of a handful of scored predictions.

use phc::cluster::ClusterAssignment;
use phc::evaluation::{
    adjusted_rand_index, auprc, auroc, pr_points, roc_points, ScoredPredictions,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let preds = ScoredPredictions::new(
        vec![1, 1, 0, 1, 0, 0, 1, 0],
        vec![0.95, 0.80, 0.70, 0.60, 0.55, 0.30, 0.30, 0.10],
    )?;
    println!("AUROC {:.4}", auroc(&preds)?);
    println!("AUPRC {:.4}", auprc(&preds)?);

    println!("\nthreshold   fpr    tpr");
    for p in roc_points(&preds)? {
        println!("{:>9.2}  {:.3}  {:.3}", p.threshold, p.fpr, p.tpr);
    }
    println!("\nthreshold  recall  precision");
    for p in pr_points(&preds)? {
        println!("{:>9.2}  {:.3}   {:.3}", p.threshold, p.recall, p.precision);
    }

    let a = ClusterAssignment::from_clusters(vec![vec![0, 1, 2], vec![3, 4, 5]], None);
    let b = ClusterAssignment::from_clusters(vec![vec![0, 1], vec![2, 3, 4, 5]], None);
    println!("\nARI {:.4}", adjusted_rand_index(&a, &b)?);
    Ok(())
}
