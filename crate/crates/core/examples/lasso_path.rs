//! Cross-validated lasso-logistic fit on a problem with three informative
//! features out of twenty.

use ndarray::Array2;
use phc::glm::{fit_with_cv, kkt_violation, GlmOptions};
use phc::math::sigmoid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, p) = (600, 20);
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta = 1.5 * x[[i, 0]] - 1.0 * x[[i, 1]] + 0.5 * x[[i, 2]] - 0.3;
            f64::from(u8::from(rng.random::<f64>() < sigmoid(eta)))
        })
        .collect();

    let opts = GlmOptions::default();
    let fit = fit_with_cv(x.view(), &y, &opts, 7)?;

    println!("{:>12}  {:>12}", "lambda", "cv loglik");
    for point in fit.selection.curve.iter().step_by(5) {
        println!("{:>12.6}  {:>12.4}", point.lambda, point.mean_loglik);
    }
    println!("\nselected lambda {:.6}", fit.selection.lambda);
    println!(
        "KKT violation {:.2e}",
        kkt_violation(x.view(), &y, &fit.model)
    );

    let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    let export = fit.model.to_export(&names);
    let nonzero: Vec<_> = export
        .coefficients
        .iter()
        .filter(|c| c.value != 0.0)
        .collect();
    println!("{} nonzero coefficients", nonzero.len());
    for c in nonzero.iter().take(6) {
        println!("  {:<4} {:+.4}", c.name, c.value);
    }
    Ok(())
}
