//! Bias/variance trade-off over the ablation grid of update rates.

use debias_sgg::mgsm::{lambda_lower_bound, optimal_lambda_from_norm_sq, sweep_lambda, NoiseModel, ABLATION_GRID};

fn main() -> debias_sgg::Result<()> {
    let drift_norm_sq = 1.6e-5;
    let dim = 8;
    let model = NoiseModel::isotropic(dim, 1.0, (drift_norm_sq / dim as f64).sqrt())?;

    let opt = optimal_lambda_from_norm_sq(drift_norm_sq, 1.0)?;
    println!("optimal lambda {:.6} (admissible: {})", opt.lambda, opt.admissible);
    println!("lambda keeping |bias| <= 0.5: {:.6}", lambda_lower_bound(&model.drift, 0.5)?);

    let sweep = sweep_lambda(&ABLATION_GRID, &model, 10_000, 100, 3)?;
    println!("{:>7} {:>10} {:>10} {:>10} {:>10}", "lambda", "bias^2", "variance", "total", "empirical");
    for row in &sweep.rows {
        let empirical = row.empirical.as_ref().map_or(f64::NAN, |e| e.total);
        println!(
            "{:>7} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            row.lambda, row.bias_sq, row.variance, row.total, empirical
        );
    }
    println!("analytic argmin {}, empirical argmin {:?}", sweep.analytic_argmin, sweep.empirical_argmin);
    Ok(())
}
