//! EMA memory under noise and drift, against its closed forms.

use debias_sgg::mgsm::{simulate_memory, stationary_variance, steady_state_bias, NoiseModel};

fn main() -> debias_sgg::Result<()> {
    let lambda = 0.04;
    let noisy = NoiseModel::isotropic(4, 1.0, 0.0)?;
    let trace = simulate_memory(&noisy, lambda, 20_000, 300, 1)?;
    let theory = stationary_variance(lambda, &noisy.sigma_diag)?;
    println!("lambda = {lambda}");
    for (k, (v, t)) in trace.tail_variance().iter().zip(&theory).enumerate() {
        println!("  coord {k}: tail variance {v:.5}  closed form {t:.5}");
    }

    let drifting = NoiseModel::isotropic(2, 0.0, 0.01)?;
    let steps = (10.0_f64 / lambda).ceil() as usize;
    let trace = simulate_memory(&drifting, lambda, steps, 1, 0)?;
    let bias = steady_state_bias(&drifting.drift, lambda)?;
    println!("after {steps} steps: bias {:.5}, steady state {:.5}", trace.final_bias()[0], bias[0]);
    Ok(())
}
