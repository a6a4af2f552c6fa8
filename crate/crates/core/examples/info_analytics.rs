//! Entropy, conditional entropy, KL and Bayesian prior reliance.

use debias_sgg::infotheory::{
    bayes_posterior, conditional_entropy, entropy, kl_divergence, prior_reliance_report, to_bits, Distribution,
    JointTable,
};
use debias_sgg::numeric::Matrix;

fn main() -> debias_sgg::Result<()> {
    // Predicate counts under two contexts: a skewed prior, sharpened by context.
    let counts = Matrix::from_rows(&[[40.0, 2.0], [8.0, 10.0], [2.0, 18.0]])?;
    let joint = JointTable::from_counts(&counts)?;
    let prior = Distribution::new(joint.label_marginal())?;
    println!("H(R)   = {:.4} bits", to_bits(entropy(&prior)));
    println!("H(R|C) = {:.4} bits", to_bits(conditional_entropy(&joint)));
    println!("H(uniform over 26) = {:.6} nats", entropy(&Distribution::uniform(26)?));

    let likelihoods = [[0.2, 0.3, 0.5], [0.1, 0.1, 0.8], [1.0, 1.0, 1.0]];
    let posteriors = likelihoods
        .iter()
        .map(|l| bayes_posterior(&prior, l))
        .collect::<debias_sgg::Result<Vec<_>>>()?;
    for (l, p) in likelihoods.iter().zip(&posteriors) {
        println!("likelihood {l:?} -> posterior {:.3?}, KL from prior {:.4}", p.probs(), kl_divergence(p, &prior)?);
    }
    let report = prior_reliance_report(&posteriors, &prior)?;
    println!("mean KL {:.4}, entropy drop {:.4}, identity gap {:.1e}", report.mean_kl, report.entropy_drop, report.max_abs_identity_gap);
    Ok(())
}
