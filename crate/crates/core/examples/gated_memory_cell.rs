//! A gated memory cell smoothing a noisy feature track.

use debias_sgg::mgsm::MgsmCell;
use debias_sgg::numeric::{norm, RngStream};

fn main() -> debias_sgg::Result<()> {
    let width = 6;
    let mut rng = RngStream::new(4);
    let mut cell = MgsmCell::seeded(width, 0.06, 4, &mut rng)?;
    let clean: Vec<f64> = (0..width).map(|k| (k as f64 * 0.7).sin()).collect();
    for t in 0..12 {
        let observed: Vec<f64> = clean.iter().map(|c| c + 0.5 * rng.standard_normal()).collect();
        let enhanced = cell.step(&observed)?;
        let lag: Vec<f64> = cell.state().memory.iter().zip(&clean).map(|(m, c)| m - c).collect();
        println!("t={t:>2}  |enhanced| {:.3}  |memory - clean| {:.3}", norm(&enhanced), norm(&lag));
    }
    Ok(())
}
