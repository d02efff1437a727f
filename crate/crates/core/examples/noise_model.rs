//! Heteroscedastic read/shot noise: preset levels and their measured variance.

use burstkit::synth::{add_noise_seeded, NoiseParams};
use burstkit::tensor::Tensor;

fn main() -> burstkit::Result<()> {
    let clean_levels = [0.0, 0.1, 0.5, 1.0];
    for gain in [1u8, 2, 4, 8] {
        let p = NoiseParams::gain(gain)?;
        let (lr, ls) = p.log10();
        print!("gain {gain}: log10 sigma_r {lr:.1} sigma_s {ls:.1} |");
        for (k, x) in clean_levels.into_iter().enumerate() {
            let noisy = add_noise_seeded(&Tensor::full([1, 1, 300, 300], x), &p, k as u64);
            let n = noisy.numel() as f64;
            let mean = noisy.data().iter().sum::<f64>() / n;
            let var = noisy.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            print!(" x={x}: {:.2e} (model {:.2e})", var, p.variance(x));
        }
        println!();
    }
    Ok(())
}
