//! sRGB to packed RGGB and back: inverse camera pipeline, mosaic packing and
//! the exactness of each round trip.

use burstkit::synth::isp::IspConfig;
use burstkit::synth::{forward_isp, inverse_isp, mosaic_pack, mosaic_unpack, packed_to_rgb, IspParams};
use burstkit::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> burstkit::Result<()> {
    let srgb = Tensor::from_fn([1, 3, 16, 16], |_, c, y, x| ((c + 1) as f64 * 0.13 + y as f64 * 0.03 + x as f64 * 0.02) % 1.0);
    let params = IspParams::sample(&IspConfig::default(), &mut ChaCha8Rng::seed_from_u64(7));
    println!("white balance: red {:.3} blue {:.3}", params.red_gain, params.blue_gain);

    let linear = inverse_isp(&srgb, &params)?;
    let back = forward_isp(&linear, &params)?;
    println!("ISP round trip max error {:.2e}", back.max_abs_diff(&srgb)?);

    let packed = mosaic_pack(&linear)?;
    println!("packed {:?} -> mosaic {:?}", packed.shape(), mosaic_unpack(&packed)?.shape());
    let preview = packed_to_rgb(&packed)?;
    println!("half-resolution preview {:?}", preview.shape());
    Ok(())
}
