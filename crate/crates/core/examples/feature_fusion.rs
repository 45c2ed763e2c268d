//! Shared backbone features, depth-wise correlation and channel reduction at
//! toy and full scale.

use siamcar::image::crop_resize;
use siamcar::model::{ModelConfig, SiamCarNet};
use siamcar::Tensor;

fn describe(name: &str, config: ModelConfig) -> anyhow::Result<()> {
    let net = SiamCarNet::init(config.clone(), 7)?;
    let template = Tensor::full([3, config.template_size, config.template_size], 0.5);
    let search = Tensor::from_fn([3, config.search_size, config.search_size], |i| {
        ((i % 97) as f64 / 97.0).sqrt()
    });
    let zf = net.template_features(&template)?;
    let fused = net.respond(&zf, &search)?;
    println!(
        "{name}: template {}px -> features {:?}; search {}px -> response {:?} (stride {})",
        config.template_size,
        zf.shape(),
        config.search_size,
        fused.response.shape(),
        fused.stride
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    describe("toy", ModelConfig::default())?;
    describe("full", ModelConfig::full_scale())?;

    // template and search patches are square crops resized to fixed sizes
    let frame = Tensor::from_fn([3, 120, 160], |i| (i % 160) as f64 / 160.0);
    let patch = crop_resize(&frame, (80.0, 60.0), 50.0, 64, [0.5; 3])?;
    println!("crop of a 50px square around (80, 60): {:?}", patch.shape());
    Ok(())
}
