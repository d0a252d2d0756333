//! Sliding-window inference with Gaussian blending versus one whole-volume
//! pass, on an untrained network.
use canet::harness::infer::{gaussian_weights, predict_probs, window_starts, InferConfig, InferMode};
use canet::harness::phantom::gen_phantom;
use canet::net::{Network, NetworkConfig};
use canet::prep::{clip_normalize, foreground_stats};
use canet::Rng;

fn main() -> canet::Result<()> {
    let (v, m) = gen_phantom(&mut Rng::new(1), [40, 48, 36], [1.0; 3])?;
    let s = foreground_stats(std::slice::from_ref(&v), std::slice::from_ref(&m))?;
    let image = clip_normalize(&v, &s);
    let net = Network::<f32>::new(NetworkConfig::tiny())?;

    let cfg = InferConfig { patch: [24; 3], ..InferConfig::default() };
    for (axis, n) in image.dims().iter().enumerate() {
        println!("axis {axis}: {n} voxels, window starts {:?}", window_starts(*n, 24, cfg.overlap));
    }
    let w = gaussian_weights(cfg.patch, cfg.sigma_scale);
    println!("blend weight range [{:.4}, {:.4}]", w.iter().cloned().fold(f32::MAX, f32::min), w.iter().cloned().fold(0.0, f32::max));

    let tiled = predict_probs(&net, &image, &cfg)?;
    let whole = predict_probs(&net, &image, &InferConfig { mode: InferMode::WholeVolume, ..cfg })?;
    println!("tiled {} vs whole {}: max prob difference {:.4}", tiled.dims(), whole.dims(), tiled.max_abs_diff(&whole));
    Ok(())
}
