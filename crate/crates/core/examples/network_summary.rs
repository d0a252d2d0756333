//! Filter schedules and parameter counts with and without channel extension,
//! and one forward pass of the desk-scale network.
use canet::net::{filter_schedule, param_count, Network, NetworkConfig};
use canet::{Dims5, Tensor5};

fn main() -> canet::Result<()> {
    for extend in [false, true] {
        let cfg = NetworkConfig { channel_extend: extend, ..NetworkConfig::default() };
        let (enc, dec): (Vec<usize>, Vec<usize>) = (0..cfg.stages).map(|s| filter_schedule(&cfg, s)).collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
        let net = Network::<f32>::zeros(cfg)?;
        println!("channel extend {extend:<5} encoder {enc:?} decoder {dec:?} params {}", param_count(&net));
    }

    let net = Network::<f32>::new(NetworkConfig::tiny())?;
    let x = Tensor5::from_fn(Dims5::new(1, 1, 32, 32, 32), |[_, _, z, y, x]| ((z + y + x) % 5) as f32 - 2.0);
    let t = std::time::Instant::now();
    let logits = net.forward(&x)?;
    println!("tiny net: {} params, {} -> {} in {:?}", param_count(&net), x.dims(), logits.dims(), t.elapsed());
    Ok(())
}
