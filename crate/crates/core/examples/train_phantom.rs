//! Overfits the desk-scale network to one phantom and saves a checkpoint.
//! Pass a step budget as the first argument (default 60).
use canet::harness::phantom::gen_phantom;
use canet::harness::train::{train, Case, EpochStats, TrainConfig};
use canet::net::{load_checkpoint, save_checkpoint, Network, NetworkConfig};
use canet::prep::{clip_normalize, foreground_stats};
use canet::Rng;

fn main() -> canet::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let (v, m) = gen_phantom(&mut Rng::new(7), [32; 3], [1.0; 3])?;
    let stats = foreground_stats(std::slice::from_ref(&v), std::slice::from_ref(&m))?;
    let case = Case { id: "phantom".into(), image: clip_normalize(&v, &stats), labels: m };
    let cfg = TrainConfig {
        batch_size: 1,
        patch: [32; 3],
        steps_per_epoch: 10,
        epochs: steps.div_ceil(10),
        learning_rate: 0.1,
        momentum: 0.9,
        augment_enabled: false,
        ..TrainConfig::default()
    };
    println!("{}", EpochStats::TSV_HEADER);
    let out = train(std::slice::from_ref(&case), &[], &cfg, &NetworkConfig::tiny(), |e| println!("{}", e.tsv_row()))?;

    let path = std::env::temp_dir().join("canet-phantom.cnck");
    save_checkpoint(&path, &out.network)?;
    let back: Network<f32> = load_checkpoint(&path)?;
    println!("{} steps, checkpoint {} round-trips: {}", out.steps, path.display(), back == out.network);
    Ok(())
}
