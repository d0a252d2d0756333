//! Dataset statistics, resampling to the median spacing and clipped z-score
//! normalization.
use canet::harness::phantom::gen_phantom;
use canet::prep::{foreground_stats, preprocess_case};
use canet::Rng;

fn main() -> canet::Result<()> {
    let mut rng = Rng::new(3);
    let mut vols = Vec::new();
    let mut masks = Vec::new();
    for spacing in [[2.0, 0.9, 0.9], [1.5, 1.0, 1.0], [2.5, 0.8, 0.8]] {
        let (v, m) = gen_phantom(&mut rng, [40, 48, 48], spacing)?;
        vols.push(v);
        masks.push(m);
    }
    let stats = foreground_stats(&vols, &masks)?;
    print!("{}", stats.to_toml());

    for (v, m) in vols.iter().zip(&masks) {
        let (p, pm) = preprocess_case(v, Some(m), &stats)?;
        let pm = pm.expect("mask given");
        let (lo, hi) = p.min_max();
        println!(
            "{:?} @ {:?} -> {:?} @ {:?}, range [{lo:.2}, {hi:.2}], kidney {} -> {} voxels",
            v.dims(),
            v.spacing(),
            p.dims(),
            p.spacing(),
            m.count(1),
            pm.count(1)
        );
    }
    Ok(())
}
