//! Generates a few synthetic cases, writes them as VVOL files and reads one
//! back.
use canet::harness::pipeline::{write_phantom_dataset, PhantomDatasetConfig};
use canet::harness::vvol::{read_labels, read_volume};
use canet::class;

fn main() -> canet::Result<()> {
    let dir = std::env::temp_dir().join("canet-phantoms");
    let cfg = PhantomDatasetConfig { cases: 3, dims: [48; 3], ..PhantomDatasetConfig::default() };
    let ids = write_phantom_dataset(&dir, &cfg)?;
    println!("wrote {} cases to {}", ids.len(), dir.display());

    let v = read_volume(dir.join(format!("{}_image.vvol", ids[0])))?;
    let m = read_labels(dir.join(format!("{}_label.vvol", ids[0])))?;
    println!("{}: dims {:?} spacing {:?}", ids[0], v.dims(), v.spacing());
    for id in 0..class::COUNT as u8 {
        let n = m.count(id);
        let mean = v.data().iter().zip(m.data()).filter(|(_, &l)| l == id).map(|(&x, _)| x as f64).sum::<f64>() / n.max(1) as f64;
        println!("  {:<10} {:>7} voxels, mean {:>7.1} HU", class::name(id), n, mean);
    }
    Ok(())
}
