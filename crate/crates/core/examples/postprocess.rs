//! Largest-component cleanup and the effect of connectivity.
use canet::postproc::{class_components, keep_largest, Connectivity};
use canet::voxcore::Geometry;
use canet::LabelMap;

fn main() -> canet::Result<()> {
    let mut m = LabelMap::zeros(Geometry::isotropic([12, 12, 12], 1.0));
    for z in 2..8 {
        for y in 2..8 {
            for x in 2..8 {
                m.set(z, y, x, 1);
            }
        }
    }
    // a lone voxel touching the block only at a corner, and a distant blob
    m.set(8, 8, 8, 1);
    for x in 9..11 {
        m.set(10, 10, x, 1);
    }
    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let set = class_components(&m, 1, conn);
        let sizes: Vec<usize> = set.components.iter().map(|c| c.voxels.len()).collect();
        let kept = keep_largest(&m, &[1], conn);
        println!("{conn:?}: component sizes {sizes:?}, keep_largest leaves {} voxels", kept.count(1));
    }
    Ok(())
}
