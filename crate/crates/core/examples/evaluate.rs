//! Scores a degraded copy of a phantom's ground truth and prints the
//! per-class table and aggregates.
use canet::harness::phantom::gen_phantom;
use canet::metrics::{aggregate, evaluate_case, write_tsv};
use canet::{class, Rng};

fn main() -> canet::Result<()> {
    let (_, gt) = gen_phantom(&mut Rng::new(5), [40; 3], [1.5, 1.0, 1.0])?;
    let mut pred = gt.clone();
    let [d, h, w] = gt.dims();
    // erode the kidney on one side and drop the vein
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                match pred.get(z, y, x) {
                    class::KIDNEY if x < w / 3 => pred.set(z, y, x, class::BACKGROUND),
                    class::VEIN => pred.set(z, y, x, class::BACKGROUND),
                    _ => {}
                }
            }
        }
    }
    let reports = vec![evaluate_case("degraded", &pred, &gt)?, evaluate_case("perfect", &gt, &gt)?];
    print!("{}", write_tsv(&reports));
    for a in aggregate(&reports) {
        println!("{a}");
    }
    Ok(())
}
