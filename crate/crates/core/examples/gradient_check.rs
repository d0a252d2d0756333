//! Finite-difference check of every parameter gradient of a small network.
use canet::harness::gradcheck::{gradcheck_config, GradcheckConfig};
use canet::net::NetworkConfig;

fn main() -> canet::Result<()> {
    let net = NetworkConfig { base_filters: 2, stages: 2, pos_capacity: 8, ..NetworkConfig::default() };
    let r = gradcheck_config(net, 8, 0, &GradcheckConfig::default())?;
    println!("{}: {} parameters checked in {:.1}s", r.label, r.params, r.elapsed.as_secs_f64());
    println!("max relative error {:.2e} (plain central difference {:.2e})", r.max_rel_err, r.max_rel_err_second_order);
    if let Some(w) = &r.worst {
        println!("worst: {}[{}] analytic {:.6e} numeric {:.6e}", w.name, w.index, w.analytic, w.numeric);
    }
    println!("{}", if r.passed() { "pass" } else { "FAIL" });
    Ok(())
}
