//! Central finite-difference check of every network parameter gradient in
//! f64.
//!
//! The objective is `f(theta) = <logits(theta), G>` for a fixed random
//! upstream `G`, so `backward(G)` is exactly `df/dtheta`. Leaky activations
//! are piecewise linear: when a probe at `theta +- h` flips the sign of any
//! activation input, the difference quotient straddles a kink and says
//! nothing about the derivative. Such probes are retried with a smaller
//! step (divided by 4) until every probe keeps the activation pattern of
//! the base point.
//!
//! The derivative estimate is the fourth-order central stencil
//! `(8 (f(h/2) - f(-h/2)) - (f(h) - f(-h))) / (6 h)`, i.e. Richardson
//! extrapolation of the plain quotients at `h` and `h/2`. The plain
//! second-order quotient at `h` is reported alongside.

use std::time::{Duration, Instant};

use crate::net::{Network, NetworkConfig, Params, Tape};
use crate::{Dims5, Result, Rng, Tensor5};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Smallest step tried when avoiding activation kinks.
    pub min_step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Standard deviation of the noise added to every parameter so that
    /// zero-initialized tensors are exercised too.
    pub perturb: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { step: 1e-3, tolerance: 1e-4, min_step: 1e-7, floor: 1e-10, perturb: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Second-order quotient `(f(h) - f(-h)) / (2 h)`.
    pub numeric_second_order: f64,
    pub rel_err: f64,
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub label: String,
    pub params: usize,
    pub max_rel_err: f64,
    /// Worst relative error of the plain second-order quotient.
    pub max_rel_err_second_order: f64,
    pub worst: Option<GradcheckEntry>,
    pub failures: Vec<GradcheckEntry>,
    /// Probes that needed a smaller step to stay off a kink.
    pub reduced_steps: usize,
    /// Probes that still crossed a kink at the minimum step.
    pub unresolved_kinks: usize,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn add_at(net: &mut Network<f64>, name: &str, index: usize, delta: f64) {
    net.visit_mut("", &mut |n, t| {
        if n == name {
            t.data_mut()[index] += delta;
        }
    });
}

fn probe(net: &Network<f64>, x: &Tensor5<f64>, g: &Tensor5<f64>, tape: &mut Tape<f64>) -> Result<(f64, Vec<bool>)> {
    let y = net.forward_cached(x, tape)?;
    Ok((y.dot(g), tape.activation_signs()))
}

/// Checks every parameter of `net` at input `x` against upstream `g`.
pub fn gradcheck_network(
    label: &str,
    net: &Network<f64>,
    x: &Tensor5<f64>,
    g: &Tensor5<f64>,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut tape = Tape::new();
    net.forward_cached(x, &mut tape)?;
    let base_signs = tape.activation_signs();
    let grads = net.backward(&tape, g)?;
    let mut work = net.clone();
    let mut report = GradcheckReport {
        label: label.to_string(),
        params: 0,
        max_rel_err: 0.0,
        max_rel_err_second_order: 0.0,
        worst: None,
        failures: Vec::new(),
        reduced_steps: 0,
        unresolved_kinks: 0,
        elapsed: Duration::ZERO,
    };
    for (name, ga) in &grads.params {
        for (i, &analytic) in ga.data().iter().enumerate() {
            report.params += 1;
            let mut h = cfg.step;
            let (numeric, second) = loop {
                let mut f = [0.0; 4];
                let mut smooth = true;
                for (k, delta) in [h, -h, 0.5 * h, -0.5 * h].into_iter().enumerate() {
                    add_at(&mut work, name, i, delta);
                    let (v, signs) = probe(&work, x, g, &mut tape)?;
                    add_at(&mut work, name, i, -delta);
                    f[k] = v;
                    smooth &= signs == base_signs;
                }
                if smooth || h / 4.0 < cfg.min_step {
                    if !smooth {
                        report.unresolved_kinks += 1;
                    }
                    let second = (f[0] - f[1]) / (2.0 * h);
                    break ((8.0 * (f[2] - f[3]) - (f[0] - f[1])) / (6.0 * h), second);
                }
                if h == cfg.step {
                    report.reduced_steps += 1;
                }
                h /= 4.0;
            };
            report.max_rel_err_second_order =
                report.max_rel_err_second_order.max(relative_error(analytic, second, cfg.floor));
            let rel_err = relative_error(analytic, numeric, cfg.floor);
            let entry = || GradcheckEntry { name: name.clone(), index: i, analytic, numeric, numeric_second_order: second, rel_err, step: h };
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel_err.max(report.max_rel_err);
                report.worst = Some(entry());
            }
            if !(rel_err < cfg.tolerance) {
                report.failures.push(entry());
            }
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

/// Builds a seeded, perturbed f64 network and random input/upstream, then
/// checks it.
pub fn gradcheck_config(netcfg: NetworkConfig, edge: usize, seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let label = format!(
        "base {} stages {} aac {} edge {}",
        netcfg.base_filters,
        netcfg.stages,
        if netcfg.aac_enabled { "on" } else { "off" },
        edge
    );
    let mut net = Network::<f64>::new(NetworkConfig { seed, ..netcfg })?;
    net.perturb(seed.wrapping_add(1), cfg.perturb);
    let mut rng = Rng::for_name(seed, "gradcheck");
    let dims = Dims5::new(1, net.config().in_channels, edge, edge, edge);
    let x = Tensor5::from_fn(dims, |_| rng.normal());
    let g = Tensor5::from_fn(dims.with_channels(net.config().num_classes), |_| rng.normal());
    gradcheck_network(&label, &net, &x, &g, cfg)
}

/// The small configurations used for the acceptance check.
pub fn default_suite() -> Vec<NetworkConfig> {
    let small = |base, stages, aac| NetworkConfig {
        base_filters: base,
        stages,
        aac_enabled: aac,
        pos_capacity: 8,
        ..NetworkConfig::default()
    };
    vec![small(2, 2, true), small(3, 3, false), small(4, 2, true)]
}
