//! Acceptance checks 1-11. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Expected values are computed here from first
//! principles (dense attention, brute-force distances, flood counts, closed
//! forms), not from the library's own helpers.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use canet::harness::bench::{bench_attention, subquadratic, BenchConfig};
use canet::harness::gradcheck::{default_suite, gradcheck_config, GradcheckConfig};
use canet::harness::infer::InferConfig;
use canet::harness::phantom::gen_phantom;
use canet::harness::pipeline::{self, PhantomDatasetConfig, RunConfig};
use canet::harness::train::{train, Case, TrainConfig};
use canet::harness::vvol::{labels_from_bytes, labels_to_bytes, volume_from_bytes, volume_to_bytes};
use canet::loss::{ce_loss, dice_coefficient, dice_loss, one_hot, total_loss, LossConfig};
use canet::metrics::{avd_mm, eval_dsc, hausdorff_mm};
use canet::net::attention::{axial_attention, position_dims, AxialAttention};
use canet::net::{
    attention_flops, filter_schedule, param_count, read_checkpoint, write_checkpoint, AttentionMode, Network,
    NetworkConfig, Params, Tape,
};
use canet::postproc::{class_components, keep_largest, Connectivity};
use canet::prep::{
    clip_normalize, foreground_stats, foreground_stats_with, resample_image, resample_image_to, resample_mask_to,
    ClipPercentiles,
};
use canet::voxcore::{softmax_channels, Axis, Geometry};
use canet::{Dims5, LabelMap, Rng, Tensor5, Volume};

type Outcome = (bool, String);

fn bits(t: &Tensor5<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// 1 -------------------------------------------------------------------------

fn gradients() -> Outcome {
    let t = Instant::now();
    let cfg = GradcheckConfig::default();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    let suite = default_suite();
    let aac: Vec<bool> = suite.iter().map(|c| c.aac_enabled).collect();
    for (i, net) in suite.into_iter().enumerate() {
        let ranges = (2..=4).contains(&net.base_filters) && (2..=3).contains(&net.stages);
        match gradcheck_config(net, 8, i as u64, &cfg) {
            Ok(r) => {
                ok &= r.passed() && r.max_rel_err < 1e-4 && ranges;
                worst = worst.max(r.max_rel_err);
                notes.push(format!("{} max {:.2e}", r.label, r.max_rel_err));
            }
            Err(e) => {
                ok = false;
                notes.push(e.to_string());
            }
        }
    }
    let el = t.elapsed();
    ok &= aac.contains(&true) && aac.contains(&false) && aac.len() >= 3 && el < Duration::from_secs(120);
    (ok, format!("worst rel err {worst:.2e} < 1e-4 over [{}], {:.1}s < 120s", notes.join("; "), secs(el)))
}

// 2 -------------------------------------------------------------------------

/// Dense softmax attention over the L tokens of a volume whose other two
/// axes are singleton.
fn dense_attention(x: &Tensor5<f64>, axis: Axis, p: &AxialAttention<f64>, pos: &Tensor5<f64>) -> Vec<Vec<f64>> {
    let c = x.dims().channels;
    let l = x.dims().spatial()[axis.index()];
    let dh = c / p.heads;
    let w = p.qkv.data();
    let xp: Vec<Vec<f64>> = (0..l).map(|t| (0..c).map(|ch| x.channel(0, ch)[t] + pos.channel(0, ch)[t]).collect()).collect();
    let proj = |o: usize, t: usize| (0..c).map(|ch| w[o * c + ch] * xp[t][ch]).sum::<f64>();
    let q: Vec<Vec<f64>> = (0..l).map(|t| (0..c).map(|o| proj(o, t)).collect()).collect();
    let k: Vec<Vec<f64>> = (0..l).map(|t| (0..c).map(|o| proj(c + o, t)).collect()).collect();
    let v: Vec<Vec<f64>> = (0..l).map(|t| (0..c).map(|o| proj(2 * c + o, t)).collect()).collect();
    let mut out = vec![vec![0.0; l]; c];
    for h in 0..p.heads {
        let r = h * dh..(h + 1) * dh;
        for i in 0..l {
            let s: Vec<f64> = (0..l)
                .map(|j| r.clone().map(|d| q[i][d] * k[j][d]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in r.clone() {
                out[d][i] = (0..l).map(|j| e[j] / z * v[j][d]).sum();
            }
        }
    }
    out
}

fn axial_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(21);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for axis in Axis::ALL {
        for l in [1, 4, 9, 16] {
            for (c, heads) in [(4, 1), (6, 2)] {
                let mut sp = [1; 3];
                sp[axis.index()] = l;
                let x = Tensor5::from_fn(Dims5::new(1, c, sp[0], sp[1], sp[2]), |_| rng.normal());
                let p = AxialAttention { qkv: Tensor5::from_fn(Dims5::new(3 * c, c, 1, 1, 1), |_| rng.normal() * 0.5), heads };
                let pos = Tensor5::from_fn(position_dims(axis, c, 16), |_| rng.normal());
                let got = match axial_attention(&x, axis, &p, &pos) {
                    Ok(g) => g,
                    Err(e) => return (false, e.to_string()),
                };
                let want = dense_attention(&x, axis, &p, &pos);
                for (ch, row) in want.iter().enumerate() {
                    for (i, w) in row.iter().enumerate() {
                        worst = worst.max((got.channel(0, ch)[i] - w).abs());
                    }
                }
                cases += 1;
            }
        }
    }
    let el = t.elapsed();
    (worst < 1e-5 && el < Duration::from_secs(10), format!("{cases} cases, max |diff| {worst:.2e} < 1e-5, {:.2}s < 10s", secs(el)))
}

// 3 -------------------------------------------------------------------------

fn decoder_and_logits(net: &Network<f32>, x: &Tensor5<f32>) -> canet::Result<(Vec<u32>, Vec<u32>)> {
    let mut tape = Tape::new();
    let logits = net.forward_cached(x, &mut tape)?;
    let dec = tape.decoder_output().expect("recorded");
    Ok((bits(dec), bits(&logits)))
}

fn backbone() -> canet::Result<Outcome> {
    let base = NetworkConfig { base_filters: 4, stages: 3, pos_capacity: 16, seed: 5, ..NetworkConfig::default() };
    let mut with = Network::<f32>::new(NetworkConfig { aac_enabled: true, ..base.clone() })?;
    with.perturb(9, 0.2);
    let mut rng = Rng::new(4);
    let x = Tensor5::from_fn(Dims5::new(1, 1, 16, 16, 16), |_| rng.normal() as f32);
    let random_merge = decoder_and_logits(&with, &x)?;
    with.visit_mut("", &mut |name, t| {
        if name.contains(".aac.merge.") {
            t.fill(0.0);
        }
    });
    let mut shared = HashMap::new();
    with.visit("", &mut |name, t| {
        shared.insert(name.to_string(), t.clone());
    });
    let mut without = Network::<f32>::zeros(NetworkConfig { aac_enabled: false, ..base.clone() })?;
    let mut missing = 0;
    without.visit_mut("", &mut |name, t| match shared.get(name) {
        Some(s) => *t = s.clone(),
        None => missing += 1,
    });
    let a = decoder_and_logits(&with, &x)?;
    let b = decoder_and_logits(&without, &x)?;
    let aac_identity = missing == 0 && a == b && random_merge != a;

    // CE flag on a schedule whose cap never binds: same network, same output
    let small = NetworkConfig { base_filters: 8, stages: 3, pos_capacity: 16, ..NetworkConfig::default() };
    let ce_on = Network::<f32>::new(NetworkConfig { channel_extend: true, ..small.clone() })?;
    let ce_off = Network::<f32>::new(NetworkConfig { channel_extend: false, ..small })?;
    let ce_identity = decoder_and_logits(&ce_on, &x)? == decoder_and_logits(&ce_off, &x)?;
    Ok((
        aac_identity && ce_identity,
        format!(
            "zero-merge AAC vs aac_enabled=false bit-identical: {}; CE on/off (cap not binding) bit-identical: {}",
            aac_identity, ce_identity
        ),
    ))
}

// 4 -------------------------------------------------------------------------

fn schedule() -> canet::Result<Outcome> {
    let enc = |cfg: &NetworkConfig| -> canet::Result<Vec<usize>> { (0..cfg.stages).map(|s| filter_schedule(cfg, s).map(|f| f.0)).collect() };
    let big = NetworkConfig { base_filters: 32, stages: 6, ..NetworkConfig::default() };
    let ce = NetworkConfig { channel_extend: true, ..big.clone() };
    let bl = NetworkConfig { channel_extend: false, ..big };
    let (e_ce, e_bl) = (enc(&ce)?, enc(&bl)?);
    let seq_ok = e_ce == [32, 64, 128, 256, 512, 512] && e_bl == [32, 64, 128, 256, 320, 320];
    let (p_ce, p_bl) = (param_count(&Network::<f32>::zeros(ce)?), param_count(&Network::<f32>::zeros(bl)?));
    let small = NetworkConfig { base_filters: 8, stages: 3, ..NetworkConfig::default() };
    let s_ce = param_count(&Network::<f32>::zeros(NetworkConfig { channel_extend: true, ..small.clone() })?);
    let s_bl = param_count(&Network::<f32>::zeros(NetworkConfig { channel_extend: false, ..small })?);
    Ok((
        seq_ok && p_ce > p_bl && s_ce == s_bl,
        format!("CE {e_ce:?} / baseline {e_bl:?}; params binding {p_ce} > {p_bl}; non-binding {s_ce} == {s_bl}"),
    ))
}

// 5 -------------------------------------------------------------------------

fn loss_identities() -> canet::Result<Outcome> {
    let mut rng = Rng::new(12);
    let dims = Dims5::new(2, 5, 4, 3, 3);
    let mut exact = true;
    for _ in 0..20 {
        let z = Tensor5::from_fn(dims, |_| rng.normal() * 3.0);
        let p = softmax_channels(&z)?;
        let labels: Vec<u8> = (0..dims.batch * dims.spatial_len()).map(|_| rng.below(5) as u8).collect();
        let t = one_hot(&labels, dims)?;
        let cfg = LossConfig::default();
        let out = total_loss(&p, &t, &cfg)?;
        exact &= out.total == dice_loss(&p, &t, &cfg)? + ce_loss(&p, &t)?;
    }

    let labels: Vec<u8> = (0..dims.batch * dims.spatial_len()).map(|i| (i % 5) as u8).collect();
    let t: Tensor5<f64> = one_hot(&labels, dims)?;
    let perfect = total_loss(&softmax_channels(&t.map(|v| v * 40.0))?, &t, &LossConfig::default())?.total;

    let half = Tensor5::filled(Dims5::new(1, 2, 1, 1, 1), 0.5f64);
    let ce = ce_loss(&half, &one_hot(&[1], Dims5::new(1, 2, 1, 1, 1))?)?;
    // n = 10 voxels predicted as class 1, 10 other voxels labelled class 1
    let d20 = Dims5::new(1, 2, 20, 1, 1);
    let pred: Tensor5<f64> = one_hot(&[[1u8; 10], [0; 10]].concat(), d20)?;
    let gt = one_hot(&[[0u8; 10], [1; 10]].concat(), d20)?;
    let dice = dice_coefficient(&pred, &gt, 1.0)?[1];
    let ok = exact && perfect < 1e-4 && (ce - 2f64.ln()).abs() < 1e-6 && (dice - 1.0 / 21.0).abs() < 1e-6;
    Ok((
        ok,
        format!("total == dice + ce exactly: {exact}; perfect total {perfect:.2e} < 1e-4; CE {ce:.9} vs ln 2; disjoint dice {dice:.9} vs 1/21"),
    ))
}

// 6 -------------------------------------------------------------------------

fn random_labels(rng: &mut Rng, dims: [usize; 3], spacing: [f32; 3], classes: u8) -> LabelMap {
    let g = Geometry::new(dims, spacing, [0.0; 3]).unwrap();
    let blobs: Vec<([f64; 3], u8, f64)> = (0..1 + rng.below(4))
        .map(|_| ([0, 1, 2].map(|a| rng.uniform() * dims[a] as f64), 1 + rng.below(classes as usize) as u8, 0.5 + rng.uniform() * 3.5))
        .collect();
    let noise = rng.uniform() * 0.05;
    let data = (0..g.len())
        .map(|i| {
            let c = g.coords(i);
            let hit = blobs.iter().find(|(p, _, r)| (0..3).map(|a| (c[a] as f64 + 0.5 - p[a]).powi(2)).sum::<f64>() < r * r);
            match hit {
                Some(b) => b.1,
                None if rng.bernoulli(noise) => 1 + rng.below(classes as usize) as u8,
                None => 0,
            }
        })
        .collect();
    LabelMap::new(g, data).unwrap()
}

/// Voxels of the class with a 6-neighbour outside the class or outside the
/// grid.
fn brute_surface(m: &LabelMap, c: u8) -> Vec<[usize; 3]> {
    let [d, h, w] = m.dims();
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if m.get(z, y, x) != c {
                    continue;
                }
                let p = [z as isize, y as isize, x as isize];
                let edge = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)].iter().any(|&(a, b, e)| {
                    let q = [p[0] + a, p[1] + b, p[2] + e];
                    q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= d as isize || q[1] >= h as isize || q[2] >= w as isize
                        || m.get(q[0] as usize, q[1] as usize, q[2] as usize) != c
                });
                if edge {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

fn brute_distances(a: &LabelMap, b: &LabelMap, c: u8) -> Option<(f64, f64)> {
    let sp = a.spacing().map(|s| s as f64);
    let (sa, sb) = (brute_surface(a, c), brute_surface(b, c));
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let dist = |p: &[usize; 3], q: &[usize; 3]| (0..3).map(|i| ((p[i] as f64 - q[i] as f64) * sp[i]).powi(2)).sum::<f64>().sqrt();
    let near = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
        from.iter().map(|p| to.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).collect()
    };
    let all: Vec<f64> = near(&sa, &sb).into_iter().chain(near(&sb, &sa)).collect();
    Some((all.iter().cloned().fold(0.0, f64::max), all.iter().sum::<f64>() / all.len() as f64))
}

fn metric_oracles() -> canet::Result<Outcome> {
    let t = Instant::now();
    let mut rng = Rng::new(606);
    let (mut dsc_exact, mut worst, mut pairs) = (true, 0f64, 0);
    let mut none_ok = true;
    for _ in 0..200 {
        let dims = [0; 3].map(|_| 1 + rng.below(12));
        let spacing = [0; 3].map(|_| (0.5 + rng.uniform() * 2.5) as f32);
        let a = random_labels(&mut rng, dims, spacing, 4);
        let b = random_labels(&mut rng, dims, spacing, 4);
        for c in 1..=4u8 {
            let (pa, pb) = (a.count(c), b.count(c));
            let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == c && y == c).count();
            let want = if pa + pb == 0 { 1.0 } else { 2.0 * inter as f64 / (pa + pb) as f64 };
            dsc_exact &= eval_dsc(&a, &b, c)? == want;
            match (brute_distances(&a, &b, c), hausdorff_mm(&a, &b, c)?, avd_mm(&a, &b, c)?) {
                (Some((hd, avd)), Some(h), Some(v)) => {
                    worst = worst.max((hd - h).abs()).max((avd - v).abs());
                    pairs += 1;
                }
                (None, None, None) => {}
                _ => none_ok = false,
            }
        }
    }
    let single = |dims: [usize; 3], sp: [f32; 3], at: [usize; 3]| {
        let mut m = LabelMap::zeros(Geometry::new(dims, sp, [0.0; 3]).unwrap());
        m.set(at[0], at[1], at[2], 1);
        m
    };
    let hand_345 = hausdorff_mm(&single([1, 4, 5], [1.0; 3], [0, 0, 0]), &single([1, 4, 5], [1.0; 3], [0, 3, 4]), 1)?;
    let hand_sp = hausdorff_mm(&single([1, 1, 6], [1.0, 1.0, 2.0], [0, 0, 0]), &single([1, 1, 6], [1.0, 1.0, 2.0], [0, 0, 5]), 1)?;
    let el = t.elapsed();
    let ok = dsc_exact && none_ok && worst < 1e-6 && hand_345 == Some(5.0) && hand_sp == Some(10.0) && el < Duration::from_secs(60);
    Ok((
        ok,
        format!(
            "200 mask pairs: DSC exact {dsc_exact}, {pairs} distance pairs max |diff| {worst:.2e} mm; 3-4-5 -> {hand_345:?}, spacing -> {hand_sp:?}; {:.1}s",
            secs(el)
        ),
    ))
}

// 7 -------------------------------------------------------------------------

fn preprocessing() -> canet::Result<Outcome> {
    let mut constant_ok = true;
    for (dims, sp, target) in [([7, 9, 5], [1.0, 1.0, 1.0], [0.7, 1.3, 2.0]), ([12, 6, 8], [2.5, 0.8, 0.8], [1.0, 1.0, 1.0])] {
        let v = Volume::filled(Geometry::new(dims, sp, [0.0; 3])?, 37.25);
        constant_ok &= resample_image(&v, target)?.data().iter().all(|&x| x == 37.25);
        constant_ok &= resample_image_to(&v, [5, 11, 4])?.data().iter().all(|&x| x == 37.25);
    }

    // ramp in physical coordinates of voxel centres
    let (sp, target) = ([2.0f32, 1.0, 0.75], [1.3f32, 0.6, 1.1]);
    let ramp = |p: [f64; 3]| 0.3 * p[0] - 0.2 * p[1] + 0.45 * p[2] + 1.0;
    let dims = [14, 16, 18];
    let v = Volume::from_fn(Geometry::new(dims, sp, [0.0; 3])?, |c| ramp([0, 1, 2].map(|a| (c[a] as f64 + 0.5) * sp[a] as f64)) as f32);
    let r = resample_image(&v, target)?;
    let mut ramp_err: f64 = 0.0;
    let mut interior = 0;
    for i in 0..r.data().len() {
        let c = r.geometry().coords(i);
        let phys = [0, 1, 2].map(|a| (c[a] as f64 + 0.5) * target[a] as f64);
        let src = [0, 1, 2].map(|a| phys[a] / sp[a] as f64 - 0.5);
        if (0..3).all(|a| src[a] >= 1.0 && src[a] <= dims[a] as f64 - 3.0) {
            ramp_err = ramp_err.max((r.data()[i] as f64 - ramp(phys)).abs());
            interior += 1;
        }
    }

    let g = Geometry::new([3, 1, 1], [1.0; 3], [0.0; 3])?;
    let img = Volume::new(g, vec![2.0, 4.0, 6.0])?;
    let all = LabelMap::new(g, vec![1; 3])?;
    let stats = foreground_stats_with(&[img.clone()], &[all], ClipPercentiles { lo: 0.0, hi: 100.0 })?;
    let z = clip_normalize(&img, &stats);
    let want = [-1.224744871391589, 0.0, 1.224744871391589];
    let norm_err = z.data().iter().zip(want).map(|(&a, b)| (a as f64 - b).abs()).fold(0.0, f64::max);

    let mut rng = Rng::new(77);
    let mut invented = 0;
    for _ in 0..100 {
        let dims = [0; 3].map(|_| 1 + rng.below(14));
        let m = random_labels(&mut rng, dims, [1.0; 3], 4);
        let to = [0; 3].map(|_| 1 + rng.below(20));
        let before = m.label_set();
        invented += resample_mask_to(&m, to)?.label_set().iter().filter(|l| !before.contains(l)).count();
    }
    Ok((
        constant_ok && interior > 0 && ramp_err < 1e-4 && norm_err < 1e-4 && invented == 0,
        format!(
            "constant exact {constant_ok}; ramp max err {ramp_err:.2e} over {interior} interior voxels; normalization err {norm_err:.2e}; invented labels {invented} in 100 cases"
        ),
    ))
}

// 8 -------------------------------------------------------------------------

fn overfit_run(case: &Case, channel_extend: bool) -> canet::Result<(f64, usize, Duration)> {
    let netcfg = NetworkConfig { channel_extend, aac_enabled: true, ..NetworkConfig::tiny() };
    let cfg = TrainConfig {
        batch_size: 1,
        patch: [48; 3],
        epochs: 50,
        steps_per_epoch: 10,
        learning_rate: 0.1,
        momentum: 0.9,
        augment_enabled: false,
        target_soft_dice: Some(0.95),
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train(std::slice::from_ref(case), &[], &cfg, &netcfg, |_| {})?;
    let last = out.history.last().and_then(|e| e.val_soft_dice).unwrap_or(0.0);
    Ok((last, out.steps, t.elapsed()))
}

fn overfit() -> canet::Result<Outcome> {
    let (v, m) = gen_phantom(&mut Rng::new(7), [48; 3], [1.0; 3])?;
    let stats = foreground_stats(std::slice::from_ref(&v), std::slice::from_ref(&m))?;
    let case = Case { id: "phantom".into(), image: clip_normalize(&v, &stats), labels: m };
    let (dice, steps, el) = overfit_run(&case, false)?;
    let (dice_ce, steps_ce, el_ce) = overfit_run(&case, true)?;
    let limit = Duration::from_secs(15 * 60);
    let ok = dice >= 0.95 && steps <= 500 && el < limit && dice_ce >= dice - 0.02 && el_ce < limit;
    Ok((
        ok,
        format!(
            "CE off: soft dice {dice:.4} after {steps} steps in {:.0}s; CE on: {dice_ce:.4} after {steps_ce} steps in {:.0}s",
            secs(el),
            secs(el_ce)
        ),
    ))
}

// 9 -------------------------------------------------------------------------

fn complexity() -> canet::Result<Outcome> {
    let c = 16u64;
    let mut formulas = true;
    for e in [1usize, 2, 4, 8, 12] {
        let n = (e * e * e) as u64;
        let a = attention_flops([e; 3], c as usize, AttentionMode::Axial);
        let f = attention_flops([e; 3], c as usize, AttentionMode::Full);
        let per_axis = if e > 1 { 2 * c * n * e as u64 } else { 0 };
        let full = if n > 1 { 2 * c * n * n } else { 0 };
        formulas &= a.projection == 3 * n * c * c && f.projection == a.projection;
        formulas &= a.axis_score == [per_axis; 3] && a.score == 3 * per_axis && f.score == full;
    }
    let (a4, a8) = (attention_flops([4; 3], 16, AttentionMode::Axial), attention_flops([8; 3], 16, AttentionMode::Axial));
    let (f4, f8) = (attention_flops([4; 3], 16, AttentionMode::Full), attention_flops([8; 3], 16, AttentionMode::Full));
    let (rf, ra) = (f8.score / f4.score, a8.score / a4.score);
    formulas &= f8.score == 64 * f4.score && a8.score == 16 * a4.score;

    let rows = bench_attention(&BenchConfig::default())?;
    let (pairs, sub) = subquadratic(&rows);
    let edges: Vec<usize> = rows.iter().map(|r| r.edge).collect();
    let ratios: Vec<String> = pairs.iter().map(|(t, q)| format!("{t:.2} < {q:.2}")).collect();
    Ok((
        formulas && sub && edges == [8, 16, 24],
        format!("formulas exact {formulas}; score ratio full {rf}x axial {ra}x; axial time ratios on {edges:?}: {}", ratios.join(", ")),
    ))
}

// 10 ------------------------------------------------------------------------

fn end_to_end(root: &Path) -> canet::Result<Vec<Vec<u8>>> {
    let raw = root.join("raw");
    let prep = root.join("prep");
    let model = root.join("model");
    let pred = root.join("pred");
    let eval = root.join("eval");
    pipeline::write_phantom_dataset(&raw, &PhantomDatasetConfig { cases: 2, dims: [32; 3], seed: 11, ..PhantomDatasetConfig::default() })?;
    pipeline::preprocess_dir(&raw, &prep)?;
    let cfg = RunConfig {
        network: NetworkConfig { pos_capacity: 64, seed: 3, ..NetworkConfig::tiny() },
        train: TrainConfig {
            batch_size: 1,
            epochs: 5,
            steps_per_epoch: 10,
            folds: 1,
            patch: [32; 3],
            seed: 3,
            ..TrainConfig::default()
        },
        infer: InferConfig { patch: [16; 3], ..InferConfig::default() },
    };
    let history = pipeline::train_dir(&prep, &model, &cfg, |_| {})?;
    assert_eq!(history.last().map(|e| e.steps), Some(50));
    pipeline::infer_dir(&raw, &model, &prep, &pred, None)?;
    pipeline::eval_dir(&pred, &raw, &eval)?;
    let mut files = vec![
        std::fs::read(prep.join(pipeline::STATS_FILE))?,
        std::fs::read(model.join(pipeline::MODEL_FILE))?,
        std::fs::read(model.join(pipeline::TRAIN_LOG))?,
        std::fs::read(eval.join(pipeline::EVAL_FILE))?,
    ];
    for id in pipeline::list_ids(&pred, pipeline::PRED_SUFFIX)? {
        files.push(std::fs::read(pred.join(format!("{id}{}", pipeline::PRED_SUFFIX)))?);
    }
    Ok(files)
}

fn determinism() -> canet::Result<Outcome> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let first = end_to_end(a.path())?;
    let second = end_to_end(b.path())?;
    let runs_equal = first == second && first.len() == 6;

    let mut rng = Rng::new(10);
    let g = Geometry::new([5, 7, 3], [0.8, 1.2, 2.5], [-3.0, 4.0, 1.5])?;
    let v = Volume::from_fn(g, |_| rng.normal() as f32 * 100.0);
    let m = LabelMap::new(g, (0..g.len()).map(|_| rng.below(5) as u8).collect())?;
    let vvol = volume_from_bytes(&volume_to_bytes(&v))? == v
        && bits_eq(&volume_from_bytes(&volume_to_bytes(&v))?, &v)
        && labels_from_bytes(&labels_to_bytes(&m))? == m;
    let mut net = Network::<f32>::new(NetworkConfig { base_filters: 4, stages: 3, pos_capacity: 16, ..NetworkConfig::default() })?;
    net.perturb(2, 0.1);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &net)?;
    let back = read_checkpoint(&bytes)?;
    let mut again = Vec::new();
    write_checkpoint(&mut again, &back)?;
    let ckpt = back == net && bytes == again;
    Ok((
        runs_equal && vvol && ckpt,
        format!("two end-to-end runs byte-identical ({} artifacts): {runs_equal}; VVOL round trip: {vvol}; checkpoint round trip: {ckpt}", first.len()),
    ))
}

fn bits_eq(a: &Volume, b: &Volume) -> bool {
    a.geometry() == b.geometry() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

// 11 ------------------------------------------------------------------------

/// Component sizes by flood fill over the given neighbour offsets.
fn flood_sizes(mask: &[bool], dims: [usize; 3], diagonal: bool) -> Vec<usize> {
    let [d, h, w] = dims;
    let mut seen = vec![false; mask.len()];
    let mut sizes = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut n = 0;
        while let Some(i) = stack.pop() {
            n += 1;
            let (z, y, x) = ((i / (h * w)) as isize, ((i / w) % h) as isize, (i % w) as isize);
            for dz in -1..=1isize {
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let off = dz.abs() + dy.abs() + dx.abs();
                        if off == 0 || (!diagonal && off > 1) {
                            continue;
                        }
                        let (a, b, c) = (z + dz, y + dy, x + dx);
                        if a < 0 || b < 0 || c < 0 || a >= d as isize || b >= h as isize || c >= w as isize {
                            continue;
                        }
                        let j = (a as usize * h + b as usize) * w + c as usize;
                        if mask[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        sizes.push(n);
    }
    sizes
}

fn postprocessing() -> canet::Result<Outcome> {
    let mut rng = Rng::new(1111);
    let (mut idempotent, mut monotone, mut largest, mut counts) = (true, true, true, true);
    for i in 0..200 {
        let dims = [0; 3].map(|_| 2 + rng.below(11));
        let m = random_labels(&mut rng, dims, [1.0; 3], 2);
        let conn = if i % 2 == 0 { Connectivity::Six } else { Connectivity::TwentySix };
        let diagonal = conn == Connectivity::TwentySix;
        let once = keep_largest(&m, &[1, 2], conn);
        idempotent &= keep_largest(&once, &[1, 2], conn) == once;
        for c in [1u8, 2] {
            let before = m.mask(c);
            let after = once.mask(c);
            monotone &= after.iter().zip(&before).all(|(&a, &b)| !a || b) && once.count(c) <= m.count(c);
            let sizes = flood_sizes(&before, dims, diagonal);
            let want = sizes.iter().copied().max().unwrap_or(0);
            largest &= once.count(c) == want;
            counts &= class_components(&m, c, conn).components.len() == sizes.len();
        }
        monotone &= m.data().iter().zip(once.data()).all(|(&a, &b)| b == a || b == 0);
    }

    let g = Geometry::isotropic([3, 3, 3], 1.0);
    let mut corner = LabelMap::zeros(g);
    corner.set(0, 0, 0, 1);
    corner.set(1, 1, 1, 1);
    let mut edge = LabelMap::zeros(g);
    edge.set(0, 0, 0, 1);
    edge.set(0, 1, 1, 1);
    let n = |m: &LabelMap, c: Connectivity| class_components(m, 1, c).components.len();
    let touching = [
        n(&corner, Connectivity::Six),
        n(&corner, Connectivity::TwentySix),
        n(&edge, Connectivity::Six),
        n(&edge, Connectivity::TwentySix),
    ];
    let touch_ok = touching == [2, 1, 2, 1];
    Ok((
        idempotent && monotone && largest && counts && touch_ok,
        format!(
            "200 masks: idempotent {idempotent}, monotone {monotone}, keeps largest {largest}, component counts match flood fill {counts}; corner 6/26 = {}/{}, edge 6/26 = {}/{}",
            touching[0], touching[1], touching[2], touching[3]
        ),
    ))
}

// ---------------------------------------------------------------------------

fn report(n: usize, name: &str, f: impl FnOnce() -> canet::Result<Outcome>) -> bool {
    let t = Instant::now();
    let (ok, detail) = match f() {
        Ok(o) => o,
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {n:>2} {name}: {} ({detail}) [{:.1}s]", if ok { "PASS" } else { "FAIL" }, secs(t.elapsed()));
    ok
}

fn main() {
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| filter.is_empty() || filter.contains(&n);
    let mut all = true;
    let checks: Vec<(usize, &str, Box<dyn FnOnce() -> canet::Result<Outcome>>)> = vec![
        (1, "gradient correctness", Box::new(|| Ok(gradients()))),
        (2, "axial attention oracle", Box::new(|| Ok(axial_oracle()))),
        (3, "backbone equivalence", Box::new(backbone)),
        (4, "channel-extending schedule", Box::new(schedule)),
        (5, "loss identities", Box::new(loss_identities)),
        (6, "metric oracles", Box::new(metric_oracles)),
        (7, "preprocessing contracts", Box::new(preprocessing)),
        (8, "overfit smoke test", Box::new(overfit)),
        (9, "complexity check", Box::new(complexity)),
        (10, "determinism and formats", Box::new(determinism)),
        (11, "postprocessing", Box::new(postprocessing)),
    ];
    for (n, name, f) in checks {
        if want(n) {
            all &= report(n, name, f);
        }
    }
    if !all {
        std::process::exit(1);
    }
}
