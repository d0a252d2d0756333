//! Surface extraction and exact anisotropic Euclidean distance transforms.

/// Foreground voxels with at least one 6-neighbour outside the mask. The
/// region beyond the volume border counts as outside.
pub fn surface_voxels(mask: &[bool], dims: [usize; 3]) -> Vec<[usize; 3]> {
    surface_mask(mask, dims)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| coords(i, dims))
        .collect()
}

#[inline]
fn coords(i: usize, [_, h, w]: [usize; 3]) -> [usize; 3] {
    [i / (h * w), (i / w) % h, i % w]
}

pub(crate) fn surface_mask(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [d, h, w] = dims;
    assert_eq!(mask.len(), d * h * w, "mask length does not match dims");
    let at = |z: usize, y: usize, x: usize| mask[(z * h + y) * w + x];
    let mut out = vec![false; mask.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if !mask[i] {
                    continue;
                }
                out[i] = z == 0
                    || z + 1 == d
                    || y == 0
                    || y + 1 == h
                    || x == 0
                    || x + 1 == w
                    || !at(z - 1, y, x)
                    || !at(z + 1, y, x)
                    || !at(z, y - 1, x)
                    || !at(z, y + 1, x)
                    || !at(z, y, x - 1)
                    || !at(z, y, x + 1);
            }
        }
    }
    out
}

/// Lower envelope of parabolas along one line (Felzenszwalb-Huttenlocher).
/// `f` holds squared distances (infinite where no site); positions are
/// `i * step`.
fn edt_line(f: &[f64], step: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let pos = |i: usize| i as f64 * step;
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((fq + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared physical distance from every voxel to the nearest `site` voxel.
/// Infinite everywhere when there are no sites.
pub fn squared_edt(sites: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut g: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        line.resize(n, 0.0);
        out.resize(n, 0.0);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for (i, l) in line.iter_mut().enumerate() {
                    *l = g[base + i * stride];
                }
                edt_line(&line, spacing[axis], &mut out, &mut v, &mut z);
                for (i, &val) in out.iter().enumerate() {
                    g[base + i * stride] = val;
                }
            }
        }
    }
    g
}

/// Distance (mm) from each surface voxel of `a` to the nearest surface
/// voxel of `b`, in scan order of `a`'s surface.
pub fn directed_surface_distances(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let sa = surface_mask(a, dims);
    let sb = surface_mask(b, dims);
    let dt = squared_edt(&sb, dims, spacing);
    sa.iter().zip(&dt).filter(|(&s, _)| s).map(|(_, &d)| d.sqrt()).collect()
}
