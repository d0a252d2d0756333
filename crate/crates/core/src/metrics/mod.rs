//! Evaluation metrics per structure: dice overlap, Hausdorff distance and
//! average symmetric surface distance, in millimetres at the label map's
//! own spacing.

pub mod distance;

use std::fmt;
use std::fmt::Write as _;

pub use distance::{directed_surface_distances, squared_edt, surface_voxels};

use crate::{class, Error, LabelMap, Result};

fn check_grids(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.dims() != gt.dims() || pred.spacing() != gt.spacing() {
        return Err(Error::shape(format!(
            "prediction grid {:?} @ {:?} vs reference {:?} @ {:?}",
            pred.dims(),
            pred.spacing(),
            gt.dims(),
            gt.spacing()
        )));
    }
    Ok(())
}

/// `2|P n G| / (|P| + |G|)` for one class; 1.0 when both are empty.
pub fn eval_dsc(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> Result<f64> {
    check_grids(pred, gt)?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (a == class_id, b == class_id);
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    Ok(if p + g == 0 { 1.0 } else { 2.0 * inter as f64 / (p + g) as f64 })
}

fn spacing64(m: &LabelMap) -> [f64; 3] {
    m.spacing().map(|s| s as f64)
}

/// Both directed surface distance lists, or `None` when either mask is
/// empty.
fn both_directions(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    check_grids(pred, gt)?;
    let a = pred.mask(class_id);
    let b = gt.mask(class_id);
    if !a.contains(&true) || !b.contains(&true) {
        return Ok(None);
    }
    let sp = spacing64(gt);
    Ok(Some((
        directed_surface_distances(&a, &b, gt.dims(), sp),
        directed_surface_distances(&b, &a, gt.dims(), sp),
    )))
}

fn hd_of(ab: &[f64], ba: &[f64]) -> f64 {
    ab.iter().chain(ba).fold(0.0, |m, &d| m.max(d))
}

fn avd_of(ab: &[f64], ba: &[f64]) -> f64 {
    (ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (ab.len() + ba.len()) as f64
}

/// Symmetric Hausdorff distance between the class surfaces; `None` when
/// either mask is empty.
pub fn hausdorff_mm(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> Result<Option<f64>> {
    Ok(both_directions(pred, gt, class_id)?.map(|(ab, ba)| hd_of(&ab, &ba)))
}

/// Mean of all nearest-surface distances pooled over both directions;
/// `None` when either mask is empty.
pub fn avd_mm(pred: &LabelMap, gt: &LabelMap, class_id: u8) -> Result<Option<f64>> {
    Ok(both_directions(pred, gt, class_id)?.map(|(ab, ba)| avd_of(&ab, &ba)))
}

/// Why an entry is (partly) undefined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flag {
    Ok,
    /// Structure absent from both: dice reported as 1.0, distances undefined.
    EmptyBoth,
    EmptyPred,
    EmptyGt,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Ok => "ok",
            Flag::EmptyBoth => "empty-both",
            Flag::EmptyPred => "empty-pred",
            Flag::EmptyGt => "empty-gt",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(Flag::Ok),
            "empty-both" => Ok(Flag::EmptyBoth),
            "empty-pred" => Ok(Flag::EmptyPred),
            "empty-gt" => Ok(Flag::EmptyGt),
            _ => Err(Error::invalid(format!("unknown flag {s:?}"))),
        }
    }

    /// Whether the dice entry takes part in aggregates.
    pub fn dsc_defined(self) -> bool {
        self != Flag::EmptyBoth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class_id: u8,
    pub dsc: f64,
    pub hd_mm: Option<f64>,
    pub avd_mm: Option<f64>,
    pub flag: Flag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub case: String,
    /// Kidney, tumor, artery, vein in that order.
    pub rows: Vec<ClassMetrics>,
}

/// All metrics for every foreground structure.
pub fn evaluate_case(case: &str, pred: &LabelMap, gt: &LabelMap) -> Result<EvalReport> {
    check_grids(pred, gt)?;
    let mut rows = Vec::with_capacity(class::FOREGROUND.len());
    for c in class::FOREGROUND {
        let dsc = eval_dsc(pred, gt, c)?;
        let (p, g) = (pred.count(c), gt.count(c));
        let flag = match (p, g) {
            (0, 0) => Flag::EmptyBoth,
            (0, _) => Flag::EmptyPred,
            (_, 0) => Flag::EmptyGt,
            _ => Flag::Ok,
        };
        let dist = both_directions(pred, gt, c)?;
        rows.push(ClassMetrics {
            class_id: c,
            dsc,
            hd_mm: dist.as_ref().map(|(a, b)| hd_of(a, b)),
            avd_mm: dist.as_ref().map(|(a, b)| avd_of(a, b)),
            flag,
        });
    }
    Ok(EvalReport { case: case.to_string(), rows })
}

/// Column order of the tabular report.
pub const TSV_HEADER: &str = "case\tclass\tdsc\thd_mm\tavd_mm\tflags";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

impl EvalReport {
    /// Rows without header, one per class, tab separated. Undefined values
    /// are written as `NA`.
    pub fn tsv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                self.case,
                class::name(r.class_id),
                r.dsc,
                fmt_opt(r.hd_mm),
                fmt_opt(r.avd_mm),
                r.flag.as_str()
            );
        }
        s
    }
}

pub fn write_tsv(reports: &[EvalReport]) -> String {
    let mut s = format!("{TSV_HEADER}\n");
    for r in reports {
        s.push_str(&r.tsv_rows());
    }
    s
}

pub fn read_tsv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(TSV_HEADER) {
        return Err(Error::invalid("report does not start with the expected header"));
    }
    let mut out: Vec<EvalReport> = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::invalid(format!("report line {}: {what}", n + 2));
        if f.len() != 6 {
            return Err(bad("expected 6 columns"));
        }
        let class_id = (0..class::COUNT as u8).find(|&c| class::name(c) == f[1]).ok_or_else(|| bad("unknown class"))?;
        let num = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad number"))
            }
        };
        let row = ClassMetrics {
            class_id,
            dsc: num(f[2])?.ok_or_else(|| bad("dsc missing"))?,
            hd_mm: num(f[3])?,
            avd_mm: num(f[4])?,
            flag: Flag::parse(f[5])?,
        };
        match out.last_mut() {
            Some(r) if r.case == f[0] => r.rows.push(row),
            _ => out.push(EvalReport { case: f[0].to_string(), rows: vec![row] }),
        }
    }
    Ok(out)
}

/// Mean of each metric over the defined entries, per class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassAggregate {
    pub class_id: u8,
    pub dsc: Option<f64>,
    pub hd_mm: Option<f64>,
    pub avd_mm: Option<f64>,
    pub cases: usize,
}

impl fmt::Display for ClassAggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        write!(
            f,
            "{:<7} dsc {}  hd_mm {}  avd_mm {}  (n={})",
            class::name(self.class_id),
            p(self.dsc),
            p(self.hd_mm),
            p(self.avd_mm),
            self.cases
        )
    }
}

pub fn aggregate(reports: &[EvalReport]) -> Vec<ClassAggregate> {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    class::FOREGROUND
        .iter()
        .map(|&c| {
            let rows: Vec<&ClassMetrics> = reports.iter().flat_map(|r| &r.rows).filter(|m| m.class_id == c).collect();
            ClassAggregate {
                class_id: c,
                dsc: mean(rows.iter().filter(|m| m.flag.dsc_defined()).map(|m| m.dsc).collect()),
                hd_mm: mean(rows.iter().filter_map(|m| m.hd_mm).collect()),
                avd_mm: mean(rows.iter().filter_map(|m| m.avd_mm).collect()),
                cases: rows.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxcore::Geometry;
    use crate::Rng;

    fn map(dims: [usize; 3], spacing: [f32; 3], data: Vec<u8>) -> LabelMap {
        LabelMap::new(Geometry::new(dims, spacing, [0.0; 3]).unwrap(), data).unwrap()
    }

    fn with_voxels(dims: [usize; 3], spacing: [f32; 3], class_id: u8, voxels: &[[usize; 3]]) -> LabelMap {
        let mut m = map(dims, spacing, vec![0; dims.iter().product()]);
        for &[z, y, x] in voxels {
            m.set(z, y, x, class_id);
        }
        m
    }

    /// Pairwise O(|A||B|) surface distances.
    fn brute(pred: &LabelMap, gt: &LabelMap, c: u8) -> Option<(f64, f64)> {
        let sp = spacing64(gt);
        let sa = surface_voxels(&pred.mask(c), pred.dims());
        let sb = surface_voxels(&gt.mask(c), gt.dims());
        if pred.count(c) == 0 || gt.count(c) == 0 {
            return None;
        }
        let d = |p: &[usize; 3], q: &[usize; 3]| {
            (0..3).map(|a| ((p[a] as f64 - q[a] as f64) * sp[a]).powi(2)).sum::<f64>().sqrt()
        };
        let near = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
            from.iter().map(|p| to.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).collect()
        };
        let (ab, ba) = (near(&sa, &sb), near(&sb, &sa));
        Some((hd_of(&ab, &ba), avd_of(&ab, &ba)))
    }

    fn random_map(rng: &mut Rng, dims: [usize; 3], spacing: [f32; 3]) -> LabelMap {
        let n = dims.iter().product();
        // blobs, so masks have interiors as well as surfaces
        let centres: Vec<([f64; 3], u8, f64)> =
            (0..6).map(|_| ([0, 1, 2].map(|a| rng.uniform() * dims[a] as f64), 1 + rng.below(4) as u8, 1.0 + rng.uniform() * 3.0)).collect();
        let g = Geometry::new(dims, spacing, [0.0; 3]).unwrap();
        let data = (0..n)
            .map(|i| {
                let c = g.coords(i);
                let noise = rng.bernoulli(0.03);
                centres
                    .iter()
                    .find(|(p, _, r)| (0..3).map(|a| (c[a] as f64 - p[a]).powi(2)).sum::<f64>() < r * r)
                    .map_or(if noise { 1 + rng.below(4) as u8 } else { 0 }, |b| b.1)
            })
            .collect();
        LabelMap::new(g, data).unwrap()
    }

    #[test]
    fn dsc_examples() {
        let m = map([10, 10, 1], [1.0; 3], vec![1; 100]);
        assert_eq!(eval_dsc(&m, &m, 1).unwrap(), 1.0);
        let a: Vec<u8> = (0..20).map(|i| (i < 10) as u8).collect();
        let b: Vec<u8> = (0..20).map(|i| (5..15).contains(&i) as u8).collect();
        assert_eq!(eval_dsc(&map([20, 1, 1], [1.0; 3], a), &map([20, 1, 1], [1.0; 3], b.clone()), 1).unwrap(), 0.5);
        let empty = map([20, 1, 1], [1.0; 3], vec![0; 20]);
        assert_eq!(eval_dsc(&empty, &map([20, 1, 1], [1.0; 3], b), 1).unwrap(), 0.0);
        assert_eq!(eval_dsc(&empty, &empty, 2).unwrap(), 1.0);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = map([2, 2, 2], [1.0; 3], vec![0; 8]);
        let b = map([2, 2, 2], [1.0, 1.0, 2.0], vec![0; 8]);
        assert!(eval_dsc(&a, &b, 1).is_err());
        assert!(evaluate_case("x", &a, &b).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = with_voxels([1, 4, 5], [1.0; 3], 1, &[[0, 0, 0]]);
        let b = with_voxels([1, 4, 5], [1.0; 3], 1, &[[0, 3, 4]]);
        assert_eq!(hausdorff_mm(&a, &b, 1).unwrap(), Some(5.0));
        assert_eq!(avd_mm(&a, &b, 1).unwrap(), Some(5.0));
        let a = with_voxels([1, 4, 5], [1.0, 2.0, 2.0], 1, &[[0, 0, 0]]);
        let b = with_voxels([1, 4, 5], [1.0, 2.0, 2.0], 1, &[[0, 3, 4]]);
        assert_eq!(hausdorff_mm(&a, &b, 1).unwrap(), Some(10.0));
        assert_eq!(hausdorff_mm(&a, &a, 1).unwrap(), Some(0.0));
        assert_eq!(avd_mm(&a, &a, 1).unwrap(), Some(0.0));
        let empty = map([1, 4, 5], [1.0, 2.0, 2.0], vec![0; 20]);
        assert_eq!(hausdorff_mm(&empty, &b, 1).unwrap(), None);
    }

    #[test]
    fn identical_maps_are_perfect() {
        let m = random_map(&mut Rng::new(3), [10, 9, 8], [1.0, 0.8, 2.0]);
        let r = evaluate_case("c", &m, &m).unwrap();
        for row in &r.rows {
            assert_eq!(row.dsc, 1.0);
            if row.flag == Flag::Ok {
                assert_eq!((row.hd_mm, row.avd_mm), (Some(0.0), Some(0.0)));
            }
        }
    }

    #[test]
    fn missing_structure_is_flagged() {
        let m = with_voxels([4, 4, 4], [1.0; 3], 1, &[[1, 1, 1], [1, 1, 2]]);
        let r = evaluate_case("c", &m, &m).unwrap();
        let tumor = &r.rows[1];
        assert_eq!(tumor.class_id, class::TUMOR);
        assert_eq!((tumor.dsc, tumor.flag, tumor.hd_mm, tumor.avd_mm), (1.0, Flag::EmptyBoth, None, None));
        let agg = aggregate(&[r]);
        assert_eq!(agg[1].dsc, None);
        assert_eq!(agg[0].dsc, Some(1.0));
    }

    #[test]
    fn accelerated_distances_match_pairwise_oracle() {
        let mut rng = Rng::new(11);
        for _ in 0..25 {
            let dims = [2 + rng.below(11), 2 + rng.below(11), 2 + rng.below(11)];
            let sp = [0.5 + rng.uniform() as f32 * 2.0, 0.6 + rng.uniform() as f32, 1.0 + rng.uniform() as f32];
            let p = random_map(&mut rng, dims, sp);
            let g = random_map(&mut rng, dims, sp);
            for c in class::FOREGROUND {
                let fast = hausdorff_mm(&p, &g, c).unwrap().zip(avd_mm(&p, &g, c).unwrap());
                match (fast, brute(&p, &g, c)) {
                    (None, None) => {}
                    (Some((h, a)), Some((bh, ba))) => {
                        assert!((h - bh).abs() < 1e-6 && (a - ba).abs() < 1e-6);
                        assert!(h >= a && a >= 0.0);
                    }
                    other => panic!("definedness differs: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn metrics_are_symmetric() {
        let mut rng = Rng::new(12);
        let p = random_map(&mut rng, [8, 9, 7], [1.0, 1.5, 0.7]);
        let g = random_map(&mut rng, [8, 9, 7], [1.0, 1.5, 0.7]);
        for c in class::FOREGROUND {
            assert_eq!(eval_dsc(&p, &g, c).unwrap(), eval_dsc(&g, &p, c).unwrap());
            assert_eq!(hausdorff_mm(&p, &g, c).unwrap(), hausdorff_mm(&g, &p, c).unwrap());
            let (a, b) = (avd_mm(&p, &g, c).unwrap(), avd_mm(&g, &p, c).unwrap());
            assert!(a.zip(b).is_none_or(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn tsv_round_trip() {
        let mut rng = Rng::new(13);
        let reports: Vec<_> = (0..3)
            .map(|i| {
                let p = random_map(&mut rng, [6, 6, 6], [1.0, 1.0, 2.5]);
                let g = random_map(&mut rng, [6, 6, 6], [1.0, 1.0, 2.5]);
                evaluate_case(&format!("case_{i}"), &p, &g).unwrap()
            })
            .collect();
        let text = write_tsv(&reports);
        assert!(text.starts_with(TSV_HEADER));
        assert_eq!(read_tsv(&text).unwrap(), reports);
    }
}
