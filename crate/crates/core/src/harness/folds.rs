//! Seeded k-fold splits.

use crate::{Error, Result, Rng};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Shuffles the cases once and cuts them into `k` validation blocks whose
/// sizes differ by at most one (earlier blocks take the remainder).
pub fn make_folds(case_ids: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > case_ids.len() {
        return Err(Error::invalid(format!("{k} folds for {} cases", case_ids.len())));
    }
    let mut order = case_ids.to_vec();
    Rng::for_name(seed, "folds").shuffle(&mut order);
    let n = order.len();
    let mut start = 0;
    let mut out = Vec::with_capacity(k);
    for fold in 0..k {
        let len = n / k + usize::from(fold < n % k);
        let val = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).cloned().collect();
        out.push(FoldSplit { fold, train, val });
        start += len;
    }
    Ok(out)
}
