//! Logits to labels, connected components and component-based cleanup.

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::voxcore::Geometry;
use crate::{class, Error, LabelMap, Result, Scalar, Tensor5};

/// Per-voxel argmax over channels of batch item 0. Ties resolve to the
/// lower class id.
pub fn argmax_labels<T: Scalar>(logits: &Tensor5<T>, geometry: &Geometry) -> Result<LabelMap> {
    let d = logits.dims();
    if d.spatial() != geometry.dims {
        return Err(Error::shape(format!("logits {d} vs geometry {:?}", geometry.dims)));
    }
    if d.channels == 0 || d.channels > class::COUNT {
        return Err(Error::shape(format!("{} channels, expected 1..={}", d.channels, class::COUNT)));
    }
    let n = d.spatial_len();
    let item = logits.item(0);
    let mut labels = vec![0u8; n];
    for (v, l) in labels.iter_mut().enumerate() {
        let mut best = item[v];
        for c in 1..d.channels {
            let x = item[c * n + v];
            if x > best {
                best = x;
                *l = c as u8;
            }
        }
    }
    LabelMap::new(*geometry, labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::invalid(format!("connectivity must be 6 or 26, got {v}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    /// Neighbour offsets that precede a voxel in scan order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let before = (dz, dy, dx) < (0, 0, 0);
                    let adjacent = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan >= 1,
                    };
                    if before && adjacent {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    /// Linear voxel indices, ascending.
    pub voxels: Vec<usize>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// Components of one binary mask, ordered by their first voxel in scan
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentSet {
    pub label: u8,
    pub components: Vec<Component>,
}

impl ComponentSet {
    /// Index of the largest component; the earliest wins ties.
    pub fn largest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, c) in self.components.iter().enumerate() {
            if best.is_none_or(|b| c.len() > self.components[b].len()) {
                best = Some(i);
            }
        }
        best
    }
}

/// Two-pass labelling with union-find over provisional labels.
pub fn connected_components(mask: &[bool], dims: [usize; 3], connectivity: Connectivity) -> Vec<Component> {
    let [d, h, w] = dims;
    assert_eq!(mask.len(), d * h * w, "mask length does not match dims");
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![usize::MAX; mask.len()];
    let mut uf: UnionFind<usize> = UnionFind::new(0);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if !mask[i] {
                    continue;
                }
                let mut mine = usize::MAX;
                for [dz, dy, dx] in &offsets {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if nz < 0 || ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ((nz as usize) * h + ny as usize) * w + nx as usize;
                    let other = provisional[j];
                    if other == usize::MAX {
                        continue;
                    }
                    if mine == usize::MAX {
                        mine = other;
                    } else {
                        uf.union(mine, other);
                    }
                }
                if mine == usize::MAX {
                    mine = uf.new_set();
                }
                provisional[i] = mine;
            }
        }
    }
    let mut slot = vec![usize::MAX; uf.len()];
    let mut out: Vec<Component> = Vec::new();
    for (i, &p) in provisional.iter().enumerate() {
        if p == usize::MAX {
            continue;
        }
        let root = uf.find_mut(p);
        if slot[root] == usize::MAX {
            slot[root] = out.len();
            out.push(Component { voxels: Vec::new() });
        }
        out[slot[root]].voxels.push(i);
    }
    out
}

/// Components of the voxels carrying `class_id`.
pub fn class_components(labels: &LabelMap, class_id: u8, connectivity: Connectivity) -> ComponentSet {
    ComponentSet {
        label: class_id,
        components: connected_components(&labels.mask(class_id), labels.dims(), connectivity),
    }
}

/// For each listed class, voxels outside its largest component become
/// background.
pub fn keep_largest(labels: &LabelMap, class_ids: &[u8], connectivity: Connectivity) -> LabelMap {
    let mut out = labels.clone();
    for &c in class_ids {
        let set = class_components(labels, c, connectivity);
        let Some(keep) = set.largest() else { continue };
        for (k, comp) in set.components.iter().enumerate() {
            if k != keep {
                for &v in &comp.voxels {
                    out.data_mut()[v] = class::BACKGROUND;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CleanupMode {
    #[default]
    LargestComponent,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub mode: CleanupMode,
    /// Classes cleaned; vessels are excluded by default.
    pub classes: Vec<u8>,
    pub connectivity: Connectivity,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            mode: CleanupMode::default(),
            classes: vec![class::KIDNEY, class::TUMOR],
            connectivity: Connectivity::TwentySix,
        }
    }
}

pub fn cleanup(labels: &LabelMap, cfg: &PostprocConfig) -> LabelMap {
    match cfg.mode {
        CleanupMode::LargestComponent => keep_largest(labels, &cfg.classes, cfg.connectivity),
        CleanupMode::None => labels.clone(),
    }
}
