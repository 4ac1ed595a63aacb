//! 3D connected-component labeling with union-find.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Shape};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    Eighteen,
    #[default]
    TwentySix,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix];

    pub fn neighbors(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// Largest L1 length of an offset that counts as adjacent.
    fn max_l1(self) -> i64 {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// Neighbor offsets that precede the centre voxel in scan order.
    pub fn backward_offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let l1 = dz.abs() + dy.abs() + dx.abs();
                    if l1 > 0 && l1 <= self.max_l1() && (dz, dy, dx) < (0, 0, 0) {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::InvalidParameter(format!("connectivity must be 6, 18 or 26, got {n}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.neighbors()
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<u8>()
            .map_err(|_| Error::InvalidParameter(format!("connectivity must be 6, 18 or 26, got {s:?}")))?
            .try_into()
    }
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.neighbors())
    }
}

/// Component ids per voxel: 0 is background, components are numbered
/// 1..=K in the scan order of their first voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub shape: Shape,
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the voxel count of component `k`.
    pub sizes: Vec<usize>,
    pub connectivity: Connectivity,
}

impl ComponentLabeling {
    pub fn num_components(&self) -> usize {
        self.sizes.len()
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let p = parent[i as usize];
        parent[i as usize] = parent[p as usize];
        i = p;
    }
    i
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        // smaller root wins so roots never depend on merge order
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

pub(crate) fn require_binary(mask: &LabelVolume, what: &str) -> Result<()> {
    if let Some(v) = mask.data().iter().find(|&&v| v > 1) {
        return Err(Error::InvalidMask(format!("{what} contains value {v}; expected 0 or 1")));
    }
    Ok(())
}

/// Unions every foreground voxel of z in `zs` with its backward neighbours.
/// `parent` covers the slab starting at global index `base`; neighbours
/// outside the slab's z range are skipped.
fn label_slab(mask: &[u8], shape: Shape, zs: std::ops::Range<usize>, parent: &mut [u32], base: usize, offsets: &[[i64; 3]]) {
    let [_, ny, nx] = shape;
    for z in zs.clone() {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if mask[i] == 0 {
                    continue;
                }
                for &[dz, dy, dx] in offsets {
                    let (qz, qy, qx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                    if qz < zs.start as i64 || qy < 0 || qx < 0 || qy >= ny as i64 || qx >= nx as i64 {
                        continue;
                    }
                    let j = (qz as usize * ny + qy as usize) * nx + qx as usize;
                    if mask[j] != 0 {
                        union(parent, (i - base) as u32, (j - base) as u32);
                    }
                }
            }
        }
    }
}

fn finish(mask: &[u8], shape: Shape, mut parent: Vec<u32>, connectivity: Connectivity) -> ComponentLabeling {
    let n = mask.len();
    let mut root_label = vec![0u32; n];
    let mut labels = vec![0u32; n];
    let mut sizes = Vec::new();
    for i in 0..n {
        if mask[i] == 0 {
            continue;
        }
        let r = find(&mut parent, i as u32) as usize;
        if root_label[r] == 0 {
            sizes.push(0);
            root_label[r] = sizes.len() as u32;
        }
        let l = root_label[r];
        labels[i] = l;
        sizes[l as usize - 1] += 1;
    }
    ComponentLabeling {
        shape,
        labels,
        sizes,
        connectivity,
    }
}

fn check_size(mask: &LabelVolume) -> Result<()> {
    if mask.len() > u32::MAX as usize {
        return Err(Error::InvalidMask(format!("{} voxels exceed the labeling limit", mask.len())));
    }
    Ok(())
}

/// Single-threaded labeling.
pub fn connected_components(mask: &LabelVolume, connectivity: Connectivity) -> Result<ComponentLabeling> {
    require_binary(mask, "mask")?;
    check_size(mask)?;
    let shape = mask.shape();
    let mut parent: Vec<u32> = (0..mask.len() as u32).collect();
    let offsets = connectivity.backward_offsets();
    label_slab(mask.data(), shape, 0..shape[0], &mut parent, 0, &offsets);
    Ok(finish(mask.data(), shape, parent, connectivity))
}

/// Slab-parallel labeling: z-slabs are labeled concurrently, then merged
/// across slab boundaries. Produces exactly the labels of
/// [`connected_components`].
pub fn connected_components_parallel(mask: &LabelVolume, connectivity: Connectivity) -> Result<ComponentLabeling> {
    require_binary(mask, "mask")?;
    check_size(mask)?;
    let shape = mask.shape();
    let [nz, ny, nx] = shape;
    let plane = ny * nx;
    if plane == 0 || nz == 0 {
        return connected_components(mask, connectivity);
    }
    let slabs = rayon::current_num_threads().clamp(1, nz);
    let slab_z = nz.div_ceil(slabs);
    let offsets = connectivity.backward_offsets();
    let data = mask.data();

    let mut parent: Vec<u32> = (0..mask.len() as u32).collect();
    parent.par_chunks_mut(slab_z * plane).enumerate().for_each(|(s, chunk)| {
        let z0 = s * slab_z;
        let z1 = (z0 + slab_z).min(nz);
        let base = z0 * plane;
        // chunk-local ids: shift to local, label, shift back
        chunk.iter_mut().for_each(|p| *p -= base as u32);
        label_slab(data, shape, z0..z1, chunk, base, &offsets);
        chunk.iter_mut().for_each(|p| *p += base as u32);
    });

    // stitch the first plane of each slab to the plane before it
    for z in (slab_z..nz).step_by(slab_z) {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if data[i] == 0 {
                    continue;
                }
                for &[dz, dy, dx] in offsets.iter().filter(|o| o[0] == -1) {
                    let (qy, qx) = (y as i64 + dy, x as i64 + dx);
                    if qy < 0 || qx < 0 || qy >= ny as i64 || qx >= nx as i64 {
                        continue;
                    }
                    let j = (((z as i64 + dz) as usize) * ny + qy as usize) * nx + qx as usize;
                    if data[j] != 0 {
                        union(&mut parent, i as u32, j as u32);
                    }
                }
            }
        }
    }
    Ok(finish(data, shape, parent, connectivity))
}
