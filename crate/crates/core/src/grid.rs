use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents of a 2D or 3D voxel grid, x fastest-varying in linear indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    dims: Vec<usize>,
}

/// Grid adjacency used to seed the local merging phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    /// Edge neighbors in 2D.
    Four,
    /// Edge and corner neighbors in 2D.
    Eight,
    /// Face neighbors in 3D.
    Six,
    /// Face, edge and corner neighbors in 3D.
    TwentySix,
}

impl Connectivity {
    pub fn default_for(ndims: usize) -> Self {
        if ndims == 3 {
            Connectivity::Six
        } else {
            Connectivity::Four
        }
    }

    pub fn from_count(count: u32) -> Result<Self> {
        match count {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::param(format!("unsupported connectivity {other} (use 4, 8, 6 or 26)"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }

    fn ndims(self) -> usize {
        match self {
            Connectivity::Four | Connectivity::Eight => 2,
            Connectivity::Six | Connectivity::TwentySix => 3,
        }
    }
}

impl Grid {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if !(dims.len() == 2 || dims.len() == 3) {
            return Err(Error::shape(format!("grids must have 2 or 3 axes, got {}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::shape(format!("grid extents must be positive, got {dims:?}")));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).map_or(true, |c| c > u32::MAX as usize) {
            return Err(Error::shape(format!("grid {dims:?} is too large")));
        }
        Ok(Self { dims })
    }

    pub fn new_2d(width: usize, height: usize) -> Result<Self> {
        Self::new(vec![width, height])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let mut rest = index;
        let mut out = [0; 3];
        for (axis, &d) in self.dims.iter().enumerate() {
            out[axis] = rest % d;
            rest /= d;
        }
        out
    }

    pub fn index(&self, coords: [usize; 3]) -> usize {
        let mut idx = 0;
        for axis in (0..self.dims.len()).rev() {
            idx = idx * self.dims[axis] + coords[axis];
        }
        idx
    }

    /// Unordered adjacent voxel pairs `(a, b)` with `a < b`, in increasing
    /// order of `a` then `b`.
    pub fn neighbor_pairs(&self, connectivity: Connectivity) -> Result<Vec<(u32, u32)>> {
        if connectivity.ndims() != self.ndims() {
            return Err(Error::param(format!(
                "{}-connectivity does not apply to a {}D grid",
                connectivity.count(),
                self.ndims()
            )));
        }
        let offsets = forward_offsets(connectivity);
        let dims3 = [self.dims[0], self.dims[1], self.dims.get(2).copied().unwrap_or(1)];
        let mut pairs = Vec::with_capacity(self.voxel_count() * offsets.len());
        for v in 0..self.voxel_count() {
            let c = self.coords(v);
            let mut here = Vec::with_capacity(offsets.len());
            for off in &offsets {
                let mut nc = [0usize; 3];
                let mut inside = true;
                for axis in 0..3 {
                    let p = c[axis] as isize + off[axis];
                    if p < 0 || p >= dims3[axis] as isize {
                        inside = false;
                        break;
                    }
                    nc[axis] = p as usize;
                }
                if inside {
                    here.push(self.index(nc) as u32);
                }
            }
            here.sort_unstable();
            pairs.extend(here.into_iter().map(|w| (v as u32, w)));
        }
        Ok(pairs)
    }
}

// Offsets whose linear index is larger than the origin's, so every pair is
// produced once.
fn forward_offsets(connectivity: Connectivity) -> Vec<[isize; 3]> {
    let zrange: &[isize] = if connectivity.ndims() == 3 { &[-1, 0, 1] } else { &[0] };
    let mut out = Vec::new();
    for &dz in zrange {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                let keep = match connectivity {
                    Connectivity::Four | Connectivity::Six => nonzero == 1,
                    Connectivity::Eight | Connectivity::TwentySix => nonzero >= 1,
                };
                let forward = (dz, dy, dx) > (0, 0, 0);
                if keep && forward {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}
