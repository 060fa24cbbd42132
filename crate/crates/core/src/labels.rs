use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A partition of the grid: one label per voxel, labels contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    grid: Grid,
    labels: Vec<u32>,
    count: usize,
}

impl LabelMap {
    /// Checks that every label in `0..max+1` is used.
    pub fn new(grid: Grid, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != grid.voxel_count() {
            return Err(Error::shape(format!("{} labels for a grid of {} voxels", labels.len(), grid.voxel_count())));
        }
        let count = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut seen = vec![false; count];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Data(format!("labels are not contiguous: {missing} is unused")));
        }
        Ok(Self { grid, labels, count })
    }

    /// Renumbers arbitrary labels to `0..k` in order of first appearance.
    pub fn from_arbitrary(grid: Grid, raw: &[u64]) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = map.len() as u32;
                *map.entry(r).or_insert(next)
            })
            .collect();
        Self::new(grid, labels)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn cluster_count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Voxel indices per cluster, each list increasing.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (v, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(v);
        }
        out
    }

    pub fn check_same_grid(&self, other: &LabelMap) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::shape(format!(
                "label maps have different grids {:?} and {:?}",
                self.grid.dims(),
                other.grid.dims()
            )));
        }
        Ok(())
    }
}
