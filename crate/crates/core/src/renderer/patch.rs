use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of the flattened pixel index range `0..d` into `S` contiguous
/// patches of near-equal size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    ranges: Vec<Range<usize>>,
}

impl PatchLayout {
    pub fn new(num_pixels: usize, patches: usize) -> Result<Self> {
        if patches == 0 || patches > num_pixels {
            return Err(Error::InvalidArgument(format!(
                "cannot split {num_pixels} pixels into {patches} patches"
            )));
        }
        let base = num_pixels / patches;
        let extra = num_pixels % patches;
        let mut start = 0;
        let ranges = (0..patches)
            .map(|s| {
                let len = base + usize::from(s < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Ok(Self { ranges })
    }

    /// A layout from explicit ranges; they must tile `0..num_pixels` in order.
    pub fn from_ranges(num_pixels: usize, ranges: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::InvalidArgument(format!(
                    "patch {r:?} breaks the partition at {next}"
                )));
            }
            next = r.end;
        }
        if next != num_pixels {
            return Err(Error::InvalidArgument(format!(
                "patches cover {next} of {num_pixels} pixels"
            )));
        }
        Ok(Self { ranges })
    }

    pub fn whole(num_pixels: usize) -> Self {
        Self {
            ranges: vec![0..num_pixels],
        }
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn num_pixels(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn max_patch(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).max().unwrap_or(0)
    }
}
