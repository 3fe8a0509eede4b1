//! Connected-component labeling of binary masks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::image::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

pub const NO_REGION: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionLabeling {
    pub width: usize,
    pub height: usize,
    /// Region id per pixel, [`NO_REGION`] outside the mask.
    pub labels: Vec<u32>,
    /// Pixel indices of each region in discovery order.
    pub regions: Vec<Vec<usize>>,
}

impl RegionLabeling {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.regions.iter().map(Vec::len).collect()
    }
}

/// Labels regions in row-major order of their first pixel.
pub fn label_regions(mask: &Mask, conn: Connectivity) -> RegionLabeling {
    let (w, h) = mask.dims();
    let mut labels = vec![NO_REGION; w * h];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    let offsets: &[(i64, i64)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
    };
    for start in 0..w * h {
        if !mask.data[start] || labels[start] != NO_REGION {
            continue;
        }
        let id = regions.len() as u32;
        let mut pixels = Vec::new();
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data[j] && labels[j] == NO_REGION {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        regions.push(pixels);
    }
    RegionLabeling {
        width: w,
        height: h,
        labels,
        regions,
    }
}
