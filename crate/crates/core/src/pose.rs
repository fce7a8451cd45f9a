use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K` keypoints in image pixel coordinates, with a per-joint validity flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub coords: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl Pose {
    /// All joints valid.
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        let valid = vec![true; coords.len()];
        Pose { coords, valid }
    }

    pub fn with_mask(coords: Vec<[f64; 2]>, valid: Vec<bool>) -> Result<Self> {
        if coords.len() != valid.len() {
            return Err(Error::input("pose coords and validity mask differ in length"));
        }
        Ok(Pose { coords, valid })
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.coords.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::input("pose has non-finite coordinates"))
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Pose {
        Pose {
            coords: self.coords.iter().map(|&[x, y]| [x + dx, y + dy]).collect(),
            valid: self.valid.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Pose {
        Pose {
            coords: self.coords.iter().map(|&[x, y]| [x * s, y * s]).collect(),
            valid: self.valid.clone(),
        }
    }

    /// `(min_x, min_y, max_x, max_y)` over valid joints.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let mut it = self.coords.iter().zip(&self.valid).filter(|(_, &v)| v).map(|(c, _)| c);
        let first = it.next()?;
        let mut b = [first[0], first[1], first[0], first[1]];
        for c in it {
            b[0] = b[0].min(c[0]);
            b[1] = b[1].min(c[1]);
            b[2] = b[2].max(c[0]);
            b[3] = b[3].max(c[1]);
        }
        Some(b)
    }
}
