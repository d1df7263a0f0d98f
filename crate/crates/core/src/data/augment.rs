//! The eight symmetries of the square acting on the last two axes.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// `rotations` quarter turns clockwise, then an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dihedral {
    pub rotations: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        rotations: 0,
        flip: false,
    };

    /// All eight elements in a fixed order.
    pub fn all() -> [Dihedral; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Self::from_index(i);
        }
        out
    }

    pub fn from_index(i: usize) -> Self {
        Dihedral {
            rotations: (i % 4) as u8,
            flip: (i / 4) % 2 == 1,
        }
    }

    pub fn index(self) -> usize {
        self.rotations as usize + 4 * self.flip as usize
    }

    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        let mut t = x.clone();
        for _ in 0..self.rotations {
            t = rot90(&t)?;
        }
        if self.flip {
            t = flip_last(&t)?;
        }
        Ok(t.contiguous()?)
    }

    /// Element `g` such that `g.apply(self.apply(x)) == x`.
    pub fn inverse(self) -> Self {
        if self.flip {
            // A flip composed with any rotation is an involution.
            self
        } else {
            Dihedral {
                rotations: (4 - self.rotations) % 4,
                flip: false,
            }
        }
    }
}

fn flip_last(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    let n = x.dim(r - 1)?;
    let idx: Vec<u32> = (0..n as u32).rev().collect();
    let idx = Tensor::from_vec(idx, n, x.device())?;
    Ok(x.index_select(&idx, r - 1)?)
}

/// Quarter turn clockwise: transpose then mirror columns.
fn rot90(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    flip_last(&x.transpose(r - 2, r - 1)?.contiguous()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn grid(h: usize, w: usize) -> Tensor {
        let v: Vec<f32> = (0..2 * h * w).map(|i| i as f32).collect();
        Tensor::from_vec(v, (2, h, w), &Device::Cpu).unwrap()
    }

    fn as_vec(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn rot90_moves_top_left_to_top_right() {
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 2, 2), &Device::Cpu).unwrap();
        let r = Dihedral::from_index(1).apply(&x).unwrap();
        assert_eq!(as_vec(&r), vec![3., 1., 4., 2.]);
    }

    #[test]
    fn flip_twice_is_identity_and_inverses_undo() {
        let x = grid(3, 5);
        let f = Dihedral { rotations: 0, flip: true };
        assert_eq!(as_vec(&f.apply(&f.apply(&x).unwrap()).unwrap()), as_vec(&x));
        for g in Dihedral::all() {
            let back = g.inverse().apply(&g.apply(&x).unwrap()).unwrap();
            assert_eq!(as_vec(&back), as_vec(&x), "{g:?}");
        }
    }

    #[test]
    fn eight_distinct_images_closed_under_composition() {
        let x = grid(4, 4);
        let images: Vec<Vec<f32>> = Dihedral::all().iter().map(|g| as_vec(&g.apply(&x).unwrap())).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(images[i], images[j]);
            }
        }
        for a in Dihedral::all() {
            for b in Dihedral::all() {
                let composed = as_vec(&b.apply(&a.apply(&x).unwrap()).unwrap());
                assert!(images.contains(&composed));
            }
        }
        for (i, g) in Dihedral::all().iter().enumerate() {
            assert_eq!(g.index(), i);
        }
    }
}
