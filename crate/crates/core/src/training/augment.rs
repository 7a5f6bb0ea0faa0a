//! Input augmentations for the two training passes.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

fn frame_dims(frames: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match frames.shape() {
        &[t, h, w, c] => Ok([t, h, w, c]),
        s => Err(Error::shape(op, format!("frames must be (T,H,W,C), got {s:?}"))),
    }
}

/// Mirrors every frame of a `(T,H,W,C)` chunk about its vertical axis.
pub fn horizontal_flip(frames: &Tensor) -> Result<Tensor> {
    let [t, h, w, c] = frame_dims(frames, "horizontal_flip")?;
    let src = frames.data();
    let mut out = Vec::with_capacity(src.len());
    for row in 0..t * h {
        let base = row * w * c;
        for x in (0..w).rev() {
            out.extend_from_slice(&src[base + x * c..base + (x + 1) * c]);
        }
    }
    Tensor::new(frames.shape(), out)
}

/// Square occlusion shared by every frame of a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskRect {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

/// Draws the top-left corner uniformly over all positions where the square
/// fits: first the row, then the column.
pub fn draw_mask(height: usize, width: usize, size: usize, rng: &mut Rng) -> Result<MaskRect> {
    if size > height || size > width {
        return Err(Error::invalid(format!("mask size {size} exceeds frame {height}x{width}")));
    }
    let top = rng.random_range(0..=height - size);
    let left = rng.random_range(0..=width - size);
    Ok(MaskRect { top, left, size })
}

/// Copy of `frames` with `rect` set to `fill` in every frame and channel.
pub fn apply_mask(frames: &Tensor, rect: MaskRect, fill: f64) -> Result<Tensor> {
    let [t, h, w, c] = frame_dims(frames, "random_mask")?;
    if rect.top + rect.size > h || rect.left + rect.size > w {
        return Err(Error::invalid(format!("mask {rect:?} outside frame {h}x{w}")));
    }
    let mut out = frames.clone();
    let data = out.data_mut();
    for ti in 0..t {
        for y in rect.top..rect.top + rect.size {
            let start = ((ti * h + y) * w + rect.left) * c;
            data[start..start + rect.size * c].fill(fill);
        }
    }
    Ok(out)
}

/// Occludes one random `size x size` square, at the same place in every
/// frame. The input is left untouched.
pub fn random_mask(frames: &Tensor, size: usize, fill: f64, rng: &mut Rng) -> Result<Tensor> {
    let [_, h, w, _] = frame_dims(frames, "random_mask")?;
    let rect = draw_mask(h, w, size, rng)?;
    apply_mask(frames, rect, fill)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::rng_from_seed;
    use proptest::prelude::*;

    fn numbered(t: usize, h: usize, w: usize, c: usize) -> Tensor {
        let n = t * h * w * c;
        Tensor::new(&[t, h, w, c], (0..n).map(|i| (i + 1) as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn flip_moves_column() {
        let x = numbered(2, 3, 5, 2);
        let f = horizontal_flip(&x).unwrap();
        for (t, y, col, ch) in [(0, 0, 0, 0), (1, 2, 1, 1), (0, 1, 4, 0)] {
            let at = |v: &Tensor, xx: usize| v.data()[((t * 3 + y) * 5 + xx) * 2 + ch];
            assert_eq!(at(&f, 4 - col), at(&x, col));
        }
        assert_eq!(horizontal_flip(&f).unwrap(), x);
    }

    #[test]
    fn symmetric_frame_is_fixed() {
        let data: Vec<f64> = (0..4 * 4).map(|i| [0.1, 0.5, 0.5, 0.1][i % 4]).collect();
        let x = Tensor::new(&[1, 4, 4, 1], data).unwrap();
        assert_eq!(horizontal_flip(&x).unwrap(), x);
    }

    #[test]
    fn full_and_empty_masks() {
        let x = numbered(2, 4, 4, 3);
        let full = random_mask(&x, 4, 0.0, &mut rng_from_seed(1)).unwrap();
        assert!(full.data().iter().all(|&v| v == 0.0));
        assert_eq!(random_mask(&x, 0, 0.0, &mut rng_from_seed(1)).unwrap(), x);
        assert!(random_mask(&x, 5, 0.0, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn default_mask_covers_one_sixteenth() {
        let x = Tensor::full(&[3, 64, 64, 3], 0.5);
        let m = random_mask(&x, 16, 0.0, &mut rng_from_seed(2)).unwrap();
        let zeros = m.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros * 16, m.numel());
        assert!(x.data().iter().all(|&v| v == 0.5));
    }

    proptest! {
        #[test]
        fn mask_only_touches_square(seed in 0u64..1000, size in 0usize..8, h in 8usize..12, w in 8usize..12) {
            let x = numbered(3, h, w, 2);
            let rect = draw_mask(h, w, size, &mut rng_from_seed(seed)).unwrap();
            let m = apply_mask(&x, rect, 0.0).unwrap();
            for t in 0..3 {
                for y in 0..h {
                    for xx in 0..w {
                        for c in 0..2 {
                            let i = ((t * h + y) * w + xx) * 2 + c;
                            let inside = (rect.top..rect.top + size).contains(&y) && (rect.left..rect.left + size).contains(&xx);
                            if inside {
                                prop_assert_eq!(m.data()[i], 0.0);
                            } else {
                                prop_assert_eq!(m.data()[i], x.data()[i]);
                            }
                        }
                    }
                }
            }
        }
    }
}
