//! 2×2 max pooling that records argmax positions, and the matching
//! index-driven unpooling used by the decoder.

use crate::error::{Error, Result};
use crate::memory::Buffer;
use crate::tensor::{Real, Tensor};

/// Argmax position of every pooled element, stored as a flat offset into
/// its own `h × w` input plane.
#[derive(Debug, Clone)]
pub struct PoolIndices {
    input_shape: [usize; 4],
    offsets: Buffer<u32>,
}

impl PoolIndices {
    /// Builds indices from raw offsets, checking that each one lies inside
    /// its own 2×2 window.
    pub fn from_raw(input_shape: [usize; 4], offsets: Vec<u32>) -> Result<Self> {
        let idx = PoolIndices {
            input_shape,
            offsets: Buffer::from_vec(offsets),
        };
        idx.validate()?;
        Ok(idx)
    }

    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn pooled_shape(&self) -> [usize; 4] {
        let [s, c, h, w] = self.input_shape;
        [s, c, h / 2, w / 2]
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn validate(&self) -> Result<()> {
        let [s, c, h, w] = self.input_shape;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("pool input {h}x{w} has odd extent")));
        }
        let (ph, pw) = (h / 2, w / 2);
        if self.offsets.len() != s * c * ph * pw {
            return Err(Error::shape("pool index count does not match shape"));
        }
        for (i, &off) in self.offsets.iter().enumerate() {
            let cell = i % (ph * pw);
            let (py, px) = (cell / pw, cell % pw);
            let off = off as usize;
            let (y, x) = (off / w, off % w);
            if off >= h * w || y / 2 != py || x / 2 != px {
                return Err(Error::invalid(format!(
                    "pool index {off} at pooled cell ({py},{px}) is outside its window"
                )));
            }
        }
        Ok(())
    }
}

/// Max over each 2×2 window. Ties go to the lowest row-major offset.
pub fn maxpool2x2<T: Real>(z: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (s, c, h, w) = z.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2x2 needs even extents, got {h}x{w}"
        )));
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(s * c * ph * pw);
    let mut offsets = Vec::with_capacity(s * c * ph * pw);
    for plane in z.data().chunks(h * w) {
        for py in 0..ph {
            for px in 0..pw {
                let base = 2 * py * w + 2 * px;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if plane[cand] > plane[best] {
                        best = cand;
                    }
                }
                out.push(plane[best]);
                offsets.push(best as u32);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[s, c, ph, pw], out)?,
        PoolIndices {
            input_shape: [s, c, h, w],
            offsets: Buffer::from_vec(offsets),
        },
    ))
}

/// Scatters `y` back to the recorded argmax positions; every other cell is 0.
pub fn unpool2x2<T: Real>(y: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if y.shape() != indices.pooled_shape() {
        return Err(Error::shape(format!(
            "unpool input {:?} does not match indices for {:?}",
            y.shape(),
            indices.input_shape
        )));
    }
    indices.validate()?;
    Ok(scatter(y, indices))
}

pub(crate) fn scatter<T: Real>(y: &Tensor<T>, indices: &PoolIndices) -> Tensor<T> {
    let [s, c, h, w] = indices.input_shape;
    let pooled = (h / 2) * (w / 2);
    let mut out = Buffer::filled(s * c * h * w, T::zero());
    for (p, (vals, offs)) in y
        .data()
        .chunks(pooled)
        .zip(indices.offsets.chunks(pooled))
        .enumerate()
    {
        let plane = &mut out[p * h * w..(p + 1) * h * w];
        for (&v, &o) in vals.iter().zip(offs) {
            plane[o as usize] += v;
        }
    }
    Tensor::from_buffer(indices.input_shape.to_vec(), out)
}

pub(crate) fn gather<T: Real>(full: &Tensor<T>, indices: &PoolIndices) -> Tensor<T> {
    let [_, _, h, w] = indices.input_shape;
    let pooled = (h / 2) * (w / 2);
    let mut out = Vec::with_capacity(indices.offsets.len());
    for (plane, offs) in full
        .data()
        .chunks(h * w)
        .zip(indices.offsets.chunks(pooled))
    {
        out.extend(offs.iter().map(|&o| plane[o as usize]));
    }
    Tensor::from_buffer(indices.pooled_shape().to_vec(), Buffer::from_vec(out))
}

/// Gradient of [`maxpool2x2`] with respect to its input.
pub fn maxpool2x2_backward<T: Real>(
    grad_out: &Tensor<T>,
    indices: &PoolIndices,
) -> Result<Tensor<T>> {
    unpool2x2(grad_out, indices)
}

/// Gradient of [`unpool2x2`] with respect to its input.
pub fn unpool2x2_backward<T: Real>(
    grad_out: &Tensor<T>,
    indices: &PoolIndices,
) -> Result<Tensor<T>> {
    if grad_out.shape() != indices.input_shape {
        return Err(Error::shape("unpool gradient shape mismatch"));
    }
    Ok(gather(grad_out, indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_window() {
        let z = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let (y, idx) = maxpool2x2(&z).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.offsets(), &[3]);
        let back = unpool2x2(&y, &idx).unwrap();
        assert_eq!(back.data(), &[0., 0., 0., 4.]);
    }

    #[test]
    fn ties_take_lowest_offset() {
        let z = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1., 7., 7., 7.]).unwrap();
        assert_eq!(maxpool2x2(&z).unwrap().1.offsets(), &[1]);
        let z = Tensor::<f64>::full(&[1, 1, 2, 4], 2.0).unwrap();
        assert_eq!(maxpool2x2(&z).unwrap().1.offsets(), &[0, 2]);
    }

    #[test]
    fn odd_extent_rejected() {
        assert!(maxpool2x2(&Tensor::<f64>::zeros(&[1, 1, 3, 2]).unwrap()).is_err());
    }

    #[test]
    fn corrupted_indices_rejected() {
        // offset 2 in a 2x4 plane belongs to the second window, not the first
        assert!(PoolIndices::from_raw([1, 1, 2, 4], vec![2, 2]).is_err());
        assert!(PoolIndices::from_raw([1, 1, 2, 4], vec![5, 2]).is_ok());
        assert!(PoolIndices::from_raw([1, 1, 2, 2], vec![9]).is_err());
    }

    #[test]
    fn unpool_shape_mismatch() {
        let (_, idx) = maxpool2x2(&Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap()).unwrap();
        assert!(unpool2x2(&Tensor::<f64>::zeros(&[1, 1, 1, 2]).unwrap(), &idx).is_err());
    }

    proptest! {
        #[test]
        fn unpool_of_pool_keeps_only_window_maxima(
            data in proptest::collection::vec(-5.0f64..5.0, 2 * 3 * 4 * 6)
        ) {
            let z = Tensor::from_vec(&[2, 3, 4, 6], data).unwrap();
            let (y, idx) = maxpool2x2(&z).unwrap();
            let back = unpool2x2(&y, &idx).unwrap();
            let mut marked = vec![false; z.len()];
            for (p, offs) in idx.offsets().chunks(6).enumerate() {
                for &o in offs {
                    marked[p * 24 + o as usize] = true;
                }
            }
            for (i, &m) in marked.iter().enumerate() {
                let expect = if m { z.data()[i] } else { 0.0 };
                prop_assert_eq!(back.data()[i], expect);
            }
            // one survivor per window
            prop_assert_eq!(marked.iter().filter(|&&m| m).count(), y.len());
        }
    }
}
