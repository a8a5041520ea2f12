//! Gated effective minibatch size (GEMS).
//!
//! A filter's weight gradient is a sum over all `minibatch × map` positions.
//! The standard rule divides that sum by the total position count; GEMS
//! divides by the number of positions where the filter is active, taken
//! here as a strictly positive post-ReLU output. One count per filter per
//! step.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `accum / active_count`, or zero when no position is active.
pub fn gems_normalize<T: Real>(
    accum: &Tensor<T>,
    active_count: usize,
    total_count: usize,
) -> Result<Tensor<T>> {
    if active_count > total_count {
        return Err(Error::invalid(format!(
            "active count {active_count} exceeds total {total_count}"
        )));
    }
    if active_count == 0 {
        return Ok(Tensor::zeros_like(accum));
    }
    Ok(accum.scale(T::one() / T::from_f64(active_count as f64)))
}

/// The conventional `accum / total_count`.
pub fn standard_normalize<T: Real>(accum: &Tensor<T>, total_count: usize) -> Result<Tensor<T>> {
    if total_count == 0 {
        return Err(Error::invalid("total count is zero"));
    }
    Ok(accum.scale(T::one() / T::from_f64(total_count as f64)))
}

/// Strictly positive entries per channel of a `[s, c, h, w]` activation,
/// together with the per-channel total `s·h·w`.
pub fn active_counts<T: Real>(activation: &Tensor<T>) -> Result<(Vec<usize>, usize)> {
    let (s, c, h, w) = activation.dims4()?;
    let mut counts = vec![0; c];
    for (i, plane) in activation.data().chunks(h * w).enumerate() {
        counts[i % c] += plane.iter().filter(|&&x| x > T::zero()).count();
    }
    Ok((counts, s * h * w))
}

/// Re-normalizes a filter bank gradient `[oc, ic, kh, kw]` that was computed
/// with the standard rule: each filter's slice becomes
/// `gems_normalize(grad · total, active[oc], total)`.
pub fn gems_rescale_filters<T: Real>(
    grad: &mut Tensor<T>,
    active: &[usize],
    total: usize,
) -> Result<()> {
    let (oc, ..) = grad.dims4()?;
    if active.len() != oc {
        return Err(Error::shape(format!(
            "{} active counts for {oc} filters",
            active.len()
        )));
    }
    let per = grad.len() / oc;
    for (f, &a) in active.iter().enumerate() {
        if a > total {
            return Err(Error::invalid(format!(
                "active count {a} exceeds total {total}"
            )));
        }
        let slice = &mut grad.data_mut()[f * per..(f + 1) * per];
        if a == 0 {
            slice.fill(T::zero());
        } else if a != total {
            let k = T::from_f64(total as f64) / T::from_f64(a as f64);
            slice.iter_mut().for_each(|x| *x *= k);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let sum = Tensor::<f64>::scalar(8.0);
        assert_eq!(gems_normalize(&sum, 2, 4).unwrap().data(), &[4.0]);
        assert_eq!(standard_normalize(&sum, 4).unwrap().data(), &[2.0]);
    }

    #[test]
    fn dense_equals_standard() {
        let acc = Tensor::<f64>::from_vec(&[3], vec![1.7, -3.3, 0.1]).unwrap();
        assert_eq!(
            gems_normalize(&acc, 7, 7).unwrap(),
            standard_normalize(&acc, 7).unwrap()
        );
    }

    #[test]
    fn zero_active_gives_zero() {
        let acc = Tensor::<f64>::from_vec(&[2], vec![5.0, -1.0]).unwrap();
        assert_eq!(gems_normalize(&acc, 0, 10).unwrap().data(), &[0.0, 0.0]);
        assert!(gems_normalize(&acc, 11, 10).is_err());
    }

    #[test]
    fn rescale_filters_per_channel() {
        let mut g = Tensor::<f64>::from_vec(&[3, 1, 1, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        gems_rescale_filters(&mut g, &[4, 2, 0], 4).unwrap();
        assert_eq!(g.data(), &[1., 2., 6., 8., 0., 0.]);
    }

    #[test]
    fn counts_strictly_positive() {
        let a =
            Tensor::<f32>::from_vec(&[2, 2, 1, 2], vec![0., 1., 2., 3., -1., 0., 0.5, 0.]).unwrap();
        assert_eq!(active_counts(&a).unwrap(), (vec![1, 3], 4));
    }
}
