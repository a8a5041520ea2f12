//! Class-weighted softmax cross-entropy over per-pixel logits.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Pixels carrying this label contribute neither loss nor gradient.
pub const IGNORE_LABEL: u8 = u8::MAX;

/// Integer class ids in `[samples, h, w]` layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "label data length {} does not match {shape:?}",
                data.len()
            )));
        }
        Ok(LabelMap { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Returns the loss, averaged over non-ignored pixels, and its gradient with
/// respect to `logits [s, K, h, w]`:
///
/// ```text
/// loss = (1/N) Σ_pixels w_y · (−log softmax(logits)_y)
/// ∂loss/∂logit_k = w_y · (p_k − [k = y]) / N
/// ```
pub fn weighted_softmax_xent<T: Real>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    class_weights: &[T],
) -> Result<(T, Tensor<T>)> {
    let (s, k, h, w) = logits.dims4()?;
    if labels.shape != [s, h, w] {
        return Err(Error::shape(format!(
            "labels {:?} do not match logits {:?}",
            labels.shape,
            logits.shape()
        )));
    }
    if class_weights.len() != k {
        return Err(Error::shape(format!(
            "{} class weights for {k} classes",
            class_weights.len()
        )));
    }
    if let Some(bad) = labels
        .data
        .iter()
        .find(|&&l| l != IGNORE_LABEL && l as usize >= k)
    {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mean_w = class_weights.iter().map(|&w| Real::to_f64(w)).sum::<f64>() / k as f64;
    if (mean_w - 1.0).abs() > 1e-3 {
        log::warn!("class weights have mean {mean_w:.4}, expected 1");
    }

    let hw = h * w;
    let valid = labels.data.iter().filter(|&&l| l != IGNORE_LABEL).count();
    let mut grad = vec![T::zero(); logits.len()];
    if valid == 0 {
        return Ok((T::zero(), logits.with_data(grad)));
    }
    let inv_n = T::one() / T::from_f64(valid as f64);
    let mut loss = T::zero();
    let x = logits.data();
    for n in 0..s {
        let base = n * k * hw;
        for p in 0..hw {
            let y = labels.data[n * hw + p];
            if y == IGNORE_LABEL {
                continue;
            }
            let y = y as usize;
            let at = |c: usize| base + c * hw + p;
            let max = (0..k).map(|c| x[at(c)]).fold(T::neg_infinity(), T::max);
            let denom: T = (0..k).map(|c| (x[at(c)] - max).exp()).sum();
            let log_z = max + denom.ln();
            let wy = class_weights[y];
            loss += wy * (log_z - x[at(y)]);
            let scale = wy * inv_n;
            for c in 0..k {
                let prob = (x[at(c)] - log_z).exp();
                let target = if c == y { T::one() } else { T::zero() };
                grad[at(c)] = scale * (prob - target);
            }
        }
    }
    Ok((loss * inv_n, logits.with_data(grad)))
}

/// Arg-max class per pixel, `[s, h, w]`. Ties go to the lowest class id.
pub fn predict<T: Real>(logits: &Tensor<T>) -> Result<LabelMap> {
    let (s, k, h, w) = logits.dims4()?;
    let hw = h * w;
    let x = logits.data();
    let mut out = Vec::with_capacity(s * hw);
    for n in 0..s {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if x[(n * k + c) * hw + p] > x[(n * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    LabelMap::new([s, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 1]).unwrap();
        let labels = LabelMap::new([1, 1, 1], vec![0]).unwrap();
        let (loss, grad) = weighted_softmax_xent(&logits, &labels, &[1.0, 1.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let logits = Tensor::<f64>::from_vec(&[1, 3, 1, 1], vec![50.0, 0.0, 0.0]).unwrap();
        let labels = LabelMap::new([1, 1, 1], vec![0]).unwrap();
        let (loss, _) = weighted_softmax_xent(&logits, &labels, &[1.0; 3]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn label_out_of_range_is_error() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 1]).unwrap();
        let labels = LabelMap::new([1, 1, 1], vec![2]).unwrap();
        assert!(weighted_softmax_xent(&logits, &labels, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ignored_pixels_contribute_nothing() {
        let logits = Tensor::<f64>::from_vec(&[1, 2, 1, 2], vec![0.0, 3.0, 0.0, -1.0]).unwrap();
        let labels = LabelMap::new([1, 1, 2], vec![0, IGNORE_LABEL]).unwrap();
        let (loss, grad) = weighted_softmax_xent(&logits, &labels, &[1.0, 1.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad.data()[1], 0.0);
        assert_eq!(grad.data()[3], 0.0);
    }

    #[test]
    fn weights_scale_loss() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 2]).unwrap();
        let labels = LabelMap::new([1, 1, 2], vec![0, 1]).unwrap();
        let (loss, _) = weighted_softmax_xent(&logits, &labels, &[0.5, 1.5]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let (loss, _) = weighted_softmax_xent(&logits, &labels, &[2.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradient_sums_to_zero_over_classes() {
        let mut rng = crate::rng::Rng::new(9);
        let logits =
            Tensor::<f64>::from_vec(&[2, 4, 3, 3], (0..72).map(|_| 3.0 * rng.normal()).collect())
                .unwrap();
        let labels = LabelMap::new([2, 3, 3], (0..18).map(|i| (i % 4) as u8).collect()).unwrap();
        let (_, grad) = weighted_softmax_xent(&logits, &labels, &[0.5, 1.0, 1.2, 1.3]).unwrap();
        for n in 0..2 {
            for p in 0..9 {
                let s: f64 = (0..4).map(|c| grad.data()[(n * 4 + c) * 9 + p]).sum();
                assert!(s.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn predict_argmax() {
        let logits =
            Tensor::<f32>::from_vec(&[1, 3, 1, 2], vec![0.0, 5.0, 2.0, 5.0, 1.0, 0.0]).unwrap();
        assert_eq!(predict(&logits).unwrap().data(), &[1, 0]);
    }
}
