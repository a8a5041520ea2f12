use super::Dataset;
use crate::error::{Error, Result};
use crate::optim::normalize_class_weights;

/// Constant in the ENet class weighting `w_k = 1 / ln(c + f_k)`.
pub const ENET_C: f64 = 1.02;

/// Fraction of all pixels carrying each class.
pub fn class_frequencies(set: &Dataset) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::invalid("class frequencies of an empty set"));
    }
    let mut counts = vec![0u64; set.classes];
    for &l in set.labels() {
        counts[l as usize] += 1;
    }
    let total = set.labels().len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / total).collect())
}

/// ENet weights `1 / ln(c + f_k)`, rescaled to mean 1.
pub fn enet_class_weights(freqs: &[f64], c: f64) -> Result<Vec<f64>> {
    if freqs.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid("class frequencies must lie in [0, 1]"));
    }
    if c <= 1.0 {
        return Err(Error::invalid("ENet constant must exceed 1"));
    }
    let raw: Vec<f64> = freqs.iter().map(|&f| 1.0 / (c + f).ln()).collect();
    normalize_class_weights(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(labels: Vec<u8>, classes: usize) -> Dataset {
        let px = labels.len();
        Dataset::new(1, px, classes, vec![0.0; 3 * px], labels).unwrap()
    }

    #[test]
    fn all_background() {
        assert_eq!(
            class_frequencies(&set(vec![0; 8], 5)).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn half_and_half() {
        let f = class_frequencies(&set(vec![0, 1, 0, 1, 1, 0], 2)).unwrap();
        assert_eq!(f, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_set_is_error() {
        let empty = Dataset::new(2, 2, 2, vec![], vec![]).unwrap();
        assert!(class_frequencies(&empty).is_err());
    }

    #[test]
    fn single_class_weight() {
        let raw = 1.0 / (2.02f64).ln();
        assert!((raw - 1.4221).abs() < 1e-3);
        assert_eq!(enet_class_weights(&[1.0], ENET_C).unwrap(), vec![1.0]);
    }

    #[test]
    fn rarer_class_weighs_more_and_mean_is_one() {
        let w = enet_class_weights(&[0.9, 0.1], ENET_C).unwrap();
        assert!(w[1] > w[0]);
        let w = enet_class_weights(&[0.6, 0.25, 0.1, 0.04, 0.01], ENET_C).unwrap();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!((w.iter().sum::<f64>() / 5.0 - 1.0).abs() <= 1e-12);
    }
}
