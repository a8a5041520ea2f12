use crate::error::{Error, Result};

/// Rescales positive weights so that their mean is exactly 1, i.e. they sum
/// to the number of classes.
pub fn normalize_class_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::invalid("no class weights"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::invalid(format!(
            "class weights must be positive and finite, got {w}"
        )));
    }
    let k = weights.len() as f64;
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w * k / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn hand_example() {
        assert!(close(
            &normalize_class_weights(&[2., 4., 6.]).unwrap(),
            &[0.5, 1.0, 1.5],
            1e-15
        ));
        assert_eq!(normalize_class_weights(&[3.0; 4]).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(normalize_class_weights(&[1.0, 0.0]).is_err());
        assert!(normalize_class_weights(&[1.0, -2.0]).is_err());
        assert!(normalize_class_weights(&[]).is_err());
    }

    proptest! {
        #[test]
        fn mean_one_idempotent_scale_invariant(
            w in proptest::collection::vec(0.01f64..100.0, 1..20),
            c in 0.001f64..1000.0,
        ) {
            let n = normalize_class_weights(&w).unwrap();
            let mean = n.iter().sum::<f64>() / n.len() as f64;
            prop_assert!((mean - 1.0).abs() <= 1e-12);
            prop_assert!(close(&normalize_class_weights(&n).unwrap(), &n, 1e-12));
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            prop_assert!(close(&normalize_class_weights(&scaled).unwrap(), &n, 1e-12));
        }
    }
}
