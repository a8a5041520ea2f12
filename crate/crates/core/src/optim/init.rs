use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Zero-mean normal weights with standard deviation `sqrt(2 / fan_in)`,
/// `fan_in = in_channels · kh · kw`, for a `[oc, ic, kh, kw]` filter bank.
pub fn he_fan_in_init<T: Real>(shape: &[usize], rng: &mut Rng) -> Result<Tensor<T>> {
    let &[_, ic, kh, kw] = shape else {
        return Err(Error::shape(format!(
            "He init expects a rank-4 filter shape, got {shape:?}"
        )));
    };
    let fan_in = ic * kh * kw;
    if fan_in == 0 {
        return Err(Error::invalid("zero fan-in"));
    }
    let std = he_std(fan_in);
    let len = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..len).map(|_| T::from_f64(std * rng.normal())).collect(),
    )
}

pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_values() {
        assert!((he_std(576) - 0.058_925_565_098_878_96).abs() < 1e-15);
        assert_eq!(he_std(2), 1.0);
    }

    #[test]
    fn empirical_std_within_two_percent() {
        // 64 x 64 x 3 x 3 = 36864 draws per bank; three banks > 1e5 samples
        let mut rng = Rng::new(2024);
        let mut xs = Vec::new();
        for _ in 0..3 {
            xs.extend(
                he_fan_in_init::<f64>(&[64, 64, 3, 3], &mut rng)
                    .unwrap()
                    .into_vec(),
            );
        }
        assert!(xs.len() >= 100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let target: f64 = 2.0 / 576.0;
        assert!((var.sqrt() / target.sqrt() - 1.0).abs() < 0.02);
        assert!(
            (var / target - 1.0).abs() < 0.02,
            "variance {var} vs {target}"
        );
    }

    #[test]
    fn deterministic_for_seed() {
        let a = he_fan_in_init::<f32>(&[4, 3, 3, 3], &mut Rng::new(7)).unwrap();
        let b = he_fan_in_init::<f32>(&[4, 3, 3, 3], &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(he_fan_in_init::<f32>(&[4, 3, 3], &mut Rng::new(0)).is_err());
        assert!(he_fan_in_init::<f32>(&[4, 0, 3, 3], &mut Rng::new(0)).is_err());
    }
}
