use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    z.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Gradient gated on the forward *output*: zero wherever the input was `<= 0`,
/// including exactly at zero.
pub fn relu_backward<T: Real>(out: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    out.zip_map(grad_out, |y, g| if y > T::zero() { g } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let z = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&z).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn gradient_gate() {
        let z = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::full(&[3], 5.0).unwrap();
        assert_eq!(
            relu_backward(&relu(&z), &g).unwrap().data(),
            &[0.0, 0.0, 5.0]
        );

        let neg = Tensor::<f64>::from_vec(&[2], vec![-3.0, -0.1]).unwrap();
        let y = relu(&neg);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&y, &Tensor::full(&[2], 1.0).unwrap())
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
