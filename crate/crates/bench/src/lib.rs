//! Fixtures shared by the criterion benches.

use agcnet::data::{generate, Dataset, DatasetSpec};
use agcnet::network::{Network, NetworkSpec, NormMode};
use agcnet::optim::sgd::SgdState;
use agcnet::trainer::dataset_class_weights;
use agcnet::{Rng, Tensor};

/// Random `[s, c, h, w]` pre-activation tensor.
pub fn activation(s: usize, c: usize, hw: usize, seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    let n = s * c * hw * hw;
    Tensor::from_vec(
        &[s, c, hw, hw],
        (0..n).map(|_| rng.normal() as f32).collect(),
    )
    .expect("valid shape")
}

/// Everything one training step needs, identical across norm modes except
/// for the mode itself.
pub struct StepFixture {
    pub network: Network<f32>,
    pub sgd: SgdState<f32>,
    pub data: Dataset,
    pub weights: Vec<f32>,
    pub batch: Vec<usize>,
}

pub fn step_fixture(mode: NormMode, minibatch: usize, size: usize) -> StepFixture {
    let widths = [16, 32, 64, 64];
    let spec = DatasetSpec {
        height: size,
        width: size,
        n_train: minibatch,
        n_val: 0,
        ..DatasetSpec::default()
    };
    let (data, _) = generate(&spec).expect("valid dataset spec");
    let weights = dataset_class_weights(&data)
        .expect("non-empty data")
        .iter()
        .map(|&w| w as f32)
        .collect();
    let net_spec = NetworkSpec::encoder_decoder(3, spec.classes, &widths);
    let network = Network::build(&net_spec, mode, &mut Rng::new(0), false).expect("valid network");
    StepFixture {
        network,
        sgd: SgdState::new(0.02, 0.9).expect("valid lr"),
        data,
        weights,
        batch: (0..minibatch).collect(),
    }
}
