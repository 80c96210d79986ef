//! Seeded fixtures shared by the benchmarks.

use gomi_core::nn::{arch, LayerSpec, Network};
use gomi_core::Generator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// An untrained MLP generator with the toy pipeline's shape.
pub fn generator(latent_dim: usize, output_dim: usize, hidden: &[usize], seed: u64) -> Generator {
    let a = arch::mlp("mlp-generator", latent_dim, hidden, output_dim, LayerSpec::Relu, Some(LayerSpec::Tanh));
    let net = Network::init(a, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid architecture");
    Generator::new(net, vec![output_dim]).expect("valid generator")
}

/// `n` rows of standard normal entries.
pub fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
}
