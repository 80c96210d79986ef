//! Architecture builders: tiny MLPs for desk-scale runs and DCGAN-style
//! convolutional networks for 32×32 images.

use super::{Architecture, LayerSpec};

/// Multi-layer perceptron with `activation` between hidden layers and an
/// optional output head.
pub fn mlp(
    id: &str,
    input: usize,
    hidden: &[usize],
    output: usize,
    activation: LayerSpec,
    head: Option<LayerSpec>,
) -> Architecture {
    let mut layers = Vec::new();
    let mut prev = input;
    for &h in hidden {
        layers.push(LayerSpec::Linear { inputs: prev, outputs: h });
        layers.push(activation.clone());
        prev = h;
    }
    layers.push(LayerSpec::Linear { inputs: prev, outputs: output });
    layers.extend(head);
    Architecture {
        id: id.to_string(),
        input_dim: input,
        layers,
    }
}

/// Generator: latent → 4×4×4w → 8×8×2w → 16×16×w → 32×32×channels, tanh head.
pub fn dcgan_generator(latent_dim: usize, channels: usize, width: usize) -> Architecture {
    let w = width;
    Architecture {
        id: format!("dcgan-g32-w{w}-c{channels}"),
        input_dim: latent_dim,
        layers: vec![
            LayerSpec::Linear { inputs: latent_dim, outputs: 4 * 4 * 4 * w },
            LayerSpec::Relu,
            LayerSpec::ConvTranspose2d { input: [4, 4, 4 * w], out_channels: 2 * w, kernel: 4, stride: 2, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::ConvTranspose2d { input: [8, 8, 2 * w], out_channels: w, kernel: 4, stride: 2, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::ConvTranspose2d { input: [16, 16, w], out_channels: channels, kernel: 4, stride: 2, padding: 1 },
            LayerSpec::Tanh,
        ],
    }
}

/// Convolutional trunk 32×32×channels → 4×4×4w, then a linear head with
/// `outputs` units. Used for critics (one output) and classifiers.
pub fn dcgan_encoder(id: &str, channels: usize, width: usize, outputs: usize) -> Architecture {
    let w = width;
    let slope = LayerSpec::LeakyRelu { slope: 0.2 };
    Architecture {
        id: format!("{id}-w{w}-c{channels}"),
        input_dim: 32 * 32 * channels,
        layers: vec![
            LayerSpec::Conv2d { input: [32, 32, channels], out_channels: w, kernel: 4, stride: 2, padding: 1 },
            slope.clone(),
            LayerSpec::Conv2d { input: [16, 16, w], out_channels: 2 * w, kernel: 4, stride: 2, padding: 1 },
            slope.clone(),
            LayerSpec::Conv2d { input: [8, 8, 2 * w], out_channels: 4 * w, kernel: 4, stride: 2, padding: 1 },
            slope,
            LayerSpec::Linear { inputs: 4 * 4 * 4 * w, outputs },
        ],
    }
}
