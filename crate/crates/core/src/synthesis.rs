//! Release of synthetic images: `G_p(G_ds(z''))` with `z''` standard normal.
//!
//! Pure post-processing of the two generators. Nothing here can reach the
//! private images, and the released manifest carries the DP stage's privacy
//! record unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gan::Generator;
use crate::io::ImageArchive;
use crate::manifest::{RunManifest, PrivacyRecord};

/// Unlabeled synthetic images in generator range.
pub type SyntheticDataset = ImageArchive;

/// Samples per independently seeded stream.
pub const SAMPLE_CHUNK: usize = 256;

pub fn synthesize(
    g_ds: &Generator,
    g_p: &Generator,
    n: usize,
    seed: u64,
    upstream: Option<&RunManifest>,
) -> Result<(SyntheticDataset, RunManifest)> {
    let upstream = upstream.ok_or_else(|| Error::Provenance("latent generator has no manifest".into()))?;
    let privacy = RunManifest::inherited_privacy(&[upstream])?;
    if g_ds.net.output_dim() != g_p.latent_dim {
        return Err(Error::invalid(format!(
            "latent generator emits {} values but the public generator expects {}",
            g_ds.net.output_dim(),
            g_p.latent_dim
        )));
    }
    let shape: [usize; 3] = match g_p.output_shape.as_slice() {
        [h, w, c] => [*h, *w, *c],
        other => return Err(Error::invalid(format!("public generator output {other:?} is not an image shape"))),
    };
    let images = sample_images(g_ds, g_p, n, seed);
    let mut manifest = RunManifest::new("synthesize", crate::manifest::config_hash(&(n, seed)));
    manifest.privacy = privacy;
    manifest
        .seed("sampling", seed)
        .metric("samples", n)
        .metric("latent_generator_checksum", g_ds.checksum())
        .metric("public_generator_checksum", g_p.checksum());
    Ok((SyntheticDataset { shape, images }, manifest))
}

/// Checks that a synthesis manifest still carries its parent's record.
pub fn privacy_preserved(parent: &RunManifest, synthesized: &RunManifest) -> bool {
    parent.privacy != PrivacyRecord::Public && parent.privacy == synthesized.privacy
}

fn sample_images(g_ds: &Generator, g_p: &Generator, n: usize, seed: u64) -> Vec<f32> {
    let prior = g_ds.prior();
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<Vec<f32>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            let mut out = Vec::with_capacity(count * g_p.net.output_dim());
            for _ in 0..count {
                let z = g_ds.generate(&prior.sample_with(&mut rng));
                out.extend(g_p.generate(&z).iter().map(|&v| v.clamp(-1.0, 1.0) as f32));
            }
            out
        })
        .collect();
    parts.concat()
}
