use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
///
/// Convolutions use HWC layout, matching how images are stored on disk.
/// Convolution weights are laid out `[out][ky][kx][in]` for [`LayerSpec::Conv2d`]
/// and `[in][ky][kx][out]` for [`LayerSpec::ConvTranspose2d`], followed by
/// one bias per output channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        /// (height, width, channels) of the input.
        input: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Linear { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv2d {
                input,
                out_channels,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                input,
                out_channels,
                kernel,
                ..
            } => input[2] * out_channels * kernel * kernel + out_channels,
            _ => 0,
        }
    }

    /// Fan-in used for weight initialization.
    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Linear { inputs, .. } => inputs,
            LayerSpec::Conv2d { input, kernel, .. } => input[2] * kernel * kernel,
            LayerSpec::ConvTranspose2d {
                input,
                kernel,
                stride,
                ..
            } => (input[2] * kernel * kernel / (stride * stride)).max(1),
            _ => 0,
        }
    }

    /// Number of weights (excluding biases), which come first in the block.
    pub(crate) fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Linear { inputs, outputs } => inputs * outputs,
            LayerSpec::Conv2d { .. } | LayerSpec::ConvTranspose2d { .. } => {
                self.param_count() - self.output_channels()
            }
            _ => 0,
        }
    }

    fn output_channels(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { out_channels, .. }
            | LayerSpec::ConvTranspose2d { out_channels, .. } => out_channels,
            LayerSpec::Linear { outputs, .. } => outputs,
            _ => 0,
        }
    }

    pub(crate) fn input_dim(&self, incoming: usize) -> usize {
        match *self {
            LayerSpec::Linear { inputs, .. } => inputs,
            LayerSpec::Conv2d { input, .. } | LayerSpec::ConvTranspose2d { input, .. } => {
                input.iter().product()
            }
            _ => incoming,
        }
    }

    /// Output dimension, or an error when the layer geometry is inconsistent.
    pub(crate) fn output_dim(&self, incoming: usize) -> Result<usize> {
        let expected = self.input_dim(incoming);
        if expected != incoming {
            return Err(Error::invalid(format!(
                "layer {self:?} expects {expected} inputs but receives {incoming}"
            )));
        }
        match *self {
            LayerSpec::Linear { outputs, .. } => Ok(outputs),
            LayerSpec::Conv2d { .. } | LayerSpec::ConvTranspose2d { .. } => {
                let [h, w, c] = self.output_shape()?;
                Ok(h * w * c)
            }
            _ => Ok(incoming),
        }
    }

    pub(crate) fn output_shape(&self) -> Result<[usize; 3]> {
        match *self {
            LayerSpec::Conv2d {
                input,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [h, w, _] = input;
                if stride == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::invalid(format!("bad conv geometry {self:?}")));
                }
                Ok([
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                    out_channels,
                ])
            }
            LayerSpec::ConvTranspose2d {
                input,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [h, w, _] = input;
                let oh = ((h - 1) * stride + kernel)
                    .checked_sub(2 * padding)
                    .filter(|&v| v > 0 && stride > 0);
                let ow = ((w - 1) * stride + kernel)
                    .checked_sub(2 * padding)
                    .filter(|&v| v > 0);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok([oh, ow, out_channels]),
                    _ => Err(Error::invalid(format!("bad transposed conv geometry {self:?}"))),
                }
            }
            _ => Err(Error::invalid("layer has no spatial shape")),
        }
    }

    pub(crate) fn forward(&self, params: &[f64], x: &[f64], out_dim: usize) -> Vec<f64> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => {
                let (w, b) = params.split_at(inputs * outputs);
                let mut y = b.to_vec();
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                y
            }
            LayerSpec::Conv2d {
                input: [h, w, ci],
                out_channels: co,
                kernel: k,
                stride: s,
                padding: p,
            } => {
                let [oh, ow, _] = self.output_shape().expect("validated geometry");
                let (weights, bias) = params.split_at(co * k * k * ci);
                let mut y = vec![0.0; out_dim];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let out = &mut y[(oy * ow + ox) * co..(oy * ow + ox + 1) * co];
                        out.copy_from_slice(bias);
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let px = &x[(iy as usize * w + ix as usize) * ci..][..ci];
                                for (c_out, acc) in out.iter_mut().enumerate() {
                                    let wk = &weights[((c_out * k + ky) * k + kx) * ci..][..ci];
                                    *acc += wk.iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                        }
                    }
                }
                y
            }
            LayerSpec::ConvTranspose2d {
                input: [h, w, ci],
                out_channels: co,
                kernel: k,
                stride: s,
                padding: p,
            } => {
                let [oh, ow, _] = self.output_shape().expect("validated geometry");
                let (weights, bias) = params.split_at(ci * k * k * co);
                let mut y = vec![0.0; out_dim];
                for chunk in y.chunks_mut(co) {
                    chunk.copy_from_slice(bias);
                }
                for iy in 0..h {
                    for ix in 0..w {
                        let px = &x[(iy * w + ix) * ci..][..ci];
                        for ky in 0..k {
                            let oy = (iy * s + ky) as isize - p as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * s + kx) as isize - p as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let out = &mut y[(oy as usize * ow + ox as usize) * co..][..co];
                                for (c_in, &xv) in px.iter().enumerate() {
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let wk = &weights[((c_in * k + ky) * k + kx) * co..][..co];
                                    for (acc, wv) in out.iter_mut().zip(wk) {
                                        *acc += wv * xv;
                                    }
                                }
                            }
                        }
                    }
                }
                y
            }
            LayerSpec::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::LeakyRelu { slope } => x
                .iter()
                .map(|&v| if v > 0.0 { v } else { slope * v })
                .collect(),
            LayerSpec::Tanh => x.iter().map(|v| v.tanh()).collect(),
            LayerSpec::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    /// Reverse pass. `x` and `y` are this layer's input and output from the
    /// forward trace. Parameter gradients are accumulated into `grad_params`
    /// when given; the gradient with respect to `x` is returned.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        grad_y: &[f64],
        grad_params: Option<&mut [f64]>,
    ) -> Vec<f64> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => {
                let w = &params[..inputs * outputs];
                let mut grad_x = vec![0.0; inputs];
                for (o, &g) in grad_y.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let row = &w[o * inputs..(o + 1) * inputs];
                    for (gx, wv) in grad_x.iter_mut().zip(row) {
                        *gx += g * wv;
                    }
                }
                if let Some(gp) = grad_params {
                    let (gw, gb) = gp.split_at_mut(inputs * outputs);
                    for (o, &g) in grad_y.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        for (gwv, xv) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                            *gwv += g * xv;
                        }
                        gb[o] += g;
                    }
                }
                grad_x
            }
            LayerSpec::Conv2d {
                input: [h, w, ci],
                out_channels: co,
                kernel: k,
                stride: s,
                padding: p,
            } => {
                let [oh, ow, _] = self.output_shape().expect("validated geometry");
                let weights = &params[..co * k * k * ci];
                let mut grad_x = vec![0.0; x.len()];
                let mut gp = grad_params;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g_out = &grad_y[(oy * ow + ox) * co..][..co];
                        if let Some(gp) = gp.as_deref_mut() {
                            let gb = &mut gp[co * k * k * ci..];
                            for (b, g) in gb.iter_mut().zip(g_out) {
                                *b += g;
                            }
                        }
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let base = (iy as usize * w + ix as usize) * ci;
                                for (c_out, &g) in g_out.iter().enumerate() {
                                    if g == 0.0 {
                                        continue;
                                    }
                                    let woff = ((c_out * k + ky) * k + kx) * ci;
                                    for c_in in 0..ci {
                                        grad_x[base + c_in] += g * weights[woff + c_in];
                                    }
                                    if let Some(gp) = gp.as_deref_mut() {
                                        for c_in in 0..ci {
                                            gp[woff + c_in] += g * x[base + c_in];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                grad_x
            }
            LayerSpec::ConvTranspose2d {
                input: [h, w, ci],
                out_channels: co,
                kernel: k,
                stride: s,
                padding: p,
            } => {
                let [oh, ow, _] = self.output_shape().expect("validated geometry");
                let weights = &params[..ci * k * k * co];
                let mut grad_x = vec![0.0; x.len()];
                let mut gp = grad_params;
                if let Some(gp) = gp.as_deref_mut() {
                    let gb = &mut gp[ci * k * k * co..];
                    for chunk in grad_y.chunks(co) {
                        for (b, g) in gb.iter_mut().zip(chunk) {
                            *b += g;
                        }
                    }
                }
                for iy in 0..h {
                    for ix in 0..w {
                        let base = (iy * w + ix) * ci;
                        for ky in 0..k {
                            let oy = (iy * s + ky) as isize - p as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ox = (ix * s + kx) as isize - p as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let g_out = &grad_y[(oy as usize * ow + ox as usize) * co..][..co];
                                for c_in in 0..ci {
                                    let woff = ((c_in * k + ky) * k + kx) * co;
                                    let wk = &weights[woff..woff + co];
                                    grad_x[base + c_in] +=
                                        wk.iter().zip(g_out).map(|(a, b)| a * b).sum::<f64>();
                                    if let Some(gp) = gp.as_deref_mut() {
                                        let xv = x[base + c_in];
                                        for (gw, g) in gp[woff..woff + co].iter_mut().zip(g_out) {
                                            *gw += g * xv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                grad_x
            }
            LayerSpec::Relu => x
                .iter()
                .zip(grad_y)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::LeakyRelu { slope } => x
                .iter()
                .zip(grad_y)
                .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                .collect(),
            LayerSpec::Tanh => y.iter().zip(grad_y).map(|(t, g)| g * (1.0 - t * t)).collect(),
            LayerSpec::Sigmoid => y.iter().zip(grad_y).map(|(s, g)| g * s * (1.0 - s)).collect(),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
