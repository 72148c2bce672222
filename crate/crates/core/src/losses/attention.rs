//! Forward pass of the mutual attention unit: channel attention, spatial
//! attention, a 1x1 identity path, and a learnable mixing scale.

use super::tensor::Tensor3;
use crate::error::{Error, Result};

pub const SPATIAL_KERNEL: usize = 7;

/// Hidden width of the channel MLP for `channels` inputs (ratio 1/16).
pub fn default_hidden(channels: usize) -> usize {
    (channels / 16).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MauWeights {
    pub channels: usize,
    pub hidden: usize,
    /// `hidden x channels`, row-major.
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    /// `channels x hidden`, row-major.
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: Vec<f64>,
    /// `2 x 7 x 7`: plane 0 sees the channel mean, plane 1 the channel max.
    pub conv7: Vec<f64>,
    pub conv7_bias: f64,
    /// `channels x channels`, output-major.
    pub conv1: Vec<f64>,
    pub conv1_bias: Vec<f64>,
    pub beta: f64,
}

impl MauWeights {
    /// All-zero attention weights, identity 1x1 path, `beta = 0`.
    pub fn identity(channels: usize) -> Self {
        let hidden = default_hidden(channels);
        let mut conv1 = vec![0.0; channels * channels];
        for c in 0..channels {
            conv1[c * channels + c] = 1.0;
        }
        Self {
            channels,
            hidden,
            mlp_w1: vec![0.0; hidden * channels],
            mlp_b1: vec![0.0; hidden],
            mlp_w2: vec![0.0; channels * hidden],
            mlp_b2: vec![0.0; channels],
            conv7: vec![0.0; 2 * SPATIAL_KERNEL * SPATIAL_KERNEL],
            conv7_bias: 0.0,
            conv1,
            conv1_bias: vec![0.0; channels],
            beta: 0.0,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let (c, h) = (self.channels, self.hidden);
        let checks = [
            ("channels", c, channels),
            ("mlp_w1", self.mlp_w1.len(), h * c),
            ("mlp_b1", self.mlp_b1.len(), h),
            ("mlp_w2", self.mlp_w2.len(), c * h),
            ("mlp_b2", self.mlp_b2.len(), c),
            (
                "conv7",
                self.conv7.len(),
                2 * SPATIAL_KERNEL * SPATIAL_KERNEL,
            ),
            ("conv1", self.conv1.len(), c * c),
            ("conv1_bias", self.conv1_bias.len(), c),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Validation(format!(
                    "attention weight {name} has size {got}, expected {want}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MauOutput {
    pub output: Tensor3,
    /// Per-channel attention in (0, 1).
    pub channel_attention: Vec<f64>,
    /// Per-pixel attention in (0, 1), `height x width`.
    pub spatial_attention: Vec<f64>,
    pub identity: Tensor3,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mlp(w: &MauWeights, x: &[f64]) -> Vec<f64> {
    let (c, h) = (w.channels, w.hidden);
    let hidden: Vec<f64> = (0..h)
        .map(|i| {
            let z = w.mlp_b1[i] + (0..c).map(|j| w.mlp_w1[i * c + j] * x[j]).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    (0..c)
        .map(|o| w.mlp_b2[o] + (0..h).map(|i| w.mlp_w2[o * h + i] * hidden[i]).sum::<f64>())
        .collect()
}

pub fn mau_forward(features: &Tensor3, weights: &MauWeights) -> Result<MauOutput> {
    let (channels, height, width) = features.shape();
    weights.validate(channels)?;
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::Validation(
            "attention input must be non-empty".into(),
        ));
    }
    let plane = height * width;

    // channel attention from global average and max pooling
    let avg: Vec<f64> = (0..channels)
        .map(|c| features.channel(c).iter().sum::<f64>() / plane as f64)
        .collect();
    let max: Vec<f64> = (0..channels)
        .map(|c| {
            features
                .channel(c)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let channel_attention: Vec<f64> = mlp(weights, &avg)
        .into_iter()
        .zip(mlp(weights, &max))
        .map(|(a, m)| sigmoid(a + m))
        .collect();

    // spatial attention from per-pixel channel mean and max
    let mut pooled = vec![0.0; 2 * plane];
    for p in 0..plane {
        let mut sum = 0.0;
        let mut mx = f64::NEG_INFINITY;
        for c in 0..channels {
            let v = features.data()[c * plane + p];
            sum += v;
            mx = mx.max(v);
        }
        pooled[p] = sum / channels as f64;
        pooled[plane + p] = mx;
    }
    let k = SPATIAL_KERNEL as isize;
    let half = k / 2;
    let mut spatial_attention = vec![0.0; plane];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let mut acc = weights.conv7_bias;
            for ch in 0..2 {
                for i in 0..k {
                    let rr = r + i - half;
                    if rr < 0 || rr >= height as isize {
                        continue;
                    }
                    for j in 0..k {
                        let cc = c + j - half;
                        if cc < 0 || cc >= width as isize {
                            continue;
                        }
                        let kw = weights.conv7
                            [(ch * SPATIAL_KERNEL + i as usize) * SPATIAL_KERNEL + j as usize];
                        acc += kw * pooled[ch * plane + rr as usize * width + cc as usize];
                    }
                }
            }
            spatial_attention[r as usize * width + c as usize] = sigmoid(acc);
        }
    }

    // 1x1 identity path
    let mut identity = Tensor3::zeros(channels, height, width);
    for o in 0..channels {
        let out = &mut identity.data_mut()[o * plane..(o + 1) * plane];
        out.iter_mut().for_each(|v| *v = weights.conv1_bias[o]);
        for i in 0..channels {
            let wgt = weights.conv1[o * channels + i];
            for (v, &x) in out.iter_mut().zip(features.channel(i)) {
                *v += wgt * x;
            }
        }
    }

    let mut output = identity.clone();
    for (c, &fc) in channel_attention.iter().enumerate() {
        let out = &mut output.data_mut()[c * plane..(c + 1) * plane];
        for ((v, &x), &fs) in out
            .iter_mut()
            .zip(features.channel(c))
            .zip(&spatial_attention)
        {
            *v += (x * fc + x * fs) * weights.beta;
        }
    }

    Ok(MauOutput {
        output,
        channel_attention,
        spatial_attention,
        identity,
    })
}
