//! Convolutional building blocks: the HSI and LiDAR tokenizers, the 1×1
//! Q/K/V embedding, the 3×3 attention output layer and the convolutional FFN.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::model::params::{Bound, Init, ParamSpec};
use crate::tensor::{conv2d, conv3d, Tensor};

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Channels produced by each tokenizer.
pub const TOKEN_CHANNELS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerConfig {
    pub hsi_bands: usize,
    pub lidar_bands: usize,
    pub conv3d_filters: usize,
    /// (spectral, height, width); spatial extents are same-padded.
    pub conv3d_kernel: [usize; 3],
    /// 1/`hetconv_part` of each filter's input channels get 3×3 kernels.
    pub hetconv_part: usize,
    pub token_channels: usize,
    pub embed_dim: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            hsi_bands: 63,
            lidar_bands: 1,
            conv3d_filters: 8,
            conv3d_kernel: [9, 3, 3],
            hetconv_part: 4,
            token_channels: TOKEN_CHANNELS,
            embed_dim: 96,
        }
    }
}

impl TokenizerConfig {
    /// Spectral length left after the unpadded Conv3D.
    pub fn reduced_bands(&self) -> usize {
        (self.hsi_bands + 1).saturating_sub(self.conv3d_kernel[0])
    }

    /// Channels entering HetConv2D once filter maps and spectra are merged.
    pub fn merged_channels(&self) -> usize {
        self.conv3d_filters * self.reduced_bands()
    }

    /// Checks the HSI branch; `need_hsi`/`need_lidar` select which bands must be present.
    pub fn validate(&self, need_hsi: bool, need_lidar: bool) -> Result<()> {
        if self.token_channels != TOKEN_CHANNELS {
            return Err(Error::config(
                "token_channels",
                format!("must be {TOKEN_CHANNELS}, got {}", self.token_channels),
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim", "must be positive"));
        }
        if need_lidar && self.lidar_bands == 0 {
            return Err(Error::config("lidar_bands", "must be at least 1"));
        }
        if need_hsi {
            let [ks, kh, kw] = self.conv3d_kernel;
            if ks == 0 || kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::config(
                    "conv3d_kernel",
                    "spectral extent must be positive and spatial extents odd",
                ));
            }
            if self.hsi_bands < ks {
                return Err(Error::config(
                    "hsi_bands",
                    format!("{} bands is fewer than the Conv3D spectral kernel {ks}", self.hsi_bands),
                ));
            }
            if self.conv3d_filters == 0 {
                return Err(Error::config("conv3d_filters", "must be positive"));
            }
            let p = self.hetconv_part;
            if p == 0 || self.merged_channels() % p != 0 || self.token_channels % p != 0 {
                return Err(Error::config(
                    "hetconv_part",
                    format!(
                        "{p} must divide both {} merged channels and {} output channels",
                        self.merged_channels(),
                        self.token_channels
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn kaiming(fan_in: usize) -> Init {
    Init::KaimingUniform { fan_in }
}

fn conv_specs(prefix: &str, c_out: usize, c_in: usize, k: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.weight"), &[c_out, c_in, k, k], kaiming(c_in * k * k)),
        ParamSpec::new(format!("{prefix}.bias"), &[c_out], Init::Zeros),
    ]
}

/// Square same-padded 2-D convolution with bias.
#[derive(Clone)]
pub struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2dLayer {
    pub fn bind(params: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: params.get(&format!("{prefix}.weight"))?,
            bias: params.get(&format!("{prefix}.bias"))?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pad = self.weight.shape()[2] / 2;
        conv2d(x, &self.weight, Some(&self.bias), (pad, pad), 1)
    }
}

/// Heterogeneous 3×3/1×1 convolution. Filter `j` belongs to group
/// `j / (C_out / P)`; it applies 3×3 kernels to that group's `C_in / P`
/// input channels and 1×1 kernels to every other input channel.
#[derive(Clone)]
pub struct HetConv2d {
    spatial: Tensor,
    pointwise: Tensor,
    bias: Tensor,
    part: usize,
    scatter_index: Rc<Vec<usize>>,
    c_in: usize,
    c_out: usize,
}

impl HetConv2d {
    pub fn specs(prefix: &str, c_in: usize, c_out: usize, part: usize) -> Vec<ParamSpec> {
        let per_group = c_in / part;
        let fan_in = per_group * 9 + (c_in - per_group);
        vec![
            ParamSpec::new(format!("{prefix}.spatial"), &[c_out, per_group, 3, 3], kaiming(fan_in)),
            ParamSpec::new(format!("{prefix}.pointwise"), &[c_out, c_in - per_group], kaiming(fan_in)),
            ParamSpec::new(format!("{prefix}.bias"), &[c_out], Init::Zeros),
        ]
    }

    /// `C_out·(C_in/P·9 + C_in·(1 − 1/P)) + C_out`.
    pub fn param_count(c_in: usize, c_out: usize, part: usize) -> usize {
        let per_group = c_in / part;
        c_out * (per_group * 9 + (c_in - per_group)) + c_out
    }

    pub fn bind(params: &Bound, prefix: &str, c_in: usize, c_out: usize, part: usize) -> Result<Self> {
        if part == 0 || c_in % part != 0 || c_out % part != 0 {
            return Err(Error::config(
                "hetconv_part",
                format!("{part} must divide {c_in} input and {c_out} output channels"),
            ));
        }
        let per_group = c_in / part;
        let filters_per_group = c_out / part;
        let mut index = Vec::with_capacity(c_out * (c_in - per_group));
        for j in 0..c_out {
            let grp = j / filters_per_group;
            let skip = grp * per_group..(grp + 1) * per_group;
            index.extend((0..c_in).filter(|c| !skip.contains(c)).map(|c| j * c_in + c));
        }
        Ok(Self {
            spatial: params.get(&format!("{prefix}.spatial"))?,
            pointwise: params.get(&format!("{prefix}.pointwise"))?,
            bias: params.get(&format!("{prefix}.bias"))?,
            part,
            scatter_index: Rc::new(index),
            c_in,
            c_out,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let grouped = conv2d(x, &self.spatial, None, (1, 1), self.part)?;
        let dense = self
            .pointwise
            .scatter(&[self.c_out, self.c_in, 1, 1], Rc::clone(&self.scatter_index))?;
        let point = conv2d(x, &dense, Some(&self.bias), (0, 0), 1)?;
        grouped.add(&point)
    }
}

/// Conv3D → LeakyReLU → merge (filters × spectra) → HetConv2D → LeakyReLU.
#[derive(Clone)]
pub struct HsiTokenizer {
    conv3d_weight: Tensor,
    conv3d_bias: Tensor,
    hetconv: HetConv2d,
    cfg: TokenizerConfig,
}

impl HsiTokenizer {
    pub fn specs(prefix: &str, cfg: &TokenizerConfig) -> Vec<ParamSpec> {
        let [ks, kh, kw] = cfg.conv3d_kernel;
        let f = cfg.conv3d_filters;
        let mut specs = vec![
            ParamSpec::new(format!("{prefix}.conv3d.weight"), &[f, 1, ks, kh, kw], kaiming(ks * kh * kw)),
            ParamSpec::new(format!("{prefix}.conv3d.bias"), &[f], Init::Zeros),
        ];
        specs.extend(HetConv2d::specs(
            &format!("{prefix}.hetconv"),
            cfg.merged_channels(),
            cfg.token_channels,
            cfg.hetconv_part,
        ));
        specs
    }

    pub fn bind(params: &Bound, prefix: &str, cfg: &TokenizerConfig) -> Result<Self> {
        Ok(Self {
            conv3d_weight: params.get(&format!("{prefix}.conv3d.weight"))?,
            conv3d_bias: params.get(&format!("{prefix}.conv3d.bias"))?,
            hetconv: HetConv2d::bind(
                params,
                &format!("{prefix}.hetconv"),
                cfg.merged_channels(),
                cfg.token_channels,
                cfg.hetconv_part,
            )?,
            cfg: cfg.clone(),
        })
    }

    /// `[B, S, H, W]` → `[B, 64, H, W]`.
    pub fn forward(&self, cube: &Tensor) -> Result<Tensor> {
        let [b, s, h, w] = dims4("hsi_tokenize", cube)?;
        if s < self.cfg.conv3d_kernel[0] {
            return Err(Error::config(
                "hsi_bands",
                format!("{s} bands is fewer than the Conv3D spectral kernel {}", self.cfg.conv3d_kernel[0]),
            ));
        }
        if s != self.cfg.hsi_bands {
            return Err(Error::Dimension {
                op: "hsi_tokenize",
                axis: 1,
                expected: self.cfg.hsi_bands,
                found: s,
            });
        }
        let [_, kh, kw] = self.cfg.conv3d_kernel;
        let x = cube.reshape(&[b, 1, s, h, w])?;
        let y = conv3d(&x, &self.conv3d_weight, Some(&self.conv3d_bias), (0, kh / 2, kw / 2))?
            .leaky_relu(LEAKY_SLOPE);
        let merged = y.reshape(&[b, self.cfg.merged_channels(), h, w])?;
        Ok(self.hetconv.forward(&merged)?.leaky_relu(LEAKY_SLOPE))
    }
}

/// 3×3 same-padded Conv2D from the LiDAR bands to 64 channels, LeakyReLU.
#[derive(Clone)]
pub struct LidarTokenizer {
    conv: Conv2dLayer,
    bands: usize,
}

impl LidarTokenizer {
    pub fn specs(prefix: &str, cfg: &TokenizerConfig) -> Vec<ParamSpec> {
        conv_specs(&format!("{prefix}.conv"), cfg.token_channels, cfg.lidar_bands, 3)
    }

    pub fn bind(params: &Bound, prefix: &str, cfg: &TokenizerConfig) -> Result<Self> {
        Ok(Self {
            conv: Conv2dLayer::bind(params, &format!("{prefix}.conv"))?,
            bands: cfg.lidar_bands,
        })
    }

    pub fn forward(&self, cube: &Tensor) -> Result<Tensor> {
        let [_, l, _, _] = dims4("lidar_tokenize", cube)?;
        if l != self.bands {
            return Err(Error::Dimension {
                op: "lidar_tokenize",
                axis: 1,
                expected: self.bands,
                found: l,
            });
        }
        Ok(self.conv.forward(cube)?.leaky_relu(LEAKY_SLOPE))
    }
}

/// Three independent 1×1 convolutions producing Q, K and V.
#[derive(Clone)]
pub struct QkvEmbed {
    pub q: Conv2dLayer,
    pub k: Conv2dLayer,
    pub v: Conv2dLayer,
}

impl QkvEmbed {
    pub fn specs(prefix: &str, c_in: usize, embed_dim: usize) -> Vec<ParamSpec> {
        ["q", "k", "v"]
            .iter()
            .flat_map(|n| conv_specs(&format!("{prefix}.{n}"), embed_dim, c_in, 1))
            .collect()
    }

    pub fn bind(params: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            q: Conv2dLayer::bind(params, &format!("{prefix}.q"))?,
            k: Conv2dLayer::bind(params, &format!("{prefix}.k"))?,
            v: Conv2dLayer::bind(params, &format!("{prefix}.v"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let [_, c, _, _] = dims4("qkv_embed", x)?;
        if c != self.q.in_channels() {
            return Err(Error::Dimension {
                op: "qkv_embed",
                axis: 1,
                expected: self.q.in_channels(),
                found: c,
            });
        }
        Ok((self.q.forward(x)?, self.k.forward(x)?, self.v.forward(x)?))
    }
}

/// 3×3 same-padded Conv2D followed by LeakyReLU(0.2).
#[derive(Clone)]
pub struct ConvOutput {
    conv: Conv2dLayer,
}

impl ConvOutput {
    pub fn specs(prefix: &str, embed_dim: usize) -> Vec<ParamSpec> {
        conv_specs(prefix, embed_dim, embed_dim, 3)
    }

    pub fn bind(params: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            conv: Conv2dLayer::bind(params, prefix)?,
        })
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        Ok(self.conv.forward(h)?.leaky_relu(LEAKY_SLOPE))
    }
}

/// Channel layer norm → 1×1 (C→rC) → LeakyReLU → 1×1 (rC→C). The caller adds the residual.
#[derive(Clone)]
pub struct ConvFfn {
    gamma: Tensor,
    beta: Tensor,
    fc1: Conv2dLayer,
    fc2: Conv2dLayer,
}

impl ConvFfn {
    pub fn specs(prefix: &str, embed_dim: usize, hidden_ratio: usize) -> Vec<ParamSpec> {
        let hidden = embed_dim * hidden_ratio;
        let mut specs = vec![
            ParamSpec::new(format!("{prefix}.norm.gamma"), &[embed_dim], Init::Ones),
            ParamSpec::new(format!("{prefix}.norm.beta"), &[embed_dim], Init::Zeros),
        ];
        specs.extend(conv_specs(&format!("{prefix}.fc1"), hidden, embed_dim, 1));
        specs.extend(conv_specs(&format!("{prefix}.fc2"), embed_dim, hidden, 1));
        specs
    }

    pub fn bind(params: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: params.get(&format!("{prefix}.norm.gamma"))?,
            beta: params.get(&format!("{prefix}.norm.beta"))?,
            fc1: Conv2dLayer::bind(params, &format!("{prefix}.fc1"))?,
            fc2: Conv2dLayer::bind(params, &format!("{prefix}.fc2"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let normed = x.layer_norm(1, &self.gamma, &self.beta, 1e-5)?;
        let hidden = self.fc1.forward(&normed)?.leaky_relu(LEAKY_SLOPE);
        self.fc2.forward(&hidden)
    }
}

pub(crate) fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::shape(op, format!("expected a [B, C, H, W] tensor, got {s:?}"))),
    }
}
