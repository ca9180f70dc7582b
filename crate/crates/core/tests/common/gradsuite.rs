//! Finite-difference checks over every differentiable op, layer and a miniature network.

use std::rc::Rc;

use mmformer::layers::{ConvFfn, ConvOutput, HetConv2d, HsiTokenizer, LidarTokenizer, QkvEmbed, TokenizerConfig};
use mmformer::model::{ModelConfig, Network};
use mmformer::msmhsa::{head_attention, msmhsa_forward, partition, reassemble, ScaleSet};
use mmformer::tensor::{conv2d, conv3d};
use mmformer::Tensor;

use super::{random, GradCheck, GradError};

pub struct Case {
    pub name: String,
    pub errors: Vec<GradError>,
}

impl Case {
    pub fn worst(&self) -> f64 {
        super::worst(&self.errors)
    }
}

fn case(name: &str, errors: Vec<GradError>) -> Case {
    Case {
        name: name.to_string(),
        errors,
    }
}

/// Positive inputs (for ops whose domain or kinks make signed data awkward).
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let t = random(shape, seed);
    let d = t.data().iter().map(|v| v.signum() * (0.1 + v.abs())).collect();
    Tensor::new(shape, d).unwrap()
}

pub fn op_cases() -> Vec<Case> {
    let g = GradCheck::default();
    let a = random(&[3, 4], 1);
    let b = random(&[3, 4], 2);
    let mut out = vec![
        case("add", g.inputs(&[a.clone(), b.clone()], |x| x[0].add(&x[1]))),
        case("sub", g.inputs(&[a.clone(), b.clone()], |x| x[0].sub(&x[1]))),
        case("mul", g.inputs(&[a.clone(), b.clone()], |x| x[0].mul(&x[1]))),
        case("scale", g.inputs(&[a.clone()], |x| Ok(x[0].scale(-1.7)))),
        case("add_scalar", g.inputs(&[a.clone()], |x| Ok(x[0].add_scalar(0.3)))),
        case("leaky_relu", g.inputs(&[away_from_zero(&[3, 4], 3)], |x| Ok(x[0].leaky_relu(0.2)))),
        case("sum", g.inputs(&[a.clone()], |x| Ok(x[0].sum()))),
        case("mean", g.inputs(&[a.clone()], |x| Ok(x[0].mean()))),
        case("reshape", g.inputs(&[random(&[2, 3, 4], 4)], |x| x[0].reshape(&[6, 4]))),
        case("permute", g.inputs(&[random(&[2, 3, 4], 5)], |x| x[0].permute(&[2, 0, 1]))),
        case("transpose", g.inputs(&[random(&[2, 3, 4], 6)], |x| x[0].transpose())),
        case("narrow", g.inputs(&[random(&[2, 5, 3], 7)], |x| x[0].narrow(1, 1, 3))),
        case(
            "concat",
            g.inputs(&[random(&[2, 2, 3], 8), random(&[2, 3, 3], 9)], |x| Tensor::concat(x, 1)),
        ),
        case("matmul", g.inputs(&[random(&[3, 5], 10), random(&[5, 2], 11)], |x| x[0].matmul(&x[1]))),
        case(
            "matmul_batched",
            g.inputs(&[random(&[2, 3, 4], 12), random(&[2, 4, 5], 13)], |x| x[0].matmul(&x[1])),
        ),
        case("add_bias", g.inputs(&[random(&[2, 3, 4], 14), random(&[3], 15)], |x| x[0].add_bias(&x[1], 1))),
        case("softmax_last", g.inputs(&[random(&[3, 5], 16)], |x| x[0].softmax(1))),
        case("softmax_inner", g.inputs(&[random(&[2, 4, 3], 17)], |x| x[0].softmax(1))),
        case("mean_axis", g.inputs(&[random(&[2, 3, 4], 18)], |x| x[0].mean_axis(1))),
        case(
            "layer_norm",
            g.inputs(&[random(&[2, 4, 3], 19), random(&[4], 20), random(&[4], 21)], |x| {
                x[0].layer_norm(1, &x[1], &x[2], 1e-5)
            }),
        ),
        case("cross_entropy", g.inputs(&[random(&[4, 3], 22)], |x| x[0].cross_entropy(&[0, 2, 1, 2]))),
        case(
            "scatter",
            g.inputs(&[random(&[4], 23)], |x| x[0].scatter(&[2, 3], Rc::new(vec![5, 0, 2, 3]))),
        ),
        case(
            "conv2d",
            g.inputs(&[random(&[2, 3, 5, 4], 24), random(&[4, 3, 3, 3], 25), random(&[4], 26)], |x| {
                conv2d(&x[0], &x[1], Some(&x[2]), (1, 1), 1)
            }),
        ),
        case(
            "conv2d_grouped",
            g.inputs(&[random(&[1, 4, 4, 4], 27), random(&[6, 2, 3, 3], 28)], |x| {
                conv2d(&x[0], &x[1], None, (1, 1), 2)
            }),
        ),
        case(
            "conv2d_pointwise",
            g.inputs(&[random(&[2, 3, 4, 4], 29), random(&[5, 3, 1, 1], 30), random(&[5], 31)], |x| {
                conv2d(&x[0], &x[1], Some(&x[2]), (0, 0), 1)
            }),
        ),
        case(
            "conv3d",
            g.inputs(&[random(&[2, 1, 6, 4, 4], 32), random(&[3, 1, 3, 3, 3], 33), random(&[3], 34)], |x| {
                conv3d(&x[0], &x[1], Some(&x[2]), (0, 1, 1))
            }),
        ),
    ];
    for l in [1, 2, 4] {
        out.push(case(
            &format!("partition_l{l}"),
            g.inputs(&[random(&[1, 2, 8, 8], 40 + l as u64)], move |x| partition(&x[0], l)),
        ));
        out.push(case(
            &format!("reassemble_l{l}"),
            g.inputs(&[random(&[l * l, 2, 8 / l, 8 / l], 50 + l as u64)], move |x| reassemble(&x[0], l)),
        ));
    }
    out
}

pub fn layer_cases() -> Vec<Case> {
    let g = GradCheck::default();
    let sampled = GradCheck {
        samples: Some(12),
        ..GradCheck::default()
    };
    let mut out = Vec::new();

    out.push(case(
        "hetconv2d",
        g.layer(&HetConv2d::specs("h", 8, 4, 2), &[random(&[2, 8, 4, 4], 60)], |p, x| {
            HetConv2d::bind(p, "h", 8, 4, 2)?.forward(&x[0])
        }),
    ));

    let tok = TokenizerConfig {
        hsi_bands: 5,
        lidar_bands: 2,
        conv3d_filters: 2,
        conv3d_kernel: [3, 3, 3],
        hetconv_part: 2,
        ..TokenizerConfig::default()
    };
    let t = tok.clone();
    out.push(case(
        "hsi_tokenizer",
        sampled.layer(&HsiTokenizer::specs("hsi", &tok), &[random(&[2, 5, 4, 4], 61)], move |p, x| {
            HsiTokenizer::bind(p, "hsi", &t)?.forward(&x[0])
        }),
    ));
    let t = tok.clone();
    out.push(case(
        "lidar_tokenizer",
        sampled.layer(&LidarTokenizer::specs("lidar", &tok), &[random(&[2, 2, 4, 4], 62)], move |p, x| {
            LidarTokenizer::bind(p, "lidar", &t)?.forward(&x[0])
        }),
    ));

    out.push(case(
        "qkv_embed",
        g.layer(&QkvEmbed::specs("e", 6, 4), &[random(&[1, 6, 4, 4], 63)], |p, x| {
            let (q, k, v) = QkvEmbed::bind(p, "e")?.forward(&x[0])?;
            Tensor::concat(&[q, k, v], 1)
        }),
    ));
    out.push(case(
        "conv_output",
        g.layer(&ConvOutput::specs("o", 3), &[random(&[2, 3, 4, 4], 64)], |p, x| {
            ConvOutput::bind(p, "o")?.forward(&x[0])
        }),
    ));
    out.push(case(
        "conv_ffn",
        g.layer(&ConvFfn::specs("f", 4, 2), &[random(&[2, 4, 3, 3], 65)], |p, x| {
            ConvFfn::bind(p, "f")?.forward(&x[0])
        }),
    ));

    let qkv = [random(&[1, 3, 8, 8], 70), random(&[1, 3, 8, 8], 71), random(&[1, 3, 8, 8], 72)];
    for l in [1, 2, 4] {
        for global in [false, true] {
            let name = format!("head_attention_l{l}{}", if global { "_global" } else { "" });
            out.push(case(
                &name,
                sampled.inputs(&qkv, move |x| head_attention(&x[0], &x[1], &x[2], l, global)),
            ));
        }
    }
    let qkv = [random(&[1, 6, 16, 16], 73), random(&[1, 6, 16, 16], 74), random(&[1, 6, 16, 16], 75)];
    let scales = ScaleSet::new(&[16, 4, 2]).unwrap();
    out.push(case(
        "msmhsa",
        sampled.inputs(&qkv, move |x| msmhsa_forward(&x[0], &x[1], &x[2], &scales, false)),
    ));
    out
}

/// Miniature network: 8 HSI bands, 12 embedding channels, one block, scales {16, 8}.
pub fn mini_config() -> ModelConfig {
    let mut cfg = ModelConfig::for_scene(8, 1, 3);
    cfg.tokenizer.conv3d_kernel = [3, 3, 3];
    cfg.tokenizer.embed_dim = 12;
    cfg.scales = ScaleSet::new(&[16, 8]).unwrap();
    cfg.depth = 1;
    cfg.seed = 11;
    cfg
}

pub fn model_case(cfg: &ModelConfig) -> Case {
    let params = mmformer::model::init(cfg).unwrap();
    let check = GradCheck {
        samples: Some(6),
        seed: 3,
        ..GradCheck::default()
    };
    let bands = cfg.tokenizer.hsi_bands;
    let hsi = random(&[2, bands, 16, 16], 80);
    let lidar = random(&[2, 1, 16, 16], 81);
    let errors = check.run(&params, &[hsi, lidar], |p, x| {
        Network::bind(p, cfg)?
            .forward(Some(&x[0]), Some(&x[1]))?
            .cross_entropy(&[2, 0])
    });
    case("miniature_model", errors)
}
