use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{conv2d_ref, Conv2dParams, Tensor};

pub(crate) fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"))
}

fn load(name: &str) -> ModelConfig {
    ModelConfig::from_file(config_path(name)).unwrap()
}

fn random_input(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn fold_identity_bn_keeps_weights() {
    let mut g = build_model(&load("toy-mbconv"), 0).unwrap();
    for l in &mut g.layers {
        if let Some(bn) = &mut l.bn {
            let n = bn.gamma.len();
            *bn = BatchNorm { gamma: vec![1.0; n], beta: vec![0.0; n], mean: vec![0.0; n], var: vec![1.0; n], eps: 0.0 };
        }
    }
    let f = fold_bn(&g).unwrap();
    for (a, b) in g.layers.iter().zip(&f.layers) {
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.bias, b.bias);
        assert!(!b.spec.has_bn && b.bn.is_none());
    }
}

#[test]
fn fold_scalar_algebra() {
    let mut g = build_model(&load("toy-pwconv"), 0).unwrap();
    let l = &mut g.layers[0];
    let n = l.spec.out_channels;
    l.bn = Some(BatchNorm { gamma: vec![2.0; n], beta: vec![1.0; n], mean: vec![0.0; n], var: vec![1.0; n], eps: 0.0 });
    let f = fold_bn(&g).unwrap();
    let (w0, w1) = (g.layers[0].weight.as_ref().unwrap(), f.layers[0].weight.as_ref().unwrap());
    for (a, b) in w0.data().iter().zip(w1.data()) {
        assert_eq!(*b, 2.0 * a);
    }
    for (a, b) in g.layers[0].bias.iter().zip(&f.layers[0].bias) {
        assert_eq!(*b, 2.0 * a + 1.0);
    }
}

#[test]
fn fold_rejects_nonpositive_variance() {
    let mut g = build_model(&load("toy-pwconv"), 0).unwrap();
    g.layers[0].bn.as_mut().unwrap().var[3] = 0.0;
    assert!(fold_bn(&g).is_err());
}

#[test]
fn fold_preserves_forward() {
    for name in ["toy-mbconv", "toy-msa"] {
        let g = build_model(&load(name), 5).unwrap();
        let f = fold_bn(&g).unwrap();
        for s in 0..4 {
            let x = random_input(vec![1, 3, 16, 16], s);
            let a = forward_float(&g, &x).unwrap().logits;
            let b = forward_float(&f, &x).unwrap().logits;
            assert!(a.max_abs_diff(&b).unwrap() < 1e-4, "{name}");
        }
    }
}

#[test]
fn zero_model_gives_zero_logits() {
    let mut g = fold_bn(&build_model(&load("toy-msa"), 0).unwrap()).unwrap();
    for l in &mut g.layers {
        if let Some(w) = &mut l.weight {
            *w = Tensor::zeros(w.shape().to_vec()).unwrap();
        }
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let out = forward_float(&g, &Tensor::zeros(vec![2, 3, 16, 16]).unwrap()).unwrap();
    assert_eq!(out.logits.shape(), &[2, 10]);
    assert!(out.logits.data().iter().all(|&x| x == 0.0));
}

#[test]
fn toy_mbconv_matches_hand_composition() {
    let g = fold_bn(&build_model(&load("toy-mbconv"), 2).unwrap()).unwrap();
    let x = random_input(vec![1, 3, 16, 16], 9);
    let conv = |x: &Tensor<f32>, name: &str| {
        let l = &g.layers[g.layer_by_name(name).unwrap()];
        let p = Conv2dParams::new(l.spec.stride, l.spec.kernel / 2, l.spec.groups);
        conv2d_ref(x, l.weight.as_ref().unwrap(), &l.bias, p).unwrap().map(|v| l.act.apply(v))
    };
    let s = conv(&x, "stem.conv");
    let a = conv(&s, "stage1.b0.pw1");
    let b = conv(&a, "stage1.b0.dw");
    let c = conv(&b, "stage1.b0.pw2");
    let r = Tensor::new(c.shape().to_vec(), c.data().iter().zip(s.data()).map(|(p, q)| p + q).collect()).unwrap();
    let h = conv(&r, "head.pw");
    let plane = 64.0;
    let pooled: Vec<f32> = (0..64).map(|ch| h.data()[ch * 64..][..64].iter().sum::<f32>() / plane).collect();
    let pooled = Tensor::new(vec![1, 64, 1, 1], pooled).unwrap();
    let logits = conv(&pooled, "head.classifier");
    let out = forward_float(&g, &x).unwrap().logits;
    assert_eq!(out.data(), logits.data());
}

#[test]
fn capture_counts_quantizable_layers() {
    let g = build_model(&load("toy-msa"), 0).unwrap();
    let (_, cap) = forward_float_capture(&g, &random_input(vec![1, 3, 16, 16], 0)).unwrap();
    assert_eq!(cap.layer_inputs(&g).len(), g.quantizable_layers().len());
    assert_eq!(cap.values.len(), g.nodes.len() + 1);
}

#[test]
fn attention_forward_matches_per_head_reference() {
    let g = fold_bn(&build_model(&load("toy-msa"), 3).unwrap()).unwrap();
    let (_, cap) = forward_float_capture(&g, &random_input(vec![1, 3, 16, 16], 1)).unwrap();
    let node = g.nodes.iter().position(|n| matches!(n.op, Op::Attention { .. })).unwrap();
    let Op::Attention { sources, .. } = &g.nodes[node].op else { unreachable!() };
    let src = &cap.values[sources[1]];
    let out = &cap.values[node + 1];
    let (d, t) = (8, 64);
    for head in 0..2 {
        let take = |part: usize| {
            let mut m = vec![0f32; t * d];
            for i in 0..d {
                for tok in 0..t {
                    m[tok * d + i] = src.data()[(head * 3 * d + part * d + i) * t + tok];
                }
            }
            Tensor::new(vec![t, d], m).unwrap()
        };
        let mut dg = crate::diag::Diagnostics::default();
        let r = relu_linear_attention(&take(0), &take(1), &take(2), &mut dg).unwrap();
        for i in 0..d {
            for tok in 0..t {
                let got = out.data()[(16 + head * d + i) * t + tok];
                assert_eq!(got, r.data()[tok * d + i]);
            }
        }
    }
}

#[test]
fn census_single_pw() {
    let g = build_model(&load("toy-pwconv"), 0).unwrap();
    let c = op_census(&g);
    assert_eq!(c.total_macs, 16 * 32 * 64);
    assert_eq!(c.pwconv, 32768);
    assert_eq!(c.shares()[1], 100.0);
}

#[test]
fn census_shipped_models() {
    let b1 = op_census(&build_model(&load("effvit-b1-r224"), 0).unwrap());
    assert!((b1.gmacs - 0.52).abs() <= 0.52 * 0.05, "{}", b1.gmacs);
    for (got, want) in b1.shares().iter().zip([1.1, 91.9, 5.4, 1.6]) {
        assert!((got - want).abs() <= 1.0, "{got} vs {want}");
    }
    let b2 = op_census(&build_model(&load("effvit-b2-r224"), 0).unwrap());
    assert!((b2.gmacs - 1.6).abs() <= 1.6 * 0.05, "{}", b2.gmacs);
    for c in [b1, b2] {
        assert_eq!(c.generic_conv + c.pwconv + c.dwconv + c.matmul, c.total_macs);
        assert!((c.shares().iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }
}

#[test]
fn census_invariant_under_regrouping() {
    let text = std::fs::read_to_string(config_path("effvit-b1-r224")).unwrap();
    let a = ModelConfig::from_json(&text).unwrap();
    let mut b = a.clone();
    let all: Vec<BlockConfig> = b.stages.drain(..).flat_map(|s| s.blocks).collect();
    b.stages = vec![StageConfig { blocks: all }];
    let ca = op_census(&build_model(&a, 0).unwrap());
    let cb = op_census(&build_model(&b, 0).unwrap());
    assert_eq!(ca, cb);
}
