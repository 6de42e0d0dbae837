use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weaklearn_core::model::{init_params, InputDims, LayerSpec, ModelConfig, ModelParams};
use weaklearn_core::scalar::DType;
use weaklearn_core::trainer::{gradient_check_params, LossKind};

fn conv_model() -> ModelConfig {
    ModelConfig {
        input: InputDims { height: 6, width: 5, channels: 2 },
        layers: vec![
            LayerSpec::Conv { kernel: 2, channels: 3 },
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::FullyConnected { width: 5 },
            LayerSpec::FullyConnected { width: 4 },
        ],
        embed_dim: 4,
        dtype: DType::F64,
    }
}

fn randomized(cfg: &ModelConfig, classes: usize, seed: u64) -> ModelParams<f64> {
    let mut p = init_params::<f64>(cfg, classes, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for l in &mut p.backbone {
        l.bias.mapv_inplace(|_| r.random_range(-0.2..0.2));
    }
    p
}

fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

/// Direct loops over the (H, W, C) layout, independent of the im2col path.
fn straight_line(p: &ModelParams<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), p.embed_dim()));
    for (b, row) in x.outer_iter().enumerate() {
        let (mut h, mut w, mut c) = (p.config.input.height, p.config.input.width, p.config.input.channels);
        let mut cur: Vec<f64> = row.to_vec();
        for (spec, layer) in p.config.layers.iter().zip(&p.backbone) {
            match *spec {
                LayerSpec::Conv { kernel, channels } => {
                    let (ho, wo) = (h - kernel + 1, w - kernel + 1);
                    let mut next = vec![0.0; ho * wo * channels];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for co in 0..channels {
                                let mut s = layer.bias[co];
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        for ci in 0..c {
                                            let wi = (ky * kernel + kx) * c + ci;
                                            s += cur[((oy + ky) * w + ox + kx) * c + ci] * layer.weight[[wi, co]];
                                        }
                                    }
                                }
                                next[(oy * wo + ox) * channels + co] = s.max(0.0);
                            }
                        }
                    }
                    (h, w, c) = (ho, wo, channels);
                    cur = next;
                }
                LayerSpec::MaxPool { size } => {
                    let (ho, wo) = (h / size, w / size);
                    let mut next = vec![f64::NEG_INFINITY; ho * wo * c];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            for ch in 0..c {
                                for dy in 0..size {
                                    for dx in 0..size {
                                        let v = cur[((oy * size + dy) * w + ox * size + dx) * c + ch];
                                        let o = &mut next[(oy * wo + ox) * c + ch];
                                        *o = o.max(v);
                                    }
                                }
                            }
                        }
                    }
                    (h, w) = (ho, wo);
                    cur = next;
                }
                LayerSpec::FullyConnected { width } => {
                    let mut next = vec![0.0; width];
                    for (j, n) in next.iter_mut().enumerate() {
                        let mut s = layer.bias[j];
                        for (i, v) in cur.iter().enumerate() {
                            s += v * layer.weight[[i, j]];
                        }
                        *n = s.max(0.0);
                    }
                    (h, w, c) = (1, 1, width);
                    cur = next;
                }
            }
        }
        for (j, v) in cur.into_iter().enumerate() {
            out[[b, j]] = v;
        }
    }
    out
}

#[test]
fn forward_matches_straight_line_oracle() {
    let cfg = conv_model();
    for seed in 0..5 {
        let p = randomized(&cfg, 7, seed);
        let x = random_input(6, p.input_len(), seed + 100);
        let (e, _) = p.forward(x.view()).unwrap();
        let o = straight_line(&p, x.view());
        for (a, b) in e.iter().zip(o.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn finite_differences_through_conv_and_pool() {
    let cfg = conv_model();
    let p = randomized(&cfg, 4, 3);
    let x = random_input(4, p.input_len(), 9);
    let positives = vec![vec![0, 1], vec![2], vec![1, 3], vec![0, 2, 3]];
    for kind in [LossKind::Multiclass, LossKind::OneVsAll] {
        let err = gradient_check_params(&p, x.view(), &positives, kind).unwrap();
        assert!(err < 1e-5, "{kind:?}: {err}");
    }
}

#[test]
fn finite_differences_three_layer_mlp_batch_four() {
    let cfg = ModelConfig::mlp(InputDims { height: 3, width: 3, channels: 1 }, &[8, 7], 5).with_dtype(DType::F64);
    let p = randomized(&cfg, 6, 21);
    let x = random_input(4, 9, 5);
    let positives = vec![vec![0, 5], vec![1, 2], vec![3, 4], vec![0, 1, 2, 3, 4]];
    for kind in [LossKind::Multiclass, LossKind::OneVsAll] {
        let err = gradient_check_params(&p, x.view(), &positives, kind).unwrap();
        assert!(err < 1e-5, "{kind:?}: {err}");
    }
}

#[test]
fn init_means_are_small() {
    let cfg = ModelConfig::mlp(InputDims { height: 16, width: 16, channels: 1 }, &[64], 48);
    let p = init_params::<f32>(&cfg, 300, 5).unwrap();
    let check = |a: &Array2<f32>, fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = a.len() as f64;
        let mean = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        assert!(a.len() >= 10_000);
        assert!(mean.abs() < 3.0 * bound / n.sqrt(), "mean {mean}");
        assert!(a.iter().all(|v| f64::from(v.abs()) <= bound * (1.0 + 1e-6)));
    };
    check(&p.backbone[0].weight, 256, 64);
    check(&p.output, 48, 300);
}

#[test]
fn subset_and_complement_scores_partition_dense_scores() {
    let cfg = conv_model();
    let p = randomized(&cfg, 9, 1);
    let x = random_input(3, p.input_len(), 2);
    let e = p.embed(x.view()).unwrap();
    let dense = p.score_all(e.view()).unwrap();
    let subset = [1, 4, 8];
    let rest: Vec<usize> = (0..9).filter(|k| !subset.contains(k)).collect();
    let a = p.score_subset(e.view(), &subset).unwrap();
    let b = p.score_subset(e.view(), &rest).unwrap();
    for r in 0..3 {
        for (j, &k) in subset.iter().enumerate() {
            assert_eq!(a[[r, j]], dense[[r, k]]);
        }
        for (j, &k) in rest.iter().enumerate() {
            assert_eq!(b[[r, j]], dense[[r, k]]);
        }
    }
}
