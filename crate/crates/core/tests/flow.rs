use flowood::datagen::{gauss_texture, Image};
use flowood::flow::{
    read_checkpoint, train, train_continuous, write_checkpoint, FlowConfig, FlowError, FlowModel, TrainConfig,
    Variant,
};
use flowood::numerics::{gaussian_sample, Rng, Tensor};

fn small_cfg(dim: usize, layers: usize, hidden: usize, variant: Variant) -> FlowConfig {
    FlowConfig {
        dim,
        layers,
        hidden,
        s_max: 2.0,
        variant,
    }
}

fn uniform_rows(rng: &mut Rng, n: usize, d: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// log|det A| by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        acc += p.abs().ln();
        for r in col + 1..n {
            let f = a[r][col] / p;
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    acc
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = Rng::new(77);
    for trial in 0..10 {
        let dim = 2 + trial % 5;
        let variant = if trial % 3 == 2 { Variant::Additive } else { Variant::Affine };
        let mut m = FlowModel::new(small_cfg(dim, 1 + trial % 3, 3 + trial % 4, variant), trial as u64).unwrap();
        m.randomize(&mut rng, 0.4);
        let x = uniform_rows(&mut rng, 4, dim, -1.0, 1.0);
        let (_, grads) = m.nll_and_grad(&x).unwrap();
        let h = 1e-5;
        let mut ad = Vec::new();
        let mut fd = Vec::new();
        for (k, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut mp = m.clone();
                mp.params_mut()[k].data_mut()[i] += h;
                let mut mm = m.clone();
                mm.params_mut()[k].data_mut()[i] -= h;
                fd.push((mp.nll(&x).unwrap() - mm.nll(&x).unwrap()) / (2.0 * h));
                ad.push(g.data()[i]);
            }
        }
        let num: f64 = ad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "trial {trial}: rel err {:e}", num / den);
    }
}

#[test]
fn logdet_matches_finite_difference_jacobian() {
    let d = 16;
    let mut rng = Rng::new(5);
    let mut m = FlowModel::new(small_cfg(d, 4, 8, Variant::Affine), 1).unwrap();
    m.randomize(&mut rng, 0.3);
    for _ in 0..20 {
        let x: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, logdet) = m.forward(&x).unwrap();
        let h = 1e-6;
        // Column j of the Jacobian from central differences.
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let (zp, _) = m.forward(&xp).unwrap();
            let (zm, _) = m.forward(&xm).unwrap();
            for i in 0..d {
                jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
            }
        }
        let oracle = log_abs_det(jac);
        assert!(((logdet - oracle) / oracle).abs() < 1e-3, "{logdet} vs {oracle}");
    }
}

#[test]
fn additive_volume_is_exactly_zero() {
    let mut m = FlowModel::new(small_cfg(16, 4, 8, Variant::Additive), 1).unwrap();
    m.randomize(&mut Rng::new(2), 0.5);
    let x = uniform_rows(&mut Rng::new(3), 256, 16, 0.0, 1.0);
    let out = m.forward_batch(&x).unwrap();
    assert!(out.logdet.iter().all(|&v| v == 0.0));
}

#[test]
fn log_scale_cap_holds() {
    let mut m = FlowModel::new(small_cfg(8, 3, 8, Variant::Affine), 1).unwrap();
    m.randomize(&mut Rng::new(2), 5.0);
    let x = uniform_rows(&mut Rng::new(3), 64, 8, -1.0, 1.0);
    let out = m.forward_batch(&x).unwrap();
    assert!(out.max_abs_log_scale <= 2.0);
    assert!(out.max_abs_log_scale > 1.5);
}

#[test]
fn eq1_bookkeeping_is_exact() {
    let mut m = FlowModel::new(small_cfg(5, 3, 6, Variant::Affine), 1).unwrap();
    m.randomize(&mut Rng::new(9), 0.3);
    let x = uniform_rows(&mut Rng::new(10), 32, 5, 0.0, 1.0);
    let out = m.forward_batch(&x).unwrap();
    for (i, lp) in m.log_prob_batch(&x).unwrap().iter().enumerate() {
        assert_eq!(lp.logpx, lp.logpz + lp.logdet);
        assert_eq!(lp.logdet, out.logdet[i]);
    }
}

#[test]
fn toy_gaussian_reaches_entropy_optimum() {
    let mut rng = Rng::new(31);
    let n = 2000;
    let data = Tensor::new(vec![n, 1], (0..n).map(|_| 3.0 + rng.normal()).collect()).unwrap();
    let mut m = FlowModel::new(small_cfg(1, 2, 16, Variant::Affine), 4).unwrap();
    // Start from the identity map so the optimizer, not the ActNorm data
    // initialization, has to find the optimum.
    let mut cfg = TrainConfig::new(2000, n, 8);
    cfg.data_init = false;
    let trace = train_continuous(&mut m, &data, &cfg).unwrap();
    let mean_logpx = -m.nll(&data).unwrap();
    let optimum = -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    assert!((mean_logpx - optimum).abs() < 0.1, "{mean_logpx} vs {optimum}");
    assert_eq!(trace.block_means.len(), 20);
    let smooth: Vec<f64> = trace.block_means.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0], "{smooth:?}");
    }
}

fn texture_set(n: usize) -> Vec<Image> {
    gauss_texture(&mut Rng::new(12), 2.0, n, 8, 1).unwrap()
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = texture_set(64);
    let run = || {
        let mut m = FlowModel::new(small_cfg(64, 2, 16, Variant::Affine), 7).unwrap();
        let trace = train(&mut m, &data, &TrainConfig::new(30, 16, 3)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        (buf, trace)
    };
    assert_eq!(run(), run());
}

#[test]
fn trained_round_trip_and_checkpoint() {
    let data = texture_set(128);
    let mut m = FlowModel::new(small_cfg(64, 4, 32, Variant::Affine), 7).unwrap();
    train(&mut m, &data, &TrainConfig::new(200, 32, 3)).unwrap();
    let x = uniform_rows(&mut Rng::new(1), 256, 64, 0.0, 1.0);
    let z = m.forward_batch(&x).unwrap().z;
    let back = m.inverse_batch(&z).unwrap();
    assert!(back.sub(&x).max_abs() < 1e-4);
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
}

#[test]
fn training_rejects_bad_inputs() {
    let mut m = FlowModel::new(small_cfg(64, 1, 4, Variant::Affine), 0).unwrap();
    assert_eq!(train(&mut m, &[], &TrainConfig::new(1, 1, 0)), Err(FlowError::EmptyDataset));
    let wrong = gauss_texture(&mut Rng::new(0), 1.0, 2, 4, 1).unwrap();
    assert!(matches!(train(&mut m, &wrong, &TrainConfig::new(1, 1, 0)), Err(FlowError::DimMismatch { .. })));
    assert!(matches!(train(&mut m, &texture_set(2), &TrainConfig::new(0, 1, 0)), Err(FlowError::Config(_))));
}

#[test]
fn huge_learning_rate_diverges_with_trace() {
    let data = texture_set(32);
    let mut m = FlowModel::new(small_cfg(64, 2, 8, Variant::Affine), 0).unwrap();
    let mut cfg = TrainConfig::new(500, 32, 0);
    cfg.lr = 1e6;
    match train(&mut m, &data, &cfg) {
        Err(FlowError::Diverged { iteration, trace, .. }) => assert_eq!(trace.losses.len(), iteration),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn identity_samples_are_quantized_normals() {
    let m = FlowModel::new(small_cfg(16, 2, 4, Variant::Affine), 0).unwrap();
    let imgs = m.sample(&mut Rng::new(4), 3, 4, 4, 1).unwrap();
    let z = gaussian_sample(&mut Rng::new(4), 3, 16);
    for (i, img) in imgs.iter().enumerate() {
        for (p, v) in img.pixels().iter().zip(z.row(i)) {
            assert_eq!(*p, (v.clamp(0.0, 1.0) * 256.0).floor().min(255.0) as u8);
        }
    }
    assert!(m.sample(&mut Rng::new(4), 0, 4, 4, 1).unwrap().is_empty());
}

#[test]
fn constant_colour_flow_samples_are_simpler() {
    use flowood::complexity::complexity;
    let data: Vec<Image> = (0..64).map(|i| Image::filled(8, 8, 1, 60 + (i % 8) as u8 * 16).unwrap()).collect();
    let mut m = FlowModel::new(small_cfg(64, 4, 32, Variant::Affine), 3).unwrap();
    train(&mut m, &data, &TrainConfig::new(300, 64, 1)).unwrap();
    let identity = FlowModel::new(small_cfg(64, 4, 32, Variant::Affine), 3).unwrap();
    let mean = |imgs: Vec<Image>| imgs.iter().map(complexity).sum::<f64>() / imgs.len() as f64;
    let trained_c = mean(m.sample(&mut Rng::new(2), 64, 8, 8, 1).unwrap());
    let noise_c = mean(identity.sample(&mut Rng::new(2), 64, 8, 8, 1).unwrap());
    assert!(trained_c < noise_c, "{trained_c} vs {noise_c}");
}
