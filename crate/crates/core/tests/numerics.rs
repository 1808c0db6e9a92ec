use flowood::numerics::{gaussian_sample, grad, l2_norm, Graph, Rng, Tensor, Var};
use rand_core::{RngCore, SeedableRng};

fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Central finite differences of a scalar function of one tensor.
fn fd_gradient(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2_norm(&diff) / l2_norm(b).max(1e-12)
}

/// Checks one primitive: `build(graph, p)` returns a scalar node.
fn check_primitive(name: &str, shape: &[usize], lo: f64, hi: f64, build: fn(&mut Graph, Var) -> Var) {
    let mut rng = Rng::new(0xAD ^ name.len() as u64);
    for trial in 0..10 {
        let x = random_tensor(&mut rng, shape, lo, hi);
        let mut g = Graph::new();
        let p = g.param(x.clone());
        let out = build(&mut g, p);
        let ad = grad(&g, out, &[p]).unwrap().remove(0);
        let f = |t: &Tensor| {
            let mut g = Graph::new();
            let p = g.param(t.clone());
            let o = build(&mut g, p);
            g.value(o).item()
        };
        let fd = fd_gradient(&f, &x, 1e-5);
        let e = rel_err(ad.data(), &fd);
        assert!(e < 1e-4, "{name} trial {trial}: rel err {e:e}");
    }
}

#[test]
fn every_primitive_matches_finite_differences() {
    check_primitive("add", &[3, 4], -1.0, 1.0, |g, p| {
        let c = g.constant(Tensor::vector(vec![0.3, -0.2, 0.1, 0.7]));
        let a = g.add(p, c);
        let b = g.add(a, p);
        let sq = g.mul(b, b);
        g.sum(sq)
    });
    check_primitive("sub", &[2, 3], -1.0, 1.0, |g, p| {
        let c = g.constant(Tensor::scalar(0.5));
        let a = g.sub(p, c);
        let e = g.exp(p);
        let b = g.sub(a, e);
        let sq = g.mul(b, b);
        g.sum(sq)
    });
    check_primitive("mul_broadcast", &[4], -1.0, 1.0, |g, p| {
        let m = g.constant(Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
        let a = g.mul(m, p);
        let b = g.mul(a, a);
        g.sum(b)
    });
    check_primitive("scale", &[5], -1.0, 1.0, |g, p| {
        let a = g.scale(p, -2.5);
        let b = g.mul(a, p);
        g.sum(b)
    });
    check_primitive("matmul", &[3, 4], -1.0, 1.0, |g, p| {
        let w = g.constant(Tensor::new(vec![4, 2], vec![0.1, -0.3, 0.5, 0.2, -0.7, 0.4, 0.9, -0.1]).unwrap());
        let y = g.matmul(p, w);
        let z = g.matmul(p, w);
        let q = g.mul(y, z);
        g.sum(q)
    });
    check_primitive("tanh", &[6], -2.0, 2.0, |g, p| {
        let t = g.tanh(p);
        let s = g.mul(t, p);
        g.sum(s)
    });
    check_primitive("exp", &[6], -2.0, 2.0, |g, p| {
        let e = g.exp(p);
        g.sum(e)
    });
    check_primitive("log", &[6], 0.2, 3.0, |g, p| {
        let l = g.log(p);
        let s = g.mul(l, l);
        g.sum(s)
    });
    check_primitive("sum_rows", &[3, 5], -1.0, 1.0, |g, p| {
        let r = g.sum_rows(p);
        let s = g.mul(r, r);
        g.sum(s)
    });
    check_primitive("slice_concat", &[3, 5], -1.0, 1.0, |g, p| {
        let l = g.slice_cols(p, 0, 2);
        let r = g.slice_cols(p, 2, 5);
        let e = g.exp(l);
        let c = g.concat_cols(r, e);
        let s = g.mul(c, c);
        g.sum(s)
    });
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = Rng::new(2024);
    for _ in 0..10 {
        let x = random_tensor(&mut rng, &[5, 6], -1.0, 1.0);
        let w1 = random_tensor(&mut rng, &[6, 8], -0.5, 0.5);
        let b1 = random_tensor(&mut rng, &[8], -0.5, 0.5);
        let w2 = random_tensor(&mut rng, &[8, 1], -0.5, 0.5);
        let params = [w1, b1, w2];
        let build = |g: &mut Graph, ps: &[Tensor]| -> (Var, Vec<Var>) {
            let xv = g.constant(x.clone());
            let vars: Vec<Var> = ps.iter().map(|t| g.param(t.clone())).collect();
            let h = g.matmul(xv, vars[0]);
            let h = g.add(h, vars[1]);
            let h = g.tanh(h);
            let o = g.matmul(h, vars[2]);
            let o = g.exp(o);
            (g.sum(o), vars)
        };
        let mut g = Graph::new();
        let (out, vars) = build(&mut g, &params);
        let ad = grad(&g, out, &vars).unwrap();
        for (k, param) in params.iter().enumerate() {
            let f = |t: &Tensor| {
                let mut ps = params.clone();
                ps[k] = t.clone();
                let mut g = Graph::new();
                let (o, _) = build(&mut g, &ps);
                g.value(o).item()
            };
            let fd = fd_gradient(&f, param, 1e-5);
            let e = rel_err(ad[k].data(), &fd);
            assert!(e < 1e-4, "param {k}: rel err {e:e}");
        }
    }
}

#[test]
fn stream_matches_reference_xoshiro256starstar() {
    let mut ours = Rng::new(42);
    let mut reference = rand_xoshiro::Xoshiro256StarStar::seed_from_u64(42);
    for _ in 0..1000 {
        assert_eq!(ours.next_u64(), reference.next_u64());
    }
}

#[test]
fn seed_42_prefix_matches_golden_file() {
    let golden = include_str!("golden/rng_seed42.txt");
    let expected: Vec<u64> = golden
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().unwrap())
        .collect();
    assert_eq!(expected.len(), 8);
    let mut rng = Rng::new(42);
    let got: Vec<u64> = (0..8).map(|_| rng.next_u64()).collect();
    assert_eq!(got, expected);
}

#[test]
fn gaussian_sample_is_deterministic() {
    let a = gaussian_sample(&mut Rng::new(17), 32, 8);
    let b = gaussian_sample(&mut Rng::new(17), 32, 8);
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[32, 8]);
}

#[test]
fn gaussian_moments_at_1e5() {
    let t = gaussian_sample(&mut Rng::new(1), 100_000, 1);
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.03, "var {var}");
}

#[test]
fn gaussian_norm_concentrates_at_sqrt_d() {
    let d = 1024;
    let t = gaussian_sample(&mut Rng::new(3), 10_000, d);
    let mean_norm = (0..t.rows()).map(|i| l2_norm(t.row(i))).sum::<f64>() / t.rows() as f64;
    let target = (d as f64).sqrt();
    assert!(((mean_norm - target) / target).abs() < 0.01, "{mean_norm} vs {target}");
}

/// Φ via the Abramowitz–Stegun 7.1.26 erf approximation (|error| < 1.5e-7).
fn normal_cdf(x: f64) -> f64 {
    let z = x.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * z);
    let poly = t * (0.254_829_592
        + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-z * z).exp();
    if x >= 0.0 {
        0.5 * (1.0 + erf)
    } else {
        0.5 * (1.0 - erf)
    }
}

#[test]
fn box_muller_passes_chi_square_uniformity() {
    let bins = 100usize;
    let n = 100_000usize;
    let mut rng = Rng::new(8);
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let u = normal_cdf(rng.normal());
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = n as f64 / bins as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // Wilson–Hilferty upper quantile at significance 1e-3 (z = 3.0902).
    let k = (bins - 1) as f64;
    let crit = k * (1.0 - 2.0 / (9.0 * k) + 3.0902 * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}
