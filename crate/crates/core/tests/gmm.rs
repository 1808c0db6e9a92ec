use flowood::gmm::{fit, FitConfig};
use flowood::numerics::Rng;

fn planted(rng: &mut Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let mx = if i % 2 == 0 { -2.0 } else { 2.0 };
            [mx + rng.normal(), rng.normal()]
        })
        .collect()
}

#[test]
fn planted_two_component_recovery() {
    let mut rng = Rng::new(20);
    let x = planted(&mut rng, 10_000);
    let f = fit(&x, &FitConfig { k: 2, ..FitConfig::default() }, &mut rng).unwrap();
    let mut means = f.model.means_original();
    means.sort_by(|a, b| a[0].total_cmp(&b[0]));
    for (got, want) in means.iter().zip([[-2.0f64, 0.0], [2.0, 0.0]]) {
        for a in 0..2 {
            // 5% of the coordinate, or 0.05 absolute for the zero coordinate.
            let tol = 0.05 * f64::max(want[a].abs(), 1.0);
            assert!((got[a] - want[a]).abs() < tol, "{means:?}");
        }
    }
}

#[test]
fn em_trace_never_decreases() {
    for seed in 0..5 {
        let mut rng = Rng::new(seed);
        let mut x = planted(&mut rng, 2000);
        x.extend((0..500).map(|_| [rng.uniform(-6.0, 6.0), 3.0 + 0.3 * rng.normal()]));
        for k in 1..=4 {
            let f = fit(&x, &FitConfig { k, ..FitConfig::default() }, &mut rng).unwrap();
            for w in f.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "k={k}: {:?}", f.trace);
            }
            assert!((f.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(f.model.weights.iter().all(|&w| w > 0.0));
        }
    }
}

#[test]
fn single_component_density_integrates_to_one() {
    let mut rng = Rng::new(21);
    let x: Vec<[f64; 2]> = (0..2000).map(|_| [5.0 + 3.0 * rng.normal(), -40.0 + 0.7 * rng.normal()]).collect();
    let m = fit(&x, &FitConfig { k: 1, ..FitConfig::default() }, &mut rng).unwrap().model;
    // Midpoint rule over ±8 standard deviations of each feature.
    let (cx, cy) = (m.feature_mean, m.feature_std);
    let steps = 400;
    let (lo0, hi0) = (cx[0] - 8.0 * cy[0], cx[0] + 8.0 * cy[0]);
    let (lo1, hi1) = (cx[1] - 8.0 * cy[1], cx[1] + 8.0 * cy[1]);
    let (h0, h1) = ((hi0 - lo0) / steps as f64, (hi1 - lo1) / steps as f64);
    let mut total = 0.0;
    for i in 0..steps {
        for j in 0..steps {
            let f = [lo0 + (i as f64 + 0.5) * h0, lo1 + (j as f64 + 0.5) * h1];
            total += m.log_density(&f).exp() * h0 * h1;
        }
    }
    assert!((total - 1.0).abs() < 0.01, "{total}");
}

#[test]
fn fitting_and_scoring_are_deterministic() {
    let x = planted(&mut Rng::new(3), 600);
    let a = fit(&x, &FitConfig::default(), &mut Rng::new(9)).unwrap();
    let b = fit(&x, &FitConfig::default(), &mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.model.score(&[0.3, 0.1]), b.model.score(&[0.3, 0.1]));
}
