mod common;

use common::{gaussian_points, unit_points};
use ntk_active::kernel::{gram, kernel_pair};
use ntk_active::nn::{ensemble_statistics, init_network, monte_carlo_nngp, train, LabeledSet, TrainConfig};
use ntk_active::rng::SeedTree;
use ntk_active::gp::nn_moments;
use ntk_active::linalg::sym_eigenvalues;
use ntk_active::stats::{mean, median, sample_variance, spearman};
use ntk_active::MlpArchitecture;
use rand::Rng;

fn arch(depth: usize, dim: usize, width: usize, sb: f64) -> MlpArchitecture {
    MlpArchitecture::new(depth, dim, width, 1.0, sb)
}

#[test]
fn gradient_matches_central_differences() {
    for (depth, sb) in [(1, 0.0), (2, 0.1), (3, 0.3)] {
        let a = arch(depth, 3, 12, sb);
        let p = init_network(&a, 40 + depth as u64).unwrap();
        let x = [0.3, -0.7, 0.5];
        let g = p.param_gradient(&x).unwrap();
        let theta = p.flat();
        let mut rng = SeedTree::root(depth as u64).rng();
        let h = 1e-4;
        for _ in 0..20 {
            let i = rng.random_range(0..theta.len());
            let mut q = p.clone();
            let mut t = theta.clone();
            t[i] += h;
            q.set_flat(&t).unwrap();
            let up = q.forward(&x).unwrap();
            t[i] -= 2.0 * h;
            q.set_flat(&t).unwrap();
            let down = q.forward(&x).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / g[i].abs().max(1e-2);
            assert!(err < 1e-4, "depth {depth} coord {i}: fd {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn weight_moments_match_sigma_w() {
    let sw = 1.7;
    let a = MlpArchitecture::new(1, 2, 317, sw, 0.0);
    let p = init_network(&a, 9).unwrap();
    let w: Vec<f64> = p.weight(1).iter().copied().collect();
    assert!(w.len() > 100_000);
    let v = sample_variance(&w);
    // Var of the sample variance of n normals is 2σ⁴/(n−1).
    let se = (2.0 / (w.len() - 1) as f64).sqrt() * sw * sw;
    assert!((v - sw * sw).abs() < 3.0 * se, "variance {v}");
    assert!(p.bias(1).iter().all(|&b| b == 0.0));
}

#[test]
fn output_variance_matches_nngp_at_width_1024() {
    let a = arch(1, 2, 1024, 0.1);
    let x = vec![vec![0.6, -0.8]];
    let mc = monte_carlo_nngp(&a, &x, 2000, &SeedTree::root(5)).unwrap();
    let (k, _) = kernel_pair(&a, &x[0], &x[0]).unwrap();
    let rel = (mc.mean[(0, 0)] - k).abs() / k;
    assert!(rel < 0.1, "MC {} vs analytic {k}", mc.mean[(0, 0)]);
    assert!((mc.mean[(0, 0)] - k).abs() < 3.0 * mc.stderr[(0, 0)] + 0.02 * k);
}

#[test]
fn empirical_ntk_is_a_psd_gram() {
    let a = arch(2, 3, 32, 0.1);
    let p = init_network(&a, 2).unwrap();
    let xs = gaussian_points(8, 3, 1);
    let t = p.empirical_ntk(&xs, &xs).unwrap();
    let g: Vec<Vec<f64>> = xs.iter().map(|x| p.param_gradient(x).unwrap()).collect();
    for i in 0..8 {
        for j in 0..8 {
            let d: f64 = g[i].iter().zip(&g[j]).map(|(u, v)| u * v).sum();
            assert!((t[(i, j)] - d).abs() < 1e-10 * d.abs().max(1.0));
        }
    }
    let tr = t.trace();
    let ev = ntk_active::linalg::sym_eigenvalues(&p.empirical_ntk_gram(&xs).unwrap());
    assert!(ev[0] >= -1e-8 * tr);
}

#[test]
fn single_point_is_fit() {
    let a = arch(2, 2, 1024, 0.1);
    let p = init_network(&a, 3).unwrap();
    let data = LabeledSet::new(vec![vec![0.6, 0.8]], vec![0.7]).unwrap();
    let out = train(&p, &data, &TrainConfig::default()).unwrap();
    let f = out.params.forward(&data.inputs[0]).unwrap();
    assert!((f - 0.7).abs() < 1e-3, "f = {f}");
}

#[test]
fn loss_is_nonincreasing_at_default_rate() {
    let a = arch(2, 3, 512, 0.1);
    let xs = unit_points(6, 3, 8);
    let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x[0]).sin()).collect();
    let data = LabeledSet::new(xs, ys).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let out = train(&init_network(&a, 1).unwrap(), &data, &cfg).unwrap();
    assert!(out.losses.windows(2).all(|w| w[1] <= w[0] + 1e-6));
    assert!(out.losses.last().unwrap() < &out.losses[0]);
}

#[test]
fn heavy_weight_decay_shrinks_parameters() {
    let a = arch(1, 2, 16, 0.1);
    let mut p = init_network(&a, 4).unwrap();
    // zero head: f = 0 everywhere, so with y = 0 only the penalty acts
    let mut flat = p.flat();
    let n = flat.len();
    let head = a.hidden_width + 1;
    for v in &mut flat[n - head..] {
        *v = 0.0;
    }
    p.set_flat(&flat).unwrap();
    let data = LabeledSet::new(vec![vec![0.5, 0.5]], vec![0.0]).unwrap();
    let mut norm = flat.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..10 {
        let cfg = TrainConfig {
            lr: 1e-5,
            epochs: 1,
            weight_decay: 1e3,
            tol: 0.0,
        };
        p = train(&p, &data, &cfg).unwrap().params;
        let next = p.flat().iter().map(|v| v * v).sum::<f64>();
        assert!(next < norm);
        norm = next;
    }
}

#[test]
fn untrained_ensemble_variance_tracks_prior() {
    let a = arch(1, 2, 256, 0.1);
    let test = vec![vec![0.6, 0.8], vec![-1.0, 0.2]];
    let s = ensemble_statistics(&a, &LabeledSet::default(), &test, 400, &TrainConfig::default(), &SeedTree::root(2)).unwrap();
    let kp = gram(&a, &test).unwrap();
    for j in 0..2 {
        let k = kp.nngp[(j, j)];
        // Var of the sample variance ≈ 2σ⁴/(n−1) for near-Gaussian outputs
        let se = (2.0 / 399.0f64).sqrt() * k;
        assert!((s.variance[j] - k).abs() < 4.0 * se + 0.05 * k, "{} vs {k}", s.variance[j]);
    }
    let again = ensemble_statistics(&a, &LabeledSet::default(), &test, 400, &TrainConfig::default(), &SeedTree::root(2)).unwrap();
    assert_eq!(s.predictions, again.predictions);
}

#[test]
fn trained_ensemble_interpolates() {
    let a = arch(1, 2, 256, 0.1);
    let xs = vec![vec![0.6, 0.8], vec![-0.8, 0.6], vec![0.0, -1.0]];
    let data = LabeledSet::new(xs.clone(), vec![0.5, -0.3, 0.9]).unwrap();
    let cfg = TrainConfig {
        lr: 0.3,
        epochs: 3000,
        ..TrainConfig::default()
    };
    let s = ensemble_statistics(&a, &data, &xs, 8, &cfg, &SeedTree::root(6)).unwrap();
    for j in 0..3 {
        let se = (s.variance[j] / 8.0).sqrt();
        assert!((s.mean[j] - data.labels[j]).abs() <= 3.0 * se + 1e-3);
    }
    assert!(s.variance.iter().all(|&v| v >= 0.0));
    assert!((mean(&s.mean) - mean(&data.labels)).abs() < 1e-2);
}

fn ntk_error(width: usize, seed: u64, xs: &[Vec<f64>]) -> f64 {
    let a = arch(2, 4, width, 0.1);
    let t = gram(&a, xs).unwrap().theta;
    let e = init_network(&a, seed).unwrap().empirical_ntk_gram(xs).unwrap();
    (&e - &t).norm() / t.norm()
}

#[test]
fn empirical_ntk_within_five_percent_at_width_4096() {
    let xs = gaussian_points(16, 4, 21);
    let err = ntk_error(4096, 0, &xs);
    assert!(err < 0.05, "relative Frobenius error {err}");
}

#[test]
fn empirical_ntk_error_shrinks_with_width() {
    let xs = gaussian_points(16, 4, 22);
    let medians: Vec<f64> = [64, 256, 1024, 4096]
        .iter()
        .map(|&w| median(&(0..5).map(|s| ntk_error(w, s, &xs)).collect::<Vec<_>>()))
        .collect();
    assert!(medians.windows(2).all(|m| m[1] < m[0]), "{medians:?}");
}

#[test]
fn ensemble_variance_ranks_like_ntkgp() {
    let a = arch(2, 2, 512, 0.1);
    let train_x: Vec<Vec<f64>> = gaussian_points(10, 1, 23).iter().map(|x| vec![x[0], 1.0]).collect();
    let ys: Vec<f64> = train_x.iter().map(|x| (2.0 * x[0]).cos()).collect();
    let test: Vec<Vec<f64>> = (0..100).map(|i| vec![-2.5 + 5.0 * i as f64 / 99.0, 1.0]).collect();
    let mut all = train_x.clone();
    all.extend(test.iter().cloned());
    let kp = gram(&a, &all).unwrap();
    let sel: Vec<usize> = (0..10).collect();
    let m = nn_moments(&kp.theta, &kp.nngp, &sel, Some(&ys), &(10..110).collect::<Vec<_>>(), 0.0).unwrap();
    let ev = sym_eigenvalues(&gram(&a, &train_x).unwrap().theta);
    let cfg = TrainConfig {
        lr: 10.0 / ev[9],
        epochs: 1000,
        ..TrainConfig::default()
    };
    let data = LabeledSet::new(train_x, ys).unwrap();
    let s = ensemble_statistics(&a, &data, &test, 20, &cfg, &SeedTree::root(23)).unwrap();
    let rho = spearman(&m.iter().map(|v| v.var_ntkgp).collect::<Vec<_>>(), &s.variance);
    assert!(rho > 0.8, "spearman {rho}");
    let again = ensemble_statistics(&a, &data, &test, 20, &cfg, &SeedTree::root(23)).unwrap();
    assert_eq!(s, again);
}
