mod common;

use common::{arch, dense_variance, gaussian_points, sub};
use nalgebra::DMatrix;
use ntk_active::criteria::{
    alpha_ev, alpha_mi, alpha_rv, alpha_rv_with, build_test_reference, marginal_gain_ev, RefMethod, TestReference,
};
use ntk_active::gp::{PosteriorState, VarianceModel};
use ntk_active::kernel::gram;
use ntk_active::rng::SeedTree;
use ntk_active::sparse::{default_noise_floor, select_inducing, InducingState};
use ntk_active::Error;
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use std::sync::Arc;

fn theta(n: usize, seed: u64) -> Arc<DMatrix<f64>> {
    Arc::new(gram(&arch(2, 3, 0.1), &gaussian_points(n, 3, seed)).unwrap().theta)
}

fn all(indices: Vec<usize>) -> TestReference {
    TestReference {
        indices,
        method: RefMethod::All,
        seed: 0,
    }
}

/// Provider with fixed variances and no conditioning.
struct Fixed(Vec<f64>);

impl VarianceModel for Fixed {
    fn universe_size(&self) -> usize {
        self.0.len()
    }
    fn selected(&self) -> &[usize] {
        &[]
    }
    fn prior_variance(&self, u: usize) -> f64 {
        self.0[u]
    }
    fn variance(&self, u: usize) -> f64 {
        self.0[u]
    }
    fn covariance(&self, u: usize, v: usize) -> f64 {
        if u == v {
            self.0[u]
        } else {
            0.0
        }
    }
    fn update_direction(&self, _: usize, targets: &[usize]) -> (Vec<f64>, f64) {
        (vec![0.0; targets.len()], 1.0)
    }
    fn condition(&mut self, _: usize) -> ntk_active::Result<()> {
        Ok(())
    }
}

fn dense_ev(t: &DMatrix<f64>, sel: &[usize], r: &[usize]) -> f64 {
    r.iter().map(|&x| t[(x, x)] - dense_variance(t, sel, x)).sum::<f64>() / r.len() as f64
}

#[test]
fn ev_matches_dense_evaluation() {
    let t = theta(8, 1);
    let r = all((0..8).collect());
    let empty = PosteriorState::new(t.clone(), 0.0).unwrap();
    assert_eq!(alpha_ev(&empty, &r, false).unwrap(), 0.0);
    let sel = [1, 4, 6];
    let s = PosteriorState::rebuild(t.clone(), &sel, 0.0).unwrap();
    assert!((alpha_ev(&s, &r, false).unwrap() - dense_ev(&t, &sel, &r.indices)).abs() < 1e-9);
    let one = PosteriorState::rebuild(t.clone(), &[5], 0.0).unwrap();
    assert!((alpha_ev(&one, &all(vec![5]), false).unwrap() - t[(5, 5)]).abs() < 1e-10);
}

#[test]
fn first_gain_is_the_one_point_formula() {
    let t = theta(10, 2);
    let r = all((0..10).collect());
    let empty = PosteriorState::new(t.clone(), 0.0).unwrap();
    for c in 0..10 {
        let want = (0..10).map(|x| t[(x, c)].powi(2) / t[(c, c)]).sum::<f64>() / 10.0;
        let g = marginal_gain_ev(&empty, c, &r, false).unwrap();
        assert!((g - want).abs() < 1e-10);
        let after = PosteriorState::rebuild(t.clone(), &[c], 0.0).unwrap();
        assert!((g - alpha_ev(&after, &r, false).unwrap()).abs() < 1e-9);
    }
    let s = PosteriorState::rebuild(t, &[3], 0.0).unwrap();
    assert_eq!(marginal_gain_ev(&s, 3, &r, false), Err(Error::DuplicateIndex(3)));
}

#[test]
fn gain_of_a_near_duplicate_vanishes() {
    let mut pts = gaussian_points(12, 3, 3);
    let mut twin = pts[4].clone();
    twin[1] += 1e-9;
    pts.push(twin);
    let t = Arc::new(gram(&arch(2, 3, 0.1), &pts).unwrap().theta);
    let s = PosteriorState::rebuild(t, &[0, 4, 9], 1e-8).unwrap();
    let g = marginal_gain_ev(&s, 12, &all((0..13).collect()), false).unwrap();
    assert!((0.0..1e-6).contains(&g), "gain {g:e}");
}

#[test]
fn gains_diminish_on_random_nested_triples() {
    let t = theta(16, 4);
    let r = all((0..16).collect());
    let mut rng = SeedTree::root(4).child("triples").rng();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let mut order: Vec<usize> = (0..16).collect();
        order.shuffle(&mut rng);
        let a = rng.random_range(0..5);
        let b = a + rng.random_range(0..6);
        let c = order[15];
        let small = PosteriorState::rebuild(t.clone(), &order[..a], 1e-10).unwrap();
        let big = PosteriorState::rebuild(t.clone(), &order[..b], 1e-10).unwrap();
        let ga = marginal_gain_ev(&small, c, &r, false).unwrap();
        let gb = marginal_gain_ev(&big, c, &r, false).unwrap();
        assert!(alpha_ev(&small, &r, false).unwrap() <= alpha_ev(&big, &r, false).unwrap() + 1e-10);
        assert!(gb >= -1e-10);
        worst = worst.max(gb - ga);
    }
    assert!(worst <= 1e-8, "largest violation {worst:e}");
}

#[test]
fn mi_scalar_case() {
    let t = theta(5, 5);
    let sn = 0.05;
    let r = all(vec![2]);
    let prior = PosteriorState::new(t.clone(), 0.0).unwrap();
    assert_eq!(alpha_mi(&prior, &prior, &r, sn).unwrap(), 0.0);
    let s = PosteriorState::rebuild(t.clone(), &[0], 0.0).unwrap();
    let post = dense_variance(&t, &[0], 2);
    let want = 0.5 * (t[(2, 2)] + sn * sn).ln() - 0.5 * (post + sn * sn).ln();
    assert!((alpha_mi(&s, &prior, &r, sn).unwrap() - want).abs() < 1e-12);
    assert!(matches!(alpha_mi(&s, &prior, &r, 0.0), Err(Error::Precondition(_))));
}

#[test]
fn mi_matches_dense_log_determinants() {
    let t = theta(10, 6);
    let sn = 0.1;
    let r = all(vec![0, 1, 2, 3, 4, 5]);
    let sel = [2, 7];
    let rest = [0, 1, 3, 4, 5];
    let prior = PosteriorState::new(t.clone(), 0.0).unwrap();
    let s = PosteriorState::rebuild(t.clone(), &sel, 0.0).unwrap();
    let p = sub(&t, &rest, &rest) + DMatrix::identity(5, 5) * sn * sn;
    let kxs = sub(&t, &rest, &sel);
    let q = sub(&t, &rest, &rest) - &kxs * sub(&t, &sel, &sel).try_inverse().unwrap() * kxs.transpose()
        + DMatrix::identity(5, 5) * sn * sn;
    let want = 0.5 * p.determinant().ln() - 0.5 * q.determinant().ln();
    let got = alpha_mi(&s, &prior, &r, sn).unwrap();
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    assert!(got >= 0.0);
}

#[test]
fn rv_examples() {
    let r3 = all(vec![0, 1, 2]);
    assert_eq!(alpha_rv(&Fixed(vec![1.0, 2.0, 5.0]), &r3, 100.0).unwrap(), -5.0);
    for pct in [1.0, 37.5, 90.0, 100.0] {
        assert_eq!(alpha_rv(&Fixed(vec![0.7; 3]), &r3, pct).unwrap(), -0.7);
    }
    let mut v: Vec<f64> = (1..=100).map(|i| i as f64 * 0.01).collect();
    v.shuffle(&mut SeedTree::root(7).rng());
    let r = all((0..100).collect());
    assert_eq!(alpha_rv(&Fixed(v), &r, 90.0).unwrap(), -0.90);
    assert!(alpha_rv(&Fixed(vec![1.0]), &all(vec![0]), 0.0).is_err());
}

/// Searches for diminishing-returns violations of rV at r = 100.
///
/// The criterion is not submodular in general. The search reports what it
/// finds and passes either way.
#[test]
fn rv_counterexample_search() {
    let t = theta(10, 8);
    let r = all((0..10).collect());
    let mut rng = SeedTree::root(8).child("rv").rng();
    let mut found = 0;
    for _ in 0..300 {
        let mut order: Vec<usize> = (0..10).collect();
        order.shuffle(&mut rng);
        let a = rng.random_range(0..3);
        let b = a + rng.random_range(1..4);
        let c = order[9];
        let small = PosteriorState::rebuild(t.clone(), &order[..a], 1e-10).unwrap();
        let big = PosteriorState::rebuild(t.clone(), &order[..b], 1e-10).unwrap();
        let ga = alpha_rv_with(&small, c, &r, 100.0).unwrap() - alpha_rv(&small, &r, 100.0).unwrap();
        let gb = alpha_rv_with(&big, c, &r, 100.0).unwrap() - alpha_rv(&big, &r, 100.0).unwrap();
        if gb > ga + 1e-9 {
            found += 1;
        }
    }
    println!("rV(100) diminishing-returns violations: {found} of 300 triples");
}

#[test]
fn test_reference_construction() {
    let pts = gaussian_points(9, 2, 9);
    let idx: Vec<usize> = (20..29).collect();
    let seeds = SeedTree::root(9);
    let a = build_test_reference(&idx, &pts, RefMethod::All, &seeds).unwrap();
    assert_eq!(a.indices, idx);
    let k = build_test_reference(&idx, &pts, RefMethod::Kmeanspp(9), &seeds).unwrap();
    let mut sorted = k.indices.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, idx);
    let k4 = build_test_reference(&idx, &pts, RefMethod::Kmeanspp(4), &seeds).unwrap();
    assert_eq!(k4, build_test_reference(&idx, &pts, RefMethod::Kmeanspp(4), &seeds).unwrap());
    assert!(matches!(
        build_test_reference(&idx, &pts, RefMethod::Kmeanspp(10), &seeds),
        Err(Error::Precondition(_))
    ));
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of single-step decisions where the sparse and exact EV gains pick the same point.
pub fn argmax_agreement(decisions: usize, seed: u64) -> f64 {
    let (pool, test) = (30, 100);
    let pts = gaussian_points(pool + test, 8, seed);
    let t = Arc::new(gram(&arch(2, 8, 0.1), &pts).unwrap().theta);
    let u = select_inducing(&pts[..pool], 10, &SeedTree::root(seed).child("inducing")).unwrap();
    let prior = InducingState::new(t.clone(), u, default_noise_floor(&t)).unwrap();
    let r = all((pool..pool + test).collect());
    let mut rng = SeedTree::root(seed).child("decisions").rng();
    let mut agree = 0;
    for _ in 0..decisions {
        let m = rng.random_range(0..6);
        let sel = sample(&mut rng, pool, m).into_vec();
        let sp = prior.fit(&sel, None).unwrap();
        let ex = PosteriorState::rebuild(t.clone(), &sel, 1e-10).unwrap();
        let cands: Vec<usize> = (0..pool).filter(|c| !sel.contains(c)).collect();
        let gs: Vec<f64> = cands.iter().map(|&c| marginal_gain_ev(&sp, c, &r, false).unwrap()).collect();
        let ge: Vec<f64> = cands.iter().map(|&c| marginal_gain_ev(&ex, c, &r, false).unwrap()).collect();
        if argmax(&gs) == argmax(&ge) {
            agree += 1;
        }
    }
    agree as f64 / decisions as f64
}

#[test]
fn sparse_provider_preserves_most_argmaxes() {
    let f = argmax_agreement(50, 10);
    assert!(f >= 0.7, "agreement {f}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ev_is_monotone_and_nonnegative(seed in 0u64..10_000, a in 0usize..5, extra in 1usize..5) {
        let t = theta(12, seed);
        let r = all((0..12).collect());
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut SeedTree::root(seed).rng());
        let small = PosteriorState::rebuild(t.clone(), &order[..a], 1e-10).unwrap();
        let big = PosteriorState::rebuild(t.clone(), &order[..a + extra], 1e-10).unwrap();
        let (va, vb) = (alpha_ev(&small, &r, false).unwrap(), alpha_ev(&big, &r, false).unwrap());
        prop_assert!(va >= -1e-12 && va <= vb + 1e-10);
    }
}
