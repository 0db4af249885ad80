//! k-means++ (D²) seeding over raw points.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeedTree;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draws `m` distinct positions from `points` by D² sampling, in selection order.
///
/// The first draw is uniform. Later draws are proportional to the squared
/// distance to the nearest chosen point; when every remaining point coincides
/// with a chosen one, the draw falls back to uniform over the unchosen points.
pub fn kmeanspp(points: &[Vec<f64>], m: usize, seeds: &SeedTree) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::pre(format!(
            "k-means++ needs 1 <= m <= {n}, got m = {m}"
        )));
    }
    let mut rng = seeds.rng();
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while chosen.len() < m {
        let total: f64 = (0..n).filter(|&i| !taken[i]).map(|i| d2[i]).sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !taken[i]) {
                if d2[i] > 0.0 {
                    pick = Some(i);
                    if u < d2[i] {
                        break;
                    }
                    u -= d2[i];
                }
            }
            pick.expect("positive total implies a candidate")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for i in 0..n {
            let d = sq_dist(&points[i], &points[next]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64, (i * i % 7) as f64]).collect()
    }

    #[test]
    fn full_draw_is_permutation() {
        let pts = grid(9);
        let mut s = kmeanspp(&pts, 9, &SeedTree::root(1)).unwrap();
        s.sort();
        assert_eq!(s, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn duplicates_still_fill() {
        let pts = vec![vec![0.0]; 4];
        let s = kmeanspp(&pts, 4, &SeedTree::root(3)).unwrap();
        let mut t = s.clone();
        t.sort();
        assert_eq!(t, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_m() {
        assert!(kmeanspp(&grid(3), 0, &SeedTree::root(0)).is_err());
        assert!(kmeanspp(&grid(3), 4, &SeedTree::root(0)).is_err());
    }
}
