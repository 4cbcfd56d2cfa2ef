//! Lloyd's algorithm with k-means++ seeding, and the minimal-k ball cover
//! built on top of it.

use rand::Rng;

use crate::scalar::Real;

/// Lloyd iterations stop after this many passes even if assignments still move.
pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering<T> {
    pub centers: Vec<[T; 3]>,
    /// Index into `centers` for every input point.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn squared<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Nearest center, lowest index on ties.
fn nearest<T: Real>(p: &[T; 3], centers: &[[T; 3]]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, c) in centers.iter().enumerate() {
        let d = squared(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding: the first center is uniform, later ones are drawn with
/// probability proportional to the squared distance to the nearest chosen center.
fn seed_centers<T: Real, R: Rng>(points: &[[T; 3]], k: usize, rng: &mut R) -> Vec<[T; 3]> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut dist: Vec<f64> = points.iter().map(|p| squared(p, &centers[0]).as_f64()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = dist.iter().rposition(|d| *d > 0.0).unwrap_or(0);
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= *d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared(p, &c).as_f64());
        }
        centers.push(c);
    }
    centers
}

/// Partitions `points` into `k` clusters.
pub fn kmeans<T: Real, R: Rng>(points: &[[T; 3]], k: usize, rng: &mut R) -> Clustering<T> {
    assert!(k >= 1 && k <= points.len(), "cluster count must be in 1..=points");
    let mut centers = seed_centers(points, k, rng);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut sums = vec![[T::zero(); 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            for d in 0..3 {
                sums[a][d] += p[d];
            }
            counts[a] += 1;
        }
        for ((c, s), n) in centers.iter_mut().zip(&sums).zip(&counts) {
            // An emptied cluster keeps its previous center.
            if *n > 0 {
                let n = T::lit(*n as f64);
                *c = [s[0] / n, s[1] / n, s[2] / n];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Clustering { centers, assignment, iterations }
}

/// Smallest `k` (searched upward from one) whose Lloyd clustering places every
/// point strictly within `radius` of its own center. Points are in the
/// coordinates of the metric, so plain Euclidean distance applies.
pub fn cover<T: Real, R: Rng>(points: &[[T; 3]], radius: T, rng: &mut R) -> Vec<[T; 3]> {
    let mut distinct = points.to_vec();
    distinct.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    if distinct.is_empty() {
        return Vec::new();
    }
    let r2 = radius * radius;
    for k in 1..distinct.len() {
        let c = kmeans(&distinct, k, rng);
        let covered = distinct.iter().zip(&c.assignment).all(|(p, &a)| squared(p, &c.centers[a]) < r2);
        if covered {
            return c.centers;
        }
    }
    distinct
}
