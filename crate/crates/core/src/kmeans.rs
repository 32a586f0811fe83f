//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when inertia improves by less than this fraction.
    pub rel_tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { restarts: 10, max_iter: 300, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++: first center uniform, the rest with probability ∝ D(x)².
/// Falls back to a uniform pick once every point coincides with a center.
fn seed_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, params: &KMeansParams) -> KMeansResult {
    let dim = points[0].len();
    let k = centroids.len();
    let mut assignment = vec![0; points.len()];
    let mut inertia = f64::INFINITY;
    for _ in 0..params.max_iter {
        let mut next_inertia = 0.0;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            *a = c;
            next_inertia += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let improved = inertia - next_inertia;
        inertia = next_inertia;
        if improved.is_finite() && improved <= params.rel_tol * inertia {
            break;
        }
    }
    // final assignment against the last centers
    inertia = 0.0;
    for (a, p) in assignment.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *a = c;
        inertia += d;
    }
    KMeansResult { assignment, centroids, inertia }
}

/// Best of `params.restarts` k-means++/Lloyd runs by inertia.
pub fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, params: &KMeansParams, rng: &mut R) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=points");
    let mut best: Option<KMeansResult> = None;
    for _ in 0..params.restarts.max(1) {
        let run = lloyd(points, seed_plus_plus(points, k, rng), params);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![0.0 + 0.01 * i as f64, 0.0]);
            pts.push(vec![5.0, 5.0 + 0.01 * i as f64]);
        }
        let res = kmeans(&pts, 2, &KMeansParams::default(), &mut ChaCha8Rng::seed_from_u64(0));
        for i in 0..10 {
            assert_eq!(res.assignment[2 * i], res.assignment[0]);
            assert_eq!(res.assignment[2 * i + 1], res.assignment[1]);
        }
        assert_ne!(res.assignment[0], res.assignment[1]);
    }

    #[test]
    fn handles_duplicate_points() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let res = kmeans(&pts, 3, &KMeansParams::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(res.inertia, 0.0);
        assert_eq!(res.assignment.len(), 5);
    }
}
