//! k-means++ seeding followed by Lloyd iterations.

use nalgebra::DVector;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<DVector<f64>>,
    pub labels: Vec<usize>,
}

fn dist2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng>(data: &[DVector<f64>], k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = d2.iter().rposition(|&v| v > 0.0).unwrap_or(0);
            for (i, &v) in d2.iter().enumerate() {
                acc += v;
                if acc > target && v > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[idx].clone();
        for (v, x) in d2.iter_mut().zip(data) {
            *v = v.min(dist2(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Clusters `data` into `k` groups. A cluster that loses all its points keeps
/// its previous center.
pub fn kmeans<R: Rng>(data: &[DVector<f64>], k: usize, max_iter: usize, rng: &mut R) -> KMeansResult {
    assert!(k >= 1 && data.len() >= k, "kmeans needs at least k points");
    let mut centers = seed_plus_plus(data, k, rng);
    let mut labels: Vec<usize> = data.iter().map(|x| nearest(x, &centers).0).collect();
    for _ in 0..max_iter {
        let d = data[0].len();
        let mut sums = vec![DVector::<f64>::zeros(d); k];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = &sums[j] / counts[j] as f64;
            }
        }
        let next: Vec<usize> = data.iter().map(|x| nearest(x, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    KMeansResult { centers, labels }
}
