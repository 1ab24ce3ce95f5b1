//! Euclidean distance shared by every index.
//!
//! All indexes and the ground-truth oracle score points with [`sq_dist`], so
//! distances of the same (query, point) pair are bit-identical across
//! algorithms. Exactness comparisons rely on that.

/// Squared Euclidean distance, accumulated in `f64` with a fixed summation order.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            let t = x[i] as f64 - y[i] as f64;
            acc[i] += t * t;
        }
    }
    let mut rem = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let t = *x as f64 - *y as f64;
        rem += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rem
}

/// Squared distance between an `f32` point and an `f64` center.
#[inline]
pub fn sq_dist_mixed(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(x, y)| {
            let t = *x as f64 - y;
            t * t
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum() {
        let a: Vec<f32> = (0..11).map(|i| i as f32 * 0.3).collect();
        let b: Vec<f32> = (0..11).map(|i| 1.0 - i as f32 * 0.7).collect();
        let naive: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
            .sum();
        assert!((sq_dist(&a, &b) - naive).abs() < 1e-12 * naive);
        assert_eq!(sq_dist(&a, &a), 0.0);
    }
}
