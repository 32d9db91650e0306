//! Exact (O(N^2)) t-SNE: Gaussian affinities with per-point bandwidth
//! found by binary search on entropy, Student-t low-dimensional kernel,
//! gradient descent with momentum and early exaggeration.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Momentum before/after the switch iteration.
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub momentum_switch_iter: usize,
    /// Affinity multiplier during the first `exaggeration_iters` iterations.
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub rng_seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_iter: 250,
            early_exaggeration: 4.0,
            exaggeration_iters: 100,
            rng_seed: 0,
        }
    }
}

/// Tolerance on each row's entropy against log2(perplexity).
const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;

fn squared_distances(points: &Array2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    d
}

/// Conditional distribution p_{j|i} for one row at precision beta, plus
/// its Shannon entropy in bits.
fn row_affinities(dist_row: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let n = dist_row.len();
    // Shift by the nearest-neighbor distance so large beta never underflows
    // every entry to zero.
    let min_d = dist_row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p = vec![0.0; n];
    let mut sum = 0.0;
    for (j, &d) in dist_row.iter().enumerate() {
        if j != i {
            let v = (-beta * (d - min_d)).exp();
            p[j] = v;
            sum += v;
        }
    }
    let mut entropy_bits = 0.0;
    for v in &mut p {
        *v /= sum;
        if *v > 0.0 {
            entropy_bits -= *v * v.log2();
        }
    }
    (p, entropy_bits)
}

/// Conditional affinity matrix P_{j|i}: per-row Gaussian bandwidths found
/// by binary search so each row's entropy hits log2(perplexity). Zero
/// diagonal, rows sum to 1.
pub fn conditional_affinities(
    points: &Array2<f64>,
    perplexity: f64,
) -> Result<Array2<f64>, AnalysisError> {
    let n = points.nrows();
    assert!(n >= 4, "need at least 4 points");
    assert!(
        perplexity > 0.0 && perplexity <= (n as f64 - 1.0) / 3.0,
        "perplexity {perplexity} too large for {n} points"
    );
    let distances = squared_distances(points);
    if distances.iter().all(|&d| d == 0.0) {
        return Err(AnalysisError::DegeneratePoints);
    }
    let target = perplexity.log2();

    let mut conditional = Array2::zeros((n, n));
    for i in 0..n {
        let row: Vec<f64> = distances.row(i).to_vec();
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut p = vec![0.0; n];
        for _ in 0..MAX_BISECTIONS {
            let (row_p, entropy) = row_affinities(&row, i, beta);
            p = row_p;
            let diff = entropy - target;
            if diff.abs() <= ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                // Too much entropy: sharpen by raising beta.
                beta_min = beta;
                beta = if beta_max.is_infinite() { beta * 2.0 } else { (beta + beta_max) / 2.0 };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() { beta / 2.0 } else { (beta + beta_min) / 2.0 };
            }
        }
        for (j, &v) in p.iter().enumerate() {
            conditional[[i, j]] = v;
        }
    }
    Ok(conditional)
}

/// Symmetrized affinity matrix P = (P_{j|i} + P_{i|j}) / (2N). Zero
/// diagonal, sums to 1.
pub fn pairwise_affinities(
    points: &Array2<f64>,
    perplexity: f64,
) -> Result<Array2<f64>, AnalysisError> {
    let conditional = conditional_affinities(points, perplexity)?;
    let n = points.nrows();
    Ok((&conditional + &conditional.t()) / (2.0 * n as f64))
}

/// Student-t (1 d.o.f.) kernel weights and normalized Q for an embedding.
fn low_dim_q(embedding: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = embedding.nrows();
    let mut w = Array2::zeros((n, n));
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = embedding
                .row(i)
                .iter()
                .zip(embedding.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = 1.0 / (1.0 + d);
            w[[i, j]] = v;
            w[[j, i]] = v;
            sum += 2.0 * v;
        }
    }
    let q = w.mapv(|v| (v / sum).max(1e-300));
    (w, q)
}

fn kl_divergence(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv).ln())
        .sum()
}

/// Gradient of KL(P || Q) with respect to the embedding.
pub(crate) fn tsne_gradient(
    p: &Array2<f64>,
    embedding: &Array2<f64>,
) -> Array2<f64> {
    let (w, q) = low_dim_q(embedding);
    let n = embedding.nrows();
    let dims = embedding.ncols();
    let mut grad = Array2::zeros((n, dims));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let coeff = 4.0 * (p[[i, j]] - q[[i, j]]) * w[[i, j]];
            for d in 0..dims {
                grad[[i, d]] += coeff * (embedding[[i, d]] - embedding[[j, d]]);
            }
        }
    }
    grad
}

/// Run t-SNE to 2D. Returns the final coordinates and the KL(P||Q) trace,
/// one entry per iteration, always measured against the un-exaggerated P.
pub fn tsne(
    points: &Array2<f64>,
    config: &TsneConfig,
) -> Result<(Array2<f64>, Vec<f64>), AnalysisError> {
    let n = points.nrows();
    let p = pairwise_affinities(points, config.perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid stddev");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut velocity: Array2<f64> = Array2::zeros((n, 2));
    let mut trace = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let p_eff = if iter < config.exaggeration_iters {
            p.mapv(|v| v * config.early_exaggeration)
        } else {
            p.clone()
        };
        let grad = tsne_gradient(&p_eff, &y);
        let momentum = if iter < config.momentum_switch_iter {
            config.momentum_early
        } else {
            config.momentum_late
        };
        velocity = velocity * momentum - grad * config.learning_rate;
        y = y + &velocity;
        // Re-center so the embedding does not drift.
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        for mut row in y.rows_mut() {
            row -= &mean;
        }

        let (_, q) = low_dim_q(&y);
        trace.push(kl_divergence(&p, &q));
    }
    Ok((y, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn simplex_points() -> Array2<f64> {
        // 4 points at regular 3-simplex vertices (standard basis in 4D).
        let mut pts = Array2::zeros((4, 4));
        for i in 0..4 {
            pts[[i, i]] = 1.0;
        }
        pts
    }

    /// Two well-separated 10-D Gaussian clusters, 30 points each.
    pub(super) fn gaussian_clusters(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Array2::zeros((60, 10));
        let mut labels = Vec::with_capacity(60);
        for i in 0..60 {
            let center = if i < 30 { 0.0 } else { 50.0 };
            for d in 0..10 {
                pts[[i, d]] = center + normal.sample(&mut rng);
            }
            labels.push(usize::from(i >= 30));
        }
        (pts, labels)
    }

    #[test]
    fn simplex_affinities_uniform() {
        let p = pairwise_affinities(&simplex_points(), 1.0).unwrap();
        let expect = 1.0 / 12.0;
        for i in 0..4 {
            assert_eq!(p[[i, i]], 0.0);
            for j in 0..4 {
                if i != j {
                    assert_abs_diff_eq!(p[[i, j]], expect, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn affinities_sum_to_one_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = Array2::from_shape_fn((25, 6), |_| rng.gen_range(-1.0..1.0));
        let p = pairwise_affinities(&pts, 5.0).unwrap();
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-12);
        for i in 0..25 {
            for j in 0..25 {
                assert!(p[[i, j]] >= 0.0);
                assert_abs_diff_eq!(p[[i, j]], p[[j, i]], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn row_entropy_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((40, 5), |_| rng.gen_range(-2.0..2.0));
        let perplexity: f64 = 10.0;
        let distances = squared_distances(&pts);
        // Recompute entropy from the conditional search, independently.
        for i in 0..40 {
            let row: Vec<f64> = distances.row(i).to_vec();
            let mut beta = 1.0;
            let mut beta_min = f64::NEG_INFINITY;
            let mut beta_max = f64::INFINITY;
            let mut entropy = 0.0;
            for _ in 0..MAX_BISECTIONS {
                let (_, e) = row_affinities(&row, i, beta);
                entropy = e;
                let diff = e - perplexity.log2();
                if diff.abs() <= ENTROPY_TOL {
                    break;
                }
                if diff > 0.0 {
                    beta_min = beta;
                    beta = if beta_max.is_infinite() { beta * 2.0 } else { (beta + beta_max) / 2.0 };
                } else {
                    beta_max = beta;
                    beta = if beta_min.is_infinite() { beta / 2.0 } else { (beta + beta_min) / 2.0 };
                }
            }
            assert_abs_diff_eq!(entropy, perplexity.log2(), epsilon = ENTROPY_TOL);
        }
    }

    #[test]
    fn degenerate_points_rejected() {
        let pts = Array2::zeros((5, 3));
        assert!(matches!(
            pairwise_affinities(&pts, 1.0),
            Err(AnalysisError::DegeneratePoints)
        ));
    }

    #[test]
    fn gradient_zero_when_p_equals_q() {
        // Contrive P := Q(Y); the gradient at Y must then vanish.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        let (_, q) = low_dim_q(&y);
        let grad = tsne_gradient(&q, &y);
        for &g in grad.iter() {
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kl_non_negative_every_iteration() {
        let (pts, _) = gaussian_clusters(5);
        let mut config = TsneConfig::default();
        config.iterations = 150;
        config.perplexity = 10.0;
        let (_, trace) = tsne(&pts, &config).unwrap();
        assert_eq!(trace.len(), 150);
        assert!(trace.iter().all(|&kl| kl >= 0.0));
    }

    #[test]
    fn clusters_separate_with_high_purity() {
        let (pts, labels) = gaussian_clusters(7);
        let mut config = TsneConfig::default();
        config.perplexity = 10.0;
        config.iterations = 400;
        let (y, trace) = tsne(&pts, &config).unwrap();

        // Nearest-neighbor label purity in 2D.
        let mut pure = 0;
        for i in 0..60 {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..60 {
                if i == j {
                    continue;
                }
                let d: f64 = y
                    .row(i)
                    .iter()
                    .zip(y.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if labels[best] == labels[i] {
                pure += 1;
            }
        }
        let purity = pure as f64 / 60.0;
        assert!(purity > 0.9, "purity {purity}");

        // Final KL must improve at least 10% on the post-exaggeration KL.
        let post_exaggeration = trace[config.exaggeration_iters];
        let final_kl = *trace.last().unwrap();
        assert!(
            final_kl < 0.9 * post_exaggeration,
            "final {final_kl} vs post-exaggeration {post_exaggeration}"
        );
    }

    #[test]
    fn tsne_deterministic_per_seed() {
        let (pts, _) = gaussian_clusters(1);
        let mut config = TsneConfig::default();
        config.iterations = 50;
        config.perplexity = 8.0;
        let (y1, t1) = tsne(&pts, &config).unwrap();
        let (y2, t2) = tsne(&pts, &config).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(t1, t2);
    }
}
