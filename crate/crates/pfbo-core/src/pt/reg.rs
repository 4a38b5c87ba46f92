//! Stationarity regulariser: weighted KL between posterior predictions at
//! nearby query points, with linearly decaying weight
//! w(x_j, x_i) = max(0, 1 - ||x_j - x_i||_2 / epsilon).

use pfbo_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::riemann::{kl_rows, RiemannPosterior};

/// One ordered pair (j, i) inside the epsilon-ball, with its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallPair {
    pub j: usize,
    pub i: usize,
    pub weight: f64,
}

/// All ordered pairs of query points within distance epsilon (i != j).
/// Pairs at exactly epsilon are in the ball with weight zero.
pub fn epsilon_pairs(pred_x: &Tensor<f64>, epsilon: f64) -> Vec<BallPair> {
    let n = pred_x.shape()[0];
    let mut pairs = Vec::new();
    if epsilon <= 0.0 {
        return pairs;
    }
    for j in 0..n {
        for i in 0..n {
            if i == j {
                continue;
            }
            let dist = pred_x
                .row(j)
                .iter()
                .zip(pred_x.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist <= epsilon {
                pairs.push(BallPair { j, i, weight: (1.0 - dist / epsilon).max(0.0) });
            }
        }
    }
    pairs
}

/// Pair-count-normalized penalty over a batch of posterior rows:
/// sum over in-ball ordered pairs of w(j,i) * KL(row_j || row_i), divided by
/// the number of in-ball pairs; 0 when the ball structure is empty.
pub fn regulariser(post: &RiemannPosterior, pred_x: &Tensor<f64>, epsilon: f64) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(CoreError::param("regulariser requires epsilon > 0"));
    }
    if pred_x.shape()[0] != post.n_queries() {
        return Err(CoreError::contract(
            "regulariser",
            "one posterior row per query point required",
        ));
    }
    let pairs = epsilon_pairs(pred_x, epsilon);
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pairs
        .iter()
        .map(|p| p.weight * kl_rows(post.row(p.j), post.row(p.i)))
        .sum();
    Ok(total / pairs.len() as f64)
}
