//! Categorical losses with log-sum-exp stabilization.

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|&v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&v| v.exp()).collect()
}

/// Lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Returns `(-log softmax(logits)[target], softmax(logits) - onehot(target))`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(target < logits.len());
    let log_probs = log_softmax(logits);
    let loss = -log_probs[target];
    let mut grad: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

/// Sum of per-cell cross-entropies over `logits` laid out as consecutive
/// `categories`-sized chunks, one per grid cell.
pub fn per_cell_cross_entropy(
    logits: &[f64],
    categories: usize,
    targets: &[u8],
) -> (f64, Vec<f64>) {
    debug_assert_eq!(logits.len(), categories * targets.len());
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (cell, &target) in targets.iter().enumerate() {
        let chunk = &logits[cell * categories..(cell + 1) * categories];
        let (loss, g) = softmax_cross_entropy(chunk, target as usize);
        total += loss;
        grad[cell * categories..(cell + 1) * categories].copy_from_slice(&g);
    }
    (total, grad)
}

/// Per-cell argmax decode of a logits vector into category codes.
pub fn per_cell_argmax(logits: &[f64], categories: usize) -> Vec<u8> {
    debug_assert_eq!(logits.len() % categories, 0);
    logits
        .chunks_exact(categories)
        .map(|chunk| argmax(chunk) as u8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = softmax_cross_entropy(&[0.3, 0.3, 0.3, 0.3], 2);
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, 0.0], 0);
        assert!(loss.is_finite());
        assert!(loss < 1e-6);
        assert!(grad.iter().all(|g| g.is_finite()));
        // Magnitudes up to 1e4 also stay finite.
        let (loss2, _) = softmax_cross_entropy(&[1e4, -1e4, 0.0], 1);
        assert!(loss2.is_finite());
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, grad) = softmax_cross_entropy(&[0.1, -2.0, 3.5, 0.0], 3);
        let sum: f64 = grad.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn per_cell_loss_decomposes() {
        let logits = vec![1.0, 0.0, 0.0, 2.0];
        let (total, grad) = per_cell_cross_entropy(&logits, 2, &[0, 1]);
        let (a, _) = softmax_cross_entropy(&logits[0..2], 0);
        let (b, _) = softmax_cross_entropy(&logits[2..4], 1);
        assert!((total - (a + b)).abs() < 1e-12);
        assert_eq!(grad.len(), 4);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(per_cell_argmax(&[0.0, 0.0, 5.0, 1.0], 2), vec![0, 0]);
    }
}
