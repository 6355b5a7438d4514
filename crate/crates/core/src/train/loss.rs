use crate::error::{Error, Result};

/// Softmax cross-entropy of `logits` against class `target`.
///
/// Returns the loss and its gradient with respect to the logits,
/// `softmax(y) - onehot(target)`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Shape(format!(
            "target class {target} out of range for {} outputs",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&y| (y - max).exp()).collect();
    let norm: f64 = probs.iter().sum();
    let loss = norm.ln() - (logits[target] - max);
    probs.iter_mut().for_each(|p| *p /= norm);
    probs[target] -= 1.0;
    Ok((loss, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = cross_entropy(&[0.3; 10], 4).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        assert!((grad[4] + 0.9).abs() < 1e-15);
    }

    #[test]
    fn confident_target() {
        let mut y = vec![0.0; 10];
        y[7] = 50.0;
        let (loss, _) = cross_entropy(&y, 7).unwrap();
        assert!(loss < 1e-20);
        assert!(cross_entropy(&y, 10).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let target = rng.gen_range(0..6);
            let (_, grad) = cross_entropy(&y, target).unwrap();
            assert!(grad.iter().sum::<f64>().abs() < 1e-14);
            for i in 0..6 {
                let eps = 1e-6;
                let mut yp = y.clone();
                yp[i] += eps;
                let mut ym = y.clone();
                ym[i] -= eps;
                let fd = (cross_entropy(&yp, target).unwrap().0 - cross_entropy(&ym, target).unwrap().0) / (2.0 * eps);
                assert!((fd - grad[i]).abs() < 1e-8);
            }
        }
    }
}
