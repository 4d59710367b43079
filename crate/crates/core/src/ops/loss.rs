use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[N, C]` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_rank("softmax", 2)?;
    let c = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
///
/// Returns the loss and the row-normalized probabilities.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    logits.expect_rank("softmax_cross_entropy", 2)?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::arg(
            "softmax_cross_entropy",
            format!("label {bad} outside [0, {c})"),
        ));
    }
    let mut loss = T::zero();
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_total = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        loss += log_total - (row[label] - max);
    }
    Ok((loss / T::lit(n as f64), softmax(logits)?))
}

/// `(softmax - onehot) / N`.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    probabilities: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    probabilities.expect_rank("softmax_cross_entropy backward", 2)?;
    let (n, c) = (probabilities.shape()[0], probabilities.shape()[1]);
    if labels.len() != n || labels.iter().any(|&l| l >= c) {
        return Err(Error::arg(
            "softmax_cross_entropy backward",
            "labels inconsistent with probabilities",
        ));
    }
    let scale = T::one() / T::lit(n as f64);
    let mut g = probabilities.clone();
    for (row, &label) in g.data_mut().chunks_exact_mut(c).zip(labels) {
        row[label] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::<f64>::full(&[3, 7], 0.25);
        let (loss, probs) = softmax_cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        for row in probs.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_logit_drives_loss_to_zero() {
        let logits = Tensor::<f64>::from_vec(&[1, 3], vec![0.0, 800.0, -3.0]).unwrap();
        let (loss, probs) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-12);
        assert!(probs.all_finite());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::<f32>::zeros(&[2, 3]);
        assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let logits = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let (_, p) = softmax_cross_entropy(&logits, &[1]).unwrap();
        let g = softmax_cross_entropy_backward(&p, &[1]).unwrap();
        assert_eq!(g.data(), &[0.5, -0.5]);
    }
}
