use crate::tensor::{Scalar, Tensor};

use super::NnError;

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / N`. Logits are max-shifted per row.
pub fn loss_and_grad<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>), NnError> {
    let (n, c) = match *logits.shape() {
        [n, c] => (n, c),
        _ => return Err(NnError::Shape(format!("logits must be [N, C], got {:?}", logits.shape()))),
    };
    if labels.len() != n {
        return Err(NnError::Shape(format!("{} labels for batch of {n}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(NnError::Label { label, classes: c });
    }
    let inv_n = T::one() / T::from_usize(n);
    let mut grad = logits.zeros_like();
    let mut total = T::zero();
    for (i, (row, &y)) in logits.data().chunks(c).zip(labels).enumerate() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for &v in row {
            z += (v - m).exp();
        }
        let log_z = z.ln();
        total += log_z - (row[y] - m);
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        for (k, (gv, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - m - log_z).exp();
            *gv = (p - if k == y { T::one() } else { T::zero() }) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{uniform_symmetric, SeededRng};

    #[test]
    fn uniform_logits_give_ln4() {
        let logits = Tensor::full(&[5, 4], 0.3f64).unwrap();
        let (loss, _) = loss_and_grad(&logits, &[0, 1, 2, 3, 0]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logit() {
        let logits = Tensor::new(&[1, 4], vec![50.0f64, 0.0, 0.0, 0.0]).unwrap();
        let (loss, _) = loss_and_grad(&logits, &[0]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn label_range_checked() {
        let logits = Tensor::zeros(&[1, 4]).unwrap();
        assert!(matches!(loss_and_grad::<f32>(&logits, &[4]), Err(NnError::Label { label: 4, classes: 4 })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits: Tensor<f64> = uniform_symmetric(&[3, 4], 3.0, &mut SeededRng::new(1)).unwrap();
        let labels = [2, 0, 3];
        let (_, g) = loss_and_grad(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p.data_mut()[i] += h;
            let mut m = logits.clone();
            m.data_mut()[i] -= h;
            let num = (loss_and_grad(&p, &labels).unwrap().0 - loss_and_grad(&m, &labels).unwrap().0) / (2.0 * h);
            let a = g.data()[i];
            let rel = (a - num).abs() / (a.abs() + num.abs()).max(1e-8);
            assert!(rel < 1e-6, "{i}: {a} vs {num}");
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        let t = Tensor::new(&[2, 4], vec![1.0f32, 3.0, 3.0, 0.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
