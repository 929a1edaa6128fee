//! Plain (non-recording) versions of the primitive ops.

use super::graph::PROB_CLAMP;
use super::kernels;
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Single-channel causal dilated convolution:
/// `y[t] = bias + Σ_j w[j]·x[t − (k−1−j)·dilation]`, zeros before the start.
pub fn dilated_conv1d(x: &[f64], w: &[f64], dilation: usize, bias: f64) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::invalid("empty kernel"));
    }
    if dilation == 0 {
        return Err(Error::invalid("dilation must be positive"));
    }
    let mut out = vec![0.0; x.len()];
    kernels::conv_forward(x, 1, w, &[bias], 1, w.len(), dilation, x.len(), &mut out);
    Ok(out)
}

/// `W x + b` for `W: out × in` given as rows.
pub fn dense(x: &[f64], w: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    if w.len() != b.len() {
        return Err(Error::shape(format!("dense: {} rows vs {} biases", w.len(), b.len())));
    }
    w.iter()
        .zip(b)
        .map(|(row, bias)| {
            if row.len() != x.len() {
                Err(Error::shape(format!("dense: row of {} vs input of {}", row.len(), x.len())))
            } else {
                Ok(bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            }
        })
        .collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    kernels::sigmoid(z)
}

pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    let mut out = z.to_vec();
    kernels::softmax_in_place(&mut out);
    Ok(out)
}

/// Mean binary cross-entropy plus `λ/2 · ‖θ_trainable‖²`.
pub fn bce_l2_loss(p: &[f64], y: &[f64], params: &ParamSet, lambda: f64) -> Result<f64> {
    let bce = mean_bce(p, y, 1.0)?;
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    Ok(bce + 0.5 * lambda * params.trainable_sq_norm())
}

/// Mean (optionally positive-weighted) BCE with probabilities clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn mean_bce(p: &[f64], y: &[f64], pos_weight: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Empty("loss over zero samples".into()));
    }
    if p.len() != y.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let w = if y > 0.5 { pos_weight } else { 1.0 };
            -w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    #[test]
    fn conv_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(dilated_conv1d(&x, &[1.0], 1, 0.0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dilated_conv1d(&x, &[1.0, 1.0], 1, 0.0).unwrap(), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(dilated_conv1d(&x, &[1.0, 0.0], 2, 0.0).unwrap(), vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn conv_rejects_bad_kernels() {
        assert!(dilated_conv1d(&[1.0], &[], 1, 0.0).is_err());
        assert!(dilated_conv1d(&[1.0], &[1.0], 0, 0.0).is_err());
    }

    #[test]
    fn activation_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let s = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn dense_shape_mismatch() {
        assert!(dense(&[1.0, 2.0], &[vec![1.0]], &[0.0]).is_err());
        assert!(dense(&[1.0], &[vec![1.0]], &[0.0, 1.0]).is_err());
        assert_eq!(dense(&[1.0, 2.0], &[vec![3.0, 4.0]], &[0.5]).unwrap(), vec![11.5]);
    }

    #[test]
    fn loss_examples() {
        let empty = ParamSet::new();
        let l = bce_l2_loss(&[1.0, 0.0], &[1.0, 0.0], &empty, 0.0).unwrap();
        assert!(l <= 1e-9);
        let l = bce_l2_loss(&[0.5], &[1.0], &empty, 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let mut ps = ParamSet::new();
        ps.insert("t", Tensor::from_vec(vec![3.0])).unwrap();
        let l = bce_l2_loss(&[1.0], &[1.0], &ps, 2.0).unwrap();
        assert!((l - 9.0).abs() < 1e-9);
        assert!(bce_l2_loss(&[], &[], &ps, 0.0).is_err());
    }

    #[test]
    fn frozen_parameters_skip_l2() {
        let mut ps = ParamSet::new();
        let id = ps.insert("t", Tensor::from_vec(vec![3.0])).unwrap();
        ps.get_mut(id).trainable = false;
        assert!(bce_l2_loss(&[1.0], &[1.0], &ps, 2.0).unwrap() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn softmax_on_simplex_and_shift_invariant(z in proptest::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let s = softmax(&z).unwrap();
            let total: f64 = s.iter().sum();
            proptest::prop_assert!((total - 1.0).abs() <= 1e-12);
            proptest::prop_assert!(s.iter().all(|&v| v >= 0.0 && v <= 1.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let s2 = softmax(&shifted).unwrap();
            for (a, b) in s.iter().zip(&s2) {
                proptest::prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn conv_is_linear(
            x in proptest::collection::vec(-3.0f64..3.0, 1..40),
            seed in 0u64..1000,
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            k in 1usize..5,
            d in 1usize..6,
        ) {
            let mut s = seed;
            let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5 };
            let z: Vec<f64> = x.iter().map(|_| next()).collect();
            let w: Vec<f64> = (0..k).map(|_| next()).collect();
            let w2: Vec<f64> = (0..k).map(|_| next()).collect();
            let mix: Vec<f64> = x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect();
            let lhs = dilated_conv1d(&mix, &w, d, 0.0).unwrap();
            let fx = dilated_conv1d(&x, &w, d, 0.0).unwrap();
            let fz = dilated_conv1d(&z, &w, d, 0.0).unwrap();
            for i in 0..x.len() {
                proptest::prop_assert!((lhs[i] - (a * fx[i] + b * fz[i])).abs() <= 1e-12);
            }
            // linear in the kernel as well
            let wmix: Vec<f64> = w.iter().zip(&w2).map(|(p, q)| a * p + b * q).collect();
            let lhs = dilated_conv1d(&x, &wmix, d, 0.0).unwrap();
            let g2 = dilated_conv1d(&x, &w2, d, 0.0).unwrap();
            for i in 0..x.len() {
                proptest::prop_assert!((lhs[i] - (a * fx[i] + b * g2[i])).abs() <= 1e-12);
            }
        }
    }
}
