//! Loss kernels shared by the classification problems.
//!
//! Multiclass weights are stored row-major: `theta[c * p + k]`.

/// `sigma(t) = 1 / (1 + e^{-t})`, evaluated without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss `phi(t) = log(1 + e^{-t})`.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// `phi'(t) = -sigma(-t)`
pub fn logistic_d1(t: f64) -> f64 {
    -sigmoid(-t)
}

/// `phi''(t) = sigma(t) sigma(-t)`
pub fn logistic_d2(t: f64) -> f64 {
    sigmoid(t) * sigmoid(-t)
}

pub fn logits(theta: &[f64], d: &[f64], classes: usize) -> Vec<f64> {
    let p = d.len();
    (0..classes)
        .map(|c| theta[c * p..(c + 1) * p].iter().zip(d).map(|(a, b)| a * b).sum())
        .collect()
}

/// Softmax probabilities in place, stabilised by the max logit.
/// Returns `log sum exp` of the input.
pub fn softmax_in_place(z: &mut [f64]) -> f64 {
    let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
    mx + s.ln()
}

pub fn cross_entropy(theta: &[f64], d: &[f64], label: usize, classes: usize) -> f64 {
    let mut z = logits(theta, d, classes);
    let zy = z[label];
    softmax_in_place(&mut z) - zy
}

pub fn predict(theta: &[f64], d: &[f64], classes: usize) -> usize {
    let z = logits(theta, d, classes);
    let mut best = 0;
    for (c, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = c;
        }
    }
    best
}

/// Softmax residual `p - e_y`.
pub fn residual(theta: &[f64], d: &[f64], label: usize, classes: usize) -> Vec<f64> {
    let mut z = logits(theta, d, classes);
    softmax_in_place(&mut z);
    z[label] -= 1.0;
    z
}

/// Accumulates `scale * (coef_c d)` into the row-major `out`.
pub fn outer_acc(coef: &[f64], d: &[f64], scale: f64, out: &mut [f64]) {
    let p = d.len();
    for (c, &w) in coef.iter().enumerate() {
        let w = scale * w;
        if w == 0.0 {
            continue;
        }
        for (o, &dk) in out[c * p..(c + 1) * p].iter_mut().zip(d) {
            *o += w * dk;
        }
    }
}

/// `(diag(p) - p p^T) (V d)`: the cross-entropy Hessian applied to `V`,
/// before the outer product with `d`.
pub fn ce_hessian_coef(theta: &[f64], v: &[f64], d: &[f64], classes: usize) -> Vec<f64> {
    let mut prob = logits(theta, d, classes);
    softmax_in_place(&mut prob);
    let u = logits(v, d, classes);
    let pu: f64 = prob.iter().zip(&u).map(|(a, b)| a * b).sum();
    prob.iter().zip(&u).map(|(pc, uc)| pc * (uc - pu)).collect()
}

pub fn error_rate(theta: &[f64], features: &[Vec<f64>], labels: &[u8], classes: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = features
        .iter()
        .zip(labels)
        .filter(|(d, &y)| predict(theta, d, classes) != y as usize)
        .count();
    wrong as f64 / labels.len() as f64
}

/// Appends a constant bias feature.
pub fn with_bias(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|d| {
            let mut v = d.clone();
            v.push(1.0);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_at_zero() {
        assert!((logistic(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(logistic_d1(0.0), -0.5);
        assert_eq!(logistic_d2(0.0), 0.25);
    }

    #[test]
    fn logistic_is_stable_far_out() {
        assert!(logistic(800.0) >= 0.0 && logistic(800.0) < 1e-300);
        assert!((logistic(-800.0) - 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn cross_entropy_stable_for_large_logits() {
        let theta = [1e3, 0.0, -1e3, 0.0];
        let d = [1.0, 0.0];
        assert!(cross_entropy(&theta, &d, 0, 2).abs() < 1e-12);
        assert!((cross_entropy(&theta, &d, 1, 2) - 2e3).abs() < 1e-9);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let theta = vec![0.0; 30];
        let d = vec![1.0, 2.0, 3.0];
        assert!((cross_entropy(&theta, &d, 4, 10) - 10f64.ln()).abs() < 1e-14);
    }
}
