//! Logistic loss on raw log-odds scores.

/// Logistic function, evaluated without overflow on either tail.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient and Hessian of the log loss with respect to the score.
///
/// `grad = σ(s) - y`, `hess = σ(s)(1 - σ(s))`. For a positive label the
/// gradient is computed as `-σ(-s)`, which makes swapping the classes and
/// negating the score an exact sign flip of the gradient.
#[inline]
pub fn loss_grad_hess(score: f64, label: u8) -> (f64, f64) {
    let p = sigmoid(score);
    let q = sigmoid(-score);
    let grad = if label == 1 { -q } else { p };
    (grad, p * q)
}

/// Log loss of one row computed from its score, `ln(1 + e^(-s))` for a
/// positive label and `ln(1 + e^s)` for a negative one. Exactly equal for
/// `(s, 1)` and `(-s, 0)`.
#[inline]
pub fn score_loss(score: f64, label: u8) -> f64 {
    let x = if label == 1 { -score } else { score };
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(score: f64, label: u8) -> f64 {
        let p = sigmoid(score);
        if label == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    #[test]
    fn at_zero() {
        assert_eq!(loss_grad_hess(0.0, 1), (-0.5, 0.25));
        assert_eq!(loss_grad_hess(0.0, 0), (0.5, 0.25));
    }

    #[test]
    fn finite_differences() {
        let step = 1e-6;
        for &s in &[-4.0, -1.3, -0.2, 0.0, 0.7, 2.5, 5.0] {
            for label in [0u8, 1] {
                let (g, h) = loss_grad_hess(s, label);
                let fd_g = (loss(s + step, label) - loss(s - step, label)) / (2.0 * step);
                assert!((g - fd_g).abs() < 1e-6, "grad at {s}/{label}: {g} vs {fd_g}");
                let fd_h = (loss(s + 1e-4, label) - 2.0 * loss(s, label) + loss(s - 1e-4, label)) / 1e-8;
                assert!((h - fd_h).abs() < 1e-4, "hess at {s}/{label}: {h} vs {fd_h}");
            }
        }
    }

    #[test]
    fn mirrored_classes_flip_gradient_exactly() {
        for &s in &[-3.1, -0.4, 0.0, 0.9, 12.0] {
            let (g1, h1) = loss_grad_hess(s, 1);
            let (g0, h0) = loss_grad_hess(-s, 0);
            assert_eq!(g1, -g0);
            assert_eq!(h1, h0);
        }
    }

    #[test]
    fn sigmoid_tails_are_finite() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn score_loss_matches_probability_form() {
        for &s in &[-30.0f64, -3.0, -0.2, 0.0, 0.7, 4.0, 25.0] {
            for y in [0u8, 1] {
                if s.abs() > 10.0 {
                    continue;
                }
                let direct = loss(s, y);
                assert!((score_loss(s, y) - direct).abs() <= 1e-12 * direct.max(1.0), "{s} {y}");
            }
            assert_eq!(score_loss(s, 1), score_loss(-s, 0));
            assert!(score_loss(s, 0).is_finite() && score_loss(s, 1) >= 0.0);
        }
    }
}
