use crate::ops::sigmoid_scalar;
use crate::{Graph, Tensor, Var};

/// Per-element binary cross-entropy on a logit, `softplus(x) - x*y` in stable form.
pub fn bce_logit_scalar(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

impl Graph {
    /// Mean binary cross-entropy between `logits` and `targets` in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Var {
        let xs = self.value(logits);
        assert_eq!(xs.shape(), targets.shape(), "bce shape mismatch");
        let n = xs.numel() as f64;
        let total: f64 = xs
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| bce_logit_scalar(x, y))
            .sum();
        let targets = targets.clone();
        self.push_op(Tensor::scalar(total / n), &[logits], move |g, p, _, _| {
            let s = g.item() / n;
            vec![Some(p[0].zip_map(&targets, |x, y| (sigmoid_scalar(x) - y) * s))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_cost_ln2() {
        assert!((bce_logit_scalar(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_logit_scalar(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn stable_at_large_magnitude() {
        assert!(bce_logit_scalar(800.0, 1.0) < 1e-300);
        assert!((bce_logit_scalar(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }
}
