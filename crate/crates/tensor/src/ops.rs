//! Elementwise, reduction and shape ops.

use crate::{Graph, Tensor, Var};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(out, &[a, b], |g, _, _, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_op(out, &[a, b], |g, _, _, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_op(out, &[a, b], |g, p, _, need| {
            vec![
                need[0].then(|| g.zip_map(p[1], |g, y| g * y)),
                need[1].then(|| g.zip_map(p[0], |g, x| g * x)),
            ]
        })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push_op(out, &[a], move |g, _, _, _| vec![Some(g.map(|v| v * s))])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_scalar);
        self.push_op(out, &[a], |g, p, _, _| {
            vec![Some(g.zip_map(p[0], |g, x| g * gelu_grad_scalar(x)))]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid_scalar);
        self.push_op(out, &[a], |g, _, out, _| {
            vec![Some(g.zip_map(out, |g, s| g * s * (1.0 - s)))]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let src_shape = self.shape(a).to_vec();
        let out = self.value(a).clone().reshape(shape);
        self.push_op(out, &[a], move |g, _, _, _| {
            vec![Some(g.clone().reshape(&src_shape))]
        })
    }

    /// Concatenation along the trailing axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let widths: Vec<usize> = values.iter().map(|v| v.last_dim()).collect();
        let out = Tensor::concat_last(&values);
        self.push_op(out, parts, move |g, _, _, need| {
            let mut start = 0;
            widths
                .iter()
                .zip(need)
                .map(|(&w, &n)| {
                    let slice = n.then(|| g.channels(start, w));
                    start += w;
                    slice
                })
                .collect()
        })
    }

    /// Selects channels `[start, start + len)` of the trailing axis.
    pub fn channels(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).channels(start, len);
        self.push_op(out, &[a], move |g, p, _, _| {
            let src = p[0];
            let c = src.last_dim();
            let mut grad = Tensor::zeros(src.shape());
            let rows = src.numel() / c;
            let gd = g.data();
            let dst = grad.data_mut();
            for r in 0..rows {
                dst[r * c + start..r * c + start + len]
                    .copy_from_slice(&gd[r * len..(r + 1) * len]);
            }
            vec![Some(grad)]
        })
    }

    /// Sum over the trailing axis, keeping it with size 1.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.last_dim();
        let rows = x.numel() / c;
        let data: Vec<f64> = x.data().chunks(c).map(|r| r.iter().sum()).collect();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let out = Tensor::from_vec(&shape, data);
        self.push_op(out, &[a], move |g, p, _, _| {
            let mut grad = Tensor::zeros(p[0].shape());
            let dst = grad.data_mut();
            for r in 0..rows {
                let gv = g.data()[r];
                for v in &mut dst[r * c..(r + 1) * c] {
                    *v = gv;
                }
            }
            vec![Some(grad)]
        })
    }

    /// Mean of all elements as a `[1]` tensor.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.numel() as f64;
        let out = Tensor::scalar(x.sum() / n);
        self.push_op(out, &[a], move |g, p, _, _| {
            vec![Some(Tensor::full(p[0].shape(), g.item() / n))]
        })
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
