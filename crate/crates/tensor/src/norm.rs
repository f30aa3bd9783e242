use crate::{Graph, Tensor, Var};

impl Graph {
    /// Layer normalization over the trailing axis with affine `gamma`, `beta` of shape `[C]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xs = self.value(x);
        let c = xs.last_dim();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        assert_eq!(gm.len(), c, "layer_norm gamma width mismatch");
        assert_eq!(bt.len(), c, "layer_norm beta width mismatch");
        let rows = xs.numel() / c;
        let mut xhat = vec![0.0; xs.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xs.numel()];
        for r in 0..rows {
            let row = &xs.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat[r * c + j] = xh;
                out[r * c + j] = gm[j] * xh + bt[j];
            }
        }
        let out = Tensor::from_vec(xs.shape(), out);
        self.push_op(out, &[x, gamma, beta], move |g, p, _, need| {
            let gd = g.data();
            let gm = p[1].data();
            let dx = need[0].then(|| {
                let mut dx = vec![0.0; gd.len()];
                for r in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..c {
                        let d = gd[r * c + j] * gm[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * c + j];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for j in 0..c {
                        let d = gd[r * c + j] * gm[j];
                        dx[r * c + j] = inv_std[r] * (d - mean_d - xhat[r * c + j] * mean_dx);
                    }
                }
                Tensor::from_vec(p[0].shape(), dx)
            });
            let (dg, db) = if need[1] || need[2] {
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for r in 0..rows {
                    for j in 0..c {
                        dg[j] += gd[r * c + j] * xhat[r * c + j];
                        db[j] += gd[r * c + j];
                    }
                }
                (
                    Some(Tensor::from_vec(&[c], dg)),
                    Some(Tensor::from_vec(&[c], db)),
                )
            } else {
                (None, None)
            };
            vec![dx, dg, db]
        })
    }

    /// Softmax over the trailing axis.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let c = xs.last_dim();
        let mut out = xs.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(xs.shape(), out);
        self.push_op(out, &[x], move |g, _, y, _| {
            let mut dx = vec![0.0; g.numel()];
            for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.data().chunks(c)).zip(y.data().chunks(c)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![Some(Tensor::from_vec(g.shape(), dx))]
        })
    }
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
