use crate::{Graph, Tensor, Var};

/// Per-output-index `(i0, i1, frac)` for bilinear sampling with half-pixel
/// centers (align-corners off): `src = (dst + 0.5) * in/out - 0.5`, clamped at 0.
pub fn bilinear_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    assert!(in_len > 0 && out_len > 0, "bilinear axis with zero length");
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of an NHWC tensor without recording a graph.
///
/// Evaluated as nested lerps so that constant regions stay bit-exact.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let ay = bilinear_axis(h, out_h);
    let ax = bilinear_axis(w, out_w);
    let xd = x.data();
    let mut out = vec![0.0; n * out_h * out_w * c];
    let at = |b: usize, iy: usize, ix: usize| ((b * h + iy) * w + ix) * c;
    for b in 0..n {
        for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
                let o = ((b * out_h + oy) * out_w + ox) * c;
                let (s00, s01, s10, s11) = (at(b, y0, x0), at(b, y0, x1), at(b, y1, x0), at(b, y1, x1));
                for ch in 0..c {
                    let top = xd[s00 + ch] + fx * (xd[s01 + ch] - xd[s00 + ch]);
                    let bot = xd[s10 + ch] + fx * (xd[s11 + ch] - xd[s10 + ch]);
                    out[o + ch] = top + fy * (bot - top);
                }
            }
        }
    }
    Tensor::from_vec(&[n, out_h, out_w, c], out)
}

fn resize_bilinear_adjoint(g: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, out_h, out_w, c] = [g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]];
    let ay = bilinear_axis(h, out_h);
    let ax = bilinear_axis(w, out_w);
    let gd = g.data();
    let mut dx = vec![0.0; n * h * w * c];
    for b in 0..n {
        for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
                let o = ((b * out_h + oy) * out_w + ox) * c;
                let taps = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                for (iy, ix, wt) in taps {
                    let s = ((b * h + iy) * w + ix) * c;
                    for ch in 0..c {
                        dx[s + ch] += wt * gd[o + ch];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, h, w, c], dx)
}

impl Graph {
    /// Differentiable bilinear resize of an NHWC tensor.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xs = self.value(x);
        assert_eq!(xs.rank(), 4, "resize input must be NHWC");
        let (h, w) = (xs.shape()[1], xs.shape()[2]);
        if (h, w) == (out_h, out_w) {
            return x;
        }
        let out = resize_bilinear(xs, out_h, out_w);
        self.push_op(out, &[x], move |g, _, _, _| {
            vec![Some(resize_bilinear_adjoint(g, h, w))]
        })
    }
}
