//! Dense linear layers and NHWC convolutions.

use crate::gemm::{gemm, MatMut, MatRef};
use crate::{Graph, Tensor, Var};

/// Output spatial extent of a convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(len + 2 * pad >= kernel, "kernel larger than padded input");
    (len + 2 * pad - kernel) / stride + 1
}

fn column_sums(g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in g.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn row_len(&self) -> usize {
        self.k * self.k * self.ci
    }

    /// Visits every (output row, kernel tap, input offset) triple that lands inside the image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.k as isize, self.stride as isize, self.pad as isize);
        for n in 0..self.n {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let row = (n * self.ho + oy) * self.wo + ox;
                    for ky in 0..k {
                        let iy = oy as isize * s + ky - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = ox as isize * s + kx - p;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let tap = (ky * k + kx) as usize;
                            let src = ((n * self.h + iy as usize) * self.w + ix as usize) * self.ci;
                            f(row, tap, src);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let rl = self.row_len();
        let ci = self.ci;
        let mut cols = vec![0.0; self.n * self.ho * self.wo * rl];
        self.for_each_tap(|row, tap, src| {
            let dst = row * rl + tap * ci;
            cols[dst..dst + ci].copy_from_slice(&x[src..src + ci]);
        });
        cols
    }

    fn col2im(&self, dcols: &[f64]) -> Vec<f64> {
        let rl = self.row_len();
        let ci = self.ci;
        let mut dx = vec![0.0; self.n * self.h * self.w * ci];
        self.for_each_tap(|row, tap, src| {
            let s = row * rl + tap * ci;
            for (d, v) in dx[src..src + ci].iter_mut().zip(&dcols[s..s + ci]) {
                *d += v;
            }
        });
        dx
    }
}

impl Graph {
    /// `x · w + b` over the trailing axis: x `[.., I]`, w `[I, O]`, b `[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        assert_eq!(ws.rank(), 2, "linear weight must be [in, out]");
        let (fan_in, fan_out) = (ws.shape()[0], ws.shape()[1]);
        assert_eq!(xs.last_dim(), fan_in, "linear input width mismatch");
        let m = xs.numel() / fan_in;
        let mut out = vec![0.0; m * fan_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), fan_out, "linear bias width mismatch");
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            MatRef::new(xs.data(), m, fan_in),
            MatRef::new(ws.data(), fan_in, fan_out),
            MatMut::new(&mut out, m, fan_out),
            1.0,
        );
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let out = Tensor::from_vec(&shape, out);
        self.count_flops(2 * m * fan_in * fan_out);
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push_op(out, &parents, move |g, p, _, need| {
            let (xv, wv) = (p[0], p[1]);
            let gm = MatRef::new(g.data(), m, fan_out);
            let dx = need[0].then(|| {
                let mut dx = vec![0.0; m * fan_in];
                gemm(
                    gm,
                    MatRef::new(wv.data(), fan_in, fan_out).t(),
                    MatMut::new(&mut dx, m, fan_in),
                    0.0,
                );
                Tensor::from_vec(xv.shape(), dx)
            });
            let dw = need[1].then(|| {
                let mut dw = vec![0.0; fan_in * fan_out];
                gemm(
                    MatRef::new(xv.data(), m, fan_in).t(),
                    gm,
                    MatMut::new(&mut dw, fan_in, fan_out),
                    0.0,
                );
                Tensor::from_vec(&[fan_in, fan_out], dw)
            });
            let mut grads = vec![dx, dw];
            if p.len() == 3 {
                grads.push(need[2].then(|| Tensor::from_vec(&[fan_out], column_sums(g.data(), fan_out))));
            }
            grads
        })
    }

    /// Dense 2D convolution on NHWC input with a square `[k, k, Cin, Cout]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        assert_eq!(xs.rank(), 4, "conv2d input must be NHWC");
        assert_eq!(ws.rank(), 4, "conv2d weight must be [k, k, Cin, Cout]");
        let [n, h, wd, ci] = [xs.shape()[0], xs.shape()[1], xs.shape()[2], xs.shape()[3]];
        let [k, k2, wci, co] = [ws.shape()[0], ws.shape()[1], ws.shape()[2], ws.shape()[3]];
        assert_eq!(k, k2, "only square kernels are supported");
        assert_eq!(ci, wci, "conv2d channel mismatch");
        if k == 1 && stride == 1 && pad == 0 {
            let w2 = self.reshape(w, &[ci, co]);
            return self.linear(x, w2, b);
        }
        let geom = ConvGeom {
            n,
            h,
            w: wd,
            ci,
            k,
            stride,
            pad,
            ho: conv_out_len(h, k, stride, pad),
            wo: conv_out_len(wd, k, stride, pad),
        };
        let rows = n * geom.ho * geom.wo;
        let rl = geom.row_len();
        let cols = geom.im2col(xs.data());
        let mut out = vec![0.0; rows * co];
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), co, "conv2d bias width mismatch");
            for row in out.chunks_mut(co) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            MatRef::new(&cols, rows, rl),
            MatRef::new(ws.data(), rl, co),
            MatMut::new(&mut out, rows, co),
            1.0,
        );
        let out = Tensor::from_vec(&[n, geom.ho, geom.wo, co], out);
        self.count_flops(2 * rows * rl * co);
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push_op(out, &parents, move |g, p, _, need| {
            let gm = MatRef::new(g.data(), rows, co);
            let dx = need[0].then(|| {
                let mut dcols = vec![0.0; rows * rl];
                gemm(
                    gm,
                    MatRef::new(p[1].data(), rl, co).t(),
                    MatMut::new(&mut dcols, rows, rl),
                    0.0,
                );
                Tensor::from_vec(p[0].shape(), geom.col2im(&dcols))
            });
            let dw = need[1].then(|| {
                let mut dw = vec![0.0; rl * co];
                gemm(
                    MatRef::new(&cols, rows, rl).t(),
                    gm,
                    MatMut::new(&mut dw, rl, co),
                    0.0,
                );
                Tensor::from_vec(p[1].shape(), dw)
            });
            let mut grads = vec![dx, dw];
            if p.len() == 3 {
                grads.push(need[2].then(|| Tensor::from_vec(&[co], column_sums(g.data(), co))));
            }
            grads
        })
    }

    /// Depthwise (per-channel) stride-1 convolution with a `[k, k, C]` kernel.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        assert_eq!(xs.rank(), 4, "depthwise input must be NHWC");
        let [n, h, wd, c] = [xs.shape()[0], xs.shape()[1], xs.shape()[2], xs.shape()[3]];
        let k = ws.shape()[0];
        assert_eq!(ws.shape(), &[k, k, c], "depthwise weight must be [k, k, C]");
        let geom = ConvGeom {
            n,
            h,
            w: wd,
            ci: c,
            k,
            stride: 1,
            pad,
            ho: conv_out_len(h, k, 1, pad),
            wo: conv_out_len(wd, k, 1, pad),
        };
        let rows = n * geom.ho * geom.wo;
        let mut out = vec![0.0; rows * c];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(c) {
                row.copy_from_slice(bias);
            }
        }
        {
            let xd = xs.data();
            let wdat = ws.data();
            geom.for_each_tap(|row, tap, src| {
                let o = &mut out[row * c..(row + 1) * c];
                let kw = &wdat[tap * c..(tap + 1) * c];
                for ((o, xv), wv) in o.iter_mut().zip(&xd[src..src + c]).zip(kw) {
                    *o += xv * wv;
                }
            });
        }
        let out = Tensor::from_vec(&[n, geom.ho, geom.wo, c], out);
        self.count_flops(2 * k * k * c * rows);
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push_op(out, &parents, move |g, p, _, need| {
            let gd = g.data();
            let xd = p[0].data();
            let wdat = p[1].data();
            let mut dx = need[0].then(|| vec![0.0; xd.len()]);
            let mut dw = need[1].then(|| vec![0.0; wdat.len()]);
            geom.for_each_tap(|row, tap, src| {
                let gr = &gd[row * c..(row + 1) * c];
                if let Some(dx) = dx.as_mut() {
                    let kw = &wdat[tap * c..(tap + 1) * c];
                    for ((d, gv), wv) in dx[src..src + c].iter_mut().zip(gr).zip(kw) {
                        *d += gv * wv;
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    for ((d, gv), xv) in dw[tap * c..(tap + 1) * c].iter_mut().zip(gr).zip(&xd[src..src + c]) {
                        *d += gv * xv;
                    }
                }
            });
            let mut grads = vec![
                dx.map(|d| Tensor::from_vec(p[0].shape(), d)),
                dw.map(|d| Tensor::from_vec(p[1].shape(), d)),
            ];
            if p.len() == 3 {
                grads.push(need[2].then(|| Tensor::from_vec(&[c], column_sums(gd, c))));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as a reference.
    fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [n, h, wd, ci] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (k, co) = (w.shape()[0], w.shape()[3]);
        let ho = conv_out_len(h, k, stride, pad);
        let wo = conv_out_len(wd, k, stride, pad);
        let mut out = Tensor::zeros(&[n, ho, wo, co]);
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for o in 0..co {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                for c in 0..ci {
                                    acc += x.data()[((b * h + iy as usize) * wd + ix as usize) * ci + c]
                                        * w.data()[((ky * k + kx) * ci + c) * co + o];
                                }
                            }
                        }
                        out.data_mut()[((b * ho + oy) * wo + ox) * co + o] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 101) as f64 - 50.0) * scale).collect())
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        let x = ramp(&[2, 7, 6, 3], 0.01);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (4, 4, 0), (2, 2, 0), (7, 4, 3)] {
            let w = ramp(&[k, k, 3, 5], 0.003);
            let mut g = Graph::inference();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let y = g.conv2d(xv, wv, None, s, p);
            let expect = naive_conv(&x, &w, s, p);
            assert!(g.value(y).max_abs_diff(&expect) < 1e-12, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn depthwise_matches_grouped_dense() {
        let x = ramp(&[1, 5, 5, 2], 0.02);
        let wdw = ramp(&[3, 3, 2], 0.05);
        // expand into a block-diagonal dense kernel
        let mut dense = Tensor::zeros(&[3, 3, 2, 2]);
        for t in 0..9 {
            for c in 0..2 {
                dense.data_mut()[(t * 2 + c) * 2 + c] = wdw.data()[t * 2 + c];
            }
        }
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let wv = g.constant(wdw);
        let y = g.depthwise_conv2d(xv, wv, None, 1);
        assert!(g.value(y).max_abs_diff(&naive_conv(&x, &dense, 1, 1)) < 1e-12);
    }
}
