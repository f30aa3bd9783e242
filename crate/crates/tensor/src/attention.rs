use crate::gemm::{gemm, MatMut, MatRef};
use crate::norm::softmax_in_place;
use crate::{Graph, Tensor, Var};

impl Graph {
    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `[N, Tq, C]`, `k` and `v` are `[N, Tk, C]`; heads split `C` evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qs, ks, vs) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qs.rank(), 3, "attention q must be [N, T, C]");
        let [n, tq, c] = [qs.shape()[0], qs.shape()[1], qs.shape()[2]];
        let tk = ks.shape()[1];
        assert_eq!(ks.shape(), &[n, tk, c], "attention k shape mismatch");
        assert_eq!(vs.shape(), &[n, tk, c], "attention v shape mismatch");
        assert!(heads >= 1 && c % heads == 0, "channels {c} not divisible by {heads} heads");
        let d = c / heads;
        let scale = 1.0 / (d as f64).sqrt();

        // probs[(n * heads + h) * tq * tk ..]
        let mut probs = vec![0.0; n * heads * tq * tk];
        let mut out = vec![0.0; n * tq * c];
        for b in 0..n {
            let qo = b * tq * c;
            let ko = b * tk * c;
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                gemm(
                    MatRef::strided(qs.data(), qo + h * d, tq, d, c),
                    MatRef::strided(ks.data(), ko + h * d, tk, d, c).t(),
                    MatMut::new(p, tq, tk),
                    0.0,
                );
                for row in p.chunks_mut(tk) {
                    for s in row.iter_mut() {
                        *s *= scale;
                    }
                    softmax_in_place(row);
                }
                gemm(
                    MatRef::new(p, tq, tk),
                    MatRef::strided(vs.data(), ko + h * d, tk, d, c),
                    MatMut::strided(&mut out, qo + h * d, tq, d, c),
                    0.0,
                );
            }
        }
        let out = Tensor::from_vec(&[n, tq, c], out);
        self.count_flops(4 * n * tq * tk * c);
        self.push_op(out, &[q, k, v], move |g, parents, _, _| {
            let (qd, kd, vd) = (parents[0].data(), parents[1].data(), parents[2].data());
            let gd = g.data();
            let mut dq = vec![0.0; qd.len()];
            let mut dk = vec![0.0; kd.len()];
            let mut dv = vec![0.0; vd.len()];
            let mut ds = vec![0.0; tq * tk];
            for b in 0..n {
                let qo = b * tq * c;
                let ko = b * tk * c;
                for h in 0..heads {
                    let p = &probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                    // dV = Pᵀ dO
                    gemm(
                        MatRef::new(p, tq, tk).t(),
                        MatRef::strided(gd, qo + h * d, tq, d, c),
                        MatMut::strided(&mut dv, ko + h * d, tk, d, c),
                        0.0,
                    );
                    // dP = dO Vᵀ
                    gemm(
                        MatRef::strided(gd, qo + h * d, tq, d, c),
                        MatRef::strided(vd, ko + h * d, tk, d, c).t(),
                        MatMut::new(&mut ds, tq, tk),
                        0.0,
                    );
                    for (dr, pr) in ds.chunks_mut(tk).zip(p.chunks(tk)) {
                        let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (dv, pv) in dr.iter_mut().zip(pr) {
                            *dv = pv * (*dv - dot) * scale;
                        }
                    }
                    // dQ = dS K, dK = dSᵀ Q
                    gemm(
                        MatRef::new(&ds, tq, tk),
                        MatRef::strided(kd, ko + h * d, tk, d, c),
                        MatMut::strided(&mut dq, qo + h * d, tq, d, c),
                        0.0,
                    );
                    gemm(
                        MatRef::new(&ds, tq, tk).t(),
                        MatRef::strided(qd, qo + h * d, tq, d, c),
                        MatMut::strided(&mut dk, ko + h * d, tk, d, c),
                        0.0,
                    );
                }
            }
            vec![
                Some(Tensor::from_vec(parents[0].shape(), dq)),
                Some(Tensor::from_vec(parents[1].shape(), dk)),
                Some(Tensor::from_vec(parents[2].shape(), dv)),
            ]
        })
    }
}
