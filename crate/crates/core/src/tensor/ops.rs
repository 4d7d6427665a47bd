//! Primitive differentiable operations.

use std::rc::Rc;

use super::{accumulate_grad, accumulate_grad_owned, Node, Tensor};

fn assert_same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "dimension error: {op} operands have mismatched shapes"
    );
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "add");
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone(), other.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                accumulate_grad(&pa, g);
                accumulate_grad(&pb, g);
            }),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "sub");
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone(), other.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                accumulate_grad(&pa, g);
                accumulate_grad_owned(&pb, g.iter().map(|v| -v).collect());
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_same_shape(self, other, "mul");
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone(), other.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let da: Vec<f64> = {
                    let b = pb.data();
                    g.iter().zip(b.iter()).map(|(gi, bi)| gi * bi).collect()
                };
                accumulate_grad_owned(&pa, da);
                let db: Vec<f64> = {
                    let a = pa.data();
                    g.iter().zip(a.iter()).map(|(gi, ai)| gi * ai).collect()
                };
                accumulate_grad_owned(&pb, db);
            }),
        )
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a * c).collect();
        let p = self.clone();
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                accumulate_grad_owned(&p, g.iter().map(|gi| gi * c).collect());
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a + c).collect();
        let p = self.clone();
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                accumulate_grad(&p, out.grad.as_ref().unwrap());
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Elementwise |x|; the subgradient at 0 is taken as 0.
    pub fn abs(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a.abs()).collect();
        let p = self.clone();
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let d: Vec<f64> = {
                    let x = p.data();
                    g.iter()
                        .zip(x.iter())
                        .map(|(gi, xi)| if *xi == 0.0 { 0.0 } else { gi * xi.signum() })
                        .collect()
                };
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// Elementwise x^p. For non-integer p the input must be positive.
    pub fn powf(&self, e: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a.powf(e)).collect();
        let p = self.clone();
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let d: Vec<f64> = {
                    let x = p.data();
                    g.iter()
                        .zip(x.iter())
                        .map(|(gi, xi)| gi * e * xi.powf(e - 1.0))
                        .collect()
                };
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a.exp()).collect();
        let p = self.clone();
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let d: Vec<f64> = g.iter().zip(out.data.iter()).map(|(gi, y)| gi * y).collect();
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    pub fn ln(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|a| a.ln()).collect();
        let p = self.clone();
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let d: Vec<f64> = {
                    let x = p.data();
                    g.iter().zip(x.iter()).map(|(gi, xi)| gi / xi).collect()
                };
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()))
            .collect();
        let p = self.clone();
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let d: Vec<f64> = {
                    let xs = p.data();
                    g.iter()
                        .zip(xs.iter())
                        .map(|(gi, &x)| {
                            let inner = C * (x + A * x * x * x);
                            let t = inner.tanh();
                            let sech2 = 1.0 - t * t;
                            let d_inner = C * (1.0 + 3.0 * A * x * x);
                            gi * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner)
                        })
                        .collect()
                };
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (sa, sb) = (self.shape(), other.shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "dimension error: matmul {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(&self.data(), &other.data(), m, k, n);
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            data,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                // dA = G B^T
                let da: Vec<f64> = {
                    let b = pb.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for p in 0..k {
                            let brow = &b[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            darow[p] = s;
                        }
                    }
                    da
                };
                accumulate_grad_owned(&pa, da);
                // dB = A^T G
                let db: Vec<f64> = {
                    let a = pa.data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let arow = &a[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = arow[p];
                            if aip == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                dbrow[j] += aip * grow[j];
                            }
                        }
                    }
                    db
                };
                accumulate_grad_owned(&pb, db);
            }),
        )
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 2, "dimension error: transpose requires 2-D");
        let (m, n) = (s[0], s[1]);
        let x = self.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = x[i * n + j];
            }
        }
        drop(x);
        let p = self.clone();
        Tensor::from_op(
            data,
            vec![n, m],
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let mut d = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        d[i * n + j] = g[j * m + i];
                    }
                }
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "dimension error: reshape {:?} -> {:?}",
            self.shape(),
            shape
        );
        let p = self.clone();
        Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                accumulate_grad(&p, out.grad.as_ref().unwrap());
            }),
        )
    }

    /// Concatenate along `axis`. All other dimensions must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "contract violation: concat of nothing");
        let base = parts[0].shape();
        assert!(axis < base.len(), "dimension error: concat axis {axis} out of range");
        let mut axis_total = 0;
        for p in parts {
            let s = p.shape();
            assert_eq!(s.len(), base.len(), "dimension error: concat rank mismatch");
            for (d, (sd, bd)) in s.iter().zip(base.iter()).enumerate() {
                assert!(
                    d == axis || sd == bd,
                    "dimension error: concat shapes differ off-axis"
                );
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;

        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            let pa = p.dim(axis);
            let src = p.data();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * pa * inner;
                data[dst_start..dst_start + pa * inner]
                    .copy_from_slice(&src[src_start..src_start + pa * inner]);
            }
            spans.push((offset, pa));
            offset += pa;
        }

        let handles: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let parents = handles.clone();
        Tensor::from_op(
            data,
            out_shape,
            parents,
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                for (p, (off, pa)) in handles.iter().zip(spans.iter()) {
                    if !p.needs_grad() {
                        continue;
                    }
                    let mut d = vec![0.0; outer * pa * inner];
                    for o in 0..outer {
                        let src_start = (o * axis_total + off) * inner;
                        let dst_start = o * pa * inner;
                        d[dst_start..dst_start + pa * inner]
                            .copy_from_slice(&g[src_start..src_start + pa * inner]);
                    }
                    accumulate_grad_owned(p, d);
                }
            }),
        )
    }

    /// Flat index gather: `out[i] = x[indices[i]]`; backward scatter-adds.
    ///
    /// One op covers every layout move (window partition, cyclic shift,
    /// head split, padding, crops, flips) given a precomputed index map.
    pub fn gather(&self, indices: Rc<Vec<usize>>, out_shape: &[usize]) -> Tensor {
        let numel: usize = out_shape.iter().product();
        assert_eq!(indices.len(), numel, "dimension error: gather index count");
        let in_len = self.numel();
        let data: Vec<f64> = {
            let x = self.data();
            indices
                .iter()
                .map(|&i| {
                    debug_assert!(i < in_len, "gather index out of bounds");
                    x[i]
                })
                .collect()
        };
        let p = self.clone();
        let idx = indices;
        Tensor::from_op(
            data,
            out_shape.to_vec(),
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let mut d = vec![0.0; in_len];
                for (gi, &i) in g.iter().zip(idx.iter()) {
                    d[i] += gi;
                }
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// Row gather on a `[N, C]` matrix: `out[i,:] = x[rows[i],:]`.
    ///
    /// Backward scatter-adds rows, so duplicate indices accumulate.
    pub fn gather_rows(&self, rows: Rc<Vec<usize>>) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 2, "dimension error: gather_rows expects [N,C]");
        let (n, c) = (s[0], s[1]);
        let m = rows.len();
        let mut data = vec![0.0; m * c];
        {
            let x = self.data();
            for (i, &r) in rows.iter().enumerate() {
                debug_assert!(r < n, "gather_rows index out of bounds");
                data[i * c..(i + 1) * c].copy_from_slice(&x[r * c..(r + 1) * c]);
            }
        }
        let p = self.clone();
        Tensor::from_op(
            data,
            vec![m, c],
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let mut d = vec![0.0; n * c];
                for (i, &r) in rows.iter().enumerate() {
                    let dst = &mut d[r * c..(r + 1) * c];
                    let src = &g[i * c..(i + 1) * c];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// Softmax over the last dimension with per-row max subtraction.
    ///
    /// Panics with a numeric error on non-finite input.
    pub fn softmax_rows(&self) -> Tensor {
        let s = self.shape();
        assert!(!s.is_empty(), "dimension error: softmax_rows on 0-d tensor");
        let n = *s.last().unwrap();
        assert!(n > 0, "dimension error: softmax_rows with empty rows");
        let rows = self.numel() / n;
        let x = self.data();
        assert!(
            x.iter().all(|v| v.is_finite()),
            "numeric failure: softmax_rows received non-finite input"
        );
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let out = &mut data[r * n..(r + 1) * n];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, v) in out.iter_mut().zip(row) {
                let e = (v - m).exp();
                *o = e;
                z += e;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        drop(x);
        let p = self.clone();
        Tensor::from_op(
            data,
            s,
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let y = &out.data;
                let mut d = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let dr = &mut d[r * n..(r + 1) * n];
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// Layer normalization over the last dimension, then affine (gamma, beta).
    pub fn layernorm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
        let s = self.shape();
        let d = *s.last().expect("dimension error: layernorm on 0-d tensor");
        assert!(d > 0, "dimension error: layernorm with zero-width tokens");
        assert_eq!(gamma.shape(), vec![d], "dimension error: layernorm gamma");
        assert_eq!(beta.shape(), vec![d], "dimension error: layernorm beta");
        let rows = self.numel() / d;
        let mut data = vec![0.0; rows * d];
        {
            let x = self.data();
            let gm = gamma.data();
            let bt = beta.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let out = &mut data[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for j in 0..d {
                    out[j] = (row[j] - mean) * inv * gm[j] + bt[j];
                }
            }
        }
        let (px, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        Tensor::from_op(
            data,
            s,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let x = px.data();
                let gm = pg.data();
                let mut dx = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let df = d as f64;
                for r in 0..rows {
                    let row = &x[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / df;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = gr[j] * gm[j];
                        dgamma[j] += gr[j] * xhat;
                        dbeta[j] += gr[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    let dr = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = gr[j] * gm[j];
                        dr[j] = inv / df * (df * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
                drop(x);
                drop(gm);
                accumulate_grad_owned(&px, dx);
                accumulate_grad_owned(&pg, dgamma);
                accumulate_grad_owned(&pb, dbeta);
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let p = self.clone();
        let n = self.numel();
        Tensor::from_op(
            vec![s],
            vec![1],
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap()[0];
                accumulate_grad_owned(&p, vec![g; n]);
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Global average pooling `[C,H,W] -> [C]`.
    pub fn avg_pool_global(&self) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 3, "dimension error: avg_pool_global expects [C,H,W]");
        let (c, h, w) = (s[0], s[1], s[2]);
        let hw = h * w;
        let x = self.data();
        let data: Vec<f64> = (0..c)
            .map(|ci| x[ci * hw..(ci + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        drop(x);
        let p = self.clone();
        Tensor::from_op(
            data,
            vec![c],
            vec![self.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let mut d = vec![0.0; c * hw];
                for ci in 0..c {
                    let gv = g[ci] / hw as f64;
                    for v in &mut d[ci * hw..(ci + 1) * hw] {
                        *v = gv;
                    }
                }
                accumulate_grad_owned(&p, d);
            }),
        )
    }

    /// Broadcast-add a `[d]` bias over the rows of `[..., d]`.
    pub fn add_bias_rows(&self, bias: &Tensor) -> Tensor {
        let s = self.shape();
        let d = *s.last().expect("dimension error: add_bias_rows on 0-d");
        assert_eq!(bias.shape(), vec![d], "dimension error: add_bias_rows bias");
        let rows = self.numel() / d;
        let mut data = self.to_vec();
        {
            let b = bias.data();
            for r in 0..rows {
                for j in 0..d {
                    data[r * d + j] += b[j];
                }
            }
        }
        let (px, pb) = (self.clone(), bias.clone());
        Tensor::from_op(
            data,
            s,
            vec![self.clone(), bias.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                accumulate_grad(&px, g);
                let mut db = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        db[j] += g[r * d + j];
                    }
                }
                accumulate_grad_owned(&pb, db);
            }),
        )
    }

    /// Broadcast-add a `[C]` bias over the maps of `[C,H,W]`.
    pub fn add_bias_channels(&self, bias: &Tensor) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 3, "dimension error: add_bias_channels expects [C,H,W]");
        let (c, hw) = (s[0], s[1] * s[2]);
        assert_eq!(bias.shape(), vec![c], "dimension error: add_bias_channels bias");
        let mut data = self.to_vec();
        {
            let b = bias.data();
            for ci in 0..c {
                for v in &mut data[ci * hw..(ci + 1) * hw] {
                    *v += b[ci];
                }
            }
        }
        let (px, pb) = (self.clone(), bias.clone());
        Tensor::from_op(
            data,
            s,
            vec![self.clone(), bias.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                accumulate_grad(&px, g);
                let db: Vec<f64> = (0..c)
                    .map(|ci| g[ci * hw..(ci + 1) * hw].iter().sum())
                    .collect();
                accumulate_grad_owned(&pb, db);
            }),
        )
    }

    /// Multiply by a scalar tensor (shape `[1]`); differentiable in both.
    pub fn scale_by(&self, s: &Tensor) -> Tensor {
        assert_eq!(s.numel(), 1, "dimension error: scale_by expects a scalar tensor");
        let sv = s.data()[0];
        let data: Vec<f64> = self.data().iter().map(|a| a * sv).collect();
        let (px, ps) = (self.clone(), s.clone());
        Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone(), s.clone()],
            Box::new(move |out: &Node| {
                let g = out.grad.as_ref().unwrap();
                let sv = ps.data()[0];
                accumulate_grad_owned(&px, g.iter().map(|gi| gi * sv).collect());
                let ds: f64 = {
                    let x = px.data();
                    g.iter().zip(x.iter()).map(|(gi, xi)| gi * xi).sum()
                };
                accumulate_grad_owned(&ps, vec![ds]);
            }),
        )
    }

    /// `x W + b` for token matrices `[n, d_in]`.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Tensor {
        self.matmul(weight).add_bias_rows(bias)
    }

    /// L2-normalize a vector. The guard term only matters for an exactly
    /// zero input (which then stays zero) and is far below f64 noise
    /// otherwise, so the result's norm is 1 to machine precision.
    pub fn l2_normalize(&self) -> Tensor {
        let sq = self.mul(self).sum_all().add_scalar(1e-300);
        let inv = sq.powf(-0.5);
        self.scale_by(&inv)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use crate::rng::Rng;

    fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.normal()).collect(), shape)
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            &[3, 3],
        );
        let a = Tensor::from_vec((1..=9).map(|v| v as f64 * 0.7).collect(), &[3, 3]);
        let out = eye.matmul(&a);
        for (x, y) in out.data().iter().zip(a.data().iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::from_vec(vec![0.0, 1.0], &[2, 1]);
        assert_eq!(a.matmul(&b).to_vec(), vec![2.0, 4.0]);
    }

    #[test]
    fn matmul_grad_closed_form() {
        // d(sum(AB))/dA = ones(m,n) B^T
        let mut rng = Rng::new(11);
        let a = randn(&mut rng, &[4, 5]).requires_grad(true);
        let b = randn(&mut rng, &[5, 3]);
        a.matmul(&b).sum_all().backward();
        let ga = a.grad().unwrap();
        let bd = b.to_vec();
        for i in 0..4 {
            for p in 0..5 {
                let expect: f64 = (0..3).map(|j| bd[p * 3 + j]).sum();
                assert!((ga[i * 5 + p] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_grad_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let a = randn(&mut rng, &[4, 5]).requires_grad(true);
        let b = randn(&mut rng, &[5, 3]);
        let err = grad_check(|x| x.matmul(&b).sum_all(), &a, 1e-5);
        assert!(err < 1e-4, "matmul grad err {err}");
        let bb = randn(&mut rng, &[5, 3]).requires_grad(true);
        let aa = randn(&mut rng, &[4, 5]);
        let err = grad_check(|x| aa.matmul(x).mul(&aa.matmul(x)).sum_all(), &bb, 1e-5);
        assert!(err < 1e-4, "matmul rhs grad err {err}");
    }

    #[test]
    fn softmax_uniform_and_analytic_rows() {
        let x = Tensor::from_vec(vec![0.0; 4], &[1, 4]);
        for v in x.softmax_rows().data().iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let x = Tensor::from_vec(vec![0.0, 3.0f64.ln()], &[1, 2]);
        let y = x.softmax_rows().to_vec();
        assert!((y[0] - 0.25).abs() < 1e-12);
        assert!((y[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_bounded() {
        let mut rng = Rng::new(17);
        for _ in 0..10 {
            let x = randn(&mut rng, &[6, 9]).scale(3.0);
            let y = x.softmax_rows();
            let d = y.to_vec();
            for r in 0..6 {
                let s: f64 = d[r * 9..(r + 1) * 9].iter().sum();
                assert!((s - 1.0).abs() <= 1e-10);
            }
            assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    #[should_panic(expected = "numeric failure")]
    fn softmax_rejects_nan() {
        let x = Tensor::from_vec(vec![0.0, f64::NAN], &[1, 2]);
        let _ = x.softmax_rows();
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut rng = Rng::new(23);
        let x = randn(&mut rng, &[3, 3]).requires_grad(true);
        let w = randn(&mut rng, &[3, 3]);
        // weighted sum makes the Jacobian fully exercised
        let err = grad_check(|t| t.softmax_rows().mul(&w).sum_all(), &x, 1e-5);
        assert!(err < 1e-4, "softmax grad err {err}");
    }

    #[test]
    fn layernorm_constant_token_is_zero() {
        let x = Tensor::from_vec(vec![5.0, 5.0, 5.0], &[1, 3]);
        let g = Tensor::from_vec(vec![1.0; 3], &[3]);
        let b = Tensor::zeros(&[3]);
        for v in x.layernorm(&g, &b, 1e-5).data().iter() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_two_point_token() {
        let x = Tensor::from_vec(vec![1.0, 3.0], &[1, 2]);
        let g = Tensor::from_vec(vec![1.0; 2], &[2]);
        let b = Tensor::zeros(&[2]);
        let y = x.layernorm(&g, &b, 1e-5).to_vec();
        assert!((y[0] + 1.0).abs() < 1e-4);
        assert!((y[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layernorm_standardizes() {
        let mut rng = Rng::new(31);
        let x = randn(&mut rng, &[8, 16]).scale(2.5).add_scalar(1.0);
        let g = Tensor::from_vec(vec![1.0; 16], &[16]);
        let b = Tensor::zeros(&[16]);
        let y = x.layernorm(&g, &b, 1e-5).to_vec();
        for r in 0..8 {
            let row = &y[r * 16..(r + 1) * 16];
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-8, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-4, "var {var}");
        }
    }

    #[test]
    fn layernorm_grads_match_finite_differences() {
        let mut rng = Rng::new(37);
        let x = randn(&mut rng, &[4, 6]).requires_grad(true);
        let g = randn(&mut rng, &[6]).requires_grad(true);
        let b = randn(&mut rng, &[6]).requires_grad(true);
        let w = randn(&mut rng, &[4, 6]);
        let err = grad_check(|t| t.layernorm(&g, &b, 1e-5).mul(&w).sum_all(), &x, 1e-5);
        assert!(err < 1e-4, "ln dx err {err}");
        let err = grad_check(|t| x.layernorm(t, &b, 1e-5).mul(&w).sum_all(), &g, 1e-5);
        assert!(err < 1e-4, "ln dgamma err {err}");
        let err = grad_check(|t| x.layernorm(&g, t, 1e-5).mul(&w).sum_all(), &b, 1e-5);
        assert!(err < 1e-4, "ln dbeta err {err}");
    }

    #[test]
    fn gather_roundtrips_and_scatter_adds() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[4]).requires_grad(true);
        // duplicate index 1 to exercise accumulation
        let idx = Rc::new(vec![3usize, 1, 1, 0]);
        let y = x.gather(idx, &[4]);
        assert_eq!(y.to_vec(), vec![4.0, 2.0, 2.0, 1.0]);
        y.sum_all().backward();
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_backward_split() {
        let a = Tensor::from_vec(vec![1.0, 2.0], &[1, 2]).requires_grad(true);
        let b = Tensor::from_vec(vec![3.0, 4.0, 5.0, 6.0], &[2, 2]).requires_grad(true);
        let c = Tensor::concat(&[&a, &b], 0);
        assert_eq!(c.shape(), vec![3, 2]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        c.mul(&c).sum_all().backward();
        assert_eq!(a.grad().unwrap(), vec![2.0, 4.0]);
        assert_eq!(b.grad().unwrap(), vec![6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn concat_axis1_interleaves() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::from_vec(vec![9.0, 8.0], &[2, 1]);
        let c = Tensor::concat(&[&a, &b], 1);
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn reshape_transpose_are_self_inverse_and_exact() {
        let mut rng = Rng::new(41);
        let x = randn(&mut rng, &[3, 5]).requires_grad(true);
        let y = x.transpose().transpose();
        for (a, b) in y.data().iter().zip(x.data().iter()) {
            assert_eq!(a, b);
        }
        let z = x.reshape(&[15]).reshape(&[3, 5]);
        for (a, b) in z.data().iter().zip(x.data().iter()) {
            assert_eq!(a, b);
        }
        z.sum_all().backward();
        assert_eq!(x.grad().unwrap(), vec![1.0; 15]);
    }

    #[test]
    fn elementwise_grads_match_finite_differences() {
        let mut rng = Rng::new(43);
        // keep ln/powf domains positive
        let pos = randn(&mut rng, &[10]).abs().add_scalar(0.7).to_vec();
        for (name, f) in [
            ("add", Box::new(|x: &Tensor| {
                let o = Tensor::from_vec(vec![0.3; 10], &[10]);
                x.add(&o).mul(x).sum_all()
            }) as Box<dyn Fn(&Tensor) -> Tensor>),
            ("sub", Box::new(|x: &Tensor| {
                let o = Tensor::from_vec(vec![0.3; 10], &[10]);
                x.sub(&o).mul(x).sum_all()
            })),
            ("mul", Box::new(|x: &Tensor| x.mul(x).sum_all())),
            ("scale", Box::new(|x: &Tensor| x.scale(-2.5).mul(x).sum_all())),
            ("abs", Box::new(|x: &Tensor| x.abs().mul(x).sum_all())),
            ("gelu", Box::new(|x: &Tensor| x.gelu().sum_all())),
            ("exp", Box::new(|x: &Tensor| x.exp().sum_all())),
            ("ln", Box::new(|x: &Tensor| x.ln().sum_all())),
            ("powf", Box::new(|x: &Tensor| x.powf(1.7).sum_all())),
            ("mean", Box::new(|x: &Tensor| x.mean_all())),
            ("l2norm", Box::new(|x: &Tensor| {
                let w = Tensor::from_vec((0..10).map(|i| i as f64 * 0.1).collect(), &[10]);
                x.l2_normalize().mul(&w).sum_all()
            })),
        ] {
            let x = Tensor::from_vec(pos.clone(), &[10]).requires_grad(true);
            let err = grad_check(&f, &x, 1e-5);
            assert!(err < 1e-4, "{name} grad err {err}");
        }
    }

    #[test]
    fn bias_and_scale_by_grads() {
        let mut rng = Rng::new(47);
        let x = randn(&mut rng, &[5, 4]).requires_grad(true);
        let b = randn(&mut rng, &[4]).requires_grad(true);
        let err = grad_check(|t| x.add_bias_rows(t).mul(&x).sum_all(), &b, 1e-5);
        assert!(err < 1e-4, "bias rows err {err}");
        let img = randn(&mut rng, &[3, 4, 4]).requires_grad(true);
        let cb = randn(&mut rng, &[3]).requires_grad(true);
        let err = grad_check(|t| img.add_bias_channels(t).mul(&img).sum_all(), &cb, 1e-5);
        assert!(err < 1e-4, "bias channels err {err}");
        let s = Tensor::scalar(0.8).requires_grad(true);
        let err = grad_check(|t| x.scale_by(t).mul(&x).sum_all(), &s, 1e-5);
        assert!(err < 1e-4, "scale_by ds err {err}");
        let err = grad_check(|t| t.scale_by(&s).mul(&x).sum_all(), &x, 1e-5);
        assert!(err < 1e-4, "scale_by dx err {err}");
    }

    #[test]
    fn avg_pool_global_value_and_grad() {
        let x = Tensor::from_vec((0..12).map(|v| v as f64).collect(), &[3, 2, 2])
            .requires_grad(true);
        let y = x.avg_pool_global();
        assert_eq!(y.to_vec(), vec![1.5, 5.5, 9.5]);
        let err = grad_check(|t| t.avg_pool_global().mul(&y).sum_all(), &x, 1e-5);
        assert!(err < 1e-4, "avg pool err {err}");
    }
}
