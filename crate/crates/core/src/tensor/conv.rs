//! 2-D convolution over `[C,H,W]` feature maps.

use super::{accumulate_grad_owned, Node, Tensor};

impl Tensor {
    /// Cross-correlation of `[C_in,H,W]` with `[C_out,C_in,k,k]` weights,
    /// zero padding, square stride. Output is `[C_out,H',W']` with
    /// `H' = (H + 2*pad - k)/stride + 1` (floor).
    pub fn conv2d(&self, weight: &Tensor, stride: usize, pad: usize) -> Tensor {
        let xs = self.shape();
        let ws = weight.shape();
        assert!(
            xs.len() == 3 && ws.len() == 4,
            "dimension error: conv2d expects [C,H,W] input and [O,C,k,k] weight"
        );
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(cin, wcin, "dimension error: conv2d channel mismatch");
        assert_eq!(kh, kw, "dimension error: conv2d expects square kernels");
        assert!(stride >= 1, "contract violation: conv2d stride must be >= 1");
        let k = kh;
        assert!(
            h + 2 * pad >= k && w + 2 * pad >= k,
            "dimension error: conv2d kernel larger than padded input"
        );
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;

        let mut out = vec![0.0; cout * oh * ow];
        {
            let x = self.data();
            let wd = weight.data();
            for co in 0..cout {
                for ci in 0..cin {
                    let xmap = &x[ci * h * w..(ci + 1) * h * w];
                    let ker = &wd[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                    let omap = &mut out[co * oh * ow..(co + 1) * oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &xmap[iy as usize * w..(iy as usize + 1) * w];
                                let krow = &ker[ky * k..(ky + 1) * k];
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xrow[ix as usize] * krow[kx];
                                }
                            }
                            omap[oy * ow + ox] += acc;
                        }
                    }
                }
            }
        }

        let (px, pw) = (self.clone(), weight.clone());
        Tensor::from_op(
            out,
            vec![cout, oh, ow],
            vec![self.clone(), weight.clone()],
            Box::new(move |node: &Node| {
                let g = node.grad.as_ref().unwrap();
                let mut dx = vec![0.0; cin * h * w];
                let mut dw = vec![0.0; cout * cin * k * k];
                {
                    let x = px.data();
                    let wd = pw.data();
                    for co in 0..cout {
                        let gmap = &g[co * oh * ow..(co + 1) * oh * ow];
                        for ci in 0..cin {
                            let xmap = &x[ci * h * w..(ci + 1) * h * w];
                            let ker = &wd[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                            let dxmap = &mut dx[ci * h * w..(ci + 1) * h * w];
                            let dker = &mut dw[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gv = gmap[oy * ow + ox];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ky in 0..k {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let base = iy as usize * w;
                                        for kx in 0..k {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            dxmap[base + ix as usize] += gv * ker[ky * k + kx];
                                            dker[ky * k + kx] += gv * xmap[base + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate_grad_owned(&px, dx);
                accumulate_grad_owned(&pw, dw);
            }),
        )
    }
}
