//! Per-sample layer kernels. Every activation is a row-major `[rows, cols]`
//! map stored in a flat `Vec<f64>`; parameters live in one flat vector owned
//! by the network and layers refer to them by offset.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    /// 1-D convolution over the column axis with optional channel groups.
    Conv {
        cin: usize,
        cout: usize,
        kernel: usize,
        groups: usize,
        pad_left: usize,
        lin: usize,
        lout: usize,
        w_off: usize,
        b_off: Option<usize>,
    },
    Elu,
    Square,
    /// `ln(max(x, floor))`.
    Log {
        floor: f64,
    },
    AvgPool {
        rows: usize,
        lin: usize,
        size: usize,
        stride: usize,
        lout: usize,
    },
    MaxPool {
        rows: usize,
        lin: usize,
        size: usize,
        stride: usize,
        lout: usize,
    },
    Dropout {
        p: f64,
    },
    /// Fully connected layer on the flattened map.
    Dense {
        n_in: usize,
        n_out: usize,
        w_off: usize,
        b_off: usize,
    },
}

impl Layer {
    pub(crate) fn n_params(&self) -> usize {
        match *self {
            Layer::Conv {
                cin,
                cout,
                kernel,
                groups,
                b_off,
                ..
            } => cout * (cin / groups) * kernel + if b_off.is_some() { cout } else { 0 },
            Layer::Dense { n_in, n_out, .. } => n_in * n_out + n_out,
            _ => 0,
        }
    }

    /// Fan-in used for weight initialisation, with the weight range.
    pub(crate) fn weight_span(&self) -> Option<(usize, usize, usize)> {
        match *self {
            Layer::Conv {
                cin,
                cout,
                kernel,
                groups,
                w_off,
                ..
            } => {
                let fan_in = (cin / groups) * kernel;
                Some((w_off, cout * fan_in, fan_in))
            }
            Layer::Dense {
                n_in, n_out, w_off, ..
            } => Some((w_off, n_in * n_out, n_in)),
            _ => None,
        }
    }

    pub(crate) fn forward<R: Rng>(
        &self,
        params: &[f64],
        x: &[f64],
        rng: Option<&mut R>,
        mask: &mut Option<Vec<f64>>,
    ) -> Vec<f64> {
        match *self {
            Layer::Conv {
                cin,
                cout,
                kernel,
                groups,
                pad_left,
                lin,
                lout,
                w_off,
                b_off,
            } => {
                let opg = cout / groups;
                let ipg = cin / groups;
                let mut out = vec![0.0; cout * lout];
                for o in 0..cout {
                    let g = o / opg;
                    let row = &mut out[o * lout..(o + 1) * lout];
                    if let Some(b) = b_off {
                        row.iter_mut().for_each(|v| *v = params[b + o]);
                    }
                    for il in 0..ipg {
                        let xr = &x[(g * ipg + il) * lin..(g * ipg + il + 1) * lin];
                        let wbase = w_off + (o * ipg + il) * kernel;
                        for kk in 0..kernel {
                            let w = params[wbase + kk];
                            let (t0, t1, shift) = conv_range(kk, pad_left, lin, lout);
                            let xs =
                                &xr[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                            for (r, &xv) in row[t0..t1].iter_mut().zip(xs) {
                                *r += w * xv;
                            }
                        }
                    }
                }
                out
            }
            Layer::Elu => x
                .iter()
                .map(|&v| if v > 0.0 { v } else { v.exp_m1() })
                .collect(),
            Layer::Square => x.iter().map(|&v| v * v).collect(),
            Layer::Log { floor } => x.iter().map(|&v| v.max(floor).ln()).collect(),
            Layer::AvgPool {
                rows,
                lin,
                size,
                stride,
                lout,
            } => {
                let inv = 1.0 / size as f64;
                let mut out = Vec::with_capacity(rows * lout);
                for r in 0..rows {
                    let xr = &x[r * lin..(r + 1) * lin];
                    for j in 0..lout {
                        out.push(xr[j * stride..j * stride + size].iter().sum::<f64>() * inv);
                    }
                }
                out
            }
            Layer::MaxPool {
                rows,
                lin,
                size,
                stride,
                lout,
            } => {
                let mut out = Vec::with_capacity(rows * lout);
                for r in 0..rows {
                    let xr = &x[r * lin..(r + 1) * lin];
                    for j in 0..lout {
                        let w = &xr[j * stride..j * stride + size];
                        out.push(w.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                    }
                }
                out
            }
            Layer::Dropout { p } => match rng {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect();
                    let out = x.iter().zip(&m).map(|(a, b)| a * b).collect();
                    *mask = Some(m);
                    out
                }
                _ => x.to_vec(),
            },
            Layer::Dense {
                n_in,
                n_out,
                w_off,
                b_off,
            } => (0..n_out)
                .map(|j| {
                    let w = &params[w_off + j * n_in..w_off + (j + 1) * n_in];
                    params[b_off + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect(),
        }
    }

    /// Propagate `g` (gradient w.r.t. this layer's output) to its input,
    /// accumulating parameter gradients into `gparams` when given.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        y: &[f64],
        g: &[f64],
        mask: Option<&Vec<f64>>,
        gparams: Option<&mut [f64]>,
    ) -> Vec<f64> {
        match *self {
            Layer::Conv {
                cin,
                cout,
                kernel,
                groups,
                pad_left,
                lin,
                lout,
                w_off,
                b_off,
            } => {
                let opg = cout / groups;
                let ipg = cin / groups;
                let mut gx = vec![0.0; cin * lin];
                let mut gp = gparams;
                for o in 0..cout {
                    let grp = o / opg;
                    let grow = &g[o * lout..(o + 1) * lout];
                    if let (Some(b), Some(gp)) = (b_off, gp.as_deref_mut()) {
                        gp[b + o] += grow.iter().sum::<f64>();
                    }
                    for il in 0..ipg {
                        let i = grp * ipg + il;
                        let xr = &x[i * lin..(i + 1) * lin];
                        let gxr = &mut gx[i * lin..(i + 1) * lin];
                        let wbase = w_off + (o * ipg + il) * kernel;
                        for kk in 0..kernel {
                            let w = params[wbase + kk];
                            let (t0, t1, shift) = conv_range(kk, pad_left, lin, lout);
                            let lo = (t0 as isize + shift) as usize;
                            let hi = (t1 as isize + shift) as usize;
                            if let Some(gp) = gp.as_deref_mut() {
                                gp[wbase + kk] += grow[t0..t1]
                                    .iter()
                                    .zip(&xr[lo..hi])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            }
                            for (gv, &gg) in gxr[lo..hi].iter_mut().zip(&grow[t0..t1]) {
                                *gv += w * gg;
                            }
                        }
                    }
                }
                gx
            }
            Layer::Elu => x
                .iter()
                .zip(y)
                .zip(g)
                .map(|((&xv, &yv), &gv)| if xv > 0.0 { gv } else { gv * (yv + 1.0) })
                .collect(),
            Layer::Square => x.iter().zip(g).map(|(&xv, &gv)| 2.0 * xv * gv).collect(),
            Layer::Log { floor } => x
                .iter()
                .zip(g)
                .map(|(&xv, &gv)| if xv > floor { gv / xv } else { 0.0 })
                .collect(),
            Layer::AvgPool {
                rows,
                lin,
                size,
                stride,
                lout,
            } => {
                let inv = 1.0 / size as f64;
                let mut gx = vec![0.0; rows * lin];
                for r in 0..rows {
                    for j in 0..lout {
                        let gv = g[r * lout + j] * inv;
                        gx[r * lin + j * stride..r * lin + j * stride + size]
                            .iter_mut()
                            .for_each(|v| *v += gv);
                    }
                }
                gx
            }
            Layer::MaxPool {
                rows,
                lin,
                size,
                stride,
                lout,
            } => {
                let mut gx = vec![0.0; rows * lin];
                for r in 0..rows {
                    for j in 0..lout {
                        let start = r * lin + j * stride;
                        let target = y[r * lout + j];
                        let arg = (0..size).find(|&q| x[start + q] == target).unwrap_or(0);
                        gx[start + arg] += g[r * lout + j];
                    }
                }
                gx
            }
            Layer::Dropout { .. } => match mask {
                Some(m) => g.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => g.to_vec(),
            },
            Layer::Dense {
                n_in,
                n_out,
                w_off,
                b_off,
            } => {
                let mut gx = vec![0.0; n_in];
                let mut gp = gparams;
                for j in 0..n_out {
                    let gj = g[j];
                    let w = &params[w_off + j * n_in..w_off + (j + 1) * n_in];
                    for (gv, &wv) in gx.iter_mut().zip(w) {
                        *gv += gj * wv;
                    }
                    if let Some(gp) = gp.as_deref_mut() {
                        gp[b_off + j] += gj;
                        for (gw, &xv) in gp[w_off + j * n_in..w_off + (j + 1) * n_in]
                            .iter_mut()
                            .zip(x)
                        {
                            *gw += gj * xv;
                        }
                    }
                }
                gx
            }
        }
    }
}

/// Valid output range `[t0, t1)` for kernel tap `kk` and the input offset.
#[inline]
fn conv_range(kk: usize, pad_left: usize, lin: usize, lout: usize) -> (usize, usize, isize) {
    let shift = kk as isize - pad_left as isize;
    let t0 = (-shift).max(0) as usize;
    let t1 = ((lin as isize - shift).max(0) as usize).min(lout);
    (t0, t1.max(t0), shift)
}
