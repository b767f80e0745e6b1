//! Minimal 1-D conv network toolkit with hand-written backward passes.
//!
//! Parameters live in one flat store so the optimizer, the EMA tracker and
//! checkpointing stay trivial. Every layer records the activations its
//! backward pass needs; backward returns input gradients and accumulates
//! parameter gradients into a flat gradient buffer.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamStore {
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Allocates parameter ranges and their initial values during model build.
pub struct ParamAlloc<'a> {
    pub data: Vec<f64>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> ParamAlloc<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        ParamAlloc { data: Vec::new(), rng }
    }

    /// He-style uniform init over fan_in.
    fn alloc(&mut self, n: usize, fan_in: usize, zero: bool) -> usize {
        let off = self.data.len();
        let bound = if fan_in > 0 {
            (1.0 / fan_in as f64).sqrt()
        } else {
            0.0
        };
        for _ in 0..n {
            let v = if zero {
                0.0
            } else {
                self.rng.gen_range(-bound..bound)
            };
            self.data.push(v);
        }
        off
    }

    pub fn finish(self) -> ParamStore {
        ParamStore { data: self.data }
    }
}

/// 1-D convolution. `stride == 1` uses symmetric zero padding (same length);
/// `stride == 2` halves the length with kernel 2; `transposed` doubles it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub transposed: bool,
    w_off: usize,
    b_off: usize,
}

impl Conv1d {
    pub fn same(alloc: &mut ParamAlloc, c_in: usize, c_out: usize, zero: bool) -> Self {
        let kernel = 3;
        let w_off = alloc.alloc(c_out * c_in * kernel, c_in * kernel, zero);
        let b_off = alloc.alloc(c_out, 0, true);
        Conv1d {
            c_in,
            c_out,
            kernel,
            stride: 1,
            transposed: false,
            w_off,
            b_off,
        }
    }

    pub fn down(alloc: &mut ParamAlloc, c_in: usize, c_out: usize) -> Self {
        let kernel = 2;
        let w_off = alloc.alloc(c_out * c_in * kernel, c_in * kernel, false);
        let b_off = alloc.alloc(c_out, 0, true);
        Conv1d {
            c_in,
            c_out,
            kernel,
            stride: 2,
            transposed: false,
            w_off,
            b_off,
        }
    }

    pub fn up(alloc: &mut ParamAlloc, c_in: usize, c_out: usize) -> Self {
        let kernel = 2;
        let w_off = alloc.alloc(c_out * c_in * kernel, c_in, false);
        let b_off = alloc.alloc(c_out, 0, true);
        Conv1d {
            c_in,
            c_out,
            kernel,
            stride: 2,
            transposed: true,
            w_off,
            b_off,
        }
    }

    /// 1x1 projection.
    pub fn proj(alloc: &mut ParamAlloc, c_in: usize, c_out: usize) -> Self {
        let w_off = alloc.alloc(c_out * c_in, c_in, false);
        let b_off = alloc.alloc(c_out, 0, true);
        Conv1d {
            c_in,
            c_out,
            kernel: 1,
            stride: 1,
            transposed: false,
            w_off,
            b_off,
        }
    }

    #[inline]
    fn w(&self, p: &[f64], o: usize, c: usize, t: usize) -> f64 {
        p[self.w_off + (o * self.c_in + c) * self.kernel + t]
    }

    pub fn forward(&self, p: &[f64], x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.c_in, "conv input channels");
        let l = x.ncols();
        if self.transposed {
            let lo = l * 2;
            let mut y = Array2::zeros((self.c_out, lo));
            for o in 0..self.c_out {
                let b = p[self.b_off + o];
                let yrow = y.row_mut(o).into_slice().expect("contiguous");
                yrow.fill(b);
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    for t in 0..self.kernel {
                        let w = self.w(p, o, c, t);
                        for i in 0..l {
                            yrow[2 * i + t] += w * xs[i];
                        }
                    }
                }
            }
            y
        } else if self.stride == 2 {
            let lo = l / 2;
            let mut y = Array2::zeros((self.c_out, lo));
            for o in 0..self.c_out {
                let b = p[self.b_off + o];
                let yrow = y.row_mut(o).into_slice().expect("contiguous");
                yrow.fill(b);
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    let w0 = self.w(p, o, c, 0);
                    let w1 = self.w(p, o, c, 1);
                    for i in 0..lo {
                        yrow[i] += w0 * xs[2 * i] + w1 * xs[2 * i + 1];
                    }
                }
            }
            y
        } else if self.kernel == 1 {
            let mut y = Array2::zeros((self.c_out, l));
            for o in 0..self.c_out {
                let b = p[self.b_off + o];
                let yrow = y.row_mut(o).into_slice().expect("contiguous");
                yrow.fill(b);
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    axpy(yrow, self.w(p, o, c, 0), xs);
                }
            }
            y
        } else {
            // kernel 3, same padding
            let mut y = Array2::zeros((self.c_out, l));
            for o in 0..self.c_out {
                let b = p[self.b_off + o];
                let yrow = y.row_mut(o).into_slice().expect("contiguous");
                yrow.fill(b);
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    let w0 = self.w(p, o, c, 0);
                    let w1 = self.w(p, o, c, 1);
                    let w2 = self.w(p, o, c, 2);
                    axpy(&mut yrow[1..], w0, &xs[..l - 1]);
                    axpy(yrow, w1, xs);
                    axpy(&mut yrow[..l - 1], w2, &xs[1..]);
                }
            }
            y
        }
    }

    /// Returns grad w.r.t. input; accumulates parameter grads into `g`.
    pub fn backward(
        &self,
        p: &[f64],
        x: &Array2<f64>,
        gy: &Array2<f64>,
        g: &mut [f64],
    ) -> Array2<f64> {
        let l = x.ncols();
        let mut gx = Array2::zeros((self.c_in, l));
        if self.transposed {
            for o in 0..self.c_out {
                let gyr = gy.row(o);
                let gyr = gyr.as_slice().expect("contiguous");
                g[self.b_off + o] += gyr.iter().sum::<f64>();
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    let gxr = gx.row_mut(c).into_slice().expect("contiguous");
                    for t in 0..self.kernel {
                        let w = self.w(p, o, c, t);
                        let widx = self.w_off + (o * self.c_in + c) * self.kernel + t;
                        let mut gw = 0.0;
                        for i in 0..l {
                            let gout = gyr[2 * i + t];
                            gxr[i] += w * gout;
                            gw += xs[i] * gout;
                        }
                        g[widx] += gw;
                    }
                }
            }
        } else if self.stride == 2 {
            let lo = l / 2;
            for o in 0..self.c_out {
                let gyr = gy.row(o);
                let gyr = gyr.as_slice().expect("contiguous");
                g[self.b_off + o] += gyr.iter().sum::<f64>();
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    let gxr = gx.row_mut(c).into_slice().expect("contiguous");
                    let w0 = self.w(p, o, c, 0);
                    let w1 = self.w(p, o, c, 1);
                    let mut gw0 = 0.0;
                    let mut gw1 = 0.0;
                    for i in 0..lo {
                        let gout = gyr[i];
                        gxr[2 * i] += w0 * gout;
                        gxr[2 * i + 1] += w1 * gout;
                        gw0 += xs[2 * i] * gout;
                        gw1 += xs[2 * i + 1] * gout;
                    }
                    g[self.w_off + (o * self.c_in + c) * 2] += gw0;
                    g[self.w_off + (o * self.c_in + c) * 2 + 1] += gw1;
                }
            }
        } else if self.kernel == 1 {
            for o in 0..self.c_out {
                let gyr = gy.row(o);
                let gyr = gyr.as_slice().expect("contiguous");
                g[self.b_off + o] += gyr.iter().sum::<f64>();
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    let gxr = gx.row_mut(c).into_slice().expect("contiguous");
                    axpy(gxr, self.w(p, o, c, 0), gyr);
                    g[self.w_off + o * self.c_in + c] += dot(xs, gyr);
                }
            }
        } else {
            for o in 0..self.c_out {
                let gyr = gy.row(o);
                let gyr = gyr.as_slice().expect("contiguous");
                g[self.b_off + o] += gyr.iter().sum::<f64>();
                for c in 0..self.c_in {
                    let xs = x.row(c);
                    let xs = xs.as_slice().expect("contiguous");
                    let gxr = gx.row_mut(c).into_slice().expect("contiguous");
                    let w0 = self.w(p, o, c, 0);
                    let w1 = self.w(p, o, c, 1);
                    let w2 = self.w(p, o, c, 2);
                    // forward: y[1..] += w0 x[..l-1]; y += w1 x; y[..l-1] += w2 x[1..]
                    axpy(&mut gxr[..l - 1], w0, &gyr[1..]);
                    axpy(gxr, w1, gyr);
                    axpy(&mut gxr[1..], w2, &gyr[..l - 1]);
                    let widx = self.w_off + (o * self.c_in + c) * 3;
                    g[widx] += dot(&xs[..l - 1], &gyr[1..]);
                    g[widx + 1] += dot(xs, gyr);
                    g[widx + 2] += dot(&xs[1..], &gyr[..l - 1]);
                }
            }
        }
        gx
    }
}

/// Dense layer on vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    w_off: usize,
    b_off: usize,
}

impl Linear {
    pub fn new(alloc: &mut ParamAlloc, n_in: usize, n_out: usize) -> Self {
        let w_off = alloc.alloc(n_out * n_in, n_in, false);
        let b_off = alloc.alloc(n_out, 0, true);
        Linear {
            n_in,
            n_out,
            w_off,
            b_off,
        }
    }

    pub fn forward(&self, p: &[f64], x: &Array1<f64>) -> Array1<f64> {
        let mut y = Array1::zeros(self.n_out);
        for o in 0..self.n_out {
            let mut acc = p[self.b_off + o];
            for i in 0..self.n_in {
                acc += p[self.w_off + o * self.n_in + i] * x[i];
            }
            y[o] = acc;
        }
        y
    }

    pub fn backward(
        &self,
        p: &[f64],
        x: &Array1<f64>,
        gy: &Array1<f64>,
        g: &mut [f64],
    ) -> Array1<f64> {
        let mut gx = Array1::zeros(self.n_in);
        for o in 0..self.n_out {
            let gout = gy[o];
            g[self.b_off + o] += gout;
            for i in 0..self.n_in {
                g[self.w_off + o * self.n_in + i] += x[i] * gout;
                gx[i] += p[self.w_off + o * self.n_in + i] * gout;
            }
        }
        gx
    }
}

/// Feature-wise affine conditioning: y = x * (1 + scale(e)) + shift(e).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Film {
    pub channels: usize,
    pub lin: Linear,
}

pub struct FilmCache {
    pub scale: Array1<f64>,
    pub emb: Array1<f64>,
}

impl Film {
    pub fn new(alloc: &mut ParamAlloc, emb_dim: usize, channels: usize) -> Self {
        Film {
            channels,
            lin: Linear::new(alloc, emb_dim, 2 * channels),
        }
    }

    pub fn forward(&self, p: &[f64], x: &Array2<f64>, emb: &Array1<f64>) -> (Array2<f64>, FilmCache) {
        let st = self.lin.forward(p, emb);
        let mut y = x.clone();
        for c in 0..self.channels {
            let s = 1.0 + st[c];
            let t = st[self.channels + c];
            for i in 0..x.ncols() {
                y[[c, i]] = x[[c, i]] * s + t;
            }
        }
        (
            y,
            FilmCache {
                scale: st,
                emb: emb.clone(),
            },
        )
    }

    /// Returns (grad_x, grad_emb).
    pub fn backward(
        &self,
        p: &[f64],
        x: &Array2<f64>,
        cache: &FilmCache,
        gy: &Array2<f64>,
        g: &mut [f64],
    ) -> (Array2<f64>, Array1<f64>) {
        let mut gst = Array1::zeros(2 * self.channels);
        let mut gx = Array2::zeros(x.dim());
        for c in 0..self.channels {
            let s = 1.0 + cache.scale[c];
            for i in 0..x.ncols() {
                let gout = gy[[c, i]];
                gx[[c, i]] = gout * s;
                gst[c] += gout * x[[c, i]];
                gst[self.channels + c] += gout;
            }
        }
        let gemb = self.lin.backward(p, &cache.emb, &gst, g);
        (gx, gemb)
    }
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_arr2(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(silu)
}

pub fn silu_backward_arr2(x: &Array2<f64>, gy: &Array2<f64>) -> Array2<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| *g *= silu_deriv(v));
    gx
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    fn fd_check_conv(conv: &Conv1d, p: &[f64], x: &Array2<f64>, out_shape: (usize, usize)) {
        let mut rng = seeded_rng(1, "nn-fd");
        let wobj: Array2<f64> =
            Array2::from_shape_fn(out_shape, |_| rng.gen_range(-1.0f64..1.0));
        let obj = |p: &[f64], x: &Array2<f64>| -> f64 {
            (conv.forward(p, x) * &wobj).sum()
        };
        let mut g = vec![0.0; p.len()];
        let gx = conv.backward(p, x, &wobj, &mut g);
        let eps = 1e-6;
        // input grads
        for &(c, i) in &[(0usize, 0usize), (0, 3), (conv.c_in - 1, x.ncols() - 1)] {
            let mut xp = x.clone();
            xp[[c, i]] += eps;
            let mut xm = x.clone();
            xm[[c, i]] -= eps;
            let fd = (obj(p, &xp) - obj(p, &xm)) / (2.0 * eps);
            assert!((fd - gx[[c, i]]).abs() < 1e-6, "gx[{c},{i}] {fd} vs {}", gx[[c, i]]);
        }
        // a few param grads
        for idx in [0usize, p.len() / 2, p.len() - 1] {
            let mut pp = p.to_vec();
            pp[idx] += eps;
            let mut pm = p.to_vec();
            pm[idx] -= eps;
            let fd = (obj(&pp, x) - obj(&pm, x)) / (2.0 * eps);
            assert!((fd - g[idx]).abs() < 1e-6, "g[{idx}] {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn conv_same_grads() {
        let mut rng = seeded_rng(2, "nn");
        let mut alloc = ParamAlloc::new(&mut rng);
        let conv = Conv1d::same(&mut alloc, 3, 4, false);
        let store = alloc.finish();
        let mut r2 = seeded_rng(3, "nn-x");
        let x = Array2::from_shape_fn((3, 8), |_| r2.gen_range(-1.0f64..1.0));
        fd_check_conv(&conv, &store.data, &x, (4, 8));
    }

    #[test]
    fn conv_down_grads() {
        let mut rng = seeded_rng(4, "nn");
        let mut alloc = ParamAlloc::new(&mut rng);
        let conv = Conv1d::down(&mut alloc, 3, 5);
        let store = alloc.finish();
        let mut r2 = seeded_rng(5, "nn-x");
        let x = Array2::from_shape_fn((3, 8), |_| r2.gen_range(-1.0f64..1.0));
        fd_check_conv(&conv, &store.data, &x, (5, 4));
    }

    #[test]
    fn conv_up_grads() {
        let mut rng = seeded_rng(6, "nn");
        let mut alloc = ParamAlloc::new(&mut rng);
        let conv = Conv1d::up(&mut alloc, 4, 3);
        let store = alloc.finish();
        let mut r2 = seeded_rng(7, "nn-x");
        let x = Array2::from_shape_fn((4, 4), |_| r2.gen_range(-1.0f64..1.0));
        fd_check_conv(&conv, &store.data, &x, (3, 8));
    }

    #[test]
    fn film_and_linear_grads() {
        let mut rng = seeded_rng(8, "nn");
        let mut alloc = ParamAlloc::new(&mut rng);
        let film = Film::new(&mut alloc, 6, 3);
        let store = alloc.finish();
        let p = &store.data;
        let mut r2 = seeded_rng(9, "nn-x");
        let x = Array2::from_shape_fn((3, 5), |_| r2.gen_range(-1.0f64..1.0));
        let e = Array1::from_shape_fn(6, |_| r2.gen_range(-1.0f64..1.0));
        let wobj = Array2::from_shape_fn((3, 5), |_| r2.gen_range(-1.0f64..1.0));
        let obj = |p: &[f64], x: &Array2<f64>, e: &Array1<f64>| -> f64 {
            (film.forward(p, x, e).0 * &wobj).sum()
        };
        let (_, cache) = film.forward(p, &x, &e);
        let mut g = vec![0.0; p.len()];
        let (gx, ge) = film.backward(p, &x, &cache, &wobj, &mut g);
        let eps = 1e-6;
        for c in 0..3 {
            let mut xp = x.clone();
            xp[[c, 2]] += eps;
            let fd = (obj(p, &xp, &e) - obj(p, &x, &e)) / eps;
            assert!((fd - gx[[c, 2]]).abs() < 1e-5);
        }
        for i in 0..6 {
            let mut ep = e.clone();
            ep[i] += eps;
            let fd = (obj(p, &x, &ep) - obj(p, &x, &e)) / eps;
            assert!((fd - ge[i]).abs() < 1e-5);
        }
        for idx in [0usize, p.len() - 1] {
            let mut pp = p.to_vec();
            pp[idx] += eps;
            let fd = (obj(&pp, &x, &e) - obj(p, &x, &e)) / eps;
            assert!((fd - g[idx]).abs() < 1e-5);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut opt = Adam::new(2, 0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
        assert!((p[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn silu_deriv_matches_fd() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let eps = 1e-6;
            let fd = (silu(x + eps) - silu(x - eps)) / (2.0 * eps);
            assert!((fd - silu_deriv(x)).abs() < 1e-8);
        }
    }
}
