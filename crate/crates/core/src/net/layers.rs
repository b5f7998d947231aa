//! Dense-array kernels for 3x3 same-padded convolution, 2x2 average pooling
//! and global average pooling on channel-major `C x H x W` buffers.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Patch matrix of a 3x3 same-padded convolution: row `(ci, ky, kx)` holds
/// `x[ci][y + ky - 1][x + kx - 1]` (zero outside) for every output pixel.
fn im2col<T: Scalar>(x: &FeatureMap<T>) -> Vec<T> {
    let (h, w) = (x.height, x.width);
    let mut col = vec![T::zero(); x.channels * 9 * h * w];
    for ci in 0..x.channels {
        let inp = x.plane(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 3 + ky) * 3 + kx) * h * w..][..h * w];
                for y in 0..h {
                    let Some(yy) = (y + ky).checked_sub(1).filter(|v| *v < h) else { continue };
                    let (x0, x1) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                    for xx in x0..x1 {
                        row[y * w + xx] = inp[yy * w + xx + kx - 1];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the input planes.
fn col2im<T: Scalar>(col: &[T], channels: usize, h: usize, w: usize) -> FeatureMap<T> {
    let mut x = FeatureMap::zeros(channels, h, w);
    for ci in 0..channels {
        let g = x.plane_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 3 + ky) * 3 + kx) * h * w..][..h * w];
                for y in 0..h {
                    let Some(yy) = (y + ky).checked_sub(1).filter(|v| *v < h) else { continue };
                    let (x0, x1) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                    for xx in x0..x1 {
                        g[yy * w + xx + kx - 1] += row[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

/// 3x3 convolution (cross-correlation) with zero padding; weights laid out
/// `[cout][cin][ky][kx]`.
pub fn conv3x3<T: Scalar>(x: &FeatureMap<T>, w: &[T], b: &[T], cout: usize) -> FeatureMap<T> {
    let (hw, k) = (x.height * x.width, x.channels * 9);
    let mut out = FeatureMap::zeros(cout, x.height, x.width);
    for co in 0..cout {
        out.plane_mut(co).iter_mut().for_each(|v| *v = b[co]);
    }
    T::gemm(cout, k, hw, w, false, &im2col(x), false, T::one(), &mut out.data);
    out
}

/// Gradients of [`conv3x3`]: accumulates into `dw`, `db`, and returns the
/// input gradient when `want_input` is set.
pub fn conv3x3_backward<T: Scalar>(
    x: &FeatureMap<T>,
    w: &[T],
    dout: &FeatureMap<T>,
    dw: &mut [T],
    db: &mut [T],
    want_input: bool,
) -> Option<FeatureMap<T>> {
    let (hw, k, cout) = (x.height * x.width, x.channels * 9, dout.channels);
    for (co, g) in db.iter_mut().enumerate().take(cout) {
        *g += dout.plane(co).iter().copied().sum::<T>();
    }
    T::gemm(cout, hw, k, &dout.data, false, &im2col(x), true, T::one(), dw);
    if !want_input {
        return None;
    }
    let mut dcol = vec![T::zero(); k * hw];
    T::gemm(k, cout, hw, w, true, &dout.data, false, T::zero(), &mut dcol);
    Some(col2im(&dcol, x.channels, x.height, x.width))
}

pub fn relu_inplace<T: Scalar>(x: &mut FeatureMap<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (x.height / 2, x.width / 2);
    let q = T::lit(0.25);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let inp = x.plane(c);
        let o = out.plane_mut(c);
        for y in 0..h {
            let (r0, r1) = (2 * y * x.width, (2 * y + 1) * x.width);
            for xx in 0..w {
                o[y * w + xx] = q * (inp[r0 + 2 * xx] + inp[r0 + 2 * xx + 1] + inp[r1 + 2 * xx] + inp[r1 + 2 * xx + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(dout: &FeatureMap<T>, in_h: usize, in_w: usize) -> FeatureMap<T> {
    let q = T::lit(0.25);
    let mut dx = FeatureMap::zeros(dout.channels, in_h, in_w);
    for c in 0..dout.channels {
        let d = dout.plane(c);
        let g = dx.plane_mut(c);
        for y in 0..dout.height {
            for x in 0..dout.width {
                let v = q * d[y * dout.width + x];
                g[2 * y * in_w + 2 * x] = v;
                g[2 * y * in_w + 2 * x + 1] = v;
                g[(2 * y + 1) * in_w + 2 * x] = v;
                g[(2 * y + 1) * in_w + 2 * x + 1] = v;
            }
        }
    }
    dx
}

/// Channel-wise spatial mean: `C x H x W` to `C`.
pub fn global_average_pool<T: Scalar>(x: &FeatureMap<T>) -> Vec<T> {
    let n = T::from_usize_lossy(x.height * x.width);
    (0..x.channels).map(|c| x.plane(c).iter().copied().sum::<T>() / n).collect()
}

/// `y = W x + b` with `W` laid out `[out][in]`.
pub fn dense<T: Scalar>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| *bo + w[o * n..(o + 1) * n].iter().zip(x).fold(T::zero(), |s, (a, c)| s + *a * *c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &FeatureMap<f64>, w: &[f64], b: &[f64], cout: usize) -> FeatureMap<f64> {
        let mut out = FeatureMap::zeros(cout, x.height, x.width);
        for co in 0..cout {
            for y in 0..x.height as isize {
                for xx in 0..x.width as isize {
                    let mut s = b[co];
                    for ci in 0..x.channels {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (yy, xi) = (y + ky - 1, xx + kx - 1);
                                if yy < 0 || xi < 0 || yy >= x.height as isize || xi >= x.width as isize {
                                    continue;
                                }
                                s += w[((co * x.channels + ci) * 3 + ky as usize) * 3 + kx as usize]
                                    * x.plane(ci)[yy as usize * x.width + xi as usize];
                            }
                        }
                    }
                    out.plane_mut(co)[y as usize * x.width + xx as usize] = s;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n).map(|k| (((k as u64 + 1) * 2654435761 + seed * 97) % 1009) as f64 / 1009.0 - 0.5).collect()
    }

    #[test]
    fn conv_matches_naive_loop() {
        let x = FeatureMap { channels: 3, height: 7, width: 5, data: pseudo(105, 1) };
        let w = pseudo(4 * 3 * 9, 2);
        let b = pseudo(4, 3);
        let fast = conv3x3(&x, &w, &b, 4);
        let slow = naive_conv(&x, &w, &b, 4);
        for (a, c) in fast.data.iter().zip(&slow.data) {
            assert!((a - c).abs() < 1e-13);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), d> is bilinear, so its gradients are exact adjoints
        let x = FeatureMap { channels: 2, height: 6, width: 5, data: pseudo(60, 4) };
        let w = pseudo(3 * 2 * 9, 5);
        let b = vec![0.0; 3];
        let d = FeatureMap { channels: 3, height: 6, width: 5, data: pseudo(90, 6) };
        let (mut dw, mut db) = (vec![0.0; w.len()], vec![0.0; 3]);
        let dx = conv3x3_backward(&x, &w, &d, &mut dw, &mut db, true).unwrap();
        let inner = |x: &FeatureMap<f64>, w: &[f64]| {
            conv3x3(x, w, &b, 3).data.iter().zip(&d.data).map(|(a, c)| a * c).sum::<f64>()
        };
        let base = inner(&x, &w);
        let e = pseudo(60, 7);
        let xe = FeatureMap { data: x.data.iter().zip(&e).map(|(a, c)| a + c).collect(), ..x.clone() };
        let lin_x = inner(&xe, &w) - base;
        assert!((lin_x - dx.data.iter().zip(&e).map(|(a, c)| a * c).sum::<f64>()).abs() < 1e-12);
        let f = pseudo(w.len(), 8);
        let wf: Vec<f64> = w.iter().zip(&f).map(|(a, c)| a + c).collect();
        let lin_w = inner(&x, &wf) - base;
        assert!((lin_w - dw.iter().zip(&f).map(|(a, c)| a * c).sum::<f64>()).abs() < 1e-12);
        assert!((db[1] - d.plane(1).iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn pooling_examples() {
        let x = FeatureMap { channels: 1, height: 2, width: 2, data: vec![1.0, 2.0, 3.0, 4.0] };
        assert_eq!(avg_pool2(&x).data, vec![2.5]);
        assert_eq!(global_average_pool(&x), vec![2.5]);
        let c = FeatureMap { channels: 2, height: 3, width: 3, data: [vec![0.75; 9], vec![-2.0; 9]].concat() };
        assert_eq!(global_average_pool(&c), vec![0.75, -2.0]);
        let back = avg_pool2_backward(&FeatureMap { channels: 1, height: 1, width: 1, data: vec![4.0] }, 3, 3);
        assert_eq!(back.data, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dense_is_affine() {
        assert_eq!(dense(&[1.0, 2.0], &[1.0, 0.0, 0.5, -1.0], &[0.25, 0.0]), vec![1.25, -1.5]);
    }
}
