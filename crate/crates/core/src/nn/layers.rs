//! Per-sample layer kernels. Activations are channel-major (`[C, H, W]`).
//!
//! Every layer reads its weights from a flat parameter slice through the
//! offsets recorded in its spec, and writes weight gradients into a slice
//! with the same layout.

use super::Scalar;

/// Square convolution with stride 1 and zero "same" padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Conv2d {
    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch_len()
    }

    fn im2col<T: Scalar>(&self, x: &[T], h: usize, w: usize, cols: &mut Vec<T>) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        cols.clear();
        cols.resize(self.patch_len() * hw, T::zero());
        for c in 0..self.cin {
            let plane = &x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let dst_row = &mut dst[y * w..(y + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for xo in x0..x1 {
                            dst_row[xo] = src_row[(xo as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize) -> Vec<T> {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        let mut x = vec![T::zero(); self.cin * hw];
        for c in 0..self.cin {
            let plane = &mut x[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[y * w..(y + 1) * w];
                        let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for xo in x0..x1 {
                            dst_row[(xo as isize + dx) as usize] += src_row[xo];
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns `[cout, h, w]`; `cols` keeps the unfolded input for backward.
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], h: usize, w: usize, cols: &mut Vec<T>) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cin * h * w);
        let hw = h * w;
        self.im2col(x, h, w, cols);
        let mut out = vec![T::zero(); self.cout * hw];
        for (o, row) in out.chunks_mut(hw).enumerate() {
            row.fill(params[self.bias + o]);
        }
        let weight = &params[self.weight..self.weight + self.weight_len()];
        T::gemm(
            false,
            false,
            self.cout,
            self.patch_len(),
            hw,
            weight,
            cols,
            T::one(),
            &mut out,
        );
        out
    }

    /// Accumulates weight gradients into `grads` (when given) and returns the
    /// input gradient when `want_input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        dout: &[T],
        cols: &[T],
        h: usize,
        w: usize,
        grads: Option<&mut [T]>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        let k = self.patch_len();
        if let Some(g) = grads {
            let dw = &mut g[self.weight..self.weight + self.weight_len()];
            T::gemm(false, true, self.cout, hw, k, dout, cols, T::one(), dw);
            for (o, row) in dout.chunks(hw).enumerate() {
                let s: T = row.iter().copied().sum();
                g[self.bias + o] += s;
            }
        }
        if !want_input_grad {
            return None;
        }
        let weight = &params[self.weight..self.weight + self.weight_len()];
        let mut dcols = vec![T::zero(); k * hw];
        T::gemm(true, false, k, self.cout, hw, weight, dout, T::zero(), &mut dcols);
        Some(self.col2im(&dcols, h, w))
    }
}

/// Fully connected layer, weight stored `[out, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Dense {
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut out = params[self.bias..self.bias + self.outputs].to_vec();
        let weight = &params[self.weight..self.weight + self.inputs * self.outputs];
        T::gemm(
            false,
            false,
            self.outputs,
            self.inputs,
            1,
            weight,
            x,
            T::one(),
            &mut out,
        );
        out
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        dout: &[T],
        x: &[T],
        grads: Option<&mut [T]>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        if let Some(g) = grads {
            let dw = &mut g[self.weight..self.weight + self.inputs * self.outputs];
            T::gemm(false, false, self.outputs, 1, self.inputs, dout, x, T::one(), dw);
            for (gb, &d) in g[self.bias..self.bias + self.outputs].iter_mut().zip(dout) {
                *gb += d;
            }
        }
        if !want_input_grad {
            return None;
        }
        let weight = &params[self.weight..self.weight + self.inputs * self.outputs];
        let mut dx = vec![T::zero(); self.inputs];
        T::gemm(
            true,
            false,
            self.inputs,
            self.outputs,
            1,
            weight,
            dout,
            T::zero(),
            &mut dx,
        );
        Some(dx)
    }
}

pub fn leaky_relu<T: Scalar>(x: &mut [T], slope: T) {
    for v in x {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Backward through LeakyReLU using the layer's output; with a positive
/// slope the output sign equals the input sign.
pub fn leaky_relu_backward<T: Scalar>(dout: &mut [T], out: &[T], slope: T) {
    for (d, &y) in dout.iter_mut().zip(out) {
        if y <= T::zero() {
            *d = *d * slope;
        }
    }
}

pub fn sigmoid<T: Scalar>(x: &mut [T]) {
    for v in x {
        *v = T::one() / (T::one() + (-*v).exp());
    }
}

pub fn sigmoid_backward<T: Scalar>(dout: &mut [T], out: &[T]) {
    for (d, &y) in dout.iter_mut().zip(out) {
        *d = *d * y * (T::one() - y);
    }
}

/// 2×2 max pooling, stride 2, odd trailing rows/columns dropped.
/// Returns the pooled map and the flat argmax of every output cell.
pub fn max_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xo + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn max_pool2_backward<T: Scalar>(dout: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&d, &i) in dout.iter().zip(argmax) {
        dx[i as usize] += d;
    }
    dx
}

#[inline]
fn nearest_source(i: usize, src: usize) -> usize {
    (i / 2).min(src - 1)
}

/// Nearest-neighbour upsampling from `sh×sw` to `th×tw` (nominally 2×).
pub fn upsample_nearest<T: Scalar>(
    x: &[T],
    c: usize,
    (sh, sw): (usize, usize),
    (th, tw): (usize, usize),
) -> Vec<T> {
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let plane = &x[ch * sh * sw..(ch + 1) * sh * sw];
        for y in 0..th {
            let row = &plane[nearest_source(y, sh) * sw..];
            for xo in 0..tw {
                out.push(row[nearest_source(xo, sw)]);
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Scalar>(
    dout: &[T],
    c: usize,
    (sh, sw): (usize, usize),
    (th, tw): (usize, usize),
) -> Vec<T> {
    let mut dx = vec![T::zero(); c * sh * sw];
    for ch in 0..c {
        let plane = &mut dx[ch * sh * sw..(ch + 1) * sh * sw];
        let src = &dout[ch * th * tw..(ch + 1) * th * tw];
        for y in 0..th {
            let sy = nearest_source(y, sh);
            for xo in 0..tw {
                plane[sy * sw + nearest_source(xo, sw)] += src[y * tw + xo];
            }
        }
    }
    dx
}

/// `x / sqrt(|x|² + eps)`; returns the normalized vector and the divisor.
pub fn l2_normalize<T: Scalar>(x: &[T], eps: T) -> (Vec<T>, T) {
    let sq: T = x.iter().map(|&v| v * v).sum();
    let s = (sq + eps).sqrt();
    (x.iter().map(|&v| v / s).collect(), s)
}

/// Backward through [`l2_normalize`] given its output `y` and divisor `s`.
pub fn l2_normalize_backward<T: Scalar>(dy: &[T], y: &[T], s: T) -> Vec<T> {
    let dot: T = dy.iter().zip(y).map(|(&a, &b)| a * b).sum();
    dy.iter().zip(y).map(|(&d, &v)| (d - v * dot) / s).collect()
}
