//! NHWC convolutions. Kernels use the `(kh, kw, in, out)` layout; depthwise
//! kernels are `(kh, kw, channels, 1)`.

use ndarray::{s, Array2, Array4, ArrayD, Ix1, Ix2, Ix4};
use rand::Rng;

use super::{init, HasParams, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent and leading pad along one spatial axis.
fn geometry(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            (out, total / 2)
        }
        Padding::Valid => ((input.saturating_sub(k)) / stride + 1, 0),
    }
}

#[derive(Debug, Clone)]
struct ConvCache {
    cols: Array2<f32>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
    pads: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub kernel: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: Padding,
    cache: Option<ConvCache>,
}

impl Conv2d {
    /// He-normal kernel, zero bias.
    pub fn new<R: Rng>(
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let kernel = init::he_normal(&[k, k, cin, cout], k * k * cin, rng);
        Conv2d {
            name: name.to_string(),
            kernel: Param::weight(format!("{name}/kernel"), kernel),
            bias: bias.then(|| Param::weight(format!("{name}/bias"), ArrayD::zeros(vec![cout]))),
            stride,
            padding,
            cache: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.kernel.value.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn out_channels(&self) -> usize {
        self.dims().3
    }

    /// `(n, h, w, c)` produced for an input of shape `input`.
    pub fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        let (kh, kw, _, cout) = self.dims();
        let (ho, _) = geometry(input[1], kh, self.stride, self.padding);
        let (wo, _) = geometry(input[2], kw, self.stride, self.padding);
        [input[0], ho, wo, cout]
    }

    fn im2col(&self, x: &Array4<f32>) -> ConvCache {
        let (kh, kw, cin, _) = self.dims();
        let (n, h, w, c) = x.dim();
        assert_eq!(c, cin, "{}: expected {cin} input channels, got {c}", self.name);
        let (ho, top) = geometry(h, kh, self.stride, self.padding);
        let (wo, left) = geometry(w, kw, self.stride, self.padding);
        let in_shape = [n, h, w, c];
        if kh == 1 && kw == 1 && self.stride == 1 {
            let cols = x
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((n * h * w, c))
                .expect("contiguous");
            return ConvCache {
                cols,
                in_shape,
                out_hw: (ho, wo),
                pads: (0, 0),
            };
        }
        let xs = x.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let row_len = kh * kw * cin;
        let mut cols = Array2::<f32>::zeros((n * ho * wo, row_len));
        let dst = cols.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..kh {
                        let iy = (oy * self.stride + ky) as isize - top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * self.stride + kx) as isize - left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let from = ((b * h + iy as usize) * w + ix as usize) * c;
                            let to = row + (ky * kw + kx) * cin;
                            dst[to..to + cin].copy_from_slice(&src[from..from + cin]);
                        }
                    }
                }
            }
        }
        ConvCache {
            cols,
            in_shape,
            out_hw: (ho, wo),
            pads: (top, left),
        }
    }

    fn apply(&self, cache: &ConvCache) -> Array4<f32> {
        let (kh, kw, cin, cout) = self.dims();
        let k2 = self
            .kernel
            .value
            .view()
            .into_shape_with_order((kh * kw * cin, cout))
            .expect("contiguous kernel");
        let mut y = cache.cols.dot(&k2);
        if let Some(b) = &self.bias {
            y += &b.value.view().into_dimensionality::<Ix1>().expect("1-D");
        }
        let (ho, wo) = cache.out_hw;
        y.into_shape_with_order((cache.in_shape[0], ho, wo, cout)).expect("sized")
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        self.apply(&self.im2col(x))
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let cache = self.im2col(x);
        let y = self.apply(&cache);
        self.cache = Some(cache);
        y
    }

    /// Accumulates kernel/bias gradients; returns the input gradient when
    /// `need_input_grad`.
    pub fn backward(&mut self, grad: &Array4<f32>, need_input_grad: bool) -> crate::Result<Option<Array4<f32>>> {
        let (kh, kw, cin, cout) = self.dims();
        let cache = self.cache.as_ref().ok_or(crate::Error::MissingCache)?;
        let g2 = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cache.cols.nrows(), cout))
            .expect("matching rows");
        if self.kernel.trainable {
            let dk = cache.cols.t().dot(&g2);
            let mut kg = self
                .kernel
                .grad
                .view_mut()
                .into_shape_with_order((kh * kw * cin, cout))
                .expect("contiguous");
            kg += &dk;
            if let Some(b) = &mut self.bias {
                let mut bg = b.grad.view_mut().into_dimensionality::<Ix1>().expect("1-D");
                bg += &g2.sum_axis(ndarray::Axis(0));
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let k2 = self
            .kernel
            .value
            .view()
            .into_shape_with_order((kh * kw * cin, cout))
            .expect("contiguous kernel");
        let dcols = g2.dot(&k2.t());
        let [n, h, w, c] = cache.in_shape;
        if kh == 1 && kw == 1 && self.stride == 1 {
            return Ok(Some(dcols.into_shape_with_order((n, h, w, c)).expect("sized")));
        }
        let (ho, wo) = cache.out_hw;
        let (top, left) = cache.pads;
        let mut dx = Array4::<f32>::zeros((n, h, w, c));
        let dst = dx.as_slice_mut().expect("fresh array");
        let src = dcols.as_slice().expect("fresh array");
        let row_len = kh * kw * cin;
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..kh {
                        let iy = (oy * self.stride + ky) as isize - top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * self.stride + kx) as isize - left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let to = ((b * h + iy as usize) * w + ix as usize) * c;
                            let from = row + (ky * kw + kx) * cin;
                            for (d, s) in dst[to..to + cin].iter_mut().zip(&src[from..from + cin]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        Ok(Some(dx))
    }
}

impl HasParams for Conv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.kernel);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.kernel);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub name: String,
    pub kernel: Param,
    pub stride: usize,
    pub padding: Padding,
    cache: Option<(Array4<f32>, (usize, usize))>,
}

impl DepthwiseConv2d {
    pub fn new<R: Rng>(name: &str, k: usize, channels: usize, stride: usize, padding: Padding, rng: &mut R) -> Self {
        let kernel = init::glorot_uniform(&[k, k, channels, 1], k * k, k * k, rng);
        DepthwiseConv2d {
            name: name.to_string(),
            kernel: Param::weight(format!("{name}/depthwise_kernel"), kernel),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> [usize; 4] {
        let shape = self.kernel.value.shape();
        let (ho, _) = geometry(input[1], shape[0], self.stride, self.padding);
        let (wo, _) = geometry(input[2], shape[1], self.stride, self.padding);
        [input[0], ho, wo, input[3]]
    }

    fn kernel_flat(&self) -> Vec<f32> {
        self.kernel.value.iter().copied().collect()
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let shape = self.kernel.value.shape();
        let (kh, kw) = (shape[0], shape[1]);
        let (n, h, w, c) = x.dim();
        let (ho, top) = geometry(h, kh, self.stride, self.padding);
        let (wo, left) = geometry(w, kw, self.stride, self.padding);
        let xs = x.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let k = self.kernel_flat();
        let mut y = Array4::<f32>::zeros((n, ho, wo, c));
        let dst = y.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let out = ((b * ho + oy) * wo + ox) * c;
                    for ky in 0..kh {
                        let iy = (oy * self.stride + ky) as isize - top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * self.stride + kx) as isize - left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let from = ((b * h + iy as usize) * w + ix as usize) * c;
                            let kk = (ky * kw + kx) * c;
                            for ch in 0..c {
                                dst[out + ch] += src[from + ch] * k[kk + ch];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let y = self.infer(x);
        let shape = self.kernel.value.shape();
        let (_, top) = geometry(x.dim().1, shape[0], self.stride, self.padding);
        let (_, left) = geometry(x.dim().2, shape[1], self.stride, self.padding);
        self.cache = Some((x.as_standard_layout().into_owned(), (top, left)));
        y
    }

    pub fn backward(&mut self, grad: &Array4<f32>, need_input_grad: bool) -> crate::Result<Option<Array4<f32>>> {
        let (x, (top, left)) = self.cache.as_ref().ok_or(crate::Error::MissingCache)?;
        let shape = self.kernel.value.shape().to_vec();
        let (kh, kw) = (shape[0], shape[1]);
        let (n, h, w, c) = x.dim();
        let (_, ho, wo, _) = grad.dim();
        let gs = grad.as_standard_layout();
        let g = gs.as_slice().expect("standard layout");
        let src = x.as_slice().expect("standard layout");
        let k = self.kernel_flat();
        let trainable = self.kernel.trainable;
        let mut dk = vec![0.0f32; k.len()];
        let mut dx = need_input_grad.then(|| Array4::<f32>::zeros((n, h, w, c)));
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let out = ((b * ho + oy) * wo + ox) * c;
                    for ky in 0..kh {
                        let iy = (oy * self.stride + ky) as isize - *top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * self.stride + kx) as isize - *left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let from = ((b * h + iy as usize) * w + ix as usize) * c;
                            let kk = (ky * kw + kx) * c;
                            if trainable {
                                for ch in 0..c {
                                    dk[kk + ch] += g[out + ch] * src[from + ch];
                                }
                            }
                            if let Some(dx) = dx.as_mut() {
                                let d = dx.as_slice_mut().expect("fresh array");
                                for ch in 0..c {
                                    d[from + ch] += g[out + ch] * k[kk + ch];
                                }
                            }
                        }
                    }
                }
            }
        }
        if trainable {
            for (acc, v) in self.kernel.grad.iter_mut().zip(dk) {
                *acc += v;
            }
        }
        Ok(dx)
    }
}

impl HasParams for DepthwiseConv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.kernel);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.kernel);
    }
}

/// Explicit zero padding `(top, bottom, left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroPad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl ZeroPad2d {
    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, h, w, c) = x.dim();
        let mut y = Array4::zeros((n, h + self.top + self.bottom, w + self.left + self.right, c));
        y.slice_mut(s![.., self.top..self.top + h, self.left..self.left + w, ..])
            .assign(x);
        y
    }

    pub fn backward(&self, grad: &Array4<f32>) -> Array4<f32> {
        let (_, h, w, _) = grad.dim();
        grad.slice(s![.., self.top..h - self.bottom, self.left..w - self.right, ..])
            .to_owned()
    }
}

pub fn global_avg_pool(x: &Array4<f32>) -> Array2<f32> {
    let (n, h, w, c) = x.dim();
    x.to_shape((n, h * w, c))
        .expect("reshape")
        .mean_axis(ndarray::Axis(1))
        .expect("non-empty spatial extent")
        .into_dimensionality::<Ix2>()
        .expect("2-D")
}

pub fn global_avg_pool_backward(grad: &Array2<f32>, h: usize, w: usize) -> Array4<f32> {
    let (n, c) = grad.dim();
    let scaled = grad / (h * w) as f32;
    scaled
        .insert_axis(ndarray::Axis(1))
        .insert_axis(ndarray::Axis(1))
        .broadcast((n, h, w, c))
        .expect("broadcast")
        .to_owned()
}

pub(crate) fn to4(x: ArrayD<f32>) -> Array4<f32> {
    x.into_dimensionality::<Ix4>().expect("4-D tensor")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_padding_geometry() {
        assert_eq!(geometry(224, 3, 2, Padding::Same), (112, 0));
        assert_eq!(geometry(5, 3, 1, Padding::Same), (5, 1));
        assert_eq!(geometry(7, 3, 2, Padding::Same), (4, 1));
        assert_eq!(geometry(225, 3, 2, Padding::Valid), (112, 0));
    }

    /// Direct nested-loop convolution used as the reference.
    fn naive_conv(x: &Array4<f32>, k: &ArrayD<f32>, stride: usize, padding: Padding) -> Array4<f32> {
        let (n, h, w, cin) = x.dim();
        let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
        let (ho, top) = geometry(h, kh, stride, padding);
        let (wo, left) = geometry(w, kw, stride, padding);
        let mut y = Array4::zeros((n, ho, wo, cout));
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - top as isize;
                                let ix = (ox * stride + kx) as isize - left as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x[[b, iy as usize, ix as usize, ci]] * k[[ky, kx, ci, co]];
                                }
                            }
                        }
                        y[[b, oy, ox, co]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (2, Padding::Valid)] {
            let conv = Conv2d::new("c", 3, 2, 4, stride, padding, false, &mut rng);
            let x = to4(random(&[2, 7, 6, 2], 3));
            let got = conv.infer(&x);
            let want = naive_conv(&x, &conv.kernel.value, stride, padding);
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    fn fd_check(mut f: impl FnMut(&Array4<f32>) -> f64, x: &Array4<f32>, dx: &Array4<f32>) {
        let eps = 1e-2f32;
        for idx in [[0, 0, 0, 0], [1, 2, 3, 1], [0, 4, 5, 0]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps as f64);
            assert!((fd - dx[idx] as f64).abs() < 1e-2, "{fd} vs {}", dx[idx]);
        }
    }

    #[test]
    fn conv_input_and_kernel_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new("c", 3, 2, 3, 2, Padding::Same, true, &mut rng);
        let x = to4(random(&[2, 5, 6, 2], 4));
        let y = conv.forward(&x);
        let up = to4(random(y.shape(), 5));
        let dx = conv.backward(&up, true).unwrap().unwrap();
        let probe = conv.clone();
        fd_check(|x| (probe.infer(x) * &up).sum() as f64, &x, &dx);
        let eps = 1e-2f32;
        let mut p = conv.clone();
        p.kernel.value[[1, 2, 0, 1]] += eps;
        let mut m = conv.clone();
        m.kernel.value[[1, 2, 0, 1]] -= eps;
        let fd = ((p.infer(&x) * &up).sum() - (m.infer(&x) * &up).sum()) as f64 / (2.0 * eps as f64);
        assert!((fd - conv.kernel.grad[[1, 2, 0, 1]] as f64).abs() < 1e-2);
    }

    #[test]
    fn pointwise_conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut conv = Conv2d::new("p", 1, 2, 3, 1, Padding::Same, false, &mut rng);
        let x = to4(random(&[2, 5, 6, 2], 7));
        let y = conv.forward(&x);
        let up = to4(random(y.shape(), 8));
        let dx = conv.backward(&up, true).unwrap().unwrap();
        let probe = conv.clone();
        fd_check(|x| (probe.infer(x) * &up).sum() as f64, &x, &dx);
    }

    #[test]
    fn depthwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, padding) in [(1, Padding::Same), (2, Padding::Valid)] {
            let mut dw = DepthwiseConv2d::new("d", 3, 2, stride, padding, &mut rng);
            let x = to4(random(&[2, 5, 6, 2], 9));
            let y = dw.forward(&x);
            let up = to4(random(y.shape(), 10));
            let dx = dw.backward(&up, true).unwrap().unwrap();
            let probe = dw.clone();
            fd_check(|x| (probe.infer(x) * &up).sum() as f64, &x, &dx);
        }
    }

    #[test]
    fn pad_and_pool_round_trip() {
        let pad = ZeroPad2d {
            top: 0,
            bottom: 1,
            left: 0,
            right: 1,
        };
        let x = to4(random(&[1, 4, 4, 2], 1));
        let y = pad.forward(&x);
        assert_eq!(y.dim(), (1, 5, 5, 2));
        assert_eq!(pad.backward(&y), x);
        let pooled = global_avg_pool(&x);
        let manual: f32 = x.slice(s![0, .., .., 1]).sum() / 16.0;
        assert!((pooled[[0, 1]] - manual).abs() < 1e-6);
        let back = global_avg_pool_backward(&pooled, 4, 4);
        assert!((back[[0, 3, 3, 1]] - manual / 16.0).abs() < 1e-7);
    }
}
