//! Convolution, pooling and activation kernels on channel-major buffers.

/// A channel-major (c, y, x) activation buffer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Chw {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Chw {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Chw {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn channel(&self, i: usize) -> &[f32] {
        &self.data[i * self.h * self.w..(i + 1) * self.h * self.w]
    }

    #[inline]
    pub fn channel_mut(&mut self, i: usize) -> &mut [f32] {
        let plane = self.h * self.w;
        &mut self.data[i * plane..(i + 1) * plane]
    }
}

/// One 3x3 convolution layer with zero padding 1 and optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub(crate) in_channels: usize,
    pub(crate) out_channels: usize,
    /// Kernel values, `[out][in][ky][kx]` order.
    pub(crate) kernel: Vec<f32>,
    pub(crate) bias: Vec<f32>,
    pub(crate) relu: bool,
}

impl ConvLayer {
    #[inline]
    fn tap(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.kernel[((o * self.in_channels + i) * 3 + ky) * 3 + kx]
    }
}

/// Forward convolution; applies ReLU when the layer requests it.
pub(crate) fn conv_forward(layer: &ConvLayer, input: &Chw) -> Chw {
    debug_assert_eq!(input.c, layer.in_channels);
    let (h, w) = (input.h, input.w);
    let mut out = Chw::zeros(layer.out_channels, h, w);
    for o in 0..layer.out_channels {
        out.channel_mut(o).fill(layer.bias[o]);
    }
    for o in 0..layer.out_channels {
        for i in 0..layer.in_channels {
            let src = input.channel(i);
            let dst = out.channel_mut(o);
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let weight = layer.tap(o, i, ky, kx);
                    shifted_axpy(dst, src, weight, dy, dx, h, w);
                }
            }
        }
    }
    if layer.relu {
        for v in out.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Gradient of a convolution with respect to its input.
///
/// `grad_out` must already carry the ReLU mask when the layer has one.
pub(crate) fn conv_backward_input(layer: &ConvLayer, grad_out: &Chw) -> Chw {
    let (h, w) = (grad_out.h, grad_out.w);
    let mut grad_in = Chw::zeros(layer.in_channels, h, w);
    for o in 0..layer.out_channels {
        let src = grad_out.channel(o);
        for i in 0..layer.in_channels {
            let dst = grad_in.channel_mut(i);
            for ky in 0..3 {
                let dy = 1 - ky as isize;
                for kx in 0..3 {
                    let dx = 1 - kx as isize;
                    let weight = layer.tap(o, i, ky, kx);
                    shifted_axpy(dst, src, weight, dy, dx, h, w);
                }
            }
        }
    }
    grad_in
}

/// Accumulates kernel and bias gradients into `kernel_grad` / `bias_grad`.
pub(crate) fn conv_backward_params(
    layer: &ConvLayer,
    input: &Chw,
    grad_out: &Chw,
    kernel_grad: &mut [f32],
    bias_grad: &mut [f32],
) {
    let (h, w) = (input.h, input.w);
    for o in 0..layer.out_channels {
        let g = grad_out.channel(o);
        bias_grad[o] += g.iter().sum::<f32>();
        for i in 0..layer.in_channels {
            let x = input.channel(i);
            for ky in 0..3 {
                let dy = ky as isize - 1;
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let mut acc = 0.0f32;
                    let (y0, y1) = row_range(dy, h);
                    let (x0, x1) = row_range(dx, w);
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let xrow = &x[iy * w + (x0 as isize + dx) as usize
                            ..iy * w + (x1 as isize + dx) as usize];
                        acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f32>();
                    }
                    kernel_grad[((o * layer.in_channels + i) * 3 + ky) * 3 + kx] += acc;
                }
            }
        }
    }
}

/// `dst[y][x] += weight * src[y + dy][x + dx]` over the valid overlap.
#[inline]
fn shifted_axpy(dst: &mut [f32], src: &[f32], weight: f32, dy: isize, dx: isize, h: usize, w: usize) {
    let (y0, y1) = row_range(dy, h);
    let (x0, x1) = row_range(dx, w);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv += weight * sv;
        }
    }
}

#[inline]
fn row_range(delta: isize, n: usize) -> (usize, usize) {
    let start = if delta < 0 { (-delta) as usize } else { 0 };
    let end = if delta > 0 {
        n.saturating_sub(delta as usize)
    } else {
        n
    };
    (start.min(end), end)
}

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
pub(crate) fn maxpool_forward(input: &Chw) -> Chw {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Chw::zeros(input.c, oh, ow);
    for c in 0..input.c {
        let src = input.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * input.w + 2 * x;
                let mut best = src[base];
                for &off in &[1, input.w, input.w + 1] {
                    let v = src[base + off];
                    if v > best {
                        best = v;
                    }
                }
                dst[y * ow + x] = best;
            }
        }
    }
    out
}

/// Routes pooled gradients back to each window's argmax.
///
/// Ties go to the first maximal element in (row, col) scan order.
pub(crate) fn maxpool_backward(input: &Chw, grad_out: &Chw) -> Chw {
    let mut grad_in = Chw::zeros(input.c, input.h, input.w);
    let (oh, ow) = (grad_out.h, grad_out.w);
    for c in 0..input.c {
        let src = input.channel(c);
        let g = grad_out.channel(c);
        let dst = grad_in.channel_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * input.w + 2 * x;
                let mut best_off = 0usize;
                let mut best = src[base];
                for &off in &[1, input.w, input.w + 1] {
                    let v = src[base + off];
                    if v > best {
                        best = v;
                        best_off = off;
                    }
                }
                dst[base + best_off] += g[y * ow + x];
            }
        }
    }
    grad_in
}

/// Zeroes gradient entries whose activation is not strictly positive.
///
/// Activations are post-ReLU, so `act > 0` is exactly the set where the
/// derivative is 1; the subgradient at 0 is 0.
pub(crate) fn relu_mask(grad: &mut Chw, act: &Chw) {
    for (g, &a) in grad.data.iter_mut().zip(&act.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Chw {
        let mut t = Chw::zeros(c, h, w);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin();
        }
        t
    }

    fn naive_conv(layer: &ConvLayer, input: &Chw) -> Chw {
        let (h, w) = (input.h, input.w);
        let mut out = Chw::zeros(layer.out_channels, h, w);
        for o in 0..layer.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.bias[o];
                    for i in 0..layer.in_channels {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = y as isize + ky as isize - 1;
                                let ix = x as isize + kx as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += layer.tap(o, i, ky, kx)
                                        * input.channel(i)[iy as usize * w + ix as usize];
                                }
                            }
                        }
                    }
                    if layer.relu && acc < 0.0 {
                        acc = 0.0;
                    }
                    out.channel_mut(o)[y * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_reference() {
        let layer = ConvLayer {
            in_channels: 2,
            out_channels: 3,
            kernel: (0..2 * 3 * 9).map(|i| ((i * 7) % 13) as f32 * 0.1 - 0.6).collect(),
            bias: vec![0.1, -0.2, 0.3],
            relu: true,
        };
        let input = ramp(2, 5, 4);
        let fast = conv_forward(&layer, &input);
        let slow = naive_conv(&layer, &input);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_input_gradient_is_transpose() {
        // <conv(x), g> must equal <x, conv_backward(g)> for a linear conv.
        let layer = ConvLayer {
            in_channels: 2,
            out_channels: 2,
            kernel: (0..2 * 2 * 9).map(|i| (i as f32 * 0.11).cos()).collect(),
            bias: vec![0.0, 0.0],
            relu: false,
        };
        let x = ramp(2, 4, 4);
        let g = ramp(2, 4, 4);
        let fwd = conv_forward(&layer, &x);
        let bwd = conv_backward_input(&layer, &g);
        let lhs: f32 = fwd.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.data.iter().zip(&bwd.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_routes_gradient_to_first_max_on_ties() {
        let mut input = Chw::zeros(1, 2, 2);
        input.data.copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        let mut g = Chw::zeros(1, 1, 1);
        g.data[0] = 2.0;
        let back = maxpool_backward(&input, &g);
        assert_eq!(back.data, vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_drops_odd_edges() {
        let input = ramp(1, 5, 5);
        let out = maxpool_forward(&input);
        assert_eq!((out.h, out.w), (2, 2));
    }
}
