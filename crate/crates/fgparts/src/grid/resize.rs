//! Axis-aligned bilinear resize with corner-aligned sampling.

use super::Image;
use crate::error::{Error, Result};

/// Resizes `img` to `out_h` x `out_w`.
///
/// Output index `i` samples source position `i * (n_in - 1) / (n_out - 1)`
/// per axis (position 0 when the output axis has a single element), so
/// same-size resize is an exact identity and ramps keep exact endpoints.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.data();
    let mut data = vec![0.0f32; out_h * out_w * c];

    let y_scale = axis_scale(h, out_h);
    let x_scale = axis_scale(w, out_w);

    for oy in 0..out_h {
        let sy = oy as f64 * y_scale;
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ox as f64 * x_scale;
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let w00 = (1.0 - fy) * (1.0 - fx);
            let w01 = (1.0 - fy) * fx;
            let w10 = fy * (1.0 - fx);
            let w11 = fy * fx;
            for ch in 0..c {
                let v = w00 * src[(y0 * w + x0) * c + ch] as f64
                    + w01 * src[(y0 * w + x1) * c + ch] as f64
                    + w10 * src[(y1 * w + x0) * c + ch] as f64
                    + w11 * src[(y1 * w + x1) * c + ch] as f64;
                data[(oy * out_w + ox) * c + ch] = v as f32;
            }
        }
    }
    Image::new(out_h, out_w, c, data)
}

fn axis_scale(n_in: usize, n_out: usize) -> f64 {
    if n_out > 1 {
        (n_in - 1) as f64 / (n_out - 1) as f64
    } else {
        0.0
    }
}
