//! Dense Lucas-Kanade optical flow for small feature images.

use crate::error::{Error, Result};
use crate::imaging::GrayFrame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Side of the square aggregation window; odd, at least 3.
    pub window: usize,
    pub iterations: usize,
    /// Added to the structure-tensor diagonal so flat patches solve to zero.
    pub regularization: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            window: 5,
            iterations: 12,
            regularization: 1e-3,
        }
    }
}

/// Per-pixel displacement from `prev` to `next`, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }
}

fn sample(f: &GrayFrame, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (f.width() - 1) as f64);
    let y = y.clamp(0.0, (f.height() - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(f.width() - 1), (y0 + 1).min(f.height() - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let top = f.get(x0, y0) * (1.0 - tx) + f.get(x1, y0) * tx;
    let bottom = f.get(x0, y1) * (1.0 - tx) + f.get(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}

fn gradients(data: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            if xr > xl {
                gx[y * w + x] = (data[y * w + xr] - data[y * w + xl]) / (xr - xl) as f64;
            }
            if yd > yu {
                gy[y * w + x] = (data[yd * w + x] - data[yu * w + x]) / (yd - yu) as f64;
            }
        }
    }
    (gx, gy)
}

/// Box sum over a clipped square window, via a summed-area table.
fn box_sum(values: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut sat = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            out[y * w + x] = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
                + sat[y0 * stride + x0];
        }
    }
    out
}

/// Iterative dense Lucas-Kanade: at every pixel, solve the damped 2×2
/// normal equations over the surrounding window, warp `next` by the
/// running estimate and repeat.
pub fn dense_flow(prev: &GrayFrame, next: &GrayFrame, cfg: &FlowConfig) -> Result<FlowField> {
    prev.same_dims(next)?;
    if cfg.window < 3 || cfg.window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "flow window must be odd and >= 3, got {}",
            cfg.window
        )));
    }
    if !(cfg.regularization > 0.0) {
        return Err(Error::InvalidArgument(
            "flow regularization must be positive".into(),
        ));
    }
    let (w, h) = (prev.width(), prev.height());
    let r = cfg.window / 2;
    let (pgx, pgy) = gradients(prev.data(), w, h);
    let mut field = FlowField::zeros(w, h);
    let mut warped = vec![0.0; w * h];
    let mut inside = vec![true; w * h];
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);

    for _ in 0..cfg.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f64 + field.u[i], y as f64 + field.v[i]);
                warped[i] = sample(next, sx, sy);
                inside[i] = (0.0..=max_x).contains(&sx) && (0.0..=max_y).contains(&sy);
            }
        }
        let (wgx, wgy) = gradients(&warped, w, h);
        let mut ixx = vec![0.0; w * h];
        let mut ixy = vec![0.0; w * h];
        let mut iyy = vec![0.0; w * h];
        let mut ixt = vec![0.0; w * h];
        let mut iyt = vec![0.0; w * h];
        for i in 0..w * h {
            // samples warped off the patch carry no information
            if !inside[i] {
                continue;
            }
            let gx = 0.5 * (pgx[i] + wgx[i]);
            let gy = 0.5 * (pgy[i] + wgy[i]);
            let it = warped[i] - prev.data()[i];
            ixx[i] = gx * gx;
            ixy[i] = gx * gy;
            iyy[i] = gy * gy;
            ixt[i] = gx * it;
            iyt[i] = gy * it;
        }
        let (sxx, sxy, syy) = (box_sum(&ixx, w, h, r), box_sum(&ixy, w, h, r), box_sum(&iyy, w, h, r));
        let (sxt, syt) = (box_sum(&ixt, w, h, r), box_sum(&iyt, w, h, r));
        let mut moved = 0.0f64;
        for i in 0..w * h {
            let a = sxx[i] + cfg.regularization;
            let d = syy[i] + cfg.regularization;
            let b = sxy[i];
            let det = a * d - b * b;
            let du = -(d * sxt[i] - b * syt[i]) / det;
            let dv = -(a * syt[i] - b * sxt[i]) / det;
            // one-pixel steps keep the linearisation honest
            let (du, dv) = (du.clamp(-1.0, 1.0), dv.clamp(-1.0, 1.0));
            if du.is_finite() && dv.is_finite() {
                field.u[i] += du;
                field.v[i] += dv;
                moved = moved.max(du.abs()).max(dv.abs());
            }
        }
        if moved < 1e-6 {
            break;
        }
    }
    Ok(field)
}
