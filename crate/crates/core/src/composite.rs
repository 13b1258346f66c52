//! Final colour composition and the specular-aware gradient gate.
//!
//! The gate `g = exp(−k · Var₃ₓ₃[C_spec])` never changes forward values: the
//! transmitted colour passes through unchanged and only its reverse-mode
//! sensitivity is scaled by `g`.

use crate::error::{Error, Result};
use crate::image::Image;

/// Window side of the local variance estimate.
pub const GATE_WINDOW: usize = 3;
/// Default gate sensitivity.
pub const DEFAULT_GATE_K: f64 = 4.0;

/// `C_sub = τ C_trans + (1 − τ) C_scatter` and `C = C_spec + β C_sub`.
#[inline]
pub fn compose_pixel(
    c_spec: [f64; 3],
    beta: f64,
    tau: f64,
    scatter: [f64; 3],
    c_trans: [f64; 3],
) -> ([f64; 3], [f64; 3]) {
    let mut c_sub = [0.0; 3];
    let mut c = [0.0; 3];
    for ch in 0..3 {
        c_sub[ch] = tau * c_trans[ch] + (1.0 - tau) * scatter[ch];
        c[ch] = c_spec[ch] + beta * c_sub[ch];
    }
    (c_sub, c)
}

/// Upstream gradients of one pixel's composition inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComposeGrad {
    pub c_spec: [f64; 3],
    pub beta: f64,
    pub tau: f64,
    pub scatter: [f64; 3],
    /// Ungated sensitivity of the loss to `C_trans`.
    pub c_trans: [f64; 3],
}

/// Reverse of [`compose_pixel`] for the upstream gradient `d_c` on `C`.
#[inline]
pub fn compose_backward(
    beta: f64,
    tau: f64,
    scatter: [f64; 3],
    c_trans: [f64; 3],
    c_sub: [f64; 3],
    d_c: [f64; 3],
) -> ComposeGrad {
    let mut g = ComposeGrad::default();
    for ch in 0..3 {
        g.c_spec[ch] = d_c[ch];
        g.beta += d_c[ch] * c_sub[ch];
        let d_sub = beta * d_c[ch];
        g.tau += d_sub * (c_trans[ch] - scatter[ch]);
        g.scatter[ch] = d_sub * (1.0 - tau);
        g.c_trans[ch] = d_sub * tau;
    }
    g
}

/// Per-pixel channel-mean population variance over a 3×3 replicate-padded window.
pub fn local_variance(c_spec: &Image) -> Image {
    let (w, h, ch) = (c_spec.width(), c_spec.height(), c_spec.channels());
    let r = (GATE_WINDOW / 2) as isize;
    let n = (GATE_WINDOW * GATE_WINDOW) as f64;
    Image::from_fn(w, h, 1, |x, y, _| {
        let mut total = 0.0;
        for c in 0..ch {
            let mut sum = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    sum += c_spec.get_clamped(x as isize + dx, y as isize + dy, c);
                }
            }
            let mean = sum / n;
            let mut var = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let d = c_spec.get_clamped(x as isize + dx, y as isize + dy, c) - mean;
                    var += d * d;
                }
            }
            total += var / n;
        }
        total / ch as f64
    })
}

/// Gate map `g = exp(−k · Var)`.
pub fn gating_map(c_spec: &Image, k: f64) -> Result<Image> {
    if !(k >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gating strength must be non-negative, got {k}"
        )));
    }
    if k == 0.0 {
        return Ok(Image::filled(c_spec.width(), c_spec.height(), 1, 1.0));
    }
    Ok(local_variance(c_spec).map(|v| (-k * v).exp()))
}

/// Forward half of the partial stop-gradient: the value is returned untouched.
#[inline]
pub fn gate_transmission(c_trans: [f64; 3], _g: f64) -> [f64; 3] {
    c_trans
}

/// Backward half: `∂L/∂C_trans ← g · ∂L/∂C̃_trans`; `g` receives nothing.
#[inline]
pub fn gate_transmission_backward(d_gated: [f64; 3], g: f64) -> [f64; 3] {
    [g * d_gated[0], g * d_gated[1], g * d_gated[2]]
}
