//! Artifact loss with a local-variance weighting map.
//!
//! ```text
//! r      = Σ_c |hr - sr|                         per pixel, [N,1,H,W]
//! w_img  = (Var_unbiased(r over H,W) + ε)^(1/5)  per image
//! w_pix  = unbiased variance of r in a 7×7 window (reflect padding)
//! w      = w_img · w_pix, zeroed where r < r_ref if a reference residual is given
//! loss   = mean |w·sr - w·hr|
//! ```
//!
//! The weights are not detached, so the loss is an ordinary differentiable
//! function of `sr`. `ε = 1e-12` keeps the fifth root differentiable at `sr = hr`.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

pub const ARTIFACT_WINDOW: usize = 7;
const ROOT_EPS: f64 = 1e-12;

fn reflect_indices(n: usize, r: usize, device: &Device) -> Result<Tensor> {
    let idx: Vec<u32> = (-(r as isize)..(n + r) as isize)
        .map(|i| {
            let m = if i < 0 {
                -i
            } else if i >= n as isize {
                2 * (n as isize - 1) - i
            } else {
                i
            };
            m as u32
        })
        .collect();
    let len = idx.len();
    Ok(Tensor::from_vec(idx, len, device)?)
}

/// Sum over a `k×k` window of an already padded `[N,C,H+k-1,W+k-1]` tensor.
fn box_sum_valid(x: &Tensor, k: usize, h: usize, w: usize) -> Result<Tensor> {
    let mut rows = x.narrow(2, 0, h)?;
    for dy in 1..k {
        rows = (rows + x.narrow(2, dy, h)?)?;
    }
    let mut out = rows.narrow(3, 0, w)?;
    for dx in 1..k {
        out = (out + rows.narrow(3, dx, w)?)?;
    }
    Ok(out)
}

/// Unbiased variance in every `k×k` window of `[N,C,H,W]`, mirror-padded.
pub fn local_variance(x: &Tensor, k: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let r = k / 2;
    if k % 2 == 0 || k < 3 || h <= r || w <= r {
        return Err(Error::Dimension(format!(
            "window {k} does not fit a {h}x{w} map"
        )));
    }
    let padded = x
        .index_select(&reflect_indices(h, r, x.device())?, 2)?
        .index_select(&reflect_indices(w, r, x.device())?, 3)?;
    let n = (k * k) as f64;
    let s1 = box_sum_valid(&padded, k, h, w)?;
    let s2 = box_sum_valid(&padded.sqr()?, k, h, w)?;
    let var = ((s2 - (s1.sqr()? / n)?)? / (n - 1.0))?;
    Ok(var.relu()?)
}

/// The weighting map `w`, `[N,1,H,W]`.
pub fn artifact_weight_map(sr: &Tensor, hr: &Tensor, reference: Option<&Tensor>) -> Result<Tensor> {
    if sr.dims() != hr.dims() {
        return Err(Error::Dimension(format!(
            "artifact loss inputs differ: {:?} vs {:?}",
            sr.dims(),
            hr.dims()
        )));
    }
    let (_, _, h, w) = sr.dims4()?;
    let residual = (hr - sr)?.abs()?.sum_keepdim(1)?;
    let count = (h * w) as f64;
    let mean = residual.mean_keepdim(3)?.mean_keepdim(2)?;
    let img_var = (residual.broadcast_sub(&mean)?.sqr()?.sum_keepdim(3)?.sum_keepdim(2)? / (count - 1.0).max(1.0))?;
    let img_w = (img_var + ROOT_EPS)?.powf(0.2)?;
    let mut weight = local_variance(&residual, ARTIFACT_WINDOW)?.broadcast_mul(&img_w)?;
    if let Some(reference) = reference {
        let ref_res = (hr - reference)?.abs()?.sum_keepdim(1)?;
        let keep = residual.ge(&ref_res)?.to_dtype(weight.dtype())?;
        weight = (weight * keep)?;
    }
    Ok(weight)
}

/// `reference` is an optional second SR estimate (e.g. an averaged model's output).
pub fn loss_artifact(sr: &Tensor, hr: &Tensor, reference: Option<&Tensor>) -> Result<Tensor> {
    let w = artifact_weight_map(sr, hr, reference)?;
    let a = sr.broadcast_mul(&w)?;
    let b = hr.broadcast_mul(&w)?;
    Ok((a - b)?.abs()?.mean_all()?)
}
