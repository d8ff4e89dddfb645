//! Evaluation functionals: exclusion losses, reconstruction loss, PSNR and
//! SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::image::{edge_beta, edge_correlation_map, resize_bilinear, Image, Raster, Resize};
use crate::wavelet::WaveletBank;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Default number of levels for [`exclusion_multiscale`].
pub const DEFAULT_EXCLUSION_LEVELS: usize = 3;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub psnr_t: f64,
    pub psnr_r: f64,
    pub ssim_t: f64,
    pub ssim_r: f64,
    pub excl_multiscale: f64,
    pub excl_transform: f64,
    pub recon: f64,
}

/// Edge-overlap loss summed over `levels` dyadic scales:
/// `sum_j ||Psi(down_j t, down_j r)||_F`. With `betas = None` each level
/// uses the scale-free normalization of [`edge_beta`].
pub fn exclusion_multiscale(t: &Image, r: &Image, levels: usize, betas: Option<(f64, f64)>) -> Result<f64> {
    t.check_same_shape(r, "multi-scale exclusion")?;
    if levels == 0 {
        return Err(Error::Argument("need at least one level".into()));
    }
    let min_side = t.height().min(t.width());
    if levels > 63 || (1usize << (levels - 1)) > min_side {
        return Err(Error::Argument(format!(
            "{levels} levels need 2^{} <= {min_side}",
            levels - 1
        )));
    }
    let (mut t, mut r) = (t.clone(), r.clone());
    let mut total = 0.0;
    for level in 0..levels {
        if level > 0 {
            t = resize_bilinear(&t, Resize::Half)?;
            r = resize_bilinear(&r, Resize::Half)?;
        }
        let (bt, br) = betas.unwrap_or_else(|| (edge_beta(&t), edge_beta(&r)));
        total += edge_correlation_map(&t, &r, bt, br)?.norm();
    }
    Ok(total)
}

/// `sum_m ||(W_m t) * (W_m r)||_1` over the high bands.
pub fn exclusion_transform(t: &Image, r: &Image, bank: &WaveletBank) -> Result<f64> {
    t.check_same_shape(r, "transform exclusion")?;
    let ht = bank.analyze_high(t)?;
    let hr = bank.analyze_high(r)?;
    Ok(ht
        .iter()
        .zip(&hr)
        .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x * y).abs()).sum::<f64>())
        .sum())
}

/// `||t - t_hat||^2 + ||r - r_hat||^2`, plus `||t - D_T z_T||^2` and
/// `||r - D_R z_R||^2` when the decoded images are given.
pub fn reconstruction_loss(
    t: &Image,
    t_hat: &Image,
    r: &Image,
    r_hat: &Image,
    decoded_t: Option<&Image>,
    decoded_r: Option<&Image>,
) -> Result<f64> {
    let sq = |a: &Image, b: &Image| -> Result<f64> { Ok(a.sub(b)?.norm_sq()) };
    let mut loss = sq(t, t_hat)? + sq(r, r_hat)?;
    if let Some(dt) = decoded_t {
        loss += sq(t, dt)?;
    }
    if let Some(dr) = decoded_r {
        loss += sq(r, dr)?;
    }
    Ok(loss)
}

pub fn mse(x: &Image, reference: &Image) -> Result<f64> {
    x.check_same_shape(reference, "mse")?;
    let n = x.data().len().max(1) as f64;
    Ok(x.sub(reference)?.norm_sq() / n)
}

/// `10 log10(1 / MSE)` for unit peak, capped at [`PSNR_CAP`].
pub fn psnr(x: &Image, reference: &Image) -> Result<f64> {
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every fully-contained window.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = g.iter().enumerate().map(|(v, gv)| gv * plane[i * w + j + v]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = g.iter().enumerate().map(|(u, gu)| gu * rows[(i + u) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over valid window
/// positions, averaged across channels.
pub fn ssim(x: &Image, reference: &Image) -> Result<f64> {
    x.check_same_shape(reference, "ssim")?;
    let (h, w) = (x.height(), x.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for b in 0..x.bands() {
        let (p, q) = (x.plane(b), reference.plane(b));
        let pp: Vec<f64> = p.iter().map(|v| v * v).collect();
        let qq: Vec<f64> = q.iter().map(|v| v * v).collect();
        let pq: Vec<f64> = p.iter().zip(q).map(|(a, c)| a * c).collect();
        let mu_p = filter_valid(p, h, w, &g);
        let mu_q = filter_valid(q, h, w, &g);
        let e_pp = filter_valid(&pp, h, w, &g);
        let e_qq = filter_valid(&qq, h, w, &g);
        let e_pq = filter_valid(&pq, h, w, &g);
        let mut acc = 0.0;
        for k in 0..mu_p.len() {
            let (mp, mq) = (mu_p[k], mu_q[k]);
            let vp = e_pp[k] - mp * mp;
            let vq = e_qq[k] - mq * mq;
            let cov = e_pq[k] - mp * mq;
            acc += ((2.0 * mp * mq + c1) * (2.0 * cov + c2)) / ((mp * mp + mq * mq + c1) * (vp + vq + c2));
        }
        total += acc / mu_p.len() as f64;
    }
    Ok(total / x.bands() as f64)
}

/// Full report for an estimated `(t_hat, r_hat)` against references.
pub fn evaluate(t_hat: &Image, r_hat: &Image, t: &Image, r: &Image, bank: &WaveletBank) -> Result<MetricsReport> {
    if !t_hat.same_shape(t) || !r_hat.same_shape(r) || !t.same_shape(r) {
        return dim_err("estimates and references must share one shape");
    }
    let levels = max_levels(t, DEFAULT_EXCLUSION_LEVELS);
    Ok(MetricsReport {
        psnr_t: psnr(t_hat, t)?,
        psnr_r: psnr(r_hat, r)?,
        ssim_t: ssim(t_hat, t)?,
        ssim_r: ssim(r_hat, r)?,
        excl_multiscale: exclusion_multiscale(t_hat, r_hat, levels, None)?,
        excl_transform: exclusion_transform(t_hat, r_hat, bank)?,
        recon: reconstruction_loss(t, t_hat, r, r_hat, None, None)?,
    })
}

/// Largest admissible level count not exceeding `wanted`.
fn max_levels(x: &Raster, wanted: usize) -> usize {
    let min_side = x.height().min(x.width()).max(1);
    let mut levels = 1;
    while levels < wanted && (1usize << levels) <= min_side {
        levels += 1;
    }
    levels
}
