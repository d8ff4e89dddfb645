//! Dense rasters and the linear primitives the solver is assembled from:
//! same-size multi-channel convolution and its exact adjoint, bilinear
//! resampling by a factor of two, forward-difference gradients and the
//! edge-correlation map used by the multi-scale exclusion loss.
//!
//! All convolutions use symmetric (half-sample) boundary extension:
//! index `-1` maps to `0`, index `n` maps to `n - 1`.

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};

/// A planar `height x width x bands` raster of `f64`.
///
/// Storage is band-major, each band a row-major plane:
/// `data[b * height * width + i * width + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

/// Images hold 1 or 3 colour channels in `[0, 1]`.
pub type Image = Raster;
/// Coefficient maps, one band per dictionary atom.
pub type FeatureMap = Raster;

impl Raster {
    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        Self::filled(height, width, bands, 0.0)
    }

    pub fn filled(height: usize, width: usize, bands: usize, value: f64) -> Self {
        Raster {
            height,
            width,
            bands,
            data: vec![value; height * width * bands],
        }
    }

    pub fn from_vec(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * bands {
            return dim_err(format!(
                "buffer of length {} cannot hold {height}x{width}x{bands}",
                data.len()
            ));
        }
        Ok(Raster {
            height,
            width,
            bands,
            data,
        })
    }

    /// Builds a raster by evaluating `f(band, row, col)` at every sample.
    pub fn from_fn(height: usize, width: usize, bands: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * bands);
        for b in 0..bands {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(b, i, j));
                }
            }
        }
        Raster {
            height,
            width,
            bands,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Alias of [`Raster::bands`] for colour images.
    pub fn channels(&self) -> usize {
        self.bands
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, b: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn plane_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.data[(b * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, b: usize, i: usize, j: usize, v: f64) {
        self.data[(b * self.height + i) * self.width + j] = v;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }

    pub(crate) fn check_same_shape(&self, other: &Raster, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            dim_err(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.bands, other.height, other.width, other.bands
            ))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise `f(self, other)`; shapes must agree.
    pub fn zip_map(&self, other: &Raster, f: impl Fn(f64, f64) -> f64) -> Result<Raster> {
        self.check_same_shape(other, "elementwise operation")?;
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    fn with_data(&self, data: Vec<f64>) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            bands: self.bands,
            data,
        }
    }

    pub fn add(&self, other: &Raster) -> Result<Raster> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Raster) -> Result<Raster> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Raster {
        self.map(|v| v * s)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Raster) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Raster) -> Result<f64> {
        self.check_same_shape(other, "inner product")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Raster) -> Result<f64> {
        self.check_same_shape(other, "difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Raster {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Keeps rows `0..height` and columns `0..width`.
    pub fn crop(&self, height: usize, width: usize) -> Result<Raster> {
        if height > self.height || width > self.width {
            return dim_err(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            ));
        }
        Ok(Raster::from_fn(height, width, self.bands, |b, i, j| self.get(b, i, j)))
    }

    /// Copies the given bands into a new raster.
    pub fn select_bands(&self, bands: &[usize]) -> Raster {
        let mut data = Vec::with_capacity(bands.len() * self.plane_len());
        for &b in bands {
            data.extend_from_slice(self.plane(b));
        }
        Raster {
            height: self.height,
            width: self.width,
            bands: bands.len(),
            data,
        }
    }

    /// Stacks rasters of one spatial size along the band axis.
    pub fn stack(parts: &[Raster]) -> Result<Raster> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("cannot stack zero rasters".into()))?;
        let mut data = Vec::new();
        let mut bands = 0;
        for p in parts {
            if p.height != first.height || p.width != first.width {
                return dim_err("stacked rasters differ in spatial size");
            }
            data.extend_from_slice(&p.data);
            bands += p.bands;
        }
        Ok(Raster {
            height: first.height,
            width: first.width,
            bands,
            data,
        })
    }
}

/// A bank of `out_channels x in_channels` square filters of odd side `k`.
///
/// Taps are stored as `taps[((o * in_channels + c) * k + u) * k + v]`.
/// Tap `(u, v)` multiplies the input at offset `(u - k/2, v - k/2)` *behind*
/// the output pixel (true convolution, not correlation), so an impulse
/// reproduces the filter unflipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    in_channels: usize,
    out_channels: usize,
    k: usize,
    taps: Vec<f64>,
}

impl Kernel2D {
    pub fn new(in_channels: usize, out_channels: usize, k: usize, taps: Vec<f64>) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::Argument(format!("kernel side {k} must be odd")));
        }
        if taps.len() != in_channels * out_channels * k * k {
            return dim_err(format!(
                "{} taps cannot fill {out_channels}x{in_channels}x{k}x{k}",
                taps.len()
            ));
        }
        Ok(Kernel2D {
            in_channels,
            out_channels,
            k,
            taps,
        })
    }

    /// Single-channel kernel from a `k x k` row-major tap array.
    pub fn single(k: usize, taps: Vec<f64>) -> Result<Self> {
        Self::new(1, 1, k, taps)
    }

    /// The 1x1 identity.
    pub fn identity() -> Self {
        Kernel2D {
            in_channels: 1,
            out_channels: 1,
            k: 1,
            taps: vec![1.0],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn side(&self) -> usize {
        self.k
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    #[inline]
    pub fn tap(&self, o: usize, c: usize, u: usize, v: usize) -> f64 {
        self.taps[((o * self.in_channels + c) * self.k + u) * self.k + v]
    }

    /// The `k x k` filter from input `c` to output `o`.
    pub fn filter(&self, o: usize, c: usize) -> &[f64] {
        let kk = self.k * self.k;
        let start = (o * self.in_channels + c) * kk;
        &self.taps[start..start + kk]
    }

    pub fn norm(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

/// Symmetric (half-sample) extension of index `i` into `0..n`.
#[inline]
pub fn symmetric_index(i: isize, n: usize) -> usize {
    let n2 = 2 * n as isize;
    let m = i.rem_euclid(n2);
    if m < n as isize {
        m as usize
    } else {
        (n2 - 1 - m) as usize
    }
}

/// `table[p * k + u]` is the source index feeding output `p` through tap `u`.
fn tap_sources(n: usize, k: usize) -> Vec<usize> {
    let r = (k / 2) as isize;
    let mut table = Vec::with_capacity(n * k);
    for p in 0..n as isize {
        for u in 0..k as isize {
            table.push(symmetric_index(p - (u - r), n));
        }
    }
    table
}

/// Range of outputs `p` whose source `p - d` lies inside `0..n` for a tap
/// displaced by `d`; these need no boundary lookup.
#[inline]
fn interior(n: usize, d: isize) -> (usize, usize) {
    let lo = d.max(0) as usize;
    let hi = (n as isize + d.min(0)).max(lo as isize) as usize;
    (lo.min(n), hi.min(n))
}

/// Same-size convolution: output band `o` is `sum_c taps[o, c] (*) x[c]`.
pub fn conv_apply(x: &Raster, kernels: &Kernel2D) -> Result<Raster> {
    if kernels.in_channels != x.bands {
        return dim_err(format!(
            "kernel expects {} input bands, raster has {}",
            kernels.in_channels, x.bands
        ));
    }
    let (h, w, k) = (x.height, x.width, kernels.k);
    let r = (k / 2) as isize;
    let rows = tap_sources(h, k);
    let cols = tap_sources(w, k);
    let mut out = Raster::zeros(h, w, kernels.out_channels);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(h * w).enumerate().for_each(|(o, plane)| {
        for c in 0..kernels.in_channels {
            let src = x.plane(c);
            for u in 0..k {
                for v in 0..k {
                    let t = kernels.tap(o, c, u, v);
                    if t == 0.0 {
                        continue;
                    }
                    let d = v as isize - r;
                    let (lo, hi) = interior(w, d);
                    for i in 0..h {
                        let srow = &src[rows[i * k + u] * w..][..w];
                        let orow = &mut plane[i * w..(i + 1) * w];
                        for j in (0..lo).chain(hi..w) {
                            orow[j] += t * srow[cols[j * k + v]];
                        }
                        if lo == hi {
                            continue;
                        }
                        let s_lo = (lo as isize - d) as usize;
                        for (o, s) in orow[lo..hi].iter_mut().zip(&srow[s_lo..]) {
                            *o += t * s;
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Exact adjoint of [`conv_apply`] under the Frobenius inner product,
/// boundary extension included.
pub fn conv_adjoint(y: &Raster, kernels: &Kernel2D) -> Result<Raster> {
    if kernels.out_channels != y.bands {
        return dim_err(format!(
            "kernel produces {} bands, raster has {}",
            kernels.out_channels, y.bands
        ));
    }
    let (h, w, k) = (y.height, y.width, kernels.k);
    let r = (k / 2) as isize;
    let rows = tap_sources(h, k);
    let cols = tap_sources(w, k);
    let mut out = Raster::zeros(h, w, kernels.in_channels);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    out.data.par_chunks_mut(h * w).enumerate().for_each(|(c, plane)| {
        for o in 0..kernels.out_channels {
            let src = y.plane(o);
            for u in 0..k {
                for v in 0..k {
                    let t = kernels.tap(o, c, u, v);
                    if t == 0.0 {
                        continue;
                    }
                    let d = v as isize - r;
                    let (lo, hi) = interior(w, d);
                    for i in 0..h {
                        let yrow = &src[i * w..(i + 1) * w];
                        let trow = &mut plane[rows[i * k + u] * w..][..w];
                        for j in (0..lo).chain(hi..w) {
                            trow[cols[j * k + v]] += t * yrow[j];
                        }
                        if lo == hi {
                            continue;
                        }
                        let s_lo = (lo as isize - d) as usize;
                        for (dst, s) in trow[s_lo..].iter_mut().zip(&yrow[lo..hi]) {
                            *dst += t * s;
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Applies a single-channel kernel to every band independently.
pub fn conv_depthwise(x: &Raster, kernel: &Kernel2D) -> Result<Raster> {
    if kernel.in_channels != 1 || kernel.out_channels != 1 {
        return Err(Error::Argument(
            "depthwise convolution needs a 1x1-channel kernel".into(),
        ));
    }
    let planes = (0..x.bands)
        .map(|b| conv_apply(&x.select_bands(&[b]), kernel))
        .collect::<Result<Vec<_>>>()?;
    Raster::stack(&planes)
}

/// Supported resampling factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resize {
    Half,
    Double,
}

/// Bilinear resampling with pixel-centre alignment.
///
/// Halving first pads odd sizes to even by replicating the last row/column,
/// after which each output pixel is the mean of a 2x2 block. Doubling samples
/// at source coordinate `(p + 0.5) / 2 - 0.5`, clamped to the raster.
pub fn resize_bilinear(x: &Raster, factor: Resize) -> Result<Raster> {
    match factor {
        Resize::Half => {
            if x.height <= 1 && x.width <= 1 {
                return dim_err("cannot halve a 1x1 raster");
            }
            let h = x.height.div_ceil(2);
            let w = x.width.div_ceil(2);
            let (hm, wm) = (x.height - 1, x.width - 1);
            Ok(Raster::from_fn(h, w, x.bands, |b, i, j| {
                let (i0, i1) = ((2 * i).min(hm), (2 * i + 1).min(hm));
                let (j0, j1) = ((2 * j).min(wm), (2 * j + 1).min(wm));
                0.25 * (x.get(b, i0, j0) + x.get(b, i0, j1) + x.get(b, i1, j0) + x.get(b, i1, j1))
            }))
        }
        Resize::Double => {
            let ys = upsample_taps(x.height);
            let xs = upsample_taps(x.width);
            Ok(Raster::from_fn(2 * x.height, 2 * x.width, x.bands, |b, i, j| {
                let (a0, a1, fa) = ys[i];
                let (c0, c1, fc) = xs[j];
                let top = (1.0 - fc) * x.get(b, a0, c0) + fc * x.get(b, a0, c1);
                let bot = (1.0 - fc) * x.get(b, a1, c0) + fc * x.get(b, a1, c1);
                (1.0 - fa) * top + fa * bot
            }))
        }
    }
}

fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|p| {
            let s = ((p as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let s0 = s.floor() as usize;
            let s1 = (s0 + 1).min(n - 1);
            (s0, s1, s - s0 as f64)
        })
        .collect()
}

/// Doubles `x` and crops to `height x width`; inverts the even-padding of
/// [`Resize::Half`] for odd target sizes.
pub fn upsample_to(x: &Raster, height: usize, width: usize) -> Result<Raster> {
    resize_bilinear(x, Resize::Double)?.crop(height, width)
}

/// Forward differences with replicate boundary: `gx[i,j] = x[i,j+1] - x[i,j]`,
/// `gy[i,j] = x[i+1,j] - x[i,j]`, zero on the last column/row.
pub fn spatial_gradient(x: &Raster) -> (Raster, Raster) {
    let (h, w) = (x.height, x.width);
    let gx = Raster::from_fn(h, w, x.bands, |b, i, j| {
        if j + 1 < w {
            x.get(b, i, j + 1) - x.get(b, i, j)
        } else {
            0.0
        }
    });
    let gy = Raster::from_fn(h, w, x.bands, |b, i, j| {
        if i + 1 < h {
            x.get(b, i + 1, j) - x.get(b, i, j)
        } else {
            0.0
        }
    });
    (gx, gy)
}

/// Single-band `sum_c |gx| + |gy|` per pixel.
pub fn gradient_magnitude(x: &Raster) -> Raster {
    let (gx, gy) = spatial_gradient(x);
    let mut m = Raster::zeros(x.height, x.width, 1);
    for b in 0..x.bands {
        for ((acc, a), c) in m.data.iter_mut().zip(gx.plane(b)).zip(gy.plane(b)) {
            *acc += a.abs() + c.abs();
        }
    }
    m
}

/// Scale-free normalization `1 / mean |grad x|`, floored at `1e-6` in the
/// denominator.
pub fn edge_beta(x: &Raster) -> f64 {
    1.0 / gradient_magnitude(x).mean().max(1e-6)
}

/// `tanh(beta_t |grad t|) * tanh(beta_r |grad r|)`, a single-band map.
pub fn edge_correlation_map(t: &Image, r: &Image, beta_t: f64, beta_r: f64) -> Result<Image> {
    t.check_same_shape(r, "edge correlation")?;
    let mt = gradient_magnitude(t);
    let mr = gradient_magnitude(r);
    mt.zip_map(&mr, |a, b| (beta_t * a).tanh() * (beta_r * b).tanh())
}
