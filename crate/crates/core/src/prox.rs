//! Proximal operators: l1 shrinkage of feature maps and the
//! transform-domain exclusion step.

use crate::error::{Error, Result};
use crate::image::{FeatureMap, Image, Raster};
use crate::wavelet::WaveletBank;

/// Per-band, per-pixel nonnegative thresholds over a pyramid's high bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdField {
    bands: Vec<Raster>,
}

impl ThresholdField {
    pub fn new(bands: Vec<Raster>) -> Result<Self> {
        for b in &bands {
            if b.data().iter().any(|&t| !(t >= 0.0)) {
                return Err(Error::Argument("thresholds must be nonnegative".into()));
            }
        }
        Ok(ThresholdField { bands })
    }

    /// `kappa * |coefficients|` band by band.
    pub fn from_coefficients(high: &[Raster], kappa: f64) -> Result<Self> {
        check_threshold(kappa)?;
        Ok(ThresholdField {
            bands: high.iter().map(|b| b.map(|v| kappa * v.abs())).collect(),
        })
    }

    pub fn bands(&self) -> &[Raster] {
        &self.bands
    }
}

fn check_threshold(theta: f64) -> Result<()> {
    if theta >= 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("threshold {theta} must be nonnegative")))
    }
}

/// `sign(x) * max(|x| - theta, 0)`.
#[inline]
pub fn shrink(x: f64, theta: f64) -> f64 {
    let m = x.abs() - theta;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// Scalar soft-threshold with argument checking.
pub fn soft_threshold(x: f64, theta: f64) -> Result<f64> {
    check_threshold(theta)?;
    Ok(shrink(x, theta))
}

/// Soft-thresholds every sample of `x` by the same `theta`.
pub fn soft_threshold_raster(x: &Raster, theta: f64) -> Result<Raster> {
    check_threshold(theta)?;
    Ok(x.map(|v| shrink(v, theta)))
}

/// Soft-thresholds with a position-dependent field.
pub fn soft_threshold_field(x: &Raster, theta: &Raster) -> Result<Raster> {
    x.zip_map(theta, shrink)
}

/// Exact prox of `theta * ||z||_1`.
pub fn prox_feature(z: &FeatureMap, theta: f64) -> Result<FeatureMap> {
    soft_threshold_raster(z, theta)
}

/// Exclusion step: thresholds the high bands of `candidate` by
/// `kappa * |high bands of other|`, keeps its low band, and resynthesizes.
pub fn prox_exclusion(candidate: &Image, other: &Image, kappa: f64, bank: &WaveletBank) -> Result<Image> {
    candidate.check_same_shape(other, "exclusion prox")?;
    check_threshold(kappa)?;
    if kappa == 0.0 {
        return Ok(candidate.clone());
    }
    let mut pyramid = bank.analyze(candidate)?;
    let field = ThresholdField::from_coefficients(&bank.analyze_high(other)?, kappa)?;
    for (band, theta) in pyramid.high.iter_mut().zip(field.bands()) {
        *band = soft_threshold_field(band, theta)?;
    }
    bank.synthesize(&pyramid)
}
