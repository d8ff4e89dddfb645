//! Single-level undecimated 2-D Haar filter bank.
//!
//! Analysis filters act on the 2x2 neighbourhood `{x[i,j], x[i,j-1],
//! x[i-1,j], x[i-1,j-1]}` with weights `±1/4`. The four analysis filters sum
//! to the unit impulse, so synthesis is the plain sum of bands (identity
//! synthesis filters) and reconstruction is exact at every pixel, borders
//! included.

use crate::error::{dim_err, Result};
use crate::image::{conv_depthwise, Image, Kernel2D};

/// Number of high-pass bands.
pub const HIGH_BANDS: usize = 3;

/// Analysis and synthesis filters of an undecimated transform.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBank {
    pub low_analysis: Kernel2D,
    pub high_analysis: Vec<Kernel2D>,
    pub low_synthesis: Kernel2D,
    pub high_synthesis: Vec<Kernel2D>,
}

/// Coefficients of one analysis pass; every band has the input's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub low: Image,
    pub high: Vec<Image>,
}

/// Embeds 2x2 taps `[x(i,j), x(i,j-1), x(i-1,j), x(i-1,j-1)]` into a 3x3
/// kernel. With true convolution, tap `(u, v)` reads `x(i-(u-1), j-(v-1))`.
fn haar_kernel(here: f64, left: f64, up: f64, diag: f64) -> Kernel2D {
    let mut taps = vec![0.0; 9];
    taps[4] = here;
    taps[5] = left;
    taps[7] = up;
    taps[8] = diag;
    Kernel2D::single(3, taps).expect("3x3 kernel")
}

/// The undecimated Haar bank. High bands are ordered LH (row differences,
/// horizontal edges), HL (column differences, vertical edges), HH.
pub fn haar_bank() -> WaveletBank {
    let q = 0.25;
    WaveletBank {
        low_analysis: haar_kernel(q, q, q, q),
        high_analysis: vec![
            haar_kernel(q, q, -q, -q),
            haar_kernel(q, -q, q, -q),
            haar_kernel(q, -q, -q, q),
        ],
        low_synthesis: Kernel2D::identity(),
        high_synthesis: vec![Kernel2D::identity(); HIGH_BANDS],
    }
}

impl WaveletBank {
    pub fn analyze(&self, x: &Image) -> Result<WaveletPyramid> {
        Ok(WaveletPyramid {
            low: conv_depthwise(x, &self.low_analysis)?,
            high: self
                .high_analysis
                .iter()
                .map(|k| conv_depthwise(x, k))
                .collect::<Result<_>>()?,
        })
    }

    /// Analysis restricted to the high-pass bands.
    pub fn analyze_high(&self, x: &Image) -> Result<Vec<Image>> {
        self.high_analysis.iter().map(|k| conv_depthwise(x, k)).collect()
    }

    pub fn synthesize(&self, p: &WaveletPyramid) -> Result<Image> {
        if p.high.len() != self.high_synthesis.len() {
            return dim_err(format!(
                "pyramid has {} high bands, bank expects {}",
                p.high.len(),
                self.high_synthesis.len()
            ));
        }
        for band in &p.high {
            p.low.check_same_shape(band, "pyramid bands")?;
        }
        let mut out = conv_depthwise(&p.low, &self.low_synthesis)?;
        for (band, k) in p.high.iter().zip(&self.high_synthesis) {
            out.axpy(1.0, &conv_depthwise(band, k)?)?;
        }
        Ok(out)
    }
}

pub fn analyze(x: &Image, bank: &WaveletBank) -> Result<WaveletPyramid> {
    bank.analyze(x)
}

pub fn synthesize(p: &WaveletPyramid, bank: &WaveletBank) -> Result<Image> {
    bank.synthesize(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::image::{conv_apply, Raster};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, b: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(h, w, b, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn filter_sums() {
        let bank = haar_bank();
        assert!((bank.low_analysis.tap_sum() - 1.0).abs() < 1e-15);
        for k in &bank.high_analysis {
            assert_eq!(k.tap_sum(), 0.0);
        }
    }

    #[test]
    fn perfect_reconstruction() {
        let bank = haar_bank();
        for (h, w, c, seed) in [(9, 9, 1, 1), (8, 10, 3, 2), (1, 5, 1, 3), (2, 2, 3, 4)] {
            let x = random(h, w, c, seed);
            let back = bank.synthesize(&bank.analyze(&x).unwrap()).unwrap();
            assert!(back.max_abs_diff(&x).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn constant_has_no_detail() {
        let bank = haar_bank();
        let p = bank.analyze(&Raster::filled(6, 7, 3, 0.35)).unwrap();
        assert!(p.low.data().iter().all(|v| (v - 0.35).abs() < 1e-15));
        assert!(p.high.iter().all(|b| b.max_abs() == 0.0));
    }

    #[test]
    fn vertical_edge_lands_in_hl() {
        let bank = haar_bank();
        let x = Raster::from_fn(8, 8, 1, |_, _, j| if j >= 4 { 1.0 } else { 0.0 });
        let p = bank.analyze(&x).unwrap();
        let (lh, hl) = (&p.high[0], &p.high[1]);
        for i in 1..7 {
            assert_eq!(lh.get(0, i, 4), 0.0);
            assert_eq!(hl.get(0, i, 4), 0.5);
            assert_eq!(hl.get(0, i, 2), 0.0);
        }
    }

    #[test]
    fn analyze_is_convolution() {
        let bank = haar_bank();
        let x = random(7, 6, 1, 5);
        let p = bank.analyze(&x).unwrap();
        assert_eq!(p.low, conv_apply(&x, &bank.low_analysis).unwrap());
        for (band, k) in p.high.iter().zip(&bank.high_analysis) {
            assert_eq!(band, &conv_apply(&x, k).unwrap());
        }
    }

    #[test]
    fn low_only_is_box_filter() {
        let bank = haar_bank();
        let x = random(6, 9, 2, 6);
        let mut p = bank.analyze(&x).unwrap();
        for b in &mut p.high {
            *b = Raster::zeros(6, 9, 2);
        }
        let low = bank.synthesize(&p).unwrap();
        // two passes: horizontal pair mean, then vertical pair mean, replicate at the top/left
        let horiz = Raster::from_fn(6, 9, 2, |c, i, j| {
            0.5 * (x.get(c, i, j) + x.get(c, i, j.saturating_sub(1)))
        });
        let both = Raster::from_fn(6, 9, 2, |c, i, j| {
            0.5 * (horiz.get(c, i, j) + horiz.get(c, i.saturating_sub(1), j))
        });
        assert!(low.max_abs_diff(&both).unwrap() < 1e-15);
    }

    #[test]
    fn zero_pyramid_and_mismatch() {
        let bank = haar_bank();
        let z = Raster::zeros(4, 4, 1);
        let p = WaveletPyramid {
            low: z.clone(),
            high: vec![z.clone(); 3],
        };
        assert_eq!(bank.synthesize(&p).unwrap().max_abs(), 0.0);
        let bad = WaveletPyramid {
            low: z.clone(),
            high: vec![z.clone(), z.clone(), Raster::zeros(4, 5, 1)],
        };
        assert!(matches!(bank.synthesize(&bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn shift_covariance_interior() {
        let bank = haar_bank();
        let x = random(12, 12, 1, 7);
        let shifted = Raster::from_fn(12, 12, 1, |c, i, j| x.get(c, i, j.saturating_sub(1)));
        let (p, q) = (bank.analyze(&x).unwrap(), bank.analyze(&shifted).unwrap());
        for (a, b) in p.high.iter().zip(&q.high) {
            for i in 2..10 {
                for j in 2..10 {
                    assert_eq!(a.get(0, i, j), b.get(0, i, j + 1));
                }
            }
        }
    }
}
