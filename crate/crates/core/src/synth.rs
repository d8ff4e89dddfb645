//! Deterministic test inputs: blurred additive mixtures and procedural
//! transmission/reflection pairs.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{conv_depthwise, Image, Kernel2D, Raster};

/// How a reflection is blurred, scaled and added to a transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub blur_sigma: f64,
    pub reflection_gain: f64,
    pub clip: bool,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            blur_sigma: 2.0,
            reflection_gain: 0.6,
            clip: true,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma >= 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::Argument(format!("blur sigma {} must be >= 0", self.blur_sigma)));
        }
        if !(self.reflection_gain > 0.0 && self.reflection_gain <= 1.0) {
            return Err(Error::Argument(format!(
                "reflection gain {} must lie in (0, 1]",
                self.reflection_gain
            )));
        }
        Ok(())
    }

    /// Blur radius used by [`synthesize_mixture`]: `ceil(3 sigma)`.
    pub fn blur_radius(&self) -> usize {
        (3.0 * self.blur_sigma).ceil() as usize
    }
}

/// Normalized isotropic Gaussian of side `2 radius + 1`; `sigma = 0` gives
/// the centred unit impulse.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Kernel2D> {
    if !(sigma >= 0.0) {
        return Err(Error::Argument(format!("sigma {sigma} must be >= 0")));
    }
    let k = 2 * radius + 1;
    let mut taps = vec![0.0; k * k];
    if sigma == 0.0 {
        taps[radius * k + radius] = 1.0;
    } else {
        let r = radius as f64;
        for u in 0..k {
            for v in 0..k {
                let d2 = (u as f64 - r).powi(2) + (v as f64 - r).powi(2);
                taps[u * k + v] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
    }
    Kernel2D::single(k, taps)
}

/// `I = clip(T + gain * (G_sigma (*) R))`, clipping to `[0, 1]` when enabled.
pub fn synthesize_mixture(t: &Image, r: &Image, spec: &MixtureSpec) -> Result<Image> {
    t.check_same_shape(r, "mixture")?;
    spec.validate()?;
    let blurred = conv_depthwise(r, &gaussian_kernel(spec.blur_sigma, spec.blur_radius())?)?;
    let mut mix = t.clone();
    mix.axpy(spec.reflection_gain, &blurred)?;
    Ok(if spec.clip { mix.clamp(0.0, 1.0) } else { mix })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Horizontal intensity ramp behind soft horizontal streaks; the two
    /// layers vary along orthogonal axes, so their detail bands never meet.
    Ramp,
    /// Large-block checkerboard behind smooth bumps confined to block
    /// interiors.
    Checker,
    /// Overlapping Gaussian blobs in both layers.
    Blobs,
    /// Thin sharp strokes behind filled rectangles.
    TextEdges,
}

impl PairKind {
    pub const ALL: [PairKind; 4] = [PairKind::Ramp, PairKind::Checker, PairKind::Blobs, PairKind::TextEdges];

    pub fn name(self) -> &'static str {
        match self {
            PairKind::Ramp => "ramp",
            PairKind::Checker => "checker",
            PairKind::Blobs => "blobs",
            PairKind::TextEdges => "text_edges",
        }
    }

    /// Whether the two layers have disjoint detail supports by construction.
    pub fn disjoint_edges(self) -> bool {
        matches!(self, PairKind::Ramp | PairKind::Checker)
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PairKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "text-edges" && *k == PairKind::TextEdges))
            .ok_or_else(|| Error::Argument(format!("unknown pair kind '{s}'")))
    }
}

impl std::fmt::Display for PairKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const CHANNELS: usize = 3;

/// Raised-cosine bump of unit height and support radius 1.
fn bump(d: f64) -> f64 {
    if d.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * d).cos())
    }
}

fn tints(rng: &mut ChaCha8Rng) -> [f64; CHANNELS] {
    [
        rng.random_range(0.85..1.0),
        rng.random_range(0.85..1.0),
        rng.random_range(0.85..1.0),
    ]
}

/// A `size x size` RGB (transmission, reflection) pair.
pub fn procedural_pair(kind: PairKind, size: usize, seed: u64) -> Result<(Image, Image)> {
    if size < 16 {
        return Err(Error::Argument(format!("procedural size {size} must be >= 16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = size as f64;
    let (tt, tr) = (tints(&mut rng), tints(&mut rng));
    let pair = match kind {
        PairKind::Ramp => {
            let lo = rng.random_range(0.1..0.25);
            let hi = rng.random_range(0.45..0.6);
            let wobble = rng.random_range(0.0..0.04);
            let phase = rng.random_range(0.0..2.0 * PI);
            let streaks: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.15..0.85) * n,
                        rng.random_range(0.06..0.14) * n,
                        rng.random_range(0.35..0.65),
                    )
                })
                .collect();
            let t = Raster::from_fn(size, size, CHANNELS, |c, _, j| {
                let s = j as f64 / (n - 1.0);
                tt[c] * (lo + (hi - lo) * s + wobble * (2.0 * PI * s + phase).sin())
            });
            let r = Raster::from_fn(size, size, CHANNELS, |c, i, _| {
                let v: f64 = streaks.iter().map(|&(ci, w, a)| a * bump((i as f64 - ci) / w)).sum();
                tr[c] * v.min(0.7)
            });
            (t, r)
        }
        PairKind::Checker => {
            let block = (size / 4).max(32).min(size / 2);
            let lo = rng.random_range(0.15..0.3);
            let hi = rng.random_range(0.45..0.6);
            let radius = block as f64 / 4.0;
            let cells = size.div_ceil(block);
            let bumps: Vec<(f64, f64, f64)> = (0..cells * cells)
                .filter_map(|cell| {
                    let present = rng.random_bool(0.8);
                    let (bi, bj) = (cell / cells, cell % cells);
                    let ci = (bi * block) as f64 + block as f64 / 2.0 + rng.random_range(-1.0..=1.0f64).round();
                    let cj = (bj * block) as f64 + block as f64 / 2.0 + rng.random_range(-1.0..=1.0f64).round();
                    let a = rng.random_range(0.35..0.65);
                    present.then_some((ci, cj, a))
                })
                .collect();
            let t = Raster::from_fn(size, size, CHANNELS, |c, i, j| {
                tt[c]
                    * if (i / block + j / block).is_multiple_of(2) {
                        lo
                    } else {
                        hi
                    }
            });
            let r = Raster::from_fn(size, size, CHANNELS, |c, i, j| {
                let v: f64 = bumps
                    .iter()
                    .map(|&(ci, cj, a)| {
                        let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
                        a * bump(d / radius)
                    })
                    .sum();
                tr[c] * v
            });
            (t, r)
        }
        PairKind::Blobs => {
            let blobs = |count: usize, rng: &mut ChaCha8Rng| -> Vec<(f64, f64, f64, f64)> {
                (0..count)
                    .map(|_| {
                        (
                            rng.random_range(0.0..n),
                            rng.random_range(0.0..n),
                            rng.random_range(n / 16.0..n / 6.0),
                            rng.random_range(0.15..0.4),
                        )
                    })
                    .collect()
            };
            let tb = blobs(5, &mut rng);
            let rb = blobs(4, &mut rng);
            let field = |b: &[(f64, f64, f64, f64)], i: usize, j: usize| -> f64 {
                b.iter()
                    .map(|&(ci, cj, s, a)| {
                        a * (-((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)) / (2.0 * s * s)).exp()
                    })
                    .sum()
            };
            let t = Raster::from_fn(size, size, CHANNELS, |c, i, j| {
                (tt[c] * (0.15 + field(&tb, i, j))).clamp(0.0, 1.0)
            });
            let r = Raster::from_fn(size, size, CHANNELS, |c, i, j| {
                (tr[c] * field(&rb, i, j)).clamp(0.0, 1.0)
            });
            (t, r)
        }
        PairKind::TextEdges => {
            let strokes: Vec<(usize, usize, usize, usize)> = (0..10)
                .map(|_| {
                    let len = rng.random_range(size / 4..=size / 2);
                    let horizontal = rng.random_bool(0.5);
                    let (h, w) = if horizontal { (2, len) } else { (len, 2) };
                    (rng.random_range(0..size - h), rng.random_range(0..size - w), h, w)
                })
                .collect();
            let rects: Vec<(usize, usize, usize, usize, f64)> = (0..3)
                .map(|_| {
                    let h = rng.random_range(size / 6..=size / 3);
                    let w = rng.random_range(size / 6..=size / 3);
                    (
                        rng.random_range(0..size - h),
                        rng.random_range(0..size - w),
                        h,
                        w,
                        rng.random_range(0.3..0.6),
                    )
                })
                .collect();
            let inside = |i: usize, j: usize, (i0, j0, h, w): (usize, usize, usize, usize)| {
                i >= i0 && i < i0 + h && j >= j0 && j < j0 + w
            };
            let t = Raster::from_fn(size, size, CHANNELS, |c, i, j| {
                let ink = strokes.iter().any(|&s| inside(i, j, s));
                tt[c] * if ink { 0.1 } else { 0.55 }
            });
            let r = Raster::from_fn(size, size, CHANNELS, |c, i, j| {
                let v: f64 = rects
                    .iter()
                    .filter(|&&(i0, j0, h, w, _)| inside(i, j, (i0, j0, h, w)))
                    .map(|r| r.4)
                    .sum();
                tr[c] * v.min(0.7)
            });
            (t, r)
        }
    };
    Ok(pair)
}

/// One instance of the bundled synthetic suite.
#[derive(Debug, Clone)]
pub struct BundledMixture {
    pub kind: PairKind,
    pub spec: MixtureSpec,
    pub transmission: Image,
    pub reflection: Image,
    pub mixture: Image,
}

impl BundledMixture {
    pub fn label(&self) -> String {
        format!(
            "{}/sigma{}/gain{}",
            self.kind, self.spec.blur_sigma, self.spec.reflection_gain
        )
    }
}

/// The three mixture specs of the bundled suite; the first is the default.
pub fn bundled_specs() -> [MixtureSpec; 3] {
    [
        MixtureSpec::default(),
        MixtureSpec {
            blur_sigma: 1.0,
            reflection_gain: 0.4,
            ..MixtureSpec::default()
        },
        MixtureSpec {
            blur_sigma: 3.0,
            reflection_gain: 0.8,
            ..MixtureSpec::default()
        },
    ]
}

/// Seed of the procedural pairs in the bundled suite.
pub const BUNDLED_SEED: u64 = 7;

/// Every pair kind crossed with every bundled spec: 12 mixtures.
pub fn bundled_suite(size: usize) -> Result<Vec<BundledMixture>> {
    let mut out = Vec::new();
    for kind in PairKind::ALL {
        let (t, r) = procedural_pair(kind, size, BUNDLED_SEED)?;
        for spec in bundled_specs() {
            let mixture = synthesize_mixture(&t, &r, &spec)?;
            out.push(BundledMixture {
                kind,
                spec,
                transmission: t.clone(),
                reflection: r.clone(),
                mixture,
            });
        }
    }
    Ok(out)
}
