//! Convolutional dictionaries and the feature-space data gradients.
//!
//! A dictionary maps an `N`-band feature map to a `C`-channel image by
//! same-size convolution; atom `n` is the `C x k x k` filter stack feeding
//! every output channel from band `n`.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::image::{conv_adjoint, conv_apply, FeatureMap, Image, Kernel2D, Raster};

const MAGIC: &[u8; 4] = b"DURD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvDictionary {
    filters: Kernel2D,
    atom_norms: Vec<f64>,
}

impl ConvDictionary {
    /// Wraps filters (`in_channels` = atoms, `out_channels` = image
    /// channels), rescaling every atom to unit Frobenius norm.
    pub fn from_filters(mut filters: Kernel2D) -> Result<Self> {
        if filters.in_channels() == 0 {
            return Err(Error::Argument("a dictionary needs at least one atom".into()));
        }
        let norms = atom_norms(&filters);
        let (n, c, kk) = (
            filters.in_channels(),
            filters.out_channels(),
            filters.side() * filters.side(),
        );
        for (a, &norm) in norms.iter().enumerate() {
            if norm == 0.0 {
                return Err(Error::Argument(format!("atom {a} is identically zero")));
            }
            for o in 0..c {
                let start = (o * n + a) * kk;
                for t in &mut filters.taps_mut()[start..start + kk] {
                    *t /= norm;
                }
            }
        }
        let atom_norms = atom_norms(&filters);
        Ok(ConvDictionary { filters, atom_norms })
    }

    pub fn filters(&self) -> &Kernel2D {
        &self.filters
    }

    pub fn atom_norms(&self) -> &[f64] {
        &self.atom_norms
    }

    pub fn atoms(&self) -> usize {
        self.filters.in_channels()
    }

    pub fn channels(&self) -> usize {
        self.filters.out_channels()
    }

    pub fn side(&self) -> usize {
        self.filters.side()
    }

    /// Atom `n` flattened as `[channel][u][v]`.
    pub fn atom(&self, n: usize) -> Vec<f64> {
        (0..self.channels())
            .flat_map(|c| self.filters.filter(c, n).iter().copied())
            .collect()
    }

    /// `D (*) z = sum_n D^n (*) z^n`.
    pub fn decode(&self, z: &FeatureMap) -> Result<Image> {
        if z.bands() != self.atoms() {
            return dim_err(format!(
                "feature map has {} bands, dictionary has {} atoms",
                z.bands(),
                self.atoms()
            ));
        }
        conv_apply(z, &self.filters)
    }

    /// Transposed convolution `D (*)^T x`.
    pub fn encode_adjoint(&self, x: &Image) -> Result<FeatureMap> {
        if x.channels() != self.channels() {
            return dim_err(format!(
                "image has {} channels, dictionary has {}",
                x.channels(),
                self.channels()
            ));
        }
        conv_adjoint(x, &self.filters)
    }

    /// Writes the flat binary format: `DURD`, then version, atoms, side and
    /// channels as little-endian `u32`, then taps as little-endian `f64`
    /// ordered atom, channel, row, column.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            FORMAT_VERSION,
            self.atoms() as u32,
            self.side() as u32,
            self.channels() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for n in 0..self.atoms() {
            for t in self.atom(n) {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads the format written by [`ConvDictionary::write_to`]. Taps are
    /// kept bit-exact; atoms must already have unit norm.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::Format(format!("truncated dictionary: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not a dictionary file".into()));
        }
        let mut header = [0u32; 4];
        for v in &mut header {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, n, k, c] = header.map(|v| v as usize);
        if version != FORMAT_VERSION as usize {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if n == 0 || c == 0 || k.is_multiple_of(2) {
            return Err(Error::Format(format!(
                "invalid header: {n} atoms, side {k}, {c} channels"
            )));
        }
        let kk = k * k;
        let mut taps = vec![0.0; n * c * kk];
        for a in 0..n {
            for o in 0..c {
                for t in 0..kk {
                    let mut b = [0u8; 8];
                    r.read_exact(&mut b).map_err(io)?;
                    taps[(o * n + a) * kk + t] = f64::from_le_bytes(b);
                }
            }
        }
        if r.read(&mut [0u8; 1]).map_err(io)? != 0 {
            return Err(Error::Format("trailing bytes after taps".into()));
        }
        let filters = Kernel2D::new(n, c, k, taps)?;
        let atom_norms = atom_norms(&filters);
        if let Some(a) = atom_norms.iter().position(|v| (v - 1.0).abs() > 1e-9) {
            return Err(Error::Format(format!("atom {a} does not have unit norm")));
        }
        Ok(ConvDictionary { filters, atom_norms })
    }
}

fn atom_norms(filters: &Kernel2D) -> Vec<f64> {
    (0..filters.in_channels())
        .map(|n| {
            (0..filters.out_channels())
                .flat_map(|o| filters.filter(o, n).iter())
                .map(|t| t * t)
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// `(row, col)` frequency pairs of a `k x k` block in JPEG zigzag order.
pub fn zigzag(k: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(k * k);
    for s in 0..(2 * k - 1) {
        let lo = s.saturating_sub(k - 1);
        let hi = s.min(k - 1);
        if s % 2 == 0 {
            for p in (lo..=hi).rev() {
                order.push((p, s - p));
            }
        } else {
            for p in lo..=hi {
                order.push((p, s - p));
            }
        }
    }
    order
}

/// First `n_atoms` 2-D DCT-II basis functions of side `k` in zigzag order,
/// replicated across `channels`.
pub fn dct_dictionary(n_atoms: usize, k: usize, channels: usize) -> Result<ConvDictionary> {
    if k.is_multiple_of(2) {
        return Err(Error::Argument(format!("atom side {k} must be odd")));
    }
    if n_atoms > k * k {
        return Err(Error::Capacity {
            atoms: n_atoms,
            side: k,
            max: k * k,
        });
    }
    let kk = k * k;
    let basis = |f: usize, x: usize| (std::f64::consts::PI * (2 * x + 1) as f64 * f as f64 / (2 * k) as f64).cos();
    let mut taps = vec![0.0; n_atoms * channels * kk];
    for (a, &(p, q)) in zigzag(k).iter().take(n_atoms).enumerate() {
        for o in 0..channels {
            for u in 0..k {
                for v in 0..k {
                    taps[(o * n_atoms + a) * kk + u * k + v] = basis(p, u) * basis(q, v);
                }
            }
        }
    }
    ConvDictionary::from_filters(Kernel2D::new(n_atoms, channels, k, taps)?)
}

/// Seeded standard-normal atoms, unit-normalized.
pub fn random_dictionary(n_atoms: usize, k: usize, channels: usize, seed: u64) -> Result<ConvDictionary> {
    if k.is_multiple_of(2) {
        return Err(Error::Argument(format!("atom side {k} must be odd")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = (0..n_atoms * channels * k * k)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    ConvDictionary::from_filters(Kernel2D::new(n_atoms, channels, k, taps)?)
}

pub fn decode(d: &ConvDictionary, z: &FeatureMap) -> Result<Image> {
    d.decode(z)
}

/// Gradient of `f(z) = 1/2 ||target - D (*) z||^2`.
pub fn grad_f(z: &FeatureMap, t_hat: &Image, d: &ConvDictionary) -> Result<FeatureMap> {
    let residual = t_hat.sub(&d.decode(z)?)?;
    Ok(d.encode_adjoint(&residual)?.scale(-1.0))
}

/// Gradient of `h(z) = 1/2 ||R_hat - D (*) z||^2`; same form as [`grad_f`].
pub fn grad_h(z: &FeatureMap, r_hat: &Image, d: &ConvDictionary) -> Result<FeatureMap> {
    grad_f(z, r_hat, d)
}

/// Variant with the transmission estimate subtracted inside the residual:
/// `-D^T (R_hat - T_hat - D (*) z)`.
pub fn grad_h_coupled(z: &FeatureMap, r_hat: &Image, t_hat: &Image, d: &ConvDictionary) -> Result<FeatureMap> {
    grad_f(z, &r_hat.sub(t_hat)?, d)
}

/// Power-iteration estimate of the largest eigenvalue of `D^T D` on a
/// `height x width` grid. Each iterate is `||A v_k||` for the normalized
/// iterate `v_k`, which never decreases with `iters` for a PSD operator.
pub fn lipschitz_estimate(d: &ConvDictionary, shape: (usize, usize), iters: usize, seed: u64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Argument("power iteration needs at least one step".into()));
    }
    let (h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Raster::from_fn(h, w, d.atoms(), |_, _, _| StandardNormal.sample(&mut rng));
    let mut estimate = 0.0;
    for _ in 0..iters {
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = v.scale(1.0 / norm);
        let av = d.encode_adjoint(&d.decode(&v)?)?;
        estimate = av.norm();
        v = av;
    }
    Ok(estimate)
}
