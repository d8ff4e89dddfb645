//! Unrolled half-quadratic-splitting solver.
//!
//! Each layer updates, in order, the transmission codes `z_T`, the
//! reflection codes `z_R`, the transmission estimate `T_hat` and the
//! reflection estimate `R_hat`. Layers are grouped into scales that run
//! coarse to fine, each scale initialized from the upsampled result of the
//! previous one.

use serde::{Deserialize, Serialize};

use crate::dictionary::{
    dct_dictionary, grad_f, grad_h, grad_h_coupled, lipschitz_estimate, random_dictionary, ConvDictionary,
};
use crate::error::{Error, Result, Stage};
use crate::image::{resize_bilinear, upsample_to, FeatureMap, Image, Raster, Resize};
use crate::metrics::{exclusion_transform, psnr};
use crate::prox::{prox_exclusion, prox_feature};
use crate::wavelet::{haar_bank, WaveletBank};

/// Slack allowed before an objective increase is reported.
pub const MONOTONICITY_SLACK: f64 = 1e-8;

/// Safety factor applied to inverse Lipschitz constants when deriving steps.
const STEP_SAFETY: f64 = 0.9;
/// Power iterations behind the automatic code steps.
pub const POWER_ITERATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictKind {
    Dct,
    Random,
}

/// Starting point for the reflection estimate at the coarsest scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionInit {
    /// `T_hat = I`, `R_hat = 0`.
    Zero,
    /// `T_hat = R_hat = I / 2`.
    Half,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub scales: usize,
    pub layers_per_scale: usize,
    pub n_atoms: usize,
    pub atom_side: usize,
    /// Step for the transmission codes.
    pub eta1: f64,
    /// Step for the reflection codes.
    pub eta2: f64,
    /// Step for the transmission estimate.
    pub eta3: f64,
    /// Step for the reflection estimate.
    pub eta4: f64,
    /// Coupling weight between estimates and decoded codes.
    pub tau: f64,
    /// Optional geometric growth of `tau` per executed layer.
    pub tau_growth: Option<f64>,
    pub kappa: f64,
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub dict_kind: DictKind,
    pub seed: u64,
    /// Derive all four steps from Lipschitz constants, ignoring `eta1..eta4`.
    pub auto_step: bool,
    pub trace: bool,
    pub reflection_init: ReflectionInit,
    /// Use `-D^T (R_hat - T_hat - D z_R)` for the reflection-code gradient.
    pub coupled_reflection_gradient: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scales: 4,
            layers_per_scale: 2,
            n_atoms: 16,
            atom_side: 7,
            eta1: 0.1,
            eta2: 0.1,
            eta3: 0.5,
            eta4: 0.5,
            tau: 0.5,
            tau_growth: None,
            kappa: 1.0,
            lambda_t: 0.01,
            lambda_r: 0.01,
            dict_kind: DictKind::Dct,
            seed: 0,
            auto_step: true,
            trace: true,
            reflection_init: ReflectionInit::Zero,
            coupled_reflection_gradient: false,
        }
    }
}

impl SolverConfig {
    /// Small profile for tests and quick runs: two scales of two layers.
    pub fn desk() -> Self {
        SolverConfig {
            scales: 2,
            layers_per_scale: 2,
            ..Self::default()
        }
    }

    /// Fixed steps (auto-step off), all four set to `eta`.
    pub fn with_steps(mut self, eta: f64) -> Self {
        self.auto_step = false;
        self.eta1 = eta;
        self.eta2 = eta;
        self.eta3 = eta;
        self.eta4 = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.scales == 0 || self.layers_per_scale == 0 {
            return arg("scales and layers_per_scale must be >= 1".into());
        }
        if self.n_atoms == 0 || self.atom_side.is_multiple_of(2) {
            return arg(format!(
                "need >= 1 atom and an odd atom side, got {} and {}",
                self.n_atoms, self.atom_side
            ));
        }
        for (name, v) in [
            ("tau", self.tau),
            ("kappa", self.kappa),
            ("lambda_t", self.lambda_t),
            ("lambda_r", self.lambda_r),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return arg(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !self.auto_step {
            for (name, v) in [
                ("eta1", self.eta1),
                ("eta2", self.eta2),
                ("eta3", self.eta3),
                ("eta4", self.eta4),
            ] {
                if !(v >= 0.0) {
                    return arg(format!("{name} = {v} must be >= 0"));
                }
            }
        }
        if let Some(g) = self.tau_growth {
            if !(g > 0.0) {
                return arg(format!("tau_growth = {g} must be > 0"));
            }
        }
        Ok(())
    }

    pub fn tau_at(&self, layer_index: usize) -> f64 {
        match self.tau_growth {
            Some(g) => self.tau * g.powi(layer_index as i32),
            None => self.tau,
        }
    }
}

/// Transmission and reflection dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionaries {
    pub transmission: ConvDictionary,
    pub reflection: ConvDictionary,
}

impl Dictionaries {
    /// Builds both dictionaries from the config for `channels`-channel images.
    pub fn from_config(cfg: &SolverConfig, channels: usize) -> Result<Self> {
        let (transmission, reflection) = match cfg.dict_kind {
            DictKind::Dct => {
                let d = dct_dictionary(cfg.n_atoms, cfg.atom_side, channels)?;
                (d.clone(), d)
            }
            DictKind::Random => (
                random_dictionary(cfg.n_atoms, cfg.atom_side, channels, cfg.seed)?,
                random_dictionary(cfg.n_atoms, cfg.atom_side, channels, cfg.seed.wrapping_add(1))?,
            ),
        };
        Ok(Dictionaries {
            transmission,
            reflection,
        })
    }

    /// Uses one dictionary for both branches.
    pub fn shared(d: ConvDictionary) -> Self {
        Dictionaries {
            transmission: d.clone(),
            reflection: d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t_hat: Image,
    pub r_hat: Image,
    pub z_t: FeatureMap,
    pub z_r: FeatureMap,
}

impl SolverState {
    /// Exchanges the transmission and reflection branches.
    pub fn swapped(&self) -> SolverState {
        SolverState {
            t_hat: self.r_hat.clone(),
            r_hat: self.t_hat.clone(),
            z_t: self.z_r.clone(),
            z_r: self.z_t.clone(),
        }
    }
}

/// Step sizes of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
}

/// The terms of the split objective, reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ObjectiveTerms {
    /// `1/2 ||I - T_hat - R_hat||^2`
    pub fidelity: f64,
    /// `tau/2 ||T_hat - D_T z_T||^2`
    pub couple_t: f64,
    /// `tau/2 ||R_hat - D_R z_R||^2`
    pub couple_r: f64,
    /// `lambda_T ||z_T||_1 + lambda_R ||z_R||_1`
    pub sparsity: f64,
    /// `kappa sum_m ||(W_m T_hat) * (W_m R_hat)||_1`
    pub exclusion: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.fidelity + self.couple_t + self.couple_r + self.sparsity + self.exclusion
    }
}

/// One row per executed layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    /// Scale number, `S` for the coarsest down to `1` for full resolution.
    pub scale: usize,
    /// Layer number within the scale, from 1.
    pub layer: usize,
    pub objective: f64,
    pub terms: ObjectiveTerms,
    pub psnr_t: Option<f64>,
    pub psnr_r: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
    /// Objective increases beyond [`MONOTONICITY_SLACK`] within a scale.
    pub warnings: Vec<String>,
}

/// Reference layers used to report PSNR in the trace.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub transmission: &'a Image,
    pub reflection: &'a Image,
}

#[derive(Debug, Clone)]
pub struct Separation {
    pub transmission: Image,
    pub reflection: Image,
    pub trace: IterationTrace,
}

/// Bundles the configuration with the fixed operators of a run.
#[derive(Debug, Clone)]
pub struct Separator {
    pub cfg: SolverConfig,
    pub dicts: Dictionaries,
    pub bank: WaveletBank,
}

fn check_finite(x: &Raster, stage: Stage, scale: usize, layer: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { scale, layer, stage })
    }
}

impl Separator {
    pub fn new(cfg: SolverConfig, dicts: Dictionaries, bank: WaveletBank) -> Result<Self> {
        cfg.validate()?;
        if dicts.transmission.channels() != dicts.reflection.channels() {
            return Err(Error::Dimension("dictionaries disagree on channel count".into()));
        }
        Ok(Separator { cfg, dicts, bank })
    }

    /// Default operators for `channels`-channel inputs.
    pub fn from_config(cfg: SolverConfig, channels: usize) -> Result<Self> {
        let dicts = Dictionaries::from_config(&cfg, channels)?;
        Self::new(cfg, dicts, haar_bank())
    }

    fn check_input(&self, input: &Image) -> Result<()> {
        if input.channels() != self.dicts.transmission.channels() {
            return Err(Error::Dimension(format!(
                "input has {} channels, dictionaries expect {}",
                input.channels(),
                self.dicts.transmission.channels()
            )));
        }
        Ok(())
    }

    fn check_state(&self, state: &SolverState, input: &Image) -> Result<()> {
        input.check_same_shape(&state.t_hat, "transmission estimate")?;
        input.check_same_shape(&state.r_hat, "reflection estimate")?;
        let expect = |z: &Raster, d: &ConvDictionary, what: &str| {
            if z.height() != input.height() || z.width() != input.width() || z.bands() != d.atoms() {
                Err(Error::Dimension(format!(
                    "{what} codes do not match the input/dictionary"
                )))
            } else {
                Ok(())
            }
        };
        expect(&state.z_t, &self.dicts.transmission, "transmission")?;
        expect(&state.z_r, &self.dicts.reflection, "reflection")
    }

    /// Split objective with coupling weight `tau`.
    pub fn objective_with_tau(&self, state: &SolverState, input: &Image, tau: f64) -> Result<ObjectiveTerms> {
        self.check_state(state, input)?;
        let cfg = &self.cfg;
        let residual = input.sub(&state.t_hat)?.sub(&state.r_hat)?;
        let dt = self.dicts.transmission.decode(&state.z_t)?;
        let dr = self.dicts.reflection.decode(&state.z_r)?;
        Ok(ObjectiveTerms {
            fidelity: 0.5 * residual.norm_sq(),
            couple_t: 0.5 * tau * state.t_hat.sub(&dt)?.norm_sq(),
            couple_r: 0.5 * tau * state.r_hat.sub(&dr)?.norm_sq(),
            sparsity: cfg.lambda_t * state.z_t.l1() + cfg.lambda_r * state.z_r.l1(),
            exclusion: cfg.kappa * exclusion_transform(&state.t_hat, &state.r_hat, &self.bank)?,
        })
    }

    pub fn objective(&self, state: &SolverState, input: &Image) -> Result<ObjectiveTerms> {
        self.objective_with_tau(state, input, self.cfg.tau)
    }

    /// Steps for a `height x width` working grid. With auto-step the code
    /// steps are `0.9 / L` for the power-iteration estimate `L` of `D^T D`,
    /// and the image steps `0.9 / (1 + tau)`.
    pub fn steps(&self, height: usize, width: usize, tau: f64) -> Result<Steps> {
        let cfg = &self.cfg;
        if !cfg.auto_step {
            return Ok(Steps {
                eta1: cfg.eta1,
                eta2: cfg.eta2,
                eta3: cfg.eta3,
                eta4: cfg.eta4,
            });
        }
        let lt = lipschitz_estimate(&self.dicts.transmission, (height, width), POWER_ITERATIONS, cfg.seed)?;
        let lr = if self.dicts.reflection == self.dicts.transmission {
            lt
        } else {
            lipschitz_estimate(&self.dicts.reflection, (height, width), POWER_ITERATIONS, cfg.seed)?
        };
        let image_step = STEP_SAFETY / (1.0 + tau);
        Ok(Steps {
            eta1: STEP_SAFETY / lt,
            eta2: STEP_SAFETY / lr,
            eta3: image_step,
            eta4: image_step,
        })
    }

    fn shrink_threshold(lambda: f64, eta: f64, tau: f64) -> f64 {
        if tau > 0.0 {
            eta * lambda / tau
        } else {
            0.0
        }
    }

    /// Proximal-gradient step on `z_T`: gradient step, then l1 shrinkage by
    /// `eta1 lambda_T / tau`.
    pub fn update_transmission_codes(&self, state: &mut SolverState, eta: f64, tau: f64) -> Result<()> {
        let g = grad_f(&state.z_t, &state.t_hat, &self.dicts.transmission)?;
        state.z_t.axpy(-eta, &g)?;
        state.z_t = prox_feature(&state.z_t, Self::shrink_threshold(self.cfg.lambda_t, eta, tau))?;
        Ok(())
    }

    /// Proximal-gradient step on `z_R`.
    pub fn update_reflection_codes(&self, state: &mut SolverState, eta: f64, tau: f64) -> Result<()> {
        let g = if self.cfg.coupled_reflection_gradient {
            grad_h_coupled(&state.z_r, &state.r_hat, &state.t_hat, &self.dicts.reflection)?
        } else {
            grad_h(&state.z_r, &state.r_hat, &self.dicts.reflection)?
        };
        state.z_r.axpy(-eta, &g)?;
        state.z_r = prox_feature(&state.z_r, Self::shrink_threshold(self.cfg.lambda_r, eta, tau))?;
        Ok(())
    }

    /// `phi = T_hat + eta3 ((I - R_hat - T_hat) - tau (T_hat - D_T z_T))`,
    /// then the exclusion step against `R_hat`.
    pub fn update_transmission(&self, state: &mut SolverState, input: &Image, eta: f64, tau: f64) -> Result<()> {
        let decoded = self.dicts.transmission.decode(&state.z_t)?;
        let phi = image_step(&state.t_hat, &state.r_hat, input, &decoded, eta, tau)?;
        state.t_hat = prox_exclusion(&phi, &state.r_hat, self.cfg.kappa, &self.bank)?;
        Ok(())
    }

    /// Mirror of [`Separator::update_transmission`] for `R_hat`, thresholded
    /// against the current `T_hat`.
    pub fn update_reflection(&self, state: &mut SolverState, input: &Image, eta: f64, tau: f64) -> Result<()> {
        let decoded = self.dicts.reflection.decode(&state.z_r)?;
        let psi = image_step(&state.r_hat, &state.t_hat, input, &decoded, eta, tau)?;
        state.r_hat = prox_exclusion(&psi, &state.t_hat, self.cfg.kappa, &self.bank)?;
        Ok(())
    }

    /// One full layer. `scale`/`layer` only label divergence errors.
    pub fn layer(
        &self,
        state: &SolverState,
        input: &Image,
        steps: &Steps,
        tau: f64,
        scale: usize,
        layer: usize,
    ) -> Result<SolverState> {
        self.check_state(state, input)?;
        let mut next = state.clone();
        self.update_transmission_codes(&mut next, steps.eta1, tau)?;
        check_finite(&next.z_t, Stage::TransmissionCodes, scale, layer)?;
        self.update_reflection_codes(&mut next, steps.eta2, tau)?;
        check_finite(&next.z_r, Stage::ReflectionCodes, scale, layer)?;

        self.update_transmission(&mut next, input, steps.eta3, tau)?;
        check_finite(&next.t_hat, Stage::Transmission, scale, layer)?;
        self.update_reflection(&mut next, input, steps.eta4, tau)?;
        check_finite(&next.r_hat, Stage::Reflection, scale, layer)?;
        Ok(next)
    }

    /// One layer with the configured `tau` and steps for the input's grid.
    pub fn durr_layer(&self, state: &SolverState, input: &Image) -> Result<SolverState> {
        let tau = self.cfg.tau;
        let steps = self.steps(input.height(), input.width(), tau)?;
        self.layer(state, input, &steps, tau, 1, 1)
    }

    /// Runs the configured number of layers on one scale. `scale` is the
    /// 1-based scale number (1 = full resolution) and `first_layer` the
    /// global index of the first layer, used by the `tau` schedule.
    pub fn solve_scale(
        &self,
        state: SolverState,
        input: &Image,
        scale: usize,
        first_layer: usize,
        truth: Option<GroundTruth<'_>>,
        trace: &mut IterationTrace,
    ) -> Result<SolverState> {
        let mut state = state;
        let tau0 = self.cfg.tau_at(first_layer);
        let steps = if self.cfg.tau_growth.is_none() {
            Some(self.steps(input.height(), input.width(), tau0)?)
        } else {
            None
        };
        let mut previous = if self.cfg.trace {
            Some(self.objective_with_tau(&state, input, tau0)?.total())
        } else {
            None
        };
        for l in 0..self.cfg.layers_per_scale {
            let tau = self.cfg.tau_at(first_layer + l);
            let steps = match steps {
                Some(s) => s,
                None => self.steps(input.height(), input.width(), tau)?,
            };
            state = self.layer(&state, input, &steps, tau, scale, l + 1)?;
            if self.cfg.trace {
                let terms = self.objective_with_tau(&state, input, tau)?;
                let objective = terms.total();
                if let Some(prev) = previous {
                    if objective > prev + MONOTONICITY_SLACK && self.cfg.tau_growth.is_none() {
                        let msg = format!(
                            "objective increased at scale {scale}, layer {}: {prev:.12e} -> {objective:.12e}",
                            l + 1
                        );
                        log::warn!("{msg}");
                        trace.warnings.push(msg);
                    }
                }
                previous = Some(objective);
                let (psnr_t, psnr_r) = match truth {
                    Some(gt) => (
                        Some(psnr(&state.t_hat, gt.transmission)?),
                        Some(psnr(&state.r_hat, gt.reflection)?),
                    ),
                    None => (None, None),
                };
                trace.records.push(TraceRecord {
                    scale,
                    layer: l + 1,
                    objective,
                    terms,
                    psnr_t,
                    psnr_r,
                });
            }
        }
        Ok(state)
    }

    /// Initial state at the coarsest scale.
    pub fn initial_state(&self, input: &Image) -> Result<SolverState> {
        let (t_hat, r_hat) = match self.cfg.reflection_init {
            ReflectionInit::Zero => (
                input.clone(),
                Raster::zeros(input.height(), input.width(), input.channels()),
            ),
            ReflectionInit::Half => (input.scale(0.5), input.scale(0.5)),
        };
        let steps = self.steps(input.height(), input.width(), self.cfg.tau_at(0))?;
        let z_t = self.dicts.transmission.encode_adjoint(&t_hat)?.scale(steps.eta1);
        let z_r = self.dicts.reflection.encode_adjoint(&r_hat)?.scale(steps.eta2);
        Ok(SolverState { t_hat, r_hat, z_t, z_r })
    }

    /// Carries a coarse state to a finer grid: bilinear upsampling of all
    /// four variables, then one unthresholded gradient step on each code map.
    pub fn refine_state(&self, coarse: &SolverState, input: &Image, tau: f64) -> Result<SolverState> {
        let (h, w) = (input.height(), input.width());
        let t_hat = upsample_to(&coarse.t_hat, h, w)?;
        let r_hat = upsample_to(&coarse.r_hat, h, w)?;
        let mut z_t = upsample_to(&coarse.z_t, h, w)?;
        let mut z_r = upsample_to(&coarse.z_r, h, w)?;
        let steps = self.steps(h, w, tau)?;
        z_t.axpy(-steps.eta1, &grad_f(&z_t, &t_hat, &self.dicts.transmission)?)?;
        z_r.axpy(-steps.eta2, &grad_h(&z_r, &r_hat, &self.dicts.reflection)?)?;
        Ok(SolverState { t_hat, r_hat, z_t, z_r })
    }

    /// Separates `input` into transmission and reflection, coarse to fine.
    /// Outputs are clipped to `[0, 1]`.
    pub fn solve(&self, input: &Image, truth: Option<GroundTruth<'_>>) -> Result<Separation> {
        self.check_input(input)?;
        if !input.is_finite() {
            return Err(Error::Argument("input contains non-finite values".into()));
        }
        if let Some(gt) = truth {
            input.check_same_shape(gt.transmission, "ground-truth transmission")?;
            input.check_same_shape(gt.reflection, "ground-truth reflection")?;
        }
        let scales = self.cfg.scales;
        let mut inputs = vec![input.clone()];
        for _ in 1..scales {
            let next = resize_bilinear(inputs.last().expect("non-empty"), Resize::Half)?;
            inputs.push(next);
        }
        let truths: Option<Vec<(Image, Image)>> = truth.map(|gt| {
            let mut v = vec![(gt.transmission.clone(), gt.reflection.clone())];
            for _ in 1..scales {
                let (t, r) = v.last().expect("non-empty");
                let next = (
                    resize_bilinear(t, Resize::Half).expect("same sizes as the input pyramid"),
                    resize_bilinear(r, Resize::Half).expect("same sizes as the input pyramid"),
                );
                v.push(next);
            }
            v
        });

        let mut trace = IterationTrace::default();
        let mut state: Option<SolverState> = None;
        for s in (0..scales).rev() {
            let working = &inputs[s];
            let first_layer = (scales - 1 - s) * self.cfg.layers_per_scale;
            let tau = self.cfg.tau_at(first_layer);
            let init = match &state {
                None => self.initial_state(working)?,
                Some(coarse) => self.refine_state(coarse, working, tau)?,
            };
            for x in [&init.t_hat, &init.r_hat, &init.z_t, &init.z_r] {
                check_finite(x, Stage::Initialization, s + 1, 0)?;
            }
            let gt = truths.as_ref().map(|v| GroundTruth {
                transmission: &v[s].0,
                reflection: &v[s].1,
            });
            state = Some(self.solve_scale(init, working, s + 1, first_layer, gt, &mut trace)?);
        }
        let state = state.expect("at least one scale");
        Ok(Separation {
            transmission: state.t_hat.clamp(0.0, 1.0),
            reflection: state.r_hat.clamp(0.0, 1.0),
            trace,
        })
    }
}

/// Gradient step on `1/2 ||I - x - other||^2 + tau/2 ||x - decoded||^2`.
fn image_step(x: &Image, other: &Image, input: &Image, decoded: &Image, eta: f64, tau: f64) -> Result<Image> {
    let residual = input.sub(other)?.sub(x)?;
    let coupling = x.sub(decoded)?;
    let mut out = x.clone();
    out.axpy(eta, &residual)?;
    out.axpy(-eta * tau, &coupling)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{procedural_pair, synthesize_mixture, MixtureSpec, PairKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, b: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(h, w, b, |_, _, _| rng.random::<f64>())
    }

    fn small_cfg() -> SolverConfig {
        SolverConfig {
            n_atoms: 4,
            atom_side: 3,
            ..SolverConfig::desk()
        }
    }

    fn random_state(sep: &Separator, h: usize, w: usize, seed: u64) -> SolverState {
        let c = sep.dicts.transmission.channels();
        let n = sep.dicts.transmission.atoms();
        SolverState {
            t_hat: random(h, w, c, seed),
            r_hat: random(h, w, c, seed + 1),
            z_t: random(h, w, n, seed + 2).map(|v| v - 0.5),
            z_r: random(h, w, n, seed + 3).map(|v| v - 0.5),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            scales: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            atom_side: 4,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            kappa: -1.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig::default().with_steps(-0.1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let ok: SolverConfig = serde_json::from_str(r#"{"scales": 3, "kappa": 0.5}"#).unwrap();
        assert_eq!((ok.scales, ok.kappa, ok.layers_per_scale), (3, 0.5, 2));
        assert!(serde_json::from_str::<SolverConfig>(r#"{"scale": 3}"#).is_err());
    }

    #[test]
    fn objective_trivial_cases() {
        let cfg = SolverConfig {
            tau: 0.0,
            kappa: 0.0,
            lambda_t: 0.0,
            lambda_r: 0.0,
            ..small_cfg()
        };
        let sep = Separator::from_config(cfg, 1).unwrap();
        let input = random(8, 8, 1, 1);
        let zero_codes = Raster::zeros(8, 8, 4);
        let s = SolverState {
            t_hat: input.clone(),
            r_hat: Raster::zeros(8, 8, 1),
            z_t: zero_codes.clone(),
            z_r: zero_codes.clone(),
        };
        assert_eq!(sep.objective(&s, &input).unwrap().total(), 0.0);

        let sep = Separator::from_config(small_cfg(), 1).unwrap();
        let s = SolverState {
            t_hat: Raster::zeros(8, 8, 1),
            r_hat: Raster::zeros(8, 8, 1),
            z_t: zero_codes.clone(),
            z_r: zero_codes,
        };
        assert_eq!(sep.objective(&s, &input).unwrap().total(), 0.5 * input.norm_sq());
    }

    #[test]
    fn zero_steps_fixed_point() {
        let cfg = SolverConfig {
            kappa: 0.0,
            ..small_cfg()
        }
        .with_steps(0.0);
        let sep = Separator::from_config(cfg, 3).unwrap();
        let input = random(9, 10, 3, 4);
        let s = random_state(&sep, 9, 10, 5);
        let next = sep.durr_layer(&s, &input).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn quadratic_layer_matches_gradient_descent() {
        let cfg = SolverConfig {
            kappa: 0.0,
            lambda_t: 0.0,
            lambda_r: 0.0,
            tau: 0.3,
            ..small_cfg()
        }
        .with_steps(0.05);
        let sep = Separator::from_config(cfg, 1).unwrap();
        let input = random(7, 7, 1, 6);
        let s = random_state(&sep, 7, 7, 7);
        let next = sep.durr_layer(&s, &input).unwrap();

        // hand-rolled: plain gradient steps on the quadratic terms
        let d = &sep.dicts.transmission;
        let dz = |z: &Raster| crate::image::conv_apply(z, d.filters()).unwrap();
        let dt = |x: &Raster| crate::image::conv_adjoint(x, d.filters()).unwrap();
        let (eta, tau) = (0.05, 0.3);
        let zt: Vec<f64> = {
            let g = dt(&s.t_hat.sub(&dz(&s.z_t)).unwrap());
            s.z_t.data().iter().zip(g.data()).map(|(z, g)| z + eta * g).collect()
        };
        let zr: Vec<f64> = {
            let g = dt(&s.r_hat.sub(&dz(&s.z_r)).unwrap());
            s.z_r.data().iter().zip(g.data()).map(|(z, g)| z + eta * g).collect()
        };
        let zt = Raster::from_vec(7, 7, 4, zt).unwrap();
        let zr = Raster::from_vec(7, 7, 4, zr).unwrap();
        let step = |x: &Raster, other: &Raster, code: &Raster| {
            let dec = dz(code);
            Raster::from_fn(7, 7, 1, |c, i, j| {
                let xv = x.get(c, i, j);
                let grad = -(input.get(c, i, j) - other.get(c, i, j) - xv) + tau * (xv - dec.get(c, i, j));
                xv - eta * grad
            })
        };
        let t = step(&s.t_hat, &s.r_hat, &zt);
        let r = step(&s.r_hat, &t, &zr);
        assert!(next.z_t.max_abs_diff(&zt).unwrap() < 1e-10);
        assert!(next.z_r.max_abs_diff(&zr).unwrap() < 1e-10);
        assert!(next.t_hat.max_abs_diff(&t).unwrap() < 1e-10);
        assert!(next.r_hat.max_abs_diff(&r).unwrap() < 1e-10);
    }

    #[test]
    fn divergence_is_reported_with_stage() {
        let cfg = SolverConfig {
            scales: 1,
            layers_per_scale: 3,
            ..small_cfg()
        }
        .with_steps(1e200);
        let sep = Separator::from_config(cfg, 1).unwrap();
        let input = random(8, 8, 1, 8);
        match sep.solve(&input, None) {
            Err(Error::Divergence { scale: 1, stage, .. }) => {
                assert_ne!(stage, Stage::Initialization)
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn pass_through_configuration() {
        let cfg = SolverConfig {
            scales: 1,
            layers_per_scale: 1,
            ..small_cfg()
        }
        .with_steps(0.0);
        let sep = Separator::from_config(cfg, 3).unwrap();
        let input = random(12, 12, 3, 9);
        let out = sep.solve(&input, None).unwrap();
        assert!(out.transmission.max_abs_diff(&input).unwrap() <= 1e-10);
        assert_eq!(out.reflection.max_abs(), 0.0);
    }

    #[test]
    fn trace_shape() {
        let cfg = SolverConfig {
            scales: 3,
            layers_per_scale: 2,
            ..small_cfg()
        };
        let sep = Separator::from_config(cfg, 3).unwrap();
        let (t, r) = procedural_pair(PairKind::Blobs, 32, 1).unwrap();
        let input = synthesize_mixture(&t, &r, &MixtureSpec::default()).unwrap();
        let gt = GroundTruth {
            transmission: &t,
            reflection: &r,
        };
        let out = sep.solve(&input, Some(gt)).unwrap();
        let labels: Vec<_> = out.trace.records.iter().map(|r| (r.scale, r.layer)).collect();
        assert_eq!(labels, [(3, 1), (3, 2), (2, 1), (2, 2), (1, 1), (1, 2)]);
        assert!(out
            .trace
            .records
            .iter()
            .all(|r| r.psnr_t.is_some() && r.psnr_r.is_some()));
    }

    #[test]
    fn single_layer_solve_matches_durr_layer() {
        let cfg = SolverConfig {
            scales: 1,
            layers_per_scale: 1,
            ..small_cfg()
        };
        let sep = Separator::from_config(cfg, 1).unwrap();
        let input = random(10, 10, 1, 12);
        let init = sep.initial_state(&input).unwrap();
        let layer = sep.durr_layer(&init, &input).unwrap();
        let out = sep.solve(&input, None).unwrap();
        assert_eq!(out.transmission, layer.t_hat.clamp(0.0, 1.0));
        assert_eq!(out.reflection, layer.r_hat.clamp(0.0, 1.0));
    }

    #[test]
    fn shape_errors() {
        let sep = Separator::from_config(small_cfg(), 3).unwrap();
        assert!(matches!(sep.solve(&random(8, 8, 1, 0), None), Err(Error::Dimension(_))));
        let input = random(8, 8, 3, 0);
        let mut s = random_state(&sep, 8, 8, 1);
        s.z_r = Raster::zeros(8, 8, 3);
        assert!(sep.objective(&s, &input).is_err());
        assert!(sep.durr_layer(&s, &input).is_err());
    }
}
