use ndarray::{concatenate, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conditioning::{build_conditioning, ConditioningOptions};
use super::schedule::{q_sample, NoiseSchedule, ScheduleConfig};
use crate::dataset::{array_to_tensor, tensor_to_array, Case};
use crate::discrepancy::discrepancy_target;
use crate::error::{Error, Result};
use crate::loss::{LossTerms, LossWeights};
use crate::nn::{Activation, AdamW, AdamWConfig, Gradients, Graph, NodeId, ParamStore, Real, Tensor};
use crate::segmenter::{check_divisible, TrainOutcome, TrainingFingerprint};
use crate::unet::{ArchSpec, Decoder, Encoder, Normalization, TimeEmbedding};
use crate::volume::{RegionMask, SoftPrediction, REGIONS};

/// What the denoiser learns to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetMode {
    /// The ground-truth region mask itself.
    #[serde(rename = "mask")]
    DirectMask,
    /// The voxels where the baseline disagrees with ground truth.
    #[serde(rename = "discrepancy")]
    Discrepancy,
}

impl TargetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::DirectMask => "mask",
            Self::Discrepancy => "discrepancy",
        }
    }
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(Self::DirectMask),
            "discrepancy" => Ok(Self::Discrepancy),
            other => Err(Error::InvalidConfig(format!("unknown target mode {other:?}"))),
        }
    }
}

/// Whether conditioning-encoder features are added into the denoiser.
/// `Disabled` exists for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureInjection {
    #[default]
    Enabled,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub levels: usize,
    pub base_width: usize,
    pub activation: Activation,
    pub normalization: Normalization,
    pub time_features: usize,
    pub time_dim: usize,
    pub conditioning: ConditioningOptions,
    pub target: TargetMode,
    pub schedule: ScheduleConfig,
    /// Reverse-process steps used by default when sampling.
    pub sample_steps: usize,
    pub injection: FeatureInjection,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_width: 8,
            activation: Activation::LeakyRelu,
            normalization: Normalization::Instance,
            time_features: 32,
            time_dim: 32,
            conditioning: ConditioningOptions::default(),
            target: TargetMode::Discrepancy,
            schedule: ScheduleConfig::default(),
            sample_steps: 10,
            injection: FeatureInjection::Enabled,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.levels > 8 || self.base_width == 0 {
            return Err(Error::InvalidConfig(format!(
                "unsupported denoiser depth/width: levels {}, base width {}",
                self.levels, self.base_width
            )));
        }
        if self.time_features < 2 || self.time_features % 2 != 0 || self.time_dim == 0 {
            return Err(Error::InvalidConfig("time embedding needs an even feature count".into()));
        }
        if self.sample_steps == 0 || self.sample_steps > self.schedule.steps {
            return Err(Error::InvalidConfig(format!(
                "sample_steps must lie in [1, {}], got {}",
                self.schedule.steps, self.sample_steps
            )));
        }
        Ok(())
    }

    pub fn cond_channels(&self) -> usize {
        self.conditioning.variant.channels()
    }

    /// Architecture of the denoising network; its input is the conditioning
    /// stacked with the noisy 3-channel state.
    pub fn du_arch(&self) -> ArchSpec {
        ArchSpec {
            in_channels: self.cond_channels() + REGIONS,
            out_channels: REGIONS,
            levels: self.levels,
            base_width: self.base_width,
            activation: self.activation,
            normalization: self.normalization,
        }
    }

    /// Architecture of the conditioning encoder.
    pub fn xi_arch(&self) -> ArchSpec {
        ArchSpec {
            in_channels: self.cond_channels(),
            ..self.du_arch()
        }
    }
}

#[derive(Debug, Clone)]
struct Net {
    time: TimeEmbedding,
    du_encoder: Encoder,
    du_decoder: Decoder,
    xi_encoder: Encoder,
}

#[derive(Debug, Clone)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    pub params: ParamStore<f32>,
    pub schedule: NoiseSchedule,
    pub fingerprint: TrainingFingerprint,
    net: Net,
}

/// Builds a freshly initialized denoiser and conditioning encoder.
pub fn build_denoiser(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserModel> {
    cfg.validate()?;
    let schedule = cfg.schedule.build()?;
    let (du, xi) = (cfg.du_arch(), cfg.xi_arch());
    // Injection adds xi level l onto DU level l, so widths must agree.
    if (0..du.levels).any(|l| du.width(l) != xi.width(l)) || du.levels != xi.levels {
        return Err(Error::InvalidConfig("conditioning encoder does not mirror the denoiser encoder".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let time = TimeEmbedding::build(&mut params, "time", cfg.time_features, cfg.time_dim, &mut rng);
    let du_encoder = Encoder::build(&mut params, "du", &du, Some(cfg.time_dim), &mut rng);
    let du_decoder = Decoder::build(&mut params, "du", &du, Some(cfg.time_dim), &mut rng);
    let xi_encoder = Encoder::build(&mut params, "xi", &xi, None, &mut rng);
    Ok(DenoiserModel {
        config: *cfg,
        params,
        schedule,
        fingerprint: TrainingFingerprint {
            seed,
            ..Default::default()
        },
        net: Net {
            time,
            du_encoder,
            du_decoder,
            xi_encoder,
        },
    })
}

/// Network estimate of the clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    /// In the `[-1, 1]` diffusion state space.
    pub raw: Array4<f32>,
    /// Mapped back to `[0, 1]`.
    pub probs: Array4<f32>,
}

impl DenoiserModel {
    /// Checks conditioning and state shapes against the architecture,
    /// including level-for-level agreement of the two encoders.
    pub fn check_inputs(&self, cond_shape: &[usize], xt_shape: &[usize]) -> Result<()> {
        let cc = self.config.cond_channels();
        if cond_shape.len() != 4 || cond_shape[0] != cc {
            return Err(Error::shape(&[cc, 0, 0, 0], cond_shape));
        }
        let dims = [cond_shape[1], cond_shape[2], cond_shape[3]];
        if xt_shape != [REGIONS, dims[0], dims[1], dims[2]] {
            return Err(Error::shape(&[REGIONS, dims[0], dims[1], dims[2]], xt_shape));
        }
        let du = self.config.du_arch();
        check_divisible(dims, du.divisor())?;
        let du_shapes = du.level_shapes(dims);
        let xi_shapes = self.config.xi_arch().level_shapes(dims);
        match (du_shapes, xi_shapes) {
            (Some(a), Some(b)) if a == b => Ok(()),
            (a, b) => Err(Error::InvalidConfig(format!(
                "encoder level shapes disagree: denoiser {a:?}, conditioning {b:?}"
            ))),
        }
    }

    /// Records one denoising pass. `input` is the conditioning stacked with
    /// `x_t`; `cond` is the conditioning alone.
    pub fn forward_graph<'s, F: Real>(
        &self,
        store: &'s ParamStore<F>,
        cond: Tensor<F>,
        input: Tensor<F>,
        t: usize,
    ) -> (Graph<'s, F>, NodeId) {
        let mut g = Graph::new(store);
        let temb = self.net.time.forward(&mut g, t);
        let x = g.input(input);
        let feats = match self.config.injection {
            FeatureInjection::Enabled => {
                let c = g.input(cond);
                let extra = self.net.xi_encoder.forward(&mut g, c, None, None);
                self.net.du_encoder.forward(&mut g, x, Some(temb), Some(&extra))
            }
            FeatureInjection::Disabled => self.net.du_encoder.forward(&mut g, x, Some(temb), None),
        };
        let out = self.net.du_decoder.forward(&mut g, &feats, Some(temb));
        (g, out)
    }

    /// Loss of one noised target and gradients of all parameters in `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_gradients<F: Real>(
        &self,
        store: &ParamStore<F>,
        cond: Tensor<F>,
        input: Tensor<F>,
        t: usize,
        target: &[F],
        weights: &LossWeights,
    ) -> (LossTerms, Gradients<F>) {
        let (g, out) = self.forward_graph(store, cond, input, t);
        let (terms, dlogits) = weights.eval_logits(&g.value(out).data, target, REGIONS);
        (terms, g.backward(out, dlogits))
    }

    pub(crate) fn logits(&self, cond: &Array4<f32>, x_t: &Array4<f32>, t: usize) -> Array4<f32> {
        let input = stack(cond, x_t);
        let (g, out) = self.forward_graph(&self.params, array_to_tensor(cond), array_to_tensor(&input), t);
        tensor_to_array(&g.into_value(out))
    }
}

fn stack(cond: &Array4<f32>, x_t: &Array4<f32>) -> Array4<f32> {
    concatenate(Axis(0), &[cond.view(), x_t.view()]).expect("matching spatial dims")
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

/// Predicts the clean target from `x_t` at step `t` (in `1..=T`).
pub fn denoise_step(model: &DenoiserModel, cond: &Array4<f32>, x_t: &Array4<f32>, t: usize) -> Result<DenoiseOutput> {
    if t == 0 || t > model.schedule.steps() {
        return Err(Error::TimestepOutOfRange {
            t,
            lo: 1,
            hi: model.schedule.steps(),
        });
    }
    model.check_inputs(cond.shape(), x_t.shape())?;
    let probs = model.logits(cond, x_t, t).mapv(sigmoid);
    Ok(DenoiseOutput {
        raw: probs.mapv(|p| 2.0 * p - 1.0),
        probs,
    })
}

/// A training case with its conditioning fixed and its target resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCase {
    pub id: String,
    pub cond: Array4<f32>,
    pub target: Array4<u8>,
}

/// Builds conditioning and targets from cases and their frozen baseline
/// predictions (same order).
pub fn prepare_cases(cfg: &DenoiserConfig, cases: &[Case], baseline: &[SoftPrediction]) -> Result<Vec<DiffusionCase>> {
    if cases.len() != baseline.len() {
        return Err(Error::shape(&[cases.len()], &[baseline.len()]));
    }
    cases
        .iter()
        .zip(baseline)
        .map(|(case, upred)| {
            let cond = build_conditioning(&cfg.conditioning, &case.image, upred)?;
            let target = match cfg.target {
                TargetMode::DirectMask => case.regions.channels.clone(),
                TargetMode::Discrepancy => {
                    let u = RegionMask::new(upred.threshold(cfg.conditioning.threshold)?, upred.spacing)?;
                    discrepancy_target(&u, &case.regions)?.channels
                }
            };
            Ok(DiffusionCase {
                id: case.id.clone(),
                cond,
                target,
            })
        })
        .collect()
}

/// How `(t, eps)` are drawn per training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseMode {
    /// Fresh uniform `t` and Gaussian `eps` every step.
    #[default]
    Random,
    /// Fixed `t` and one `eps` per case drawn once up front.
    Fixed { t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionTrainConfig {
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub loss: LossWeights,
    pub seed: u64,
    pub noise: NoiseMode,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            optimizer: AdamWConfig::default(),
            loss: LossWeights::COMPOUND,
            seed: 0,
            noise: NoiseMode::Random,
        }
    }
}

fn checksum(dataset: &[DiffusionCase]) -> String {
    let mut h = Sha256::new();
    for c in dataset {
        h.update(c.id.as_bytes());
        for v in c.cond.iter() {
            h.update(v.to_le_bytes());
        }
        h.update(c.target.iter().copied().collect::<Vec<u8>>());
    }
    hex::encode(h.finalize())
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array4<f32> {
    Array4::from_shape_simple_fn((shape[0], shape[1], shape[2], shape[3]), || rng.sample(StandardNormal))
}

pub(crate) fn noise_like(seed: u64, shape: &[usize]) -> Array4<f32> {
    gaussian(&mut ChaCha8Rng::seed_from_u64(seed), shape)
}

/// Trains the denoiser to recover each case's target from noised copies.
/// The baseline predictions baked into the cases are never updated.
pub fn train_diffusion(
    model: DenoiserModel,
    dataset: &[DiffusionCase],
    hyper: &DiffusionTrainConfig,
) -> Result<TrainOutcome<DenoiserModel>> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let mut model = model;
    let steps_t = model.schedule.steps();
    if let NoiseMode::Fixed { t } = hyper.noise {
        if t == 0 || t > steps_t {
            return Err(Error::TimestepOutOfRange { t, lo: 1, hi: steps_t });
        }
    }
    for case in dataset {
        model.check_inputs(case.cond.shape(), case.target.shape())?;
    }
    let targets: Vec<Array4<f32>> = dataset.iter().map(|c| c.target.mapv(f32::from)).collect();
    let conds: Vec<Tensor<f32>> = dataset.iter().map(|c| array_to_tensor(&c.cond)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let fixed_eps: Vec<Array4<f32>> = match hyper.noise {
        NoiseMode::Fixed { .. } => targets.iter().map(|x| gaussian(&mut rng, x.shape())).collect(),
        NoiseMode::Random => Vec::new(),
    };
    let mut opt = AdamW::new(hyper.optimizer, &model.params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let x0 = &targets[i];
            let (t, x_t) = match hyper.noise {
                NoiseMode::Random => {
                    let t = rng.random_range(1..=steps_t);
                    let eps = gaussian(&mut rng, x0.shape());
                    (t, q_sample(x0, t, &eps, &model.schedule)?)
                }
                NoiseMode::Fixed { t } => (t, q_sample(x0, t, &fixed_eps[i], &model.schedule)?),
            };
            let input = array_to_tensor(&stack(&dataset[i].cond, &x_t));
            let target = x0.as_slice().expect("standard layout");
            let (terms, grads) =
                model.loss_and_gradients(&model.params, conds[i].clone(), input, t, target, &hyper.loss);
            if !terms.total.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: terms.total,
                });
            }
            opt.step(&mut model.params, &grads);
            total += terms.total;
        }
        let mean = total / dataset.len() as f64;
        log::debug!("diffusion epoch {epoch}: loss {mean:.5}");
        trace.push(mean);
    }
    model.fingerprint = TrainingFingerprint {
        seed: hyper.seed,
        data_checksum: checksum(dataset),
        epochs: model.fingerprint.epochs + hyper.epochs,
    };
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ConditioningVariant;

    fn small(variant: ConditioningVariant) -> DenoiserConfig {
        DenoiserConfig {
            levels: 2,
            base_width: 4,
            time_features: 8,
            time_dim: 8,
            conditioning: ConditioningOptions {
                variant,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn input_channel_arithmetic() {
        for (v, n) in [
            (ConditioningVariant::PredOnly, 6),
            (ConditioningVariant::ConcatMriPred, 10),
            (ConditioningVariant::MaskedMri, 7),
        ] {
            assert_eq!(small(v).du_arch().in_channels, n);
            assert_eq!(small(v).xi_arch().level_shapes([8; 3]), small(v).du_arch().level_shapes([8; 3]));
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let model = build_denoiser(&small(ConditioningVariant::ConcatMriPred), 1).unwrap();
        let cond = noise_like(2, &[7, 8, 8, 8]);
        let xt = noise_like(3, &[3, 8, 8, 8]);
        let a = denoise_step(&model, &cond, &xt, 500).unwrap();
        let b = denoise_step(&model, &cond, &xt, 500).unwrap();
        assert_eq!(a.probs.shape(), &[3, 8, 8, 8]);
        assert_eq!(a, b);
        assert!(a.raw.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn injection_changes_output() {
        let mut model = build_denoiser(&small(ConditioningVariant::MaskedMri), 4).unwrap();
        let cond = noise_like(5, &[4, 8, 8, 8]);
        let xt = noise_like(6, &[3, 8, 8, 8]);
        let with = denoise_step(&model, &cond, &xt, 10).unwrap();
        model.config.injection = FeatureInjection::Disabled;
        let without = denoise_step(&model, &cond, &xt, 10).unwrap();
        let diff = with.raw.iter().zip(&without.raw).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn rejects_bad_shapes_and_steps() {
        let model = build_denoiser(&small(ConditioningVariant::PredOnly), 0).unwrap();
        let cond = Array4::zeros((3, 8, 8, 8));
        let xt = Array4::zeros((3, 8, 8, 8));
        assert!(denoise_step(&model, &cond, &xt, 0).is_err());
        assert!(denoise_step(&model, &cond, &xt, 1001).is_err());
        assert!(denoise_step(&model, &Array4::zeros((7, 8, 8, 8)), &xt, 5).is_err());
        assert!(denoise_step(&model, &cond, &Array4::zeros((3, 8, 8, 4)), 5).is_err());
        assert!(denoise_step(&model, &Array4::zeros((3, 6, 6, 6)), &Array4::zeros((3, 6, 6, 6)), 5).is_ok());
        assert!(denoise_step(&model, &Array4::zeros((3, 5, 6, 6)), &Array4::zeros((3, 5, 6, 6)), 5).is_err());
    }

    #[test]
    fn zero_lr_with_fixed_noise_gives_constant_loss() {
        let model = build_denoiser(&small(ConditioningVariant::PredOnly), 0).unwrap();
        let case = DiffusionCase {
            id: "a".into(),
            cond: noise_like(1, &[3, 4, 4, 4]).mapv(|v| f32::from(v > 0.0)),
            target: noise_like(2, &[3, 4, 4, 4]).mapv(|v| u8::from(v > 0.0)),
        };
        let mut hyper = DiffusionTrainConfig {
            epochs: 4,
            noise: NoiseMode::Fixed { t: 300 },
            ..Default::default()
        };
        hyper.optimizer.lr = 0.0;
        let out = train_diffusion(model, &[case], &hyper).unwrap();
        assert!(out.loss_trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn target_mode_names() {
        assert_eq!("mask".parse::<TargetMode>().unwrap(), TargetMode::DirectMask);
        assert!("noise".parse::<TargetMode>().is_err());
    }
}
