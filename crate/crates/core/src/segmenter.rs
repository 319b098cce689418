//! Baseline encoder-decoder segmenter producing per-region probabilities.

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{array_to_tensor, checksum, tensor_to_array, Case};
use crate::error::{Error, Result};
use crate::loss::{LossTerms, LossWeights};
use crate::nn::{Activation, AdamW, AdamWConfig, Gradients, Graph, NodeId, ParamStore, Real, Tensor};
use crate::unet::{ArchSpec, Decoder, Encoder, Normalization};
use crate::volume::{MultiContrastVolume, RegionMask, SoftPrediction, CONTRASTS, REGIONS};

/// Default probability threshold for turning soft predictions into masks.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub levels: usize,
    pub base_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub normalization: Normalization,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_width: 8,
            in_channels: CONTRASTS,
            out_channels: REGIONS,
            activation: Activation::LeakyRelu,
            normalization: Normalization::Instance,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidConfig(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.levels > 8 || self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!("unsupported segmenter config {self:?}")));
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            levels: self.levels,
            base_width: self.base_width,
            activation: self.activation,
            normalization: self.normalization,
        }
    }

    /// Checks that `dims` survive `levels - 1` exact halvings.
    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        check_divisible(dims, self.arch().divisor())
    }
}

pub(crate) fn check_divisible(dims: [usize; 3], divisor: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0 || d % divisor != 0) {
        Err(Error::Divisibility { dims, divisor })
    } else {
        Ok(())
    }
}

/// What produced a set of weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TrainingFingerprint {
    pub seed: u64,
    pub data_checksum: String,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
struct Net {
    encoder: Encoder,
    decoder: Decoder,
}

#[derive(Debug, Clone)]
pub struct SegmenterModel {
    pub config: SegmenterConfig,
    pub params: ParamStore<f32>,
    pub fingerprint: TrainingFingerprint,
    net: Net,
}

/// Builds a freshly initialized segmenter; identical `(cfg, seed)` give
/// identical weights.
pub fn build_segmenter(cfg: &SegmenterConfig, seed: u64) -> Result<SegmenterModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let arch = cfg.arch();
    let encoder = Encoder::build(&mut params, "seg", &arch, None, &mut rng);
    let decoder = Decoder::build(&mut params, "seg", &arch, None, &mut rng);
    Ok(SegmenterModel {
        config: *cfg,
        params,
        fingerprint: TrainingFingerprint {
            seed,
            ..Default::default()
        },
        net: Net { encoder, decoder },
    })
}

impl SegmenterModel {
    /// Records the forward pass of `input` (`(C, D, W, H)`) over `store`,
    /// which must have this model's layout.
    pub fn forward_graph<'s, F: Real>(&self, store: &'s ParamStore<F>, input: Tensor<F>) -> (Graph<'s, F>, NodeId) {
        let mut g = Graph::new(store);
        let x = g.input(input);
        let feats = self.net.encoder.forward(&mut g, x, None, None);
        let out = self.net.decoder.forward(&mut g, &feats, None);
        (g, out)
    }

    fn check_input(&self, vol: &MultiContrastVolume) -> Result<()> {
        if vol.data.shape()[0] != self.config.in_channels {
            let s = vol.data.shape();
            return Err(Error::shape(&[self.config.in_channels, s[1], s[2], s[3]], s));
        }
        self.config.check_dims(vol.dims())
    }

    /// Raw logits `(3, D, W, H)`.
    pub fn logits(&self, vol: &MultiContrastVolume) -> Result<Array4<f32>> {
        self.check_input(vol)?;
        let (g, out) = self.forward_graph(&self.params, array_to_tensor(&vol.data));
        Ok(tensor_to_array(&g.into_value(out)))
    }

    /// Loss of one case and gradients of all parameters in `store`.
    pub fn loss_and_gradients<F: Real>(
        &self,
        store: &ParamStore<F>,
        input: Tensor<F>,
        target: &[F],
        weights: &LossWeights,
    ) -> (LossTerms, Gradients<F>) {
        let (g, out) = self.forward_graph(store, input);
        let (terms, dlogits) = weights.eval_logits(&g.value(out).data, target, self.config.out_channels);
        let grads = g.backward(out, dlogits);
        (terms, grads)
    }
}

/// Per-region probabilities for a preprocessed volume.
pub fn predict(model: &SegmenterModel, vol: &MultiContrastVolume) -> Result<SoftPrediction> {
    let logits = model.logits(vol)?;
    Ok(SoftPrediction {
        probs: logits.mapv(|z| 1.0 / (1.0 + (-z).exp())),
        spacing: vol.spacing,
    })
}

/// Channel-wise `probs >= threshold`. Nesting is not enforced.
pub fn binarize(pred: &SoftPrediction, threshold: f32) -> Result<RegionMask> {
    let channels = pred.threshold(threshold)?;
    if channels.shape()[0] != REGIONS {
        let s = channels.shape();
        return Err(Error::shape(&[REGIONS, s[1], s[2], s[3]], s));
    }
    Ok(RegionMask {
        channels,
        spacing: pred.spacing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: AdamWConfig,
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            optimizer: AdamWConfig::default(),
            loss: LossWeights::DICE_BCE,
            seed: 0,
        }
    }
}

/// Trained model and mean training loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub loss_trace: Vec<f64>,
}

/// Trains with AdamW, one case per step, cases shuffled each epoch from a
/// seeded generator.
pub fn train_segmenter(
    model: SegmenterModel,
    dataset: &[Case],
    hyper: &TrainConfig,
) -> Result<TrainOutcome<SegmenterModel>> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let mut model = model;
    for case in dataset {
        model.check_input(&case.image)?;
        if case.regions.channels.shape()[0] != model.config.out_channels {
            return Err(Error::shape(&[model.config.out_channels], case.regions.channels.shape()));
        }
    }
    let inputs: Vec<Tensor<f32>> = dataset.iter().map(|c| array_to_tensor(&c.image.data)).collect();
    let targets: Vec<Vec<f32>> = dataset
        .iter()
        .map(|c| c.regions.channels.iter().map(|&v| v as f32).collect())
        .collect();

    let mut opt = AdamW::new(hyper.optimizer, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let (terms, grads) = model.loss_and_gradients(&model.params, inputs[i].clone(), &targets[i], &hyper.loss);
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
        log::debug!("segmenter epoch {epoch}: loss {mean:.5}");
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
