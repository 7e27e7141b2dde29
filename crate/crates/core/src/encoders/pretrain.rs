//! Contrastive pretraining of the dual encoder.
//!
//! Symmetric batch contrastive loss: cross-entropy in both directions over
//! the batch cosine-similarity matrix at the pretrained temperature. The
//! optimizer is SGD with momentum under a cosine learning-rate decay. The
//! returned encoder is frozen; downstream methods may only read it.

use crate::diffmath::{FeatureMatrix, Tape};
use crate::encoders::model::{image_encode, text_encode, DualEncoder};
use crate::encoders::{EncoderConfig, TokenId};
use crate::error::{CoreError, Result};
use crate::optim::{cosine_lr, SgdMomentum};
use crate::rng::substream;

/// One text-image training pair: the full token id sequence (template plus
/// class token) and the raw patch matrix.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub token_ids: Vec<TokenId>,
    pub image: FeatureMatrix,
}

/// Deterministic source of pretraining pairs. Draw `index` is global across
/// steps, so a source must return the same pair for the same index forever.
pub trait PairSampler {
    fn num_classes(&self) -> usize;
    fn pair(&self, draw_index: u64, rng: &mut rand_chacha::ChaCha8Rng) -> TrainingPair;
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 32, learning_rate: 1e-2, momentum: 0.9, seed: 0 }
    }
}

/// Loss trace of a pretraining run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PretrainHistory {
    pub losses: Vec<f64>,
}

impl PretrainHistory {
    pub fn initial(&self) -> f64 {
        *self.losses.first().unwrap_or(&f64::NAN)
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().unwrap_or(&f64::NAN)
    }
}

/// Trains a fresh encoder on pairs from `source` and returns it frozen,
/// together with the per-step loss history. Divergence (a non-finite loss)
/// aborts with the offending step index.
pub fn pretrain_contrastive<S: PairSampler>(
    source: &S,
    encoder_config: EncoderConfig,
    cfg: &PretrainConfig,
) -> Result<(DualEncoder, PretrainHistory)> {
    if source.num_classes() < 2 {
        return Err(CoreError::Protocol(format!(
            "contrastive pretraining needs >= 2 classes, got {}",
            source.num_classes()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(CoreError::Config("pretraining batch size must be >= 2".into()));
    }
    let mut encoder = DualEncoder::init(encoder_config, cfg.seed)?;
    let mut optimizer = SgdMomentum::new(cfg.learning_rate, cfg.momentum);
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut rng = substream(cfg.seed, &format!("pretrain/batch/{step}"));
        let pairs: Vec<TrainingPair> = (0..cfg.batch_size)
            .map(|slot| source.pair((step * cfg.batch_size + slot) as u64, &mut rng))
            .collect();

        let (loss, grads) = contrastive_step(&encoder, &pairs)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(CoreError::Training {
                step,
                reason: format!("contrastive loss diverged (loss = {loss})"),
            });
        }
        losses.push(loss);
        let lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
        optimizer.step_with_lr(&mut encoder.params, &grads, lr);
    }

    encoder.freeze();
    Ok((encoder, PretrainHistory { losses }))
}

/// Loss and gradients of the symmetric contrastive objective on one batch.
pub fn contrastive_step(
    encoder: &DualEncoder,
    pairs: &[TrainingPair],
) -> Result<(f64, crate::diffmath::Gradients)> {
    let mut tape = Tape::new();
    let bound = encoder.bind(&mut tape);

    let mut text_globals = Vec::with_capacity(pairs.len());
    let mut image_globals = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let seq = tape.gather_rows(bound.token_table, &pair.token_ids)?;
        let (t_global, _) = text_encode(&mut tape, &bound, seq)?;
        text_globals.push(t_global);
        let img = tape.constant(pair.image.clone());
        let (v_global, _) = image_encode(&mut tape, &bound, img, &[])?;
        image_globals.push(v_global);
    }
    let text = tape.concat_rows(&text_globals)?;
    let vis = tape.concat_rows(&image_globals)?;
    let vis_t = tape.transpose(vis);
    let sims = tape.matmul(text, vis_t)?; // rows already unit-norm: cosine

    let b = pairs.len();
    let mut eye_over_b = FeatureMatrix::zeros(b, b);
    for i in 0..b {
        eye_over_b.set(i, i, 1.0 / b as f64);
    }
    let mask = tape.constant(eye_over_b);

    let tau = encoder.config.tau;
    let p_text_to_image = tape.softmax_rows(sims, tau)?;
    let lp_t = tape.ln(p_text_to_image);
    let picked_t = tape.mul(lp_t, mask)?;
    let loss_t = tape.sum_all(picked_t);

    let sims_t = tape.transpose(sims);
    let p_image_to_text = tape.softmax_rows(sims_t, tau)?;
    let lp_v = tape.ln(p_image_to_text);
    let picked_v = tape.mul(lp_v, mask)?;
    let loss_v = tape.sum_all(picked_v);

    let total = tape.add(loss_t, loss_v)?;
    let loss = tape.affine(total, -0.5, 0.0);

    let value = tape.value(loss).scalar();
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}
