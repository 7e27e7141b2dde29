//! Desk-scale frozen dual encoder standing in for a pretrained
//! vision-language model: a token-embedding text encoder, a patch-token
//! image encoder with prompt-token insertion points, and contrastive
//! pretraining that produces the frozen weights every downstream method
//! adapts against.

mod checkpoint;
mod model;
mod pretrain;

pub use checkpoint::{load_encoder, read_param_file, save_encoder, write_param_file, ParamFile};
pub use model::{
    clip_zero_shot_predict, embed_prompt, image_encode, mixer_block, text_encode, BlockVars,
    BoundEncoder, DualEncoder,
};
pub use pretrain::{pretrain_contrastive, PairSampler, PretrainConfig, PretrainHistory, TrainingPair};

use crate::error::{CoreError, Result};

pub type TokenId = usize;

/// Number of vocabulary slots reserved for template words; class tokens
/// start right after them.
pub const TEMPLATE_VOCAB: usize = 16;

/// Fixed prompt templates, each a four-token id sequence over the template
/// vocabulary (a=0, photo=1, of=2, drawing=3, painting=4, the=5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Template {
    PhotoOfA,
    DrawingOfA,
    PaintingOfThe,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::PhotoOfA, Template::DrawingOfA, Template::PaintingOfThe];

    pub fn token_ids(&self) -> &'static [TokenId] {
        match self {
            Template::PhotoOfA => &[0, 1, 2, 0],
            Template::DrawingOfA => &[0, 3, 2, 0],
            Template::PaintingOfThe => &[0, 4, 2, 5],
        }
    }

    pub fn text(&self) -> &'static str {
        match self {
            Template::PhotoOfA => "a photo of a",
            Template::DrawingOfA => "a drawing of a",
            Template::PaintingOfThe => "a painting of the",
        }
    }
}

impl std::fmt::Display for Template {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.text())
    }
}

impl std::str::FromStr for Template {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a photo of a" | "photo" => Ok(Template::PhotoOfA),
            "a drawing of a" | "drawing" => Ok(Template::DrawingOfA),
            "a painting of the" | "painting" => Ok(Template::PaintingOfThe),
            other => Err(CoreError::Config(format!("unknown template `{other}`"))),
        }
    }
}

/// Architecture knobs of the dual encoder.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub text_dim: usize,
    pub vis_dim: usize,
    pub shared_dim: usize,
    pub text_blocks: usize,
    pub vis_blocks: usize,
    pub patch_grid: (usize, usize),
    pub patch_pixel_dim: usize,
    pub vocab_size: usize,
    pub max_prompt_len: usize,
    pub tau: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            text_dim: 32,
            vis_dim: 48,
            shared_dim: 32,
            text_blocks: 2,
            vis_blocks: 12,
            patch_grid: (4, 4),
            patch_pixel_dim: 8,
            vocab_size: 32,
            max_prompt_len: 8,
            tau: 0.01,
        }
    }
}

impl EncoderConfig {
    /// Number of local visual tokens `M = H * W`.
    pub fn patch_count(&self) -> usize {
        self.patch_grid.0 * self.patch_grid.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_count() < 2 {
            return Err(CoreError::Config(format!(
                "patch grid {:?} yields fewer than 2 local features",
                self.patch_grid
            )));
        }
        if self.vis_blocks < 10 {
            return Err(CoreError::Config(format!(
                "vis_blocks must be >= 10 for the depth sweep, got {}",
                self.vis_blocks
            )));
        }
        if self.tau <= 0.0 {
            return Err(CoreError::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.vocab_size <= TEMPLATE_VOCAB {
            return Err(CoreError::Config(format!(
                "vocab_size must exceed the {TEMPLATE_VOCAB} template slots, got {}",
                self.vocab_size
            )));
        }
        if self.max_prompt_len < 5 {
            return Err(CoreError::Config(
                "max_prompt_len must cover a 4-token template plus a class token".into(),
            ));
        }
        Ok(())
    }
}
