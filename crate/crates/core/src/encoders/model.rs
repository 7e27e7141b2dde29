//! Encoder weights and the forward passes over the gradient tape.
//!
//! Each block is a two-stage token mixer: a single-head attention analog
//! (content-based mixing across tokens, temperature `sqrt(dim)`) followed by
//! a per-token feed-forward, both with residual connections. This is the
//! fixed stand-in for a transformer block: it keeps the token-insertion
//! semantics deep prompting relies on while staying inside the tape's
//! operation vocabulary.

use crate::diffmath::{FeatureMatrix, ParamSet, Tape, VarId, NORM_EPS};
use crate::encoders::{EncoderConfig, TokenId};
use crate::error::{CoreError, Result};
use crate::rng::substream;

/// Tape handles for one mixer block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub wq: VarId,
    pub wk: VarId,
    pub wv: VarId,
    pub w1: VarId,
    pub w2: VarId,
}

/// The frozen (or, during pretraining, learnable) dual encoder.
#[derive(Debug, Clone)]
pub struct DualEncoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub frozen: bool,
}

fn block_param_names(prefix: &str, index: usize) -> [String; 5] {
    [
        format!("{prefix}_block{index}/wq"),
        format!("{prefix}_block{index}/wk"),
        format!("{prefix}_block{index}/wv"),
        format!("{prefix}_block{index}/w1"),
        format!("{prefix}_block{index}/w2"),
    ]
}

impl DualEncoder {
    /// Fresh learnable weights from the `encoder-init` substream of `seed`.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "encoder-init");
        let mut params = ParamSet::new();
        let d_t = config.text_dim;
        let d_v = config.vis_dim;
        let token_std = 0.02;

        params.insert(
            "token_table",
            FeatureMatrix::gaussian(config.vocab_size, d_t, token_std, &mut rng),
            false,
        );
        params.insert(
            "text_pos",
            FeatureMatrix::gaussian(config.max_prompt_len, d_t, token_std, &mut rng),
            false,
        );
        for i in 0..config.text_blocks {
            insert_block(&mut params, "text", i, d_t, &mut rng);
        }
        params.insert(
            "text_proj",
            FeatureMatrix::gaussian(d_t, config.shared_dim, 1.0 / (d_t as f64).sqrt(), &mut rng),
            false,
        );

        params.insert(
            "patch_proj",
            FeatureMatrix::gaussian(
                config.patch_pixel_dim,
                d_v,
                0.1 / (config.patch_pixel_dim as f64).sqrt(),
                &mut rng,
            ),
            false,
        );
        params.insert("vis_global", FeatureMatrix::gaussian(1, d_v, token_std, &mut rng), false);
        params.insert(
            "vis_pos",
            FeatureMatrix::gaussian(1 + config.patch_count(), d_v, token_std, &mut rng),
            false,
        );
        for i in 0..config.vis_blocks {
            insert_block(&mut params, "vis", i, d_v, &mut rng);
        }
        params.insert(
            "vis_proj",
            FeatureMatrix::gaussian(d_v, config.shared_dim, 1.0 / (d_v as f64).sqrt(), &mut rng),
            false,
        );

        Ok(Self { config, params, frozen: false })
    }

    /// Marks every weight frozen; downstream methods must never move them.
    pub fn freeze(&mut self) {
        self.frozen = true;
        for (_, param) in self.params.iter_mut() {
            param.frozen = true;
        }
    }

    /// Puts the encoder weights on a tape. Frozen encoders enter as
    /// constants, so backward passes carry no encoder entries at all;
    /// a learnable encoder enters as named leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        let mut lookup = |name: &str| -> VarId {
            let param = self.params.get(name).expect("encoder parameter");
            debug_assert!(self.frozen == param.frozen || !self.frozen);
            if self.frozen {
                tape.constant(param.value.clone())
            } else {
                tape.leaf(name, param.value.clone(), param.frozen)
            }
        };
        let text_blocks = (0..self.config.text_blocks)
            .map(|i| {
                let names = block_param_names("text", i);
                BlockVars {
                    wq: lookup(&names[0]),
                    wk: lookup(&names[1]),
                    wv: lookup(&names[2]),
                    w1: lookup(&names[3]),
                    w2: lookup(&names[4]),
                }
            })
            .collect();
        let vis_blocks = (0..self.config.vis_blocks)
            .map(|i| {
                let names = block_param_names("vis", i);
                BlockVars {
                    wq: lookup(&names[0]),
                    wk: lookup(&names[1]),
                    wv: lookup(&names[2]),
                    w1: lookup(&names[3]),
                    w2: lookup(&names[4]),
                }
            })
            .collect();
        BoundEncoder {
            config: self.config.clone(),
            token_table: lookup("token_table"),
            text_pos: lookup("text_pos"),
            text_blocks,
            text_proj: lookup("text_proj"),
            patch_proj: lookup("patch_proj"),
            vis_global: lookup("vis_global"),
            vis_pos: lookup("vis_pos"),
            vis_blocks,
            vis_proj: lookup("vis_proj"),
        }
    }

    /// Convenience value-level text encoding of `template ++ [class]`.
    pub fn encode_class_prompt(&self, template: &[TokenId], class_id: TokenId) -> Result<(FeatureMatrix, FeatureMatrix)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let seq = embed_prompt(&mut tape, &bound, template, class_id)?;
        let (global, tokens) = text_encode(&mut tape, &bound, seq)?;
        Ok((tape.value(global).clone(), tape.value(tokens).clone()))
    }

    /// Convenience value-level image encoding without prompt tokens.
    pub fn encode_image_plain(&self, image: &FeatureMatrix) -> Result<(FeatureMatrix, FeatureMatrix)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let img = tape.constant(image.clone());
        let (global, locals) = image_encode(&mut tape, &bound, img, &[])?;
        Ok((tape.value(global).clone(), tape.value(locals).clone()))
    }
}

fn insert_block(params: &mut ParamSet, prefix: &str, index: usize, dim: usize, rng: &mut impl rand::Rng) {
    let names = block_param_names(prefix, index);
    let std_in = 1.0 / (dim as f64).sqrt();
    let std_out = 0.5 / (dim as f64).sqrt();
    params.insert(&names[0], FeatureMatrix::gaussian(dim, dim, std_in, rng), false);
    params.insert(&names[1], FeatureMatrix::gaussian(dim, dim, std_in, rng), false);
    params.insert(&names[2], FeatureMatrix::gaussian(dim, dim, std_in, rng), false);
    params.insert(&names[3], FeatureMatrix::gaussian(dim, dim, std_in, rng), false);
    params.insert(&names[4], FeatureMatrix::gaussian(dim, dim, std_out, rng), false);
}

/// Tape-resident encoder weights plus the architecture they belong to.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub config: EncoderConfig,
    pub token_table: VarId,
    pub text_pos: VarId,
    pub text_blocks: Vec<BlockVars>,
    pub text_proj: VarId,
    pub patch_proj: VarId,
    pub vis_global: VarId,
    pub vis_pos: VarId,
    pub vis_blocks: Vec<BlockVars>,
    pub vis_proj: VarId,
}

/// One mixer block: attention-analog token mixing, then a per-token
/// feed-forward, each behind a residual.
pub fn mixer_block(tape: &mut Tape, x: VarId, w: &BlockVars, dim: usize) -> Result<VarId> {
    let q = tape.matmul(x, w.wq)?;
    let k = tape.matmul(x, w.wk)?;
    let v = tape.matmul(x, w.wv)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let attn = tape.softmax_rows(scores, (dim as f64).sqrt())?;
    let mixed = tape.matmul(attn, v)?;
    let x1 = tape.add(x, mixed)?;
    let h = tape.matmul(x1, w.w1)?;
    let h = tape.relu(h);
    let ff = tape.matmul(h, w.w2)?;
    tape.add(x1, ff)
}

/// Row-stacked embeddings of the template tokens followed by the class
/// token: a `(len(template) + 1) x text_dim` sequence.
pub fn embed_prompt(
    tape: &mut Tape,
    enc: &BoundEncoder,
    template: &[TokenId],
    class_id: TokenId,
) -> Result<VarId> {
    let mut ids = template.to_vec();
    ids.push(class_id);
    for &id in &ids {
        if id >= enc.config.vocab_size {
            return Err(CoreError::Vocabulary { id, vocab: enc.config.vocab_size });
        }
    }
    tape.gather_rows(enc.token_table, &ids)
}

/// Runs the text blocks and projects into the shared space. Returns the
/// global feature (last-token row) and all token features; every row is
/// L2-normalized.
pub fn text_encode(tape: &mut Tape, enc: &BoundEncoder, seq: VarId) -> Result<(VarId, VarId)> {
    let len = tape.value(seq).rows();
    if len > enc.config.max_prompt_len {
        return Err(CoreError::SequenceLength { len, max: enc.config.max_prompt_len });
    }
    let pos = tape.slice_rows(enc.text_pos, 0, len)?;
    let mut x = tape.add(seq, pos)?;
    for block in &enc.text_blocks {
        x = mixer_block(tape, x, block, enc.config.text_dim)?;
    }
    let projected = tape.matmul(x, enc.text_proj)?;
    let tokens = tape.l2_normalize_rows(projected, NORM_EPS)?;
    let global = tape.slice_rows(tokens, len - 1, 1)?;
    Ok((global, tokens))
}

/// Runs the visual blocks over `[global token, patch tokens, prompt tokens]`.
///
/// `prompts_per_layer[0]` supplies the input-layer prompt tokens; entry `j`
/// replaces the prompt positions with fresh tokens before block `j` runs.
/// Layers at or beyond the supplied depth carry the block outputs through
/// untouched, so parameters of deeper prompt slots cannot influence the
/// result. Returns the projected, normalized global token and the `M` patch
/// tokens.
pub fn image_encode(
    tape: &mut Tape,
    enc: &BoundEncoder,
    image: VarId,
    prompts_per_layer: &[Option<VarId>],
) -> Result<(VarId, VarId)> {
    let cfg = &enc.config;
    let m = cfg.patch_count();
    let img_shape = tape.value(image).shape();
    if img_shape != (m, cfg.patch_pixel_dim) {
        return Err(CoreError::Dimension {
            op: "image_encode",
            lhs: format!("{}x{}", img_shape.0, img_shape.1),
            rhs: format!("{m}x{} raw patches", cfg.patch_pixel_dim),
        });
    }
    if prompts_per_layer.len() > cfg.vis_blocks {
        return Err(CoreError::Parameter {
            name: "prompts_per_layer",
            reason: format!(
                "depth {} exceeds {} visual blocks",
                prompts_per_layer.len(),
                cfg.vis_blocks
            ),
        });
    }
    let mut prompt_len = None;
    for entry in prompts_per_layer.iter().flatten() {
        let shape = tape.value(*entry).shape();
        if shape.1 != cfg.vis_dim {
            return Err(CoreError::Dimension {
                op: "image_encode",
                lhs: format!("{}x{} prompt", shape.0, shape.1),
                rhs: format!("Lx{} expected", cfg.vis_dim),
            });
        }
        match prompt_len {
            None => prompt_len = Some(shape.0),
            Some(len) if len != shape.0 => {
                return Err(CoreError::Parameter {
                    name: "prompts_per_layer",
                    reason: format!("prompt rows disagree: {len} vs {}", shape.0),
                })
            }
            _ => {}
        }
    }

    let patches = tape.matmul(image, enc.patch_proj)?;
    let base = tape.concat_rows(&[enc.vis_global, patches])?;
    let base = tape.add(base, enc.vis_pos)?;

    let has_prompts = matches!(prompts_per_layer.first(), Some(Some(_)));
    let mut x = if has_prompts {
        let p0 = prompts_per_layer[0].unwrap();
        tape.concat_rows(&[base, p0])?
    } else {
        base
    };

    for (j, block) in enc.vis_blocks.iter().enumerate() {
        if j > 0 && has_prompts {
            if let Some(Some(fresh)) = prompts_per_layer.get(j) {
                let kept = tape.slice_rows(x, 0, 1 + m)?;
                x = tape.concat_rows(&[kept, *fresh])?;
            }
        }
        x = mixer_block(tape, x, block, cfg.vis_dim)?;
    }

    let kept = tape.slice_rows(x, 0, 1 + m)?;
    let projected = tape.matmul(kept, enc.vis_proj)?;
    let normed = tape.l2_normalize_rows(projected, NORM_EPS)?;
    let global = tape.slice_rows(normed, 0, 1)?;
    let locals = tape.slice_rows(normed, 1, m)?;
    Ok((global, locals))
}

/// Matching-probability prediction from hand-crafted prompts: softmax over
/// `cos(image global, class text global) / tau`.
pub fn clip_zero_shot_predict(
    encoder: &DualEncoder,
    image: &FeatureMatrix,
    class_prompts: &[(&[TokenId], TokenId)],
) -> Result<Vec<f64>> {
    if class_prompts.len() < 2 {
        return Err(CoreError::Parameter {
            name: "class_prompts",
            reason: format!("need at least 2 classes, got {}", class_prompts.len()),
        });
    }
    let mut tape = Tape::new();
    let bound = encoder.bind(&mut tape);
    let mut globals = Vec::with_capacity(class_prompts.len());
    for (template, class_id) in class_prompts {
        let seq = embed_prompt(&mut tape, &bound, template, *class_id)?;
        let (global, _) = text_encode(&mut tape, &bound, seq)?;
        globals.push(global);
    }
    let text_matrix = tape.concat_rows(&globals)?;
    let img = tape.constant(image.clone());
    let (vis_global, _) = image_encode(&mut tape, &bound, img, &[])?;
    let text_t = tape.transpose(text_matrix);
    let logits = tape.matmul(vis_global, text_t)?;
    let probs = tape.softmax_rows(logits, encoder.config.tau)?;
    Ok(tape.value(probs).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Template, TEMPLATE_VOCAB};

    fn small_encoder() -> DualEncoder {
        let cfg = EncoderConfig {
            text_dim: 8,
            vis_dim: 12,
            shared_dim: 8,
            text_blocks: 2,
            vis_blocks: 10,
            patch_grid: (2, 2),
            patch_pixel_dim: 4,
            vocab_size: 24,
            max_prompt_len: 6,
            tau: 0.01,
        };
        DualEncoder::init(cfg, 5).unwrap()
    }

    fn test_image(enc: &DualEncoder, seed: u64) -> FeatureMatrix {
        let mut rng = substream(seed, "test-image");
        FeatureMatrix::gaussian(enc.config.patch_count(), enc.config.patch_pixel_dim, 1.0, &mut rng)
    }

    #[test]
    fn embed_prompt_shapes_and_locality() {
        let enc = small_encoder();
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);

        let lone = embed_prompt(&mut tape, &bound, &[], TEMPLATE_VOCAB).unwrap();
        assert_eq!(tape.value(lone).shape(), (1, enc.config.text_dim));
        let table_row = enc.params.get("token_table").unwrap().value.row(TEMPLATE_VOCAB).to_vec();
        assert_eq!(tape.value(lone).data(), &table_row[..]);

        let four = embed_prompt(&mut tape, &bound, Template::PhotoOfA.token_ids(), TEMPLATE_VOCAB).unwrap();
        assert_eq!(tape.value(four).rows(), 5);

        // Two equal-length templates differing in one token differ in that row only.
        let a = embed_prompt(&mut tape, &bound, Template::PhotoOfA.token_ids(), TEMPLATE_VOCAB).unwrap();
        let b = embed_prompt(&mut tape, &bound, Template::DrawingOfA.token_ids(), TEMPLATE_VOCAB).unwrap();
        let (ma, mb) = (tape.value(a).clone(), tape.value(b).clone());
        for row in 0..5 {
            let same = ma.row(row) == mb.row(row);
            assert_eq!(same, row != 1, "row {row}");
        }
    }

    #[test]
    fn embed_prompt_rejects_unknown_token() {
        let enc = small_encoder();
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let err = embed_prompt(&mut tape, &bound, &[999], 0).unwrap_err();
        assert!(matches!(err, CoreError::Vocabulary { id: 999, .. }));
    }

    #[test]
    fn text_encode_is_normalized_deterministic_and_class_sensitive() {
        let enc = small_encoder();
        let (g1, _) = enc.encode_class_prompt(Template::PhotoOfA.token_ids(), TEMPLATE_VOCAB).unwrap();
        let (g2, _) = enc.encode_class_prompt(Template::PhotoOfA.token_ids(), TEMPLATE_VOCAB).unwrap();
        assert_eq!(g1, g2, "same sequence twice is bit-identical");

        let norm: f64 = g1.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);

        let (g3, _) = enc.encode_class_prompt(Template::PhotoOfA.token_ids(), TEMPLATE_VOCAB + 1).unwrap();
        let cos: f64 = g1.data().iter().zip(g3.data()).map(|(a, b)| a * b).sum();
        assert!(cos < 1.0 - 1e-6, "distinct class tokens must give distinct globals, cos = {cos}");
    }

    #[test]
    fn text_encode_rejects_over_length() {
        let enc = small_encoder();
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let seq = tape.constant(FeatureMatrix::zeros(7, enc.config.text_dim));
        assert!(matches!(
            text_encode(&mut tape, &bound, seq),
            Err(CoreError::SequenceLength { len: 7, max: 6 })
        ));
    }

    #[test]
    fn image_encode_shapes_and_prompt_independence() {
        let enc = small_encoder();
        let image = test_image(&enc, 1);

        let (global, locals) = enc.encode_image_plain(&image).unwrap();
        assert_eq!(global.shape(), (1, enc.config.shared_dim));
        assert_eq!(locals.shape(), (enc.config.patch_count(), enc.config.shared_dim));
        for r in 0..locals.rows() {
            let norm: f64 = locals.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn default_grid_yields_sixteen_locals() {
        let enc = DualEncoder::init(EncoderConfig::default(), 0).unwrap();
        let image = test_image(&enc, 2);
        let (_, locals) = enc.encode_image_plain(&image).unwrap();
        assert_eq!(locals.rows(), 16);
    }

    #[test]
    fn layers_past_the_supplied_depth_carry_tokens_through() {
        // Depth 3 expressed as a 3-entry list and as a longer list padded
        // with absent entries must be bit-identical.
        let enc = small_encoder();
        let image = test_image(&enc, 3);
        let mut rng = substream(9, "prompts");
        let prompts: Vec<FeatureMatrix> =
            (0..3).map(|_| FeatureMatrix::gaussian(2, enc.config.vis_dim, 0.02, &mut rng)).collect();

        let run = |pad_to: usize| {
            let mut tape = Tape::new();
            let bound = enc.bind(&mut tape);
            let img = tape.constant(image.clone());
            let mut per_layer: Vec<Option<VarId>> =
                prompts.iter().map(|p| Some(tape.constant(p.clone()))).collect();
            per_layer.resize(pad_to, None);
            let (g, l) = image_encode(&mut tape, &bound, img, &per_layer).unwrap();
            (tape.value(g).clone(), tape.value(l).clone())
        };

        let (g0, l0) = run(3);
        let (g1, l1) = run(8);
        assert_eq!(g0, g1, "absent deep entries must be bit-exact no-ops");
        assert_eq!(l0, l1);
    }

    #[test]
    fn zero_depth_output_ignores_prompt_parameters() {
        let enc = small_encoder();
        let image = test_image(&enc, 4);
        let (g0, l0) = enc.encode_image_plain(&image).unwrap();
        // Passing an explicitly empty per-layer list is the ablation-off path.
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let img = tape.constant(image.clone());
        let (g, l) = image_encode(&mut tape, &bound, img, &[]).unwrap();
        assert_eq!(tape.value(g), &g0);
        assert_eq!(tape.value(l), &l0);
    }

    #[test]
    fn image_encode_rejects_wrong_prompt_width() {
        let enc = small_encoder();
        let image = test_image(&enc, 5);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let img = tape.constant(image.clone());
        let bad = tape.constant(FeatureMatrix::zeros(2, enc.config.vis_dim + 1));
        assert!(matches!(
            image_encode(&mut tape, &bound, img, &[Some(bad)]),
            Err(CoreError::Dimension { .. })
        ));
    }

    #[test]
    fn zero_shot_duplicate_prompts_split_evenly() {
        let enc = small_encoder();
        let image = test_image(&enc, 6);
        let t = Template::PhotoOfA.token_ids();
        let p = clip_zero_shot_predict(&enc, &image, &[(t, TEMPLATE_VOCAB), (t, TEMPLATE_VOCAB)]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9);
        assert!((p[1] - 0.5).abs() < 1e-9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
