//! The three-level segmentation model: shared encoder, mask prompt encoder, per-level decoders
//! with task-complementarity exchange, prediction heads and association projections.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod heads;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::association::AssociationHead;
use crate::autograd::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::data::generate::mix_seed;
use crate::error::{AimsError, Result};
use crate::level::{Level, LevelPair};
use crate::mask::Mask;
use crate::mpe::{downscale_pyramid, inject, MaskPromptEncoder};
use crate::nn::xavier;
use crate::resize::ResampleCache;
use crate::tcm::TcmBlock;

pub use config::{ModelConfig, TcmConfig};
pub use decoder::{attention_bias, block_scale, build_attention_mask, DecoderBlock};
pub use encoder::{check_image_dims, Encoder, Pyramid};
pub use heads::PredHead;

#[derive(Clone, Debug)]
pub struct LevelDecoder {
    pub level: Level,
    pub queries: ParamId,
    pub blocks: Vec<DecoderBlock>,
    pub head: PredHead,
}

/// Outputs of one level's decoder on a tape.
#[derive(Clone, Debug)]
pub struct LevelOutput {
    pub level: Level,
    /// `N × 1` ness logits.
    pub ness: Var,
    /// `P₂ × N` mask logits at a quarter of the image resolution.
    pub mask_low: Var,
    /// `P × N` mask logits at full resolution.
    pub masks: Var,
    /// Final query embeddings `N × C`.
    pub embeddings: Var,
    /// Embeddings after each block.
    pub trace: Vec<Var>,
    /// `(ness, full-resolution masks)` after each block but the last, when deep supervision is on.
    pub aux: Vec<(Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub height: usize,
    pub width: usize,
    pub levels: [Option<LevelOutput>; 3],
    /// Association logits indexed by [`LevelPair::index`], present when both levels ran.
    pub assoc: [Option<Var>; 2],
    /// Image features before prompt injection.
    pub features: Pyramid,
    /// Mask-prompt pyramid.
    pub prompt_features: Pyramid,
}

impl ForwardOutput {
    pub fn level(&self, level: Level) -> Option<&LevelOutput> {
        self.levels[level.index()].as_ref()
    }
}

#[derive(Clone, Debug)]
pub struct AimsModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    mpe: MaskPromptEncoder,
    decoders: [LevelDecoder; 3],
    /// `tcm[block][pair]`, present when the pair is enabled.
    tcm: Vec<[Option<TcmBlock>; 2]>,
    assoc: AssociationHead,
}

impl AimsModel {
    /// Deterministic initialization from `config.seed`. Each component draws from its own stream,
    /// so toggling TCM leaves every other parameter unchanged.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let (heads, hidden) = (config.heads, config.ffn_hidden);
        let rng = |tag: u64| ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, tag]));
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &mut rng(1), c);
        let mpe = MaskPromptEncoder::new(&mut store, &mut rng(2), c);
        let decoders = Level::ALL.map(|level| {
            let mut r = rng(10 + level.index() as u64);
            let name = format!("decoder.{}", level.name());
            let n = config.num_queries(level);
            let queries = store.add(format!("{name}.query"), xavier(&mut r, n, c));
            let blocks = (0..config.num_blocks)
                .map(|i| DecoderBlock::new(&mut store, &mut r, &format!("{name}.block{i}"), c, heads, hidden))
                .collect();
            let head = PredHead::new(&mut store, &mut r, &format!("{name}.head"), c);
            LevelDecoder { level, queries, blocks, head }
        });
        let assoc = AssociationHead::new(&mut store, &mut rng(20), c);
        let mut tcm_rng = rng(30);
        let tcm = (0..config.num_blocks)
            .map(|i| {
                LevelPair::ALL.map(|pair| {
                    config.tcm.pair_enabled(pair).then(|| {
                        TcmBlock::new(&mut store, &mut tcm_rng, &format!("tcm.block{i}.{pair}"), c, heads, hidden)
                    })
                })
            })
            .collect();
        Ok(AimsModel { config, params: store, encoder, mpe, decoders, tcm, assoc })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Post-processing thresholds do not touch parameters and may change after loading.
    pub fn set_thresholds(&mut self, keep: f64, assoc: f64) -> Result<()> {
        let mut config = self.config.clone();
        config.keep_threshold = keep;
        config.assoc_threshold = assoc;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn decoder(&self, level: Level) -> &LevelDecoder {
        &self.decoders[level.index()]
    }

    pub fn tcm_block(&self, block: usize, pair: LevelPair) -> Option<&TcmBlock> {
        self.tcm.get(block).and_then(|b| b[pair.index()].as_ref())
    }

    pub fn association(&self) -> &AssociationHead {
        &self.assoc
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn mpe(&self) -> &MaskPromptEncoder {
        &self.mpe
    }

    /// Sets every parameter whose name starts with `prefix` to zero; returns how many matched.
    pub fn zero_params(&mut self, prefix: &str) -> usize {
        let ids: Vec<ParamId> = self.params.ids_with_prefix(prefix).collect();
        for &id in &ids {
            self.params.get_mut(id).fill(0.0);
        }
        ids.len()
    }

    /// Records a full forward pass on `tape`. `levels` selects the decoders to run, in order;
    /// TCM exchanges and association logits apply only between levels that both run.
    pub fn forward(&self, tape: &mut Tape, image: &Matrix, prompt: &Mask, levels: &[Level]) -> Result<ForwardOutput> {
        let (h, w) = (self.config.height, self.config.width);
        check_image_dims(h, w)?;
        if image.dim() != (h * w, 3) {
            return Err(AimsError::Shape(format!(
                "image matrix {:?} does not match the model's {h}x{w} input",
                image.dim()
            )));
        }
        if prompt.height() != h || prompt.width() != w {
            return Err(AimsError::Shape(format!(
                "prompt {}x{} does not match the model's {h}x{w} input",
                prompt.height(),
                prompt.width()
            )));
        }
        let mut cache = ResampleCache::default();
        let img = tape.constant(image.clone());
        let features = self.encoder.forward(tape, &mut cache, img, h, w)?;
        let m2 = self.mpe.encode(tape, &mut cache, prompt)?;
        let prompt_features = downscale_pyramid(tape, &mut cache, m2, h, w);
        let fp = inject(tape, &features, &prompt_features)?;
        let f2 = fp.get(2);
        let (h2, w2) = fp.dims(2);
        let upsample = cache.bilinear(h2, w2, h, w);

        let mut state: [Option<(Var, Var, Var)>; 3] = [None, None, None];
        let mut traces: [Vec<Var>; 3] = Default::default();
        let mut aux: [Vec<(Var, Var)>; 3] = Default::default();
        for &level in levels {
            let dec = &self.decoders[level.index()];
            let e = tape.param(dec.queries);
            let (ness, mask_low) = dec.head.forward(tape, e, f2);
            state[level.index()] = Some((e, ness, mask_low));
        }
        for i in 0..self.config.num_blocks {
            let s = block_scale(i);
            let memory = fp.get(s);
            let (hs, ws) = fp.dims(s);
            let mut embeds: [Option<Var>; 3] = [None, None, None];
            for &level in levels {
                let (e, _, mask_low) = state[level.index()].unwrap();
                let mask = build_attention_mask(tape.value(mask_low), h2, w2, hs, ws, self.config.attn_threshold);
                let bias = tape.constant(attention_bias(&mask));
                embeds[level.index()] = Some(self.decoders[level.index()].blocks[i].attend(tape, e, memory, Some(bias)));
            }
            for pair in LevelPair::ALL {
                if let (Some(block), Some(a), Some(b)) =
                    (&self.tcm[i][pair.index()], embeds[pair.coarse().index()], embeds[pair.fine().index()])
                {
                    let (a, b) = block.forward(tape, a, b)?;
                    embeds[pair.coarse().index()] = Some(a);
                    embeds[pair.fine().index()] = Some(b);
                }
            }
            for &level in levels {
                let dec = &self.decoders[level.index()];
                let e = dec.blocks[i].feed_forward(tape, embeds[level.index()].unwrap());
                let (ness, mask_low) = dec.head.forward(tape, e, f2);
                traces[level.index()].push(e);
                if self.config.deep_supervision && i + 1 < self.config.num_blocks {
                    let full = tape.sparse(mask_low, upsample.clone());
                    aux[level.index()].push((ness, full));
                }
                state[level.index()] = Some((e, ness, mask_low));
            }
        }
        let mut outputs: [Option<LevelOutput>; 3] = [None, None, None];
        for &level in levels {
            let (e, ness, mask_low) = state[level.index()].unwrap();
            let masks = tape.sparse(mask_low, upsample.clone());
            outputs[level.index()] = Some(LevelOutput {
                level,
                ness,
                mask_low,
                masks,
                embeddings: e,
                trace: std::mem::take(&mut traces[level.index()]),
                aux: std::mem::take(&mut aux[level.index()]),
            });
        }
        let mut assoc = [None, None];
        for pair in LevelPair::ALL {
            if let (Some(c), Some(f)) = (&outputs[pair.coarse().index()], &outputs[pair.fine().index()]) {
                assoc[pair.index()] = Some(self.assoc.logits(tape, pair, c.embeddings, f.embeddings)?);
            }
        }
        Ok(ForwardOutput { height: h, width: w, levels: outputs, assoc, features, prompt_features })
    }
}
