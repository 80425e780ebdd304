//! The prefix-conditioned denoiser.
//!
//! Condition channels are encoded into tokens, concatenated in the fixed order
//! text, global motion, speech, music, reference, and prepended to the noisy
//! motion tokens. A transformer encoder reads the whole sequence and a linear
//! readout maps the motion positions back to feature space as a prediction of
//! the clean clip.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::condition::{Channel, ConditionBundle, MaskSet, TextCondition};
use crate::error::{bail, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::nn::{embedding_init, Dropout, Encoder, Linear};
use crate::schedule::ScheduleKind;
use crate::skeleton::SkeletonSpec;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TextMode {
    /// One token per text token.
    Sequence,
    /// A single mean-pooled token.
    Pooled,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Embedding width per body part; `d_model = parts * per_part`.
    pub per_part: usize,
    pub ff_dim: usize,
    /// Longest motion, reference or audio sequence.
    pub max_frames: usize,
    pub max_text_tokens: usize,
    pub text_buckets: usize,
    pub text_dim: usize,
    pub speech_dim: usize,
    pub music_dim: usize,
    pub dropout: f64,
    pub text_mode: TextMode,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    /// Start with a zero readout so the initial prediction is exactly zero.
    pub zero_readout: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            layers: 2,
            heads: 4,
            per_part: 16,
            ff_dim: 192,
            max_frames: 150,
            max_text_tokens: 32,
            text_buckets: 4096,
            text_dim: 32,
            speech_dim: 16,
            music_dim: 16,
            dropout: 0.0,
            text_mode: TextMode::Sequence,
            diffusion_steps: 50,
            schedule: ScheduleKind::Cosine,
            zero_readout: false,
            seed: 7,
        }
    }

    pub fn full() -> Self {
        Self {
            layers: 8,
            heads: 8,
            per_part: 128,
            ff_dim: 3072,
            diffusion_steps: 1000,
            dropout: 0.1,
            ..Self::desk()
        }
    }

    pub fn d_model(&self, skeleton: &SkeletonSpec) -> usize {
        self.per_part * skeleton.body_parts.len()
    }

    pub fn validate(&self, skeleton: &SkeletonSpec) -> Result<()> {
        let d = self.d_model(skeleton);
        if self.layers == 0 || self.heads == 0 || self.per_part == 0 || self.ff_dim == 0 {
            bail!(InvalidArgument, "layers, heads, per_part and ff_dim must be positive");
        }
        if !d.is_multiple_of(self.heads) {
            bail!(InvalidArgument, "d_model {d} is not divisible by {} heads", self.heads);
        }
        if self.max_text_tokens == 0 || self.max_text_tokens > self.max_frames {
            bail!(InvalidArgument, "max_text_tokens must be in 1..=max_frames");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(InvalidArgument, "dropout must be in [0, 1)");
        }
        if self.diffusion_steps < 2 {
            bail!(InvalidArgument, "diffusion_steps must be at least 2");
        }
        Ok(())
    }
}

/// Encoded condition tokens, `L x d_model`, with their attention switch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prefix {
    pub tokens: Matrix,
    pub component_mask: Vec<bool>,
    /// `(start, len)` of each channel's token run, in [`Channel::ALL`] order.
    pub spans: [(usize, usize); 5],
}

/// Per-part feature columns followed by one affine map per part.
#[derive(Clone, Debug, PartialEq)]
struct PartEmbed {
    cols: Vec<Vec<usize>>,
    maps: Vec<Linear>,
}

impl PartEmbed {
    fn new(store: &mut ParamStore, name: &str, cols: Vec<Vec<usize>>, per_part: usize, rng: &mut ChaCha8Rng) -> Self {
        let maps = cols
            .iter()
            .enumerate()
            .map(|(p, c)| Linear::new(store, &format!("{name}.part{p}"), c.len(), per_part, rng))
            .collect();
        Self { cols, maps }
    }

    fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let mut parts = Vec::with_capacity(self.maps.len());
        for (cols, map) in self.cols.iter().zip(&self.maps) {
            let xp = g.gather_cols(x, cols.clone());
            parts.push(map.forward(g, xp));
        }
        g.concat_cols(parts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: ModelConfig,
    pub skeleton: SkeletonSpec,
    pub params: ParamStore,
    motion_embed: PartEmbed,
    global_embed: PartEmbed,
    global_proj: Linear,
    reference_embed: PartEmbed,
    reference_proj: Linear,
    text_table: ParamId,
    text_proj: Linear,
    speech_f: Linear,
    speech_h: Linear,
    music_f: Linear,
    music_h: Linear,
    null_tokens: ParamId,
    type_emb: ParamId,
    pos_emb: ParamId,
    time_emb: ParamId,
    encoder: Encoder,
    readout: Linear,
}

const MOTION_TYPE: usize = 5;

/// Feature columns owned by each body part; together they partition `0..D`.
pub fn part_columns(skeleton: &SkeletonSpec) -> Vec<Vec<usize>> {
    let owner = skeleton.layout().column_joints(skeleton);
    let part = skeleton.part_of_joint();
    let mut cols = vec![Vec::new(); skeleton.body_parts.len()];
    for (c, &j) in owner.iter().enumerate() {
        cols[part[j]].push(c);
    }
    cols
}

impl Denoiser {
    pub fn new(config: ModelConfig, skeleton: SkeletonSpec) -> Result<Self> {
        skeleton.validate()?;
        config.validate(&skeleton)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model(&skeleton);
        let dim = skeleton.feature_dim();
        let cols = part_columns(&skeleton);
        let doubled: Vec<Vec<usize>> =
            cols.iter().map(|c| c.iter().copied().chain(c.iter().map(|&i| i + dim)).collect()).collect();

        let motion_embed = PartEmbed::new(&mut store, "motion_embed", cols.clone(), config.per_part, &mut rng);
        let global_embed = PartEmbed::new(&mut store, "global.f", doubled, config.per_part, &mut rng);
        let global_proj = Linear::new(&mut store, "global.h", d, d, &mut rng);
        let reference_embed = PartEmbed::new(&mut store, "reference.f", cols, config.per_part, &mut rng);
        let reference_proj = Linear::new(&mut store, "reference.h", d, d, &mut rng);
        let text_table =
            store.add("text.f", embedding_init(&mut rng, config.text_buckets, config.text_dim, 1.0));
        let text_proj = Linear::new(&mut store, "text.h", config.text_dim, d, &mut rng);
        let speech_f = Linear::new(&mut store, "speech.f", config.speech_dim, d, &mut rng);
        let speech_h = Linear::new(&mut store, "speech.h", d, d, &mut rng);
        let music_f = Linear::new(&mut store, "music.f", config.music_dim, d, &mut rng);
        let music_h = Linear::new(&mut store, "music.h", d, d, &mut rng);
        let null_tokens = store.add("null_tokens", embedding_init(&mut rng, 5, d, 0.02));
        let type_emb = store.add("type_emb", embedding_init(&mut rng, 6, d, 0.02));
        let pos_emb = store.add("pos_emb", embedding_init(&mut rng, config.max_frames, d, 0.02));
        let time_emb = store.add("time_emb", embedding_init(&mut rng, config.diffusion_steps + 1, d, 0.02));
        let encoder = Encoder::new(&mut store, "encoder", config.layers, d, config.heads, config.ff_dim, &mut rng);
        let readout = if config.zero_readout {
            Linear::zeros(&mut store, "readout", d, dim)
        } else {
            Linear::new(&mut store, "readout", d, dim, &mut rng)
        };
        Ok(Self {
            config,
            skeleton,
            params: store,
            motion_embed,
            global_embed,
            global_proj,
            reference_embed,
            reference_proj,
            text_table,
            text_proj,
            speech_f,
            speech_h,
            music_f,
            music_h,
            null_tokens,
            type_emb,
            pos_emb,
            time_emb,
            encoder,
            readout,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model(&self.skeleton)
    }

    pub fn feature_dim(&self) -> usize {
        self.skeleton.feature_dim()
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Replaces the parameter values, keeping names and shapes.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        if params.len() != self.params.len() {
            bail!(Shape, "expected {} tensors, got {}", self.params.len(), params.len());
        }
        for ((_, a, va), (_, b, vb)) in self.params.iter().zip(params.iter()) {
            if a != b || va.shape() != vb.shape() {
                bail!(Shape, "parameter '{b}' {:?} does not match '{a}' {:?}", vb.shape(), va.shape());
            }
        }
        if !params.all_finite() {
            bail!(NonFinite, "checkpoint parameters");
        }
        self.params = params;
        Ok(())
    }

    fn with_position_and_type(&self, g: &mut Graph, tokens: NodeId, kind: usize) -> Result<NodeId> {
        let len = g.value(tokens).rows;
        if len > self.config.max_frames {
            bail!(Shape, "{len} tokens exceed max_frames {}", self.config.max_frames);
        }
        let pos = g.param(self.pos_emb);
        let pos = g.gather_rows(pos, (0..len).collect());
        let ty = g.param(self.type_emb);
        let ty = g.gather_rows(ty, vec![kind]);
        let h = g.add(tokens, pos);
        Ok(g.add_broadcast(h, ty))
    }

    fn encode_text(&self, g: &mut Graph, text: &TextCondition) -> Result<NodeId> {
        let feats = match text {
            TextCondition::Tokens(ids) => {
                if ids.is_empty() || ids.len() > self.config.max_text_tokens {
                    bail!(Shape, "text needs 1..={} tokens, got {}", self.config.max_text_tokens, ids.len());
                }
                if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.text_buckets) {
                    bail!(InvalidArgument, "token id {bad} outside {} buckets", self.config.text_buckets);
                }
                let table = g.param(self.text_table);
                g.gather_rows(table, ids.clone())
            }
            TextCondition::Features(m) => {
                if m.rows == 0 || m.rows > self.config.max_text_tokens || m.cols != self.config.text_dim {
                    bail!(Shape, "text features must be 1..={} x {}", self.config.max_text_tokens, self.config.text_dim);
                }
                g.constant(m.clone())
            }
        };
        let feats = match self.config.text_mode {
            TextMode::Sequence => feats,
            TextMode::Pooled => g.mean_rows(feats),
        };
        Ok(self.text_proj.forward(g, feats))
    }

    fn encode_motion_channel(&self, g: &mut Graph, input: Matrix, embed: &PartEmbed, proj: &Linear) -> NodeId {
        let x = g.constant(input);
        let h = embed.forward(g, x);
        proj.forward(g, h)
    }

    fn encode_audio(&self, g: &mut Graph, m: &Matrix, f: &Linear, h: &Linear, dim: usize) -> Result<NodeId> {
        if m.cols != dim || m.rows == 0 {
            bail!(Shape, "audio features must have {dim} columns, got {}", m.cols);
        }
        let x = g.constant(m.clone());
        let x = f.forward(g, x);
        let x = g.gelu(x);
        Ok(h.forward(g, x))
    }

    fn check_finite(m: &Matrix, what: &str) -> Result<()> {
        if !m.is_finite() {
            bail!(NonFinite, "{what} contains non-finite values");
        }
        Ok(())
    }

    /// Records the prefix on `g`; returns the token node and attention mask.
    pub fn prefix_on_graph(
        &self,
        g: &mut Graph,
        bundle: &ConditionBundle,
        masks: &MaskSet,
        frames: usize,
    ) -> Result<(NodeId, Vec<bool>, [(usize, usize); 5])> {
        bundle.check(&self.skeleton, masks, frames, (self.config.speech_dim, self.config.music_dim))?;
        let dim = self.feature_dim();
        let mut runs = Vec::with_capacity(5);
        let mut mask = Vec::new();
        let mut spans = [(0, 0); 5];
        for c in Channel::ALL {
            let active = masks.channels.contains(c) && bundle.present().contains(c);
            let tokens = if !active {
                None
            } else {
                Some(match c {
                    Channel::Text => self.encode_text(g, bundle.text.as_ref().expect("present"))?,
                    Channel::Global => {
                        let gm = bundle.global.as_ref().expect("present");
                        Self::check_finite(&gm.values, "global motion")?;
                        let obs = masks.observed(&self.skeleton).expect("validated task mask");
                        let mut input = Matrix::zeros(frames, 2 * dim);
                        for f in 0..frames {
                            let (src, m) = (gm.values.row(f), obs.row(f));
                            let dst = input.row_mut(f);
                            for k in 0..dim {
                                dst[k] = src[k] * m[k];
                                dst[dim + k] = m[k];
                            }
                        }
                        self.encode_motion_channel(g, input, &self.global_embed, &self.global_proj)
                    }
                    Channel::Speech => {
                        let m = bundle.speech.as_ref().expect("present");
                        Self::check_finite(m, "speech")?;
                        self.encode_audio(g, m, &self.speech_f, &self.speech_h, self.config.speech_dim)?
                    }
                    Channel::Music => {
                        let m = bundle.music.as_ref().expect("present");
                        Self::check_finite(m, "music")?;
                        self.encode_audio(g, m, &self.music_f, &self.music_h, self.config.music_dim)?
                    }
                    Channel::Reference => {
                        let r = bundle.reference.as_ref().expect("present");
                        Self::check_finite(&r.values, "reference motion")?;
                        let r = if r.frames() > self.config.max_frames { r.tail(self.config.max_frames) } else { r.clone() };
                        self.encode_motion_channel(g, r.values, &self.reference_embed, &self.reference_proj)
                    }
                })
            };
            let tokens = match tokens {
                Some(t) => t,
                None => {
                    let table = g.param(self.null_tokens);
                    g.gather_rows(table, vec![c.index()])
                }
            };
            let tokens = self.with_position_and_type(g, tokens, c.index())?;
            let len = g.value(tokens).rows;
            spans[c.index()] = (mask.len(), len);
            mask.extend(std::iter::repeat_n(active, len));
            runs.push(tokens);
        }
        Ok((g.concat_rows(runs), mask, spans))
    }

    /// Records the denoiser on `g` and returns the `F x D` prediction of `x_0`.
    pub fn denoise_on_graph(
        &self,
        g: &mut Graph,
        x_t: &Matrix,
        t: usize,
        prefix: NodeId,
        prefix_mask: &[bool],
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<NodeId> {
        let (frames, dim) = x_t.shape();
        if dim != self.feature_dim() {
            bail!(Shape, "motion has {dim} columns, skeleton needs {}", self.feature_dim());
        }
        if frames == 0 || frames > self.config.max_frames {
            bail!(Shape, "motion must have 1..={} frames, got {frames}", self.config.max_frames);
        }
        if t > self.config.diffusion_steps {
            bail!(InvalidArgument, "step {t} beyond {} diffusion steps", self.config.diffusion_steps);
        }
        Self::check_finite(x_t, "noisy motion")?;
        let x = g.constant(x_t.clone());
        let h = self.motion_embed.forward(g, x);
        let h = self.with_position_and_type(g, h, MOTION_TYPE)?;
        let te = g.param(self.time_emb);
        let te = g.gather_rows(te, vec![t]);
        let h = g.add_broadcast(h, te);
        let plen = g.value(prefix).rows;
        if plen != prefix_mask.len() {
            bail!(Shape, "prefix has {plen} tokens but mask has {}", prefix_mask.len());
        }
        let seq = g.concat_rows(vec![prefix, h]);
        let mut key_mask = prefix_mask.to_vec();
        key_mask.extend(std::iter::repeat_n(true, frames));
        let out = self.encoder.forward(g, seq, &key_mask, drop);
        let motion = g.slice_rows(out, plen, frames);
        Ok(self.readout.forward(g, motion))
    }

    pub fn build_prefix(&self, bundle: &ConditionBundle, masks: &MaskSet, frames: usize) -> Result<Prefix> {
        let mut g = Graph::new(&self.params);
        let (node, component_mask, spans) = self.prefix_on_graph(&mut g, bundle, masks, frames)?;
        Ok(Prefix { tokens: g.into_value(node), component_mask, spans })
    }

    pub fn denoise(&self, x_t: &Matrix, t: usize, prefix: &Prefix) -> Result<Matrix> {
        let mut g = Graph::new(&self.params);
        let p = g.constant(prefix.tokens.clone());
        let out = self.denoise_on_graph(&mut g, x_t, t, p, &prefix.component_mask, &mut None)?;
        Ok(g.into_value(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn part_columns_partition_features() {
        for s in [SkeletonSpec::desk(), SkeletonSpec::whole_body()] {
            let mut all: Vec<usize> = part_columns(&s).concat();
            all.sort_unstable();
            assert_eq!(all, (0..s.feature_dim()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn desk_width() {
        let s = SkeletonSpec::desk();
        assert_eq!(ModelConfig::desk().d_model(&s), 96);
        assert_eq!(ModelConfig::full().d_model(&SkeletonSpec::whole_body()), 1536);
    }

    #[test]
    fn zero_readout_predicts_zero() {
        let s = SkeletonSpec::desk();
        let m = Denoiser::new(ModelConfig { zero_readout: true, ..ModelConfig::desk() }, s.clone()).unwrap();
        let masks = MaskSet::new(&s);
        let p = m.build_prefix(&ConditionBundle::default(), &masks, 5).unwrap();
        assert!(p.component_mask.iter().all(|&b| !b));
        let x = Matrix::filled(5, s.feature_dim(), 0.3);
        let y = m.denoise(&x, 3, &p).unwrap();
        assert_eq!(y.shape(), (5, s.feature_dim()));
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let s = SkeletonSpec::desk();
        let a = Denoiser::new(ModelConfig::desk(), s.clone()).unwrap();
        let b = Denoiser::new(ModelConfig { seed: 99, ..ModelConfig::desk() }, s).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert!(a.params.all_finite());
    }
}
