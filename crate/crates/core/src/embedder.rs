//! Text and motion encoders trained into a shared space with the margin
//! contrastive loss; the evaluation metrics are computed on their outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::nn::{embedding_init, Encoder, Linear};
use crate::optim::AdamW;
use crate::rng::stream;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EmbedderConfig {
    pub d_model: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub text_buckets: usize,
    pub max_tokens: usize,
    pub max_frames: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            embed_dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            text_buckets: 4096,
            max_tokens: 32,
            max_frames: 150,
            margin: crate::metrics::DEFAULT_MARGIN,
            lr: 1e-3,
            epochs: 30,
            batch_size: 16,
            seed: 7,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.embed_dim == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            bail!(InvalidArgument, "d_model {} must be a positive multiple of heads {}", self.d_model, self.heads);
        }
        if self.margin <= 0.0 {
            bail!(InvalidArgument, "margin must be positive, got {}", self.margin);
        }
        if self.batch_size < 2 {
            bail!(InvalidArgument, "batch size must be at least 2 to form negatives");
        }
        Ok(())
    }
}

/// One sequence encoder whose prepended semantic token becomes the embedding.
#[derive(Clone, Debug, PartialEq)]
struct Tower {
    semantic: ParamId,
    pos: ParamId,
    encoder: Encoder,
    out: Linear,
}

impl Tower {
    fn new(store: &mut ParamStore, name: &str, c: &EmbedderConfig, max_len: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            semantic: store.add(format!("{name}.semantic"), embedding_init(rng, 1, c.d_model, 0.02)),
            pos: store.add(format!("{name}.pos"), embedding_init(rng, max_len + 1, c.d_model, 0.02)),
            encoder: Encoder::new(store, &format!("{name}.encoder"), c.layers, c.d_model, c.heads, c.ff_dim, rng),
            out: Linear::new(store, &format!("{name}.out"), c.d_model, c.embed_dim, rng),
        }
    }

    fn forward(&self, g: &mut Graph, tokens: Option<NodeId>) -> NodeId {
        let sem = g.param(self.semantic);
        let seq = match tokens {
            Some(t) => g.concat_rows(vec![sem, t]),
            None => sem,
        };
        let len = g.value(seq).rows;
        let pos = g.param(self.pos);
        let pos = g.gather_rows(pos, (0..len).collect());
        let seq = g.add(seq, pos);
        let h = self.encoder.forward(g, seq, &vec![true; len], &mut None);
        let head = g.slice_rows(h, 0, 1);
        self.out.forward(g, head)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderPair {
    pub config: EmbedderConfig,
    pub feature_dim: usize,
    pub params: ParamStore,
    token_table: ParamId,
    motion_in: Linear,
    text: Tower,
    motion: Tower,
}

impl EmbedderPair {
    pub fn new(config: EmbedderConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let token_table = store.add("text.tokens", embedding_init(&mut rng, config.text_buckets, config.d_model, 1.0));
        let text = Tower::new(&mut store, "text", &config, config.max_tokens, &mut rng);
        let motion_in = Linear::new(&mut store, "motion.in", feature_dim, config.d_model, &mut rng);
        let motion = Tower::new(&mut store, "motion", &config, config.max_frames, &mut rng);
        Ok(Self { config, feature_dim, params: store, token_table, motion_in, text, motion })
    }

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
            bail!(NonFinite, "embedder parameters");
        }
        self.params = params;
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() > self.config.max_tokens {
            bail!(Shape, "{} tokens exceed {}", tokens.len(), self.config.max_tokens);
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.text_buckets) {
            bail!(InvalidArgument, "token {t} outside {} buckets", self.config.text_buckets);
        }
        Ok(())
    }

    fn check_motion(&self, motion: &Matrix) -> Result<()> {
        if motion.cols != self.feature_dim {
            bail!(Shape, "motion has {} columns, embedder expects {}", motion.cols, self.feature_dim);
        }
        if motion.rows == 0 || motion.rows > self.config.max_frames {
            bail!(Shape, "motion must have 1..={} frames, got {}", self.config.max_frames, motion.rows);
        }
        if !motion.is_finite() {
            bail!(NonFinite, "motion to embed");
        }
        Ok(())
    }

    fn text_on_graph(&self, g: &mut Graph, tokens: &[usize]) -> NodeId {
        let toks = (!tokens.is_empty()).then(|| {
            let table = g.param(self.token_table);
            g.gather_rows(table, tokens.to_vec())
        });
        self.text.forward(g, toks)
    }

    fn motion_on_graph(&self, g: &mut Graph, motion: &Matrix) -> NodeId {
        let x = g.constant(motion.clone());
        let h = self.motion_in.forward(g, x);
        self.motion.forward(g, Some(h))
    }

    pub fn embed_text(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new(&self.params);
        let n = self.text_on_graph(&mut g, tokens);
        Ok(g.into_value(n).data)
    }

    pub fn embed_motion(&self, motion: &Matrix) -> Result<Vec<f64>> {
        self.check_motion(motion)?;
        let mut g = Graph::new(&self.params);
        let n = self.motion_on_graph(&mut g, motion);
        Ok(g.into_value(n).data)
    }
}

/// A caption paired with the motion it describes.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedPair {
    pub tokens: Vec<usize>,
    pub motion: Matrix,
}

/// Trains both encoders on matched pairs and batch-shuffled negatives. A
/// negative whose caption equals the anchor's is skipped, since it describes
/// the same content. Returns the model and the mean loss of every epoch.
pub fn train_embedders(pairs: &[EmbedPair], config: EmbedderConfig, feature_dim: usize) -> Result<(EmbedderPair, Vec<f64>)> {
    if pairs.len() < 2 {
        bail!(InvalidArgument, "embedder training needs at least 2 captioned clips, got {}", pairs.len());
    }
    if pairs.iter().all(|p| p.tokens.is_empty()) {
        bail!(InvalidArgument, "no clip has a caption");
    }
    let mut model = EmbedderPair::new(config, feature_dim)?;
    for p in pairs {
        model.check_tokens(&p.tokens)?;
        model.check_motion(&p.motion)?;
    }
    let mut opt = AdamW::new(&model.params);
    let c = model.config.clone();
    let mut history = Vec::with_capacity(c.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..c.epochs {
        let mut rng = stream(c.seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(c.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let shift = rng.gen_range(1..chunk.len());
            let (loss, grads) = {
                let mut g = Graph::new(&model.params);
                let texts: Vec<NodeId> = chunk.iter().map(|&i| model.text_on_graph(&mut g, &pairs[i].tokens)).collect();
                let motions: Vec<NodeId> =
                    chunk.iter().map(|&i| model.motion_on_graph(&mut g, &pairs[i].motion)).collect();
                let mut terms = Vec::with_capacity(2 * chunk.len());
                for k in 0..chunk.len() {
                    terms.push(g.contrastive(texts[k], motions[k], false, c.margin));
                    let j = (k + shift) % chunk.len();
                    if pairs[chunk[j]].tokens != pairs[chunk[k]].tokens {
                        terms.push(g.contrastive(texts[k], motions[j], true, c.margin));
                    }
                }
                let n = terms.len() as f64;
                let sum = g.sum_scalars(terms);
                let loss = g.scale(sum, 1.0 / n);
                (g.value(loss).data[0], g.backward(loss))
            };
            if !loss.is_finite() {
                bail!(NonFinite, "embedder loss at epoch {epoch}");
            }
            opt.step(&mut model.params, &grads, c.lr);
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches.max(1) as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_have_configured_width() {
        let c = EmbedderConfig { embed_dim: 8, d_model: 16, ff_dim: 32, ..EmbedderConfig::default() };
        let e = EmbedderPair::new(c, 10).unwrap();
        assert_eq!(e.embed_text(&[1, 2]).unwrap().len(), 8);
        assert_eq!(e.embed_text(&[]).unwrap().len(), 8);
        assert_eq!(e.embed_motion(&Matrix::zeros(5, 10)).unwrap().len(), 8);
        assert!(e.embed_motion(&Matrix::zeros(5, 11)).is_err());
    }
}
