//! Keyword-augmented response retrieval.
//!
//! A context and a candidate are each encoded as a matrix whose rows are GRU
//! token states followed by graph states of the concepts they mention. The
//! utterance score is the dot product of the two max-pooled matrices; the
//! keyword score does the same for the graph states of the predicted
//! keywords and of the candidate's keywords; the final score is
//! `s = s_u + λ_k · s_k`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{dedup_ordered, NodeEncoder};
use crate::corpus::{ResponsePool, RetrievalExample, Utterance};
use crate::error::{Error, Result};
use crate::eval::RankedPrediction;
use crate::grounding::Grounding;
use crate::ids::{KeywordId, NodeId, UtteranceId};
use crate::numerics::{
    axpy, dot, pool, pool_backward, read_checkpoint, read_checkpoint_meta, softmax_nll, write_checkpoint,
    CheckpointMeta, Embedding, GgnnParams, GgnnPass, GradSink, GruParams, GruStep, ParamStore, ParamView, PoolMode,
    RelationBuckets, DEFAULT_RELATION_BUCKETS,
};
use crate::predictor::{KeywordPredictor, EMBED_INIT};
use crate::text::EOS;
use crate::train::{fit, TrainConfig, TrainReport};

pub const DEFAULT_LAMBDA_K: f64 = 0.01;
pub const PREDICTED_KEYWORDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub s_u: f64,
    pub s_k: f64,
    pub s: f64,
}

impl MatchScore {
    pub fn new(s_u: f64, s_k: f64, lambda_k: f64) -> Self {
        Self {
            s_u,
            s_k,
            s: s_u + lambda_k * s_k,
        }
    }
}

/// Scores already max-pooled representations.
pub fn match_pooled(x: &[f64], y: &[f64], kx: &[f64], ky: &[f64], lambda_k: f64) -> MatchScore {
    MatchScore::new(dot(x, y), dot(kx, ky), lambda_k)
}

/// Scores row matrices. Empty keyword matrices pool to the zero vector.
pub fn match_rows(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    kx: &[Vec<f64>],
    ky: &[Vec<f64>],
    width: usize,
    lambda_k: f64,
) -> Result<MatchScore> {
    for rows in [x, y, kx, ky] {
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::dim("match row width", width, r.len()));
        }
    }
    Ok(match_pooled(
        &pool(x, width, PoolMode::Max),
        &pool(y, width, PoolMode::Max),
        &pool(kx, width, PoolMode::Max),
        &pool(ky, width, PoolMode::Max),
        lambda_k,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    /// Embedding, GRU and graph state width.
    pub dim: usize,
    pub lambda_k: f64,
    pub relation_buckets: usize,
    /// When false, concept rows are left out of both matrices.
    pub use_concepts: bool,
    /// When false, `λ_k = 0` and the keyword matrices are empty.
    pub use_keywords: bool,
    pub seed: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            lambda_k: DEFAULT_LAMBDA_K,
            relation_buckets: DEFAULT_RELATION_BUCKETS,
            use_concepts: true,
            use_keywords: true,
            seed: 0,
        }
    }
}

impl MatcherConfig {
    pub fn effective_lambda(&self) -> f64 {
        if self.use_keywords {
            self.lambda_k
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatcherLayout {
    pub embedding: Embedding,
    pub context_gru: GruParams,
    pub candidate_gru: GruParams,
    pub nodes: NodeEncoder,
    pub dim: usize,
}

/// One side of the utterance channel.
struct SideEnc {
    tokens: Vec<usize>,
    steps: Vec<GruStep>,
    concepts: Vec<NodeId>,
    rows: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

struct KeyEnc {
    nodes: Vec<NodeId>,
    rows: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

/// A retrieval example resolved against the pool, with the frozen
/// predictor's keywords attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherExample {
    pub id: String,
    pub context: Vec<UtteranceId>,
    pub candidates: Vec<UtteranceId>,
    pub gold: usize,
    pub predicted: Vec<KeywordId>,
}

/// Flattened context token rows with `EOS` between utterances.
pub fn flatten_context(context: &[&Utterance]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, u) in context.iter().enumerate() {
        if i > 0 {
            out.push(EOS.index());
        }
        out.extend(u.tokens.iter().map(|t| t.index()));
    }
    out
}

fn keyword_nodes(grounding: &Grounding, kws: &[KeywordId]) -> Vec<NodeId> {
    dedup_ordered(kws.iter().filter_map(|k| grounding.keyword_node(*k)))
}

fn concept_nodes<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Vec<NodeId> {
    dedup_ordered(utts.into_iter().flat_map(|u| u.concepts.iter().copied()))
}

impl MatcherLayout {
    fn encode_side(
        &self,
        view: ParamView<'_>,
        gru: &GruParams,
        tokens: Vec<usize>,
        concepts: Vec<NodeId>,
        pass: &GgnnPass,
    ) -> Result<SideEnc> {
        let xs: Vec<Vec<f64>> = tokens.iter().map(|t| self.embedding.lookup(view, *t).to_vec()).collect();
        let steps = gru.run(view, &xs, &vec![0.0; self.dim])?;
        let mut rows: Vec<Vec<f64>> = steps.iter().map(|s| s.h.clone()).collect();
        rows.extend(concepts.iter().map(|n| pass.row(*n).expect("evaluated").to_vec()));
        let pooled = pool(&rows, self.dim, PoolMode::Max);
        Ok(SideEnc {
            tokens,
            steps,
            concepts,
            rows,
            pooled,
        })
    }

    fn encode_keys(&self, nodes: Vec<NodeId>, pass: &GgnnPass) -> KeyEnc {
        let rows: Vec<Vec<f64>> = nodes.iter().map(|n| pass.row(*n).expect("evaluated").to_vec()).collect();
        let pooled = pool(&rows, self.dim, PoolMode::Max);
        KeyEnc { nodes, rows, pooled }
    }

    fn side_backward(
        &self,
        view: ParamView<'_>,
        grads: &mut GradSink<'_>,
        gru: &GruParams,
        side: &SideEnc,
        d_pooled: &[f64],
        node_grads: &mut Vec<(NodeId, Vec<f64>)>,
    ) {
        let d_rows = pool_backward(&side.rows, PoolMode::Max, d_pooled);
        let n_tok = side.steps.len();
        if n_tok > 0 {
            let (dxs, _) = gru.run_backward(view, grads, &side.steps, &d_rows[..n_tok]);
            for (t, dx) in side.tokens.iter().zip(dxs) {
                self.embedding.backward_row(grads, *t, &dx);
            }
        }
        for (n, d) in side.concepts.iter().zip(&d_rows[n_tok..]) {
            node_grads.push((*n, d.clone()));
        }
    }

    fn keys_backward(&self, keys: &KeyEnc, d_pooled: &[f64], node_grads: &mut Vec<(NodeId, Vec<f64>)>) {
        let d_rows = pool_backward(&keys.rows, PoolMode::Max, d_pooled);
        for (n, d) in keys.nodes.iter().zip(d_rows) {
            node_grads.push((*n, d));
        }
    }

    /// 20-way negative log-likelihood of the gold candidate; gradients are
    /// accumulated into `grads` when given.
    pub fn loss(
        &self,
        view: ParamView<'_>,
        grads: Option<&mut GradSink<'_>>,
        config: &MatcherConfig,
        grounding: &Grounding,
        pool_: &ResponsePool,
        ex: &MatcherExample,
    ) -> Result<f64> {
        let lambda = config.effective_lambda();
        let context: Vec<&Utterance> = ex.context.iter().map(|id| pool_.get(*id)).collect();
        let candidates: Vec<&Utterance> = ex.candidates.iter().map(|id| pool_.get(*id)).collect();

        let ctx_concepts = if config.use_concepts { concept_nodes(context.iter().copied()) } else { Vec::new() };
        let kx_nodes = if config.use_keywords { keyword_nodes(grounding, &ex.predicted) } else { Vec::new() };
        let cand_concepts: Vec<Vec<NodeId>> = candidates
            .iter()
            .map(|c| if config.use_concepts { concept_nodes([*c]) } else { Vec::new() })
            .collect();
        let ky_nodes: Vec<Vec<NodeId>> = candidates
            .iter()
            .map(|c| if config.use_keywords { keyword_nodes(grounding, &c.keywords) } else { Vec::new() })
            .collect();
        let wanted: Vec<NodeId> = ctx_concepts
            .iter()
            .chain(&kx_nodes)
            .chain(cand_concepts.iter().flatten())
            .chain(ky_nodes.iter().flatten())
            .copied()
            .collect();
        let pass = self.nodes.forward(view, grounding, &wanted)?;

        let x = self.encode_side(view, &self.context_gru, flatten_context(&context), ctx_concepts, &pass)?;
        let kx = self.encode_keys(kx_nodes, &pass);
        let mut ys = Vec::with_capacity(candidates.len());
        let mut kys = Vec::with_capacity(candidates.len());
        let mut scores = Vec::with_capacity(candidates.len());
        for ((c, cc), kn) in candidates.iter().zip(cand_concepts).zip(ky_nodes) {
            let y = self.encode_side(view, &self.candidate_gru, c.tokens.iter().map(|t| t.index()).collect(), cc, &pass)?;
            let ky = self.encode_keys(kn, &pass);
            scores.push(match_pooled(&x.pooled, &y.pooled, &kx.pooled, &ky.pooled, lambda).s);
            ys.push(y);
            kys.push(ky);
        }
        let (loss, d_s) = softmax_nll(&scores, &vec![true; scores.len()], &[ex.gold])?;
        let Some(grads) = grads else { return Ok(loss) };

        let d = self.dim;
        let mut dx = vec![0.0; d];
        let mut dkx = vec![0.0; d];
        let mut node_grads = Vec::new();
        for ((y, ky), ds) in ys.iter().zip(&kys).zip(&d_s) {
            axpy(*ds, &y.pooled, &mut dx);
            axpy(lambda * ds, &ky.pooled, &mut dkx);
            let dy: Vec<f64> = x.pooled.iter().map(|v| v * ds).collect();
            let dky: Vec<f64> = kx.pooled.iter().map(|v| v * lambda * ds).collect();
            self.side_backward(view, grads, &self.candidate_gru, y, &dy, &mut node_grads);
            self.keys_backward(ky, &dky, &mut node_grads);
        }
        self.side_backward(view, grads, &self.context_gru, &x, &dx, &mut node_grads);
        self.keys_backward(&kx, &dkx, &mut node_grads);

        let mut d_rows = vec![vec![0.0; d]; pass.nodes().len()];
        for (n, g) in node_grads {
            axpy(1.0, &g, &mut d_rows[pass.index_of(n).expect("evaluated")]);
        }
        self.nodes.backward(view, grads, grounding, &pass, &d_rows);
        Ok(loss)
    }
}

/// Candidate-side encodings of a whole response pool.
#[derive(Debug, Clone)]
pub struct EncodedPool {
    pub y: Vec<Vec<f64>>,
    pub ky: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MatcherModel {
    pub config: MatcherConfig,
    pub layout: MatcherLayout,
    pub store: ParamStore,
}

impl MatcherModel {
    pub fn new(config: MatcherConfig, grounding: &Grounding) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Config("matcher width must be positive".into()));
        }
        if config.lambda_k < 0.0 {
            return Err(Error::Config("lambda_k must be non-negative".into()));
        }
        let d = config.dim;
        let mut store = ParamStore::new(config.seed);
        let embedding = Embedding::register(&mut store, "embedding", grounding.vocab.len(), d, EMBED_INIT)?;
        let context_gru = GruParams::register(&mut store, "context_gru", d, d)?;
        let candidate_gru = GruParams::register(&mut store, "candidate_gru", d, d)?;
        let buckets = RelationBuckets::from_graph(&grounding.graph, config.relation_buckets);
        let ggnn = GgnnParams::register(&mut store, "ggnn", d, buckets)?;
        let layout = MatcherLayout {
            embedding,
            context_gru,
            candidate_gru,
            nodes: NodeEncoder { ggnn, embedding },
            dim: d,
        };
        Ok(Self { config, layout, store })
    }

    /// Copies the embedding table and graph layer from a predictor of the
    /// same width.
    pub fn init_from(&mut self, other: &ParamStore, names: &[&str]) -> Result<()> {
        for prefix in names {
            for id in other.ids() {
                let name = other.name(id);
                if name == *prefix || name.starts_with(&format!("{prefix}.")) {
                    let mine = self
                        .store
                        .id(name)
                        .ok_or_else(|| Error::Config(format!("matcher has no parameter `{name}`")))?;
                    self.store.set_value(mine, other.value(id).clone())?;
                }
            }
        }
        Ok(())
    }

    pub fn loss(&self, grounding: &Grounding, pool_: &ResponsePool, ex: &MatcherExample) -> Result<f64> {
        self.layout.loss(self.store.view(), None, &self.config, grounding, pool_, ex)
    }

    pub fn encode_pool(&self, grounding: &Grounding, pool_: &ResponsePool) -> Result<EncodedPool> {
        let view = self.store.view();
        let l = &self.layout;
        let utts: Vec<&Utterance> = pool_.iter().map(|(_, u)| u).collect();
        let wanted: Vec<NodeId> = dedup_ordered(utts.iter().flat_map(|u| {
            let mut v = Vec::new();
            if self.config.use_concepts {
                v.extend(u.concepts.iter().copied());
            }
            if self.config.use_keywords {
                v.extend(keyword_nodes(grounding, &u.keywords));
            }
            v
        }));
        let pass = l.nodes.forward(view, grounding, &wanted)?;
        let encoded: Vec<(Vec<f64>, Vec<f64>)> = utts
            .par_iter()
            .map(|u| {
                let concepts = if self.config.use_concepts { concept_nodes([*u]) } else { Vec::new() };
                let y = l.encode_side(view, &l.candidate_gru, u.tokens.iter().map(|t| t.index()).collect(), concepts, &pass)?;
                let kn = if self.config.use_keywords { keyword_nodes(grounding, &u.keywords) } else { Vec::new() };
                Ok((y.pooled, l.encode_keys(kn, &pass).pooled))
            })
            .collect::<Result<_>>()?;
        let (y, ky) = encoded.into_iter().unzip();
        Ok(EncodedPool { y, ky })
    }

    /// Max-pooled context and predicted-keyword representations.
    pub fn encode_context(
        &self,
        grounding: &Grounding,
        context: &[&Utterance],
        predicted: &[KeywordId],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let view = self.store.view();
        let l = &self.layout;
        let concepts = if self.config.use_concepts { concept_nodes(context.iter().copied()) } else { Vec::new() };
        let kn = if self.config.use_keywords { keyword_nodes(grounding, predicted) } else { Vec::new() };
        let wanted: Vec<NodeId> = concepts.iter().chain(&kn).copied().collect();
        let pass = l.nodes.forward(view, grounding, &wanted)?;
        let x = l.encode_side(view, &l.context_gru, flatten_context(context), concepts, &pass)?;
        Ok((x.pooled, l.encode_keys(kn, &pass).pooled))
    }

    /// Number of rows in the context matrix `X` (tokens incl. separators,
    /// then concepts).
    pub fn context_rows(&self, context: &[&Utterance]) -> usize {
        let concepts = if self.config.use_concepts { concept_nodes(context.iter().copied()).len() } else { 0 };
        flatten_context(context).len() + concepts
    }

    /// Scores every pool entry against a context.
    pub fn score_pool(&self, x: &[f64], kx: &[f64], encoded: &EncodedPool) -> Vec<MatchScore> {
        let lambda = self.config.effective_lambda();
        encoded
            .y
            .iter()
            .zip(&encoded.ky)
            .map(|(y, ky)| match_pooled(x, y, kx, ky, lambda))
            .collect()
    }

    /// Scores of the listed candidates of one example.
    pub fn score_example(
        &self,
        grounding: &Grounding,
        pool_: &ResponsePool,
        encoded: &EncodedPool,
        ex: &MatcherExample,
    ) -> Result<Vec<MatchScore>> {
        let context: Vec<&Utterance> = ex.context.iter().map(|id| pool_.get(*id)).collect();
        let (x, kx) = self.encode_context(grounding, &context, &ex.predicted)?;
        let lambda = self.config.effective_lambda();
        Ok(ex
            .candidates
            .iter()
            .map(|c| match_pooled(&x, &encoded.y[c.index()], &kx, &encoded.ky[c.index()], lambda))
            .collect())
    }

    /// Rankings of every example's candidates. Ties are resolved against the
    /// gold candidate.
    pub fn evaluate(
        &self,
        grounding: &Grounding,
        pool_: &ResponsePool,
        examples: &[MatcherExample],
    ) -> Result<Vec<RankedPrediction>> {
        let encoded = self.encode_pool(grounding, pool_)?;
        examples
            .par_iter()
            .map(|ex| {
                let scores = self.score_example(grounding, pool_, &encoded, ex)?;
                let mut scored: Vec<(u32, f64)> = Vec::with_capacity(scores.len());
                for (i, s) in scores.iter().enumerate() {
                    if i != ex.gold {
                        scored.push((i as u32, s.s));
                    }
                }
                scored.push((ex.gold as u32, scores[ex.gold].s));
                RankedPrediction::from_scores(&scored, vec![ex.gold as u32])
            })
            .collect()
    }

    pub fn train(
        &mut self,
        grounding: &Grounding,
        pool_: &ResponsePool,
        train: &[MatcherExample],
        valid: &[MatcherExample],
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        let layout = self.layout.clone();
        let cfg = self.config.clone();
        fit(
            &mut self.store,
            train,
            config,
            |view, grads, ex| layout.loss(view, Some(grads), &cfg, grounding, pool_, ex),
            |store| {
                if valid.is_empty() {
                    return Ok(None);
                }
                let probe = MatcherModel {
                    config: cfg.clone(),
                    layout: layout.clone(),
                    store: store.clone(),
                };
                let preds = probe.evaluate(grounding, pool_, valid)?;
                Ok(Some(preds.iter().map(|p| crate::eval::recall_at_k(p, 1)).sum::<f64>() / preds.len() as f64))
            },
        )
    }

    pub fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        write_checkpoint(
            path,
            &self.store,
            &CheckpointMeta {
                seed: self.config.seed,
                epoch,
                config: serde_json::to_value(&self.config)?,
            },
        )
    }

    pub fn load(path: &Path, grounding: &Grounding) -> Result<(Self, CheckpointMeta)> {
        let meta = read_checkpoint_meta(path)?;
        let config: MatcherConfig = serde_json::from_value(meta.config.clone())?;
        let mut model = Self::new(config, grounding)?;
        read_checkpoint(path, &mut model.store)?;
        Ok((model, meta))
    }
}

/// Attaches the predictor's top keywords for the last two context
/// utterances to each retrieval example.
pub fn prepare_matcher_examples(
    examples: &[RetrievalExample],
    pool_: &ResponsePool,
    grounding: &Grounding,
    predictor: &dyn KeywordPredictor,
) -> Result<Vec<MatcherExample>> {
    examples
        .par_iter()
        .map(|ex| {
            let context: Vec<&Utterance> = ex.context.iter().map(|id| pool_.get(*id)).collect();
            let tail = &context[context.len().saturating_sub(2)..];
            let predicted = match predictor.predict(grounding, tail, None)? {
                Some(out) => out.top_k(PREDICTED_KEYWORDS).0.into_iter().map(|(k, _)| k).collect(),
                None => Vec::new(),
            };
            Ok(MatcherExample {
                id: ex.id.clone(),
                context: ex.context.clone(),
                candidates: ex.candidates(),
                gold: 0,
                predicted,
            })
        })
        .collect()
}
