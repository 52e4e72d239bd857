//! Next-turn keyword prediction restricted to the graph neighborhood of the
//! context keywords.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ckg::DistanceCache;
use crate::concepts::{dedup_ordered, NodeEncoder};
use crate::corpus::{union_keywords, PredictionExample, Utterance};
use crate::error::{Error, Result};
use crate::eval::RankedPrediction;
use crate::grounding::Grounding;
use crate::ids::{KeywordId, NodeId};
use crate::numerics::{
    masked_softmax, pool, read_checkpoint, read_checkpoint_meta, softmax_nll, write_checkpoint, CheckpointMeta, Embedding, GgnnParams,
    GgnnPass, GradSink, HgruParams, HgruPass, Init, ParamId, ParamStore, ParamView, PoolMode, RelationBuckets,
    DEFAULT_RELATION_BUCKETS,
};
use crate::text::{BOS, EOS};
use crate::train::{fit, TrainConfig, TrainReport};

/// Distribution over a candidate set of keywords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorOutput {
    /// Sorted keyword ids with nonzero probability.
    pub mask: Vec<KeywordId>,
    /// Aligned with `mask`.
    pub probs: Vec<f64>,
}

impl PredictorOutput {
    pub fn prob(&self, kw: KeywordId) -> f64 {
        self.mask.binary_search(&kw).map_or(0.0, |i| self.probs[i])
    }

    /// Highest-probability keywords, ties by smaller id. The flag is set when
    /// fewer than `k` candidates exist.
    pub fn top_k(&self, k: usize) -> (Vec<(KeywordId, f64)>, bool) {
        let mut order: Vec<(KeywordId, f64)> = self.mask.iter().copied().zip(self.probs.iter().copied()).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let short = order.len() < k;
        order.truncate(k);
        (order, short)
    }

    pub fn argmax(&self) -> Option<KeywordId> {
        self.top_k(1).0.first().map(|(k, _)| *k)
    }

    pub fn ranked(&self, gold: &[KeywordId]) -> Result<RankedPrediction> {
        let (order, _) = self.top_k(self.mask.len());
        RankedPrediction::new(
            order.into_iter().map(|(k, _)| k.0).collect(),
            gold.iter().map(|k| k.0).collect(),
        )
    }
}

/// Anything that can propose next-turn keywords.
pub trait KeywordPredictor: Send + Sync {
    fn name(&self) -> &str;

    /// Distribution over `mask`, which must be non-empty. `target` is only
    /// consulted by oracle predictors.
    fn predict_masked(
        &self,
        grounding: &Grounding,
        context: &[&Utterance],
        context_keywords: &[KeywordId],
        mask: &[KeywordId],
        target: Option<KeywordId>,
    ) -> Result<PredictorOutput>;

    /// Builds the neighborhood mask from the context; `None` when it is empty.
    fn predict(
        &self,
        grounding: &Grounding,
        context: &[&Utterance],
        target: Option<KeywordId>,
    ) -> Result<Option<PredictorOutput>> {
        let keywords = union_keywords(context.iter().copied());
        let mask = grounding.candidate_mask(&keywords);
        if mask.is_empty() {
            return Ok(None);
        }
        let out = self.predict_masked(grounding, context, &keywords, &mask, target)?;
        audit_mask(grounding, &keywords, &out)?;
        Ok(Some(out))
    }
}

static AUDITED: AtomicU64 = AtomicU64::new(0);
static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of audited predictions and of mask violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskAudit {
    pub predictions: u64,
    pub violations: u64,
}

pub fn mask_audit() -> MaskAudit {
    MaskAudit {
        predictions: AUDITED.load(Ordering::SeqCst),
        violations: VIOLATIONS.load(Ordering::SeqCst),
    }
}

/// Rejects any output that puts mass outside the neighbors of the context
/// keywords minus the context keywords themselves.
pub fn audit_mask(grounding: &Grounding, context_keywords: &[KeywordId], out: &PredictorOutput) -> Result<()> {
    let allowed = grounding.candidate_mask(context_keywords);
    let outside: f64 = out
        .mask
        .iter()
        .zip(&out.probs)
        .filter(|(k, _)| allowed.binary_search(k).is_err() || context_keywords.contains(k))
        .map(|(_, p)| *p)
        .sum();
    AUDITED.fetch_add(1, Ordering::SeqCst);
    if outside != 0.0 || out.mask.len() != out.probs.len() {
        VIOLATIONS.fetch_add(1, Ordering::SeqCst);
        return Err(Error::Contract(format!("prediction puts mass {outside} outside its neighborhood mask")));
    }
    Ok(())
}

pub fn evaluate_predictor(
    predictor: &dyn KeywordPredictor,
    grounding: &Grounding,
    examples: &[PredictionExample],
) -> Result<Vec<RankedPrediction>> {
    examples
        .par_iter()
        .map(|ex| {
            let out = predictor.predict_masked(
                grounding,
                &ex.context_refs(),
                &ex.context_keywords,
                &ex.candidate_mask,
                None,
            )?;
            audit_mask(grounding, &ex.context_keywords, &out)?;
            out.ranked(&ex.gold)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Word/node embedding width, which is also the graph state width.
    pub embed_dim: usize,
    /// Utterance encoder width.
    pub hidden: usize,
    pub relation_buckets: usize,
    /// When false the concept vector is replaced by zeros.
    pub use_concepts: bool,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            embed_dim: 200,
            hidden: 200,
            relation_buckets: DEFAULT_RELATION_BUCKETS,
            use_concepts: true,
            seed: 0,
        }
    }
}

pub const EMBED_INIT: Init = Init::Normal(0.1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorLayout {
    pub embedding: Embedding,
    pub hgru: HgruParams,
    pub nodes: NodeEncoder,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub hidden: usize,
    pub embed_dim: usize,
    pub use_concepts: bool,
}

struct Forward {
    hgru: HgruPass,
    pass: GgnnPass,
    k_nodes: Vec<NodeId>,
    c_nodes: Vec<NodeId>,
    k: Vec<f64>,
    c: Vec<f64>,
    features: Vec<f64>,
    logits: Vec<f64>,
}

fn token_rows(u: &Utterance) -> Vec<usize> {
    u.tokens.iter().map(|t| t.index()).collect()
}

impl PredictorLayout {
    fn forward(
        &self,
        view: ParamView<'_>,
        grounding: &Grounding,
        context: &[&Utterance],
        context_keywords: &[KeywordId],
        mask: &[KeywordId],
    ) -> Result<Forward> {
        if mask.is_empty() {
            return Err(Error::Contract("prediction mask is empty".into()));
        }
        let rows: Vec<Vec<usize>> = context.iter().map(|u| token_rows(u)).collect();
        let refs: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
        let hgru = self.hgru.forward(view, &self.embedding, &refs)?;

        let k_nodes = dedup_ordered(context_keywords.iter().filter_map(|k| grounding.keyword_node(*k)));
        let c_nodes = if self.use_concepts {
            dedup_ordered(context.iter().flat_map(|u| u.concepts.iter().copied()))
        } else {
            Vec::new()
        };
        let wanted: Vec<NodeId> = k_nodes.iter().chain(&c_nodes).copied().collect();
        let pass = self.nodes.forward(view, grounding, &wanted)?;
        let d2 = self.embed_dim;
        let gather = |ns: &[NodeId]| -> Vec<Vec<f64>> { ns.iter().map(|n| pass.row(*n).expect("evaluated").to_vec()).collect() };
        let k = pool(&gather(&k_nodes), d2, PoolMode::Mean);
        let c = pool(&gather(&c_nodes), d2, PoolMode::Mean);

        let mut features = hgru.output().to_vec();
        features.extend(k.iter().zip(&c).map(|(a, b)| a.max(*b)));

        let w = view.get(self.out_w);
        let b = view.get(self.out_b).data();
        let logits = mask
            .iter()
            .map(|kw| {
                let i = kw.index();
                if i >= b.len() {
                    return Err(Error::Bounds {
                        what: "keyword",
                        index: i,
                        len: b.len(),
                    });
                }
                Ok(crate::numerics::dot(w.row(i), &features) + b[i])
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Forward {
            hgru,
            pass,
            k_nodes,
            c_nodes,
            k,
            c,
            features,
            logits,
        })
    }

    fn backward(
        &self,
        view: ParamView<'_>,
        grads: &mut GradSink<'_>,
        grounding: &Grounding,
        fwd: &Forward,
        mask: &[KeywordId],
        d_logits: &[f64],
    ) {
        let d1 = self.hidden;
        let d2 = self.embed_dim;
        let w = view.get(self.out_w);
        let mut d_feat = vec![0.0; d1 + d2];
        for (kw, dl) in mask.iter().zip(d_logits) {
            let i = kw.index();
            crate::numerics::axpy(*dl, w.row(i), &mut d_feat);
            crate::numerics::axpy(*dl, &fwd.features, grads.get_mut(self.out_w).row_mut(i));
            grads.get_mut(self.out_b).data_mut()[i] += dl;
        }
        self.hgru.backward(view, grads, &self.embedding, &fwd.hgru, &d_feat[..d1]);

        let mut dk = vec![0.0; d2];
        let mut dc = vec![0.0; d2];
        for i in 0..d2 {
            if fwd.k[i] >= fwd.c[i] {
                dk[i] = d_feat[d1 + i];
            } else {
                dc[i] = d_feat[d1 + i];
            }
        }
        let d_rows: Vec<Vec<f64>> = fwd
            .pass
            .nodes()
            .iter()
            .map(|n| {
                let mut d = vec![0.0; d2];
                if fwd.k_nodes.contains(n) {
                    crate::numerics::axpy(1.0 / fwd.k_nodes.len() as f64, &dk, &mut d);
                }
                if fwd.c_nodes.contains(n) {
                    crate::numerics::axpy(1.0 / fwd.c_nodes.len() as f64, &dc, &mut d);
                }
                d
            })
            .collect();
        self.nodes.backward(view, grads, grounding, &fwd.pass, &d_rows);
    }

    /// Summed negative log-likelihood of the gold keywords; gradients are
    /// accumulated into `grads`.
    pub fn loss_and_grad(
        &self,
        view: ParamView<'_>,
        grads: &mut GradSink<'_>,
        grounding: &Grounding,
        ex: &PredictionExample,
    ) -> Result<f64> {
        let fwd = self.forward(view, grounding, &ex.context_refs(), &ex.context_keywords, &ex.candidate_mask)?;
        let gold = gold_positions(&ex.candidate_mask, &ex.gold)?;
        let (loss, d_logits) = softmax_nll(&fwd.logits, &vec![true; fwd.logits.len()], &gold)?;
        self.backward(view, grads, grounding, &fwd, &ex.candidate_mask, &d_logits);
        Ok(loss)
    }

    pub fn loss(&self, view: ParamView<'_>, grounding: &Grounding, ex: &PredictionExample) -> Result<f64> {
        let fwd = self.forward(view, grounding, &ex.context_refs(), &ex.context_keywords, &ex.candidate_mask)?;
        let gold = gold_positions(&ex.candidate_mask, &ex.gold)?;
        Ok(softmax_nll(&fwd.logits, &vec![true; fwd.logits.len()], &gold)?.0)
    }
}

fn gold_positions(mask: &[KeywordId], gold: &[KeywordId]) -> Result<Vec<usize>> {
    gold.iter()
        .map(|g| {
            mask.binary_search(g)
                .map_err(|_| Error::Contract(format!("gold keyword {g} is outside the mask")))
        })
        .collect()
}

/// HGRU utterance encoder, GGNN concept encoder and a linear output layer
/// over the keyword vocabulary.
#[derive(Debug, Clone)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub layout: PredictorLayout,
    pub store: ParamStore,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig, grounding: &Grounding) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        let mut store = ParamStore::new(config.seed);
        let embedding = Embedding::register(&mut store, "embedding", grounding.vocab.len(), config.embed_dim, EMBED_INIT)?;
        let hgru = HgruParams::register(
            &mut store,
            "hgru",
            config.embed_dim,
            config.hidden,
            BOS.index(),
            EOS.index(),
        )?;
        let buckets = RelationBuckets::from_graph(&grounding.graph, config.relation_buckets);
        let ggnn = GgnnParams::register(&mut store, "ggnn", config.embed_dim, buckets)?;
        let n_kw = grounding.keywords.len();
        let out_w = store.add("out.w", &[n_kw, config.hidden + config.embed_dim], Init::Uniform(0.08))?;
        let out_b = store.add("out.b", &[n_kw], Init::Zeros)?;
        let layout = PredictorLayout {
            embedding,
            hgru,
            nodes: NodeEncoder { ggnn, embedding },
            out_w,
            out_b,
            hidden: config.hidden,
            embed_dim: config.embed_dim,
            use_concepts: config.use_concepts,
        };
        Ok(Self { config, layout, store })
    }

    pub fn forward(
        &self,
        grounding: &Grounding,
        context: &[&Utterance],
        context_keywords: &[KeywordId],
        mask: &[KeywordId],
    ) -> Result<PredictorOutput> {
        let fwd = self.layout.forward(self.store.view(), grounding, context, context_keywords, mask)?;
        let probs = masked_softmax(&fwd.logits, &vec![true; mask.len()])?;
        Ok(PredictorOutput {
            mask: mask.to_vec(),
            probs,
        })
    }

    pub fn train(
        &mut self,
        grounding: &Grounding,
        train: &[PredictionExample],
        valid: &[PredictionExample],
        config: &TrainConfig,
    ) -> Result<TrainReport> {
        let layout = self.layout.clone();
        let cfg = self.config.clone();
        fit(
            &mut self.store,
            train,
            config,
            |view, grads, ex| layout.loss_and_grad(view, grads, grounding, ex),
            |store| {
                if valid.is_empty() {
                    return Ok(None);
                }
                let probe = PredictorModel {
                    config: cfg.clone(),
                    layout: layout.clone(),
                    store: store.clone(),
                };
                let preds = evaluate_predictor(&probe, grounding, valid)?;
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
        let config: PredictorConfig = serde_json::from_value(meta.config.clone())?;
        let mut model = Self::new(config, grounding)?;
        read_checkpoint(path, &mut model.store)?;
        Ok((model, meta))
    }
}

impl KeywordPredictor for PredictorModel {
    fn name(&self) -> &str {
        "ckc"
    }

    fn predict_masked(
        &self,
        grounding: &Grounding,
        context: &[&Utterance],
        context_keywords: &[KeywordId],
        mask: &[KeywordId],
        _target: Option<KeywordId>,
    ) -> Result<PredictorOutput> {
        self.forward(grounding, context, context_keywords, mask)
    }
}

/// Scores candidates by closeness to the target: `p ∝ exp(-sharpness · dist)`.
/// Unreachable candidates get the smallest probability.
#[derive(Debug, Default)]
pub struct OraclePredictor {
    cache: DistanceCache,
    pub sharpness: f64,
}

impl OraclePredictor {
    pub fn new() -> Self {
        Self {
            cache: DistanceCache::new(),
            sharpness: 10.0,
        }
    }
}

impl KeywordPredictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict_masked(
        &self,
        grounding: &Grounding,
        _context: &[&Utterance],
        _context_keywords: &[KeywordId],
        mask: &[KeywordId],
        target: Option<KeywordId>,
    ) -> Result<PredictorOutput> {
        let target = target.ok_or_else(|| Error::Contract("oracle predictor needs a target".into()))?;
        let node = grounding
            .keyword_node(target)
            .ok_or_else(|| Error::Contract(format!("target `{}` is not in the graph", grounding.keyword_label(target))))?;
        let dmap = self.cache.get(&grounding.graph, node)?;
        let scores: Vec<f64> = mask
            .iter()
            .map(|k| {
                let d = grounding.keyword_node(*k).map_or(f64::INFINITY, |n| dmap.get_or_inf(n));
                if d.is_finite() {
                    -self.sharpness * d
                } else {
                    -1e6
                }
            })
            .collect();
        Ok(PredictorOutput {
            mask: mask.to_vec(),
            probs: masked_softmax(&scores, &vec![true; mask.len()])?,
        })
    }
}
