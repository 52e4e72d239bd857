use std::collections::{BTreeMap, HashMap};

use super::gru::RECURRENT_INIT;
use super::{axpy, matvec_acc, matvec_t_acc, outer_acc, GradSink, GruParams, GruStep, ParamId, ParamStore, ParamView, Tensor};
use crate::ckg::{CkgGraph, Direction};
use crate::error::{Error, Result};
use crate::ids::NodeId;

pub const DEFAULT_RELATION_BUCKETS: usize = 12;

/// Maps relations to the `k` most frequent labels plus one shared OTHER bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationBuckets {
    bucket_of: Vec<usize>,
    count: usize,
}

impl RelationBuckets {
    pub fn from_graph(graph: &CkgGraph, top: usize) -> Self {
        let freq = graph.relation_frequencies();
        let mut order: Vec<usize> = (0..freq.len()).collect();
        order.sort_by(|a, b| freq[*b].cmp(&freq[*a]).then(a.cmp(b)));
        let mut bucket_of = vec![top; freq.len()];
        for (rank, rel) in order.into_iter().take(top).enumerate() {
            bucket_of[rel] = rank;
        }
        Self {
            bucket_of,
            count: top + 1,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn slot(&self, relation: usize, direction: Direction) -> usize {
        let bucket = self.bucket_of.get(relation).copied().unwrap_or(self.count - 1);
        // messages travelling along the edge (into its tail) use the even slot
        bucket * 2 + usize::from(direction == Direction::Outgoing)
    }
}

/// One-layer gated graph network: relation- and direction-specific neighbor
/// transforms averaged with per-node softmax-normalized edge weights, followed
/// by a GRU state update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GgnnParams {
    pub transforms: ParamId,
    pub gru: GruParams,
    pub dim: usize,
    pub buckets: RelationBuckets,
}

struct SlotAggregate {
    slot: usize,
    agg: Vec<f64>,
    members: Vec<(NodeId, f64)>,
}

/// Cached forward evaluation over a set of output nodes.
pub struct GgnnPass {
    nodes: Vec<NodeId>,
    row_of: HashMap<NodeId, usize>,
    inputs: HashMap<NodeId, Vec<f64>>,
    slots: Vec<Vec<SlotAggregate>>,
    steps: Vec<GruStep>,
}

impl GgnnPass {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn row(&self, node: NodeId) -> Option<&[f64]> {
        self.row_of.get(&node).map(|i| self.steps[*i].h.as_slice())
    }

    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.row_of.get(&node).copied()
    }
}

impl GgnnParams {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, buckets: RelationBuckets) -> Result<Self> {
        let transforms = store.add(
            &format!("{prefix}.transforms"),
            &[2 * buckets.count(), dim, dim],
            RECURRENT_INIT,
        )?;
        let gru = GruParams::register(store, &format!("{prefix}.gru"), dim, dim)?;
        Ok(Self {
            transforms,
            gru,
            dim,
            buckets,
        })
    }

    /// Updated states for `nodes` (duplicates collapsed). `init` supplies the
    /// input state of any node, and is queried for the outputs and their
    /// 1-hop neighbors only.
    pub fn forward(
        &self,
        view: ParamView<'_>,
        graph: &CkgGraph,
        nodes: &[NodeId],
        init: impl Fn(NodeId) -> Vec<f64>,
    ) -> Result<GgnnPass> {
        let d = self.dim;
        let a = view.get(self.transforms).data();
        let mut pass = GgnnPass {
            nodes: Vec::new(),
            row_of: HashMap::new(),
            inputs: HashMap::new(),
            slots: Vec::new(),
            steps: Vec::new(),
        };
        for &v in nodes {
            if pass.row_of.contains_key(&v) {
                continue;
            }
            let incident = graph.incident(v)?;
            let max_w = incident.iter().map(|e| e.weight).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = incident.iter().map(|e| (e.weight - max_w).exp()).sum();
            let mut grouped: BTreeMap<usize, SlotAggregate> = BTreeMap::new();
            for e in incident {
                let alpha = (e.weight - max_w).exp() / z;
                let slot = self.buckets.slot(e.relation.index(), e.direction);
                let state = pass.inputs.entry(e.neighbor).or_insert_with(|| init(e.neighbor));
                if state.len() != d {
                    return Err(Error::dim("ggnn node state", d, state.len()));
                }
                let entry = grouped.entry(slot).or_insert_with(|| SlotAggregate {
                    slot,
                    agg: vec![0.0; d],
                    members: Vec::new(),
                });
                axpy(alpha, state, &mut entry.agg);
                entry.members.push((e.neighbor, alpha));
            }
            let mut message = vec![0.0; d];
            for s in grouped.values() {
                matvec_acc(&a[s.slot * d * d..(s.slot + 1) * d * d], d, &s.agg, &mut message);
            }
            let own = pass.inputs.entry(v).or_insert_with(|| init(v)).clone();
            let step = self.gru.step(view, &message, &own)?;
            pass.row_of.insert(v, pass.nodes.len());
            pass.nodes.push(v);
            pass.slots.push(grouped.into_values().collect());
            pass.steps.push(step);
        }
        Ok(pass)
    }

    /// Accumulates parameter gradients given `d_rows[i]` for `pass.nodes()[i]`
    /// and returns gradients w.r.t. every input state that was read.
    pub fn backward(
        &self,
        view: ParamView<'_>,
        grads: &mut GradSink<'_>,
        pass: &GgnnPass,
        d_rows: &[Vec<f64>],
    ) -> BTreeMap<NodeId, Vec<f64>> {
        let d = self.dim;
        let a = view.get(self.transforms).data();
        let mut d_inputs: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        for (i, v) in pass.nodes.iter().enumerate() {
            if d_rows[i].iter().all(|x| *x == 0.0) {
                continue;
            }
            let mut dm = vec![0.0; d];
            let mut dh = vec![0.0; d];
            self.gru
                .step_backward(view, grads, &pass.steps[i], &d_rows[i], &mut dm, &mut dh);
            axpy(1.0, &dh, d_inputs.entry(*v).or_insert_with(|| vec![0.0; d]));
            for s in &pass.slots[i] {
                let range = s.slot * d * d..(s.slot + 1) * d * d;
                outer_acc(&mut grads.get_mut(self.transforms).data_mut()[range.clone()], &dm, &s.agg);
                let mut d_agg = vec![0.0; d];
                matvec_t_acc(&a[range], d, &dm, &mut d_agg);
                for (u, alpha) in &s.members {
                    axpy(*alpha, &d_agg, d_inputs.entry(*u).or_insert_with(|| vec![0.0; d]));
                }
            }
        }
        d_inputs
    }
}

/// Full-graph layer: row `v` of the result is the updated state of node `v`.
pub fn ggnn_layer(store: &ParamStore, params: &GgnnParams, graph: &CkgGraph, node_embed: &Tensor) -> Result<Tensor> {
    if node_embed.rows() != graph.node_count() {
        return Err(Error::dim("ggnn node rows", graph.node_count(), node_embed.rows()));
    }
    if node_embed.cols() != params.dim {
        return Err(Error::dim("ggnn node width", params.dim, node_embed.cols()));
    }
    let all: Vec<NodeId> = (0..graph.node_count()).map(NodeId::from_index).collect();
    let pass = params.forward(store.view(), graph, &all, |n| node_embed.row(n.index()).to_vec())?;
    let rows: Vec<Vec<f64>> = pass.steps.iter().map(|s| s.h.clone()).collect();
    Tensor::from_rows(&rows, params.dim)
}
