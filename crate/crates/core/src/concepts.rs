//! Graph-aware node representations over the shared word embedding table.

use crate::error::Result;
use crate::grounding::Grounding;
use crate::ids::NodeId;
use crate::numerics::{Embedding, GgnnParams, GgnnPass, GradSink, ParamView};

/// A node's input state is the mean embedding of its label words; one GGNN
/// layer then mixes in its neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEncoder {
    pub ggnn: GgnnParams,
    pub embedding: Embedding,
}

fn word_rows(grounding: &Grounding, node: NodeId) -> Vec<usize> {
    grounding.node_words(node).iter().map(|t| t.index()).collect()
}

impl NodeEncoder {
    pub fn forward(&self, view: ParamView<'_>, grounding: &Grounding, nodes: &[NodeId]) -> Result<GgnnPass> {
        self.ggnn.forward(view, &grounding.graph, nodes, |n| {
            self.embedding.mean(view, &word_rows(grounding, n))
        })
    }

    pub fn backward(
        &self,
        view: ParamView<'_>,
        grads: &mut GradSink<'_>,
        grounding: &Grounding,
        pass: &GgnnPass,
        d_rows: &[Vec<f64>],
    ) {
        let d_inputs = self.ggnn.backward(view, grads, pass, d_rows);
        for (node, d) in d_inputs {
            self.embedding.backward_mean(grads, &word_rows(grounding, node), &d);
        }
    }
}

/// Distinct items in first-seen order.
pub(crate) fn dedup_ordered<T: PartialEq + Copy>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}
