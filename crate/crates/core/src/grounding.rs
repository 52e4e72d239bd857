//! Ties the word vocabulary, the keyword vocabulary and the graph together.

use crate::ckg::CkgGraph;
use crate::error::{Error, Result};
use crate::ids::{KeywordId, NodeId, TokenId};
use crate::text::{KeywordVocab, Vocab};

#[derive(Debug, Clone)]
pub struct Grounding {
    pub vocab: Vocab,
    pub keywords: KeywordVocab,
    pub graph: CkgGraph,
    keyword_node: Vec<Option<NodeId>>,
    node_keyword: Vec<Option<KeywordId>>,
    node_words: Vec<Vec<TokenId>>,
}

impl Grounding {
    pub fn new(vocab: Vocab, keywords: KeywordVocab, graph: CkgGraph) -> Self {
        let keyword_node: Vec<Option<NodeId>> = keywords
            .ids()
            .map(|k| graph.node(keywords.label(k)))
            .collect();
        let mut node_keyword = vec![None; graph.node_count()];
        for (k, n) in keyword_node.iter().enumerate() {
            if let Some(n) = n {
                node_keyword[n.index()] = Some(KeywordId::from_index(k));
            }
        }
        let node_words = graph
            .labels()
            .iter()
            .map(|l| l.split('_').map(|w| vocab.encode(w)).collect())
            .collect();
        Self {
            vocab,
            keywords,
            graph,
            keyword_node,
            node_keyword,
            node_words,
        }
    }

    pub fn keyword_node(&self, kw: KeywordId) -> Option<NodeId> {
        self.keyword_node.get(kw.index()).copied().flatten()
    }

    pub fn node_keyword(&self, node: NodeId) -> Option<KeywordId> {
        self.node_keyword.get(node.index()).copied().flatten()
    }

    /// Word ids making up a node label (multi-word labels split on `_`).
    pub fn node_words(&self, node: NodeId) -> &[TokenId] {
        &self.node_words[node.index()]
    }

    pub fn keyword_by_label(&self, label: &str) -> Option<KeywordId> {
        self.keywords.by_label(label)
    }

    pub fn keyword_label(&self, kw: KeywordId) -> &str {
        self.keywords.label(kw)
    }

    pub fn require_keyword(&self, label: &str) -> Result<KeywordId> {
        self.keyword_by_label(label)
            .ok_or_else(|| Error::Config(format!("`{label}` is not a keyword")))
    }

    /// Keywords adjacent in the graph to any context keyword, minus the context
    /// keywords themselves. Sorted by keyword id.
    pub fn candidate_mask(&self, context: &[KeywordId]) -> Vec<KeywordId> {
        let mut out: Vec<KeywordId> = context
            .iter()
            .filter_map(|k| self.keyword_node(*k))
            .flat_map(|n| self.graph.neighbors(n).expect("grounded node is in graph"))
            .filter_map(|n| self.node_keyword(*n))
            .filter(|k| !context.contains(k))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
