//! Commonsense knowledge graph: triplet filtering, neighborhood queries,
//! concept string matching and reciprocal-weight shortest paths.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{NodeId, RelationId};
use crate::text::{KeywordVocab, Vocab};

/// Longest multi-word window tried by [`CkgGraph::extract_concepts`].
pub const MAX_CONCEPT_WORDS: usize = 4;
pub const MIN_EDGE_WEIGHT: f64 = 1.0;

const SNAPSHOT_MAGIC: &str = "KEYGUIDE-CKG 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkgTriplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub weight: f64,
}

impl CkgTriplet {
    pub fn new(head: &str, relation: &str, tail: &str, weight: f64) -> Self {
        Self {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
            weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// The node is the triplet head; the neighbor is the tail.
    Outgoing,
    /// The node is the triplet tail; the neighbor is the head.
    Incoming,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incident {
    pub neighbor: NodeId,
    pub relation: RelationId,
    pub weight: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub head: NodeId,
    pub relation: RelationId,
    pub tail: NodeId,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct CkgGraph {
    node_labels: Vec<String>,
    label_index: HashMap<String, NodeId>,
    relation_labels: Vec<String>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Incident>>,
    neighbor_sets: Vec<Vec<NodeId>>,
}

impl CkgGraph {
    /// Builds a graph from already-filtered triplets: self-loops are dropped and
    /// duplicate (head, relation, tail) triplets keep their largest weight.
    pub fn from_triplets(triplets: impl IntoIterator<Item = CkgTriplet>) -> Result<Self> {
        let mut dedup: BTreeMap<(String, String, String), f64> = BTreeMap::new();
        for t in triplets {
            if !(t.weight.is_finite() && t.weight >= MIN_EDGE_WEIGHT) {
                return Err(Error::Contract(format!(
                    "edge {}-{}-{} has weight {} below {MIN_EDGE_WEIGHT}",
                    t.head, t.relation, t.tail, t.weight
                )));
            }
            if t.head == t.tail {
                continue;
            }
            let w = dedup.entry((t.head, t.relation, t.tail)).or_insert(t.weight);
            if t.weight > *w {
                *w = t.weight;
            }
        }
        if dedup.is_empty() {
            return Err(Error::Config("graph has no edges after filtering".into()));
        }

        let mut labels: Vec<String> = dedup
            .keys()
            .flat_map(|(h, _, t)| [h.clone(), t.clone()])
            .collect();
        labels.sort();
        labels.dedup();
        let label_index: HashMap<String, NodeId> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), NodeId::from_index(i)))
            .collect();
        let mut relations: Vec<String> = dedup.keys().map(|(_, r, _)| r.clone()).collect();
        relations.sort();
        relations.dedup();
        let rel_index: HashMap<&str, RelationId> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), RelationId::from_index(i)))
            .collect();

        let mut edges = Vec::with_capacity(dedup.len());
        let mut adjacency = vec![Vec::new(); labels.len()];
        for ((h, r, t), w) in &dedup {
            let e = Edge {
                head: label_index[h],
                relation: rel_index[r.as_str()],
                tail: label_index[t],
                weight: *w,
            };
            adjacency[e.head.index()].push(Incident {
                neighbor: e.tail,
                relation: e.relation,
                weight: e.weight,
                direction: Direction::Outgoing,
            });
            adjacency[e.tail.index()].push(Incident {
                neighbor: e.head,
                relation: e.relation,
                weight: e.weight,
                direction: Direction::Incoming,
            });
            edges.push(e);
        }
        let neighbor_sets = adjacency
            .iter()
            .map(|inc: &Vec<Incident>| {
                let mut n: Vec<NodeId> = inc.iter().map(|i| i.neighbor).collect();
                n.sort_unstable();
                n.dedup();
                n
            })
            .collect();

        Ok(Self {
            node_labels: labels,
            label_index,
            relation_labels: relations,
            edges,
            adjacency,
            neighbor_sets,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.node_labels[node.index()]
    }

    pub fn labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn node(&self, label: &str) -> Option<NodeId> {
        self.label_index.get(label).copied()
    }

    pub fn relation_label(&self, rel: RelationId) -> &str {
        &self.relation_labels[rel.index()]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    fn check(&self, node: NodeId) -> Result<()> {
        if node.index() < self.node_count() {
            Ok(())
        } else {
            Err(Error::Bounds {
                what: "node",
                index: node.index(),
                len: self.node_count(),
            })
        }
    }

    /// Every edge touching `node`, in both directions.
    pub fn incident(&self, node: NodeId) -> Result<&[Incident]> {
        self.check(node)?;
        Ok(&self.adjacency[node.index()])
    }

    /// Sorted set of nodes adjacent to `node` through any edge, excluding itself.
    pub fn neighbors(&self, node: NodeId) -> Result<&[NodeId]> {
        self.check(node)?;
        Ok(&self.neighbor_sets[node.index()])
    }

    /// Edge counts per relation, used for relation bucketing.
    pub fn relation_frequencies(&self) -> Vec<usize> {
        let mut counts = vec![0; self.relation_count()];
        for e in &self.edges {
            counts[e.relation.index()] += 1;
        }
        counts
    }

    /// Greedy left-to-right longest match of underscore-joined token windows
    /// (up to [`MAX_CONCEPT_WORDS`]) against node labels. Duplicates are kept.
    pub fn extract_concepts<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = MAX_CONCEPT_WORDS.min(tokens.len() - i);
            let hit = (1..=longest).rev().find_map(|len| {
                let key = tokens[i..i + len]
                    .iter()
                    .map(AsRef::as_ref)
                    .collect::<Vec<_>>()
                    .join("_");
                self.node(&key).map(|n| (n, len))
            });
            match hit {
                Some((node, len)) => {
                    out.push(node);
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Exact single-source shortest paths to `target` with edge length
    /// `1 / weight`, traversing edges in either direction.
    pub fn distance_from_target(&self, target: NodeId) -> Result<DistanceMap> {
        let (dist, _) = self.dijkstra(target)?;
        Ok(DistanceMap { target, dist })
    }

    /// A minimum-length path from `source` to `target`; `None` if unreachable.
    pub fn shortest_path(&self, source: NodeId, target: NodeId) -> Result<Option<Vec<NodeId>>> {
        self.check(source)?;
        let (dist, next_hop) = self.dijkstra(target)?;
        if !dist[source.index()].is_finite() {
            return Ok(None);
        }
        let mut path = vec![source];
        let mut cur = source;
        while cur != target {
            cur = next_hop[cur.index()].expect("reachable node has a next hop");
            path.push(cur);
        }
        Ok(Some(path))
    }

    fn dijkstra(&self, target: NodeId) -> Result<(Vec<f64>, Vec<Option<NodeId>>)> {
        self.check(target)?;
        let n = self.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut next_hop: Vec<Option<NodeId>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[target.index()] = 0.0;
        heap.push(Frontier {
            cost: 0.0,
            node: target,
        });
        while let Some(Frontier { cost, node }) = heap.pop() {
            if done[node.index()] {
                continue;
            }
            done[node.index()] = true;
            for inc in &self.adjacency[node.index()] {
                let v = inc.neighbor.index();
                if done[v] {
                    continue;
                }
                let cand = cost + 1.0 / inc.weight;
                let better = cand < dist[v]
                    || (cand == dist[v] && next_hop[v].is_some_and(|h| node < h));
                if better {
                    dist[v] = cand;
                    next_hop[v] = Some(node);
                    heap.push(Frontier {
                        cost: cand,
                        node: inc.neighbor,
                    });
                }
            }
        }
        Ok((dist, next_hop))
    }

    /// Versioned text snapshot: magic line, both vocabulary hashes, then one
    /// `head<TAB>relation<TAB>tail<TAB>weight` line per edge.
    pub fn write_snapshot(&self, mut w: impl Write, word_vocab: &Vocab, kv: &KeywordVocab) -> Result<()> {
        writeln!(w, "{SNAPSHOT_MAGIC}")?;
        writeln!(w, "word_vocab\t{}", word_vocab.content_hash())?;
        writeln!(w, "keyword_vocab\t{}", kv.content_hash())?;
        for e in &self.edges {
            writeln!(
                w,
                "{}\t{}\t{}\t{:?}",
                self.label(e.head),
                self.relation_label(e.relation),
                self.label(e.tail),
                e.weight
            )?;
        }
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path, word_vocab: &Vocab, kv: &KeywordVocab) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(&mut f, word_vocab, kv)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path, word_vocab: &Vocab, kv: &KeywordVocab) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.into()))?;
        let mut lines = std::io::BufReader::new(f).lines();
        let stale = |reason: &str| Error::StaleSnapshot {
            path: path.into(),
            reason: reason.into(),
        };
        if lines.next().transpose()?.as_deref() != Some(SNAPSHOT_MAGIC) {
            return Err(stale("bad magic header"));
        }
        let expect = [
            ("word_vocab", word_vocab.content_hash()),
            ("keyword_vocab", kv.content_hash()),
        ];
        for (key, hash) in expect {
            let line = lines.next().transpose()?.unwrap_or_default();
            if line != format!("{key}\t{hash}") {
                return Err(stale(&format!("{key} hash mismatch")));
            }
        }
        let mut triplets = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            triplets.push(parse_triplet(&path.display().to_string(), i + 4, &line)?);
        }
        Self::from_triplets(triplets)
    }
}

fn parse_triplet(source: &str, line_no: usize, line: &str) -> Result<CkgTriplet> {
    let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
    if fields.len() != 4 {
        return Err(Error::parse(
            source,
            line_no,
            format!("expected 4 tab-separated fields, found {}", fields.len()),
        ));
    }
    let weight: f64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| Error::parse(source, line_no, format!("bad weight `{}`", fields[3])))?;
    if !weight.is_finite() {
        return Err(Error::parse(source, line_no, "non-finite weight"));
    }
    Ok(CkgTriplet {
        head: fields[0].trim().to_lowercase(),
        relation: fields[1].trim().to_string(),
        tail: fields[2].trim().to_lowercase(),
        weight,
    })
}

/// Whether a triplet passes the three admission rules: weight at least 1, one
/// endpoint a keyword, and every word of the other endpoint in the vocabulary.
pub fn admits(t: &CkgTriplet, word_vocab: &Vocab, kv: &KeywordVocab) -> bool {
    let in_words = |label: &str| label.split('_').all(|w| !w.is_empty() && word_vocab.get(w).is_some());
    t.weight >= MIN_EDGE_WEIGHT
        && ((kv.contains_label(&t.head) && in_words(&t.tail))
            || (kv.contains_label(&t.tail) && in_words(&t.head)))
}

/// Reads `head<TAB>relation<TAB>tail<TAB>weight` records (`#` lines are
/// comments) and keeps the admissible ones.
pub fn load_graph(
    source_name: &str,
    reader: impl BufRead,
    word_vocab: &Vocab,
    kv: &KeywordVocab,
) -> Result<CkgGraph> {
    if word_vocab.is_empty() || kv.is_empty() {
        return Err(Error::Config("graph loading needs nonempty vocabularies".into()));
    }
    let mut kept = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let t = parse_triplet(source_name, i + 1, &line)?;
        if admits(&t, word_vocab, kv) {
            kept.push(t);
        }
    }
    CkgGraph::from_triplets(kept)
}

pub fn load_graph_file(path: &Path, word_vocab: &Vocab, kv: &KeywordVocab) -> Result<CkgGraph> {
    let f = std::fs::File::open(path).map_err(|_| Error::MissingArtifact(path.into()))?;
    load_graph(&path.display().to_string(), std::io::BufReader::new(f), word_vocab, kv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: NodeId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, node)
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reciprocal-weight path lengths from every node to one target.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    target: NodeId,
    dist: Vec<f64>,
}

impl DistanceMap {
    pub fn target(&self) -> NodeId {
        self.target
    }

    /// `None` when `node` cannot reach the target.
    pub fn get(&self, node: NodeId) -> Option<f64> {
        self.dist.get(node.index()).copied().filter(|d| d.is_finite())
    }

    /// Like [`get`](Self::get) but unreachable nodes are `+inf`.
    pub fn get_or_inf(&self, node: NodeId) -> f64 {
        self.get(node).unwrap_or(f64::INFINITY)
    }

    pub fn reachable(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.dist
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_finite())
            .map(|(i, d)| (NodeId::from_index(i), *d))
    }
}

/// Per-target distance maps, computed on first use and shared afterwards.
#[derive(Debug, Default)]
pub struct DistanceCache {
    maps: RwLock<HashMap<NodeId, Arc<DistanceMap>>>,
}

impl DistanceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, graph: &CkgGraph, target: NodeId) -> Result<Arc<DistanceMap>> {
        if let Some(m) = self.maps.read().expect("distance cache poisoned").get(&target) {
            return Ok(m.clone());
        }
        let map = Arc::new(graph.distance_from_target(target)?);
        self.maps
            .write()
            .expect("distance cache poisoned")
            .entry(target)
            .or_insert(map.clone());
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(&str, &str, f64)]) -> CkgGraph {
        CkgGraph::from_triplets(
            edges
                .iter()
                .map(|(h, t, w)| CkgTriplet::new(h, "RelatedTo", t, *w)),
        )
        .unwrap()
    }

    fn id(g: &CkgGraph, l: &str) -> NodeId {
        g.node(l).unwrap()
    }

    fn vocabs(words: &[&str], keywords: &[&str]) -> (Vocab, KeywordVocab) {
        let vocab = Vocab::from_tokens(words.iter().copied()).unwrap();
        let kv = KeywordVocab::from_entries(
            keywords
                .iter()
                .map(|k| (vocab.get(k).unwrap(), k.to_string(), 10)),
        )
        .unwrap();
        (vocab, kv)
    }

    #[test]
    fn load_applies_admission_rules() {
        let (vocab, kv) = vocabs(&["having", "lunch", "food", "music", "a", "b"], &["food", "music"]);
        let src = "\
# comment
having_lunch\tHasPrerequisite\tfood\t2.83
a\tRelatedTo\tb\t0.5
music\tRelatedTo\tmusic\t3.0
music\tRelatedTo\tunknown_word\t2.0
a\tRelatedTo\tb\t4.0
music\tRelatedTo\tfood\t1.0
music\tRelatedTo\tfood\t1.5
";
        let g = load_graph("test", src.as_bytes(), &vocab, &kv).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert!(g.node("having_lunch").is_some());
        assert!(g.node("a").is_none());
        let e = g
            .edges()
            .iter()
            .find(|e| g.label(e.head) == "music")
            .unwrap();
        assert_eq!(e.weight, 1.5);
        for e in g.edges() {
            assert!(e.weight >= 1.0 && e.head != e.tail);
        }
    }

    #[test]
    fn malformed_record_reports_line() {
        let (vocab, kv) = vocabs(&["food"], &["food"]);
        let err = load_graph("t.tsv", "food\tRelatedTo\n".as_bytes(), &vocab, &kv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = load_graph("t.tsv", "#x\nfood\tR\tx\tabc\n".as_bytes(), &vocab, &kv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_result_is_config_error() {
        let (vocab, kv) = vocabs(&["food"], &["food"]);
        let err = load_graph("t", "x\tR\ty\t3\n".as_bytes(), &vocab, &kv).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn neighbors_are_symmetric() {
        let g = graph(&[("a", "b", 2.0), ("c", "a", 1.0), ("d", "e", 1.0)]);
        assert_eq!(g.neighbors(id(&g, "a")).unwrap(), &[id(&g, "b"), id(&g, "c")]);
        assert_eq!(g.neighbors(id(&g, "b")).unwrap(), &[id(&g, "a")]);
        assert!(g.neighbors(NodeId(99)).is_err());
    }

    #[test]
    fn concept_matching_prefers_longest() {
        let g = graph(&[("having_lunch", "food", 2.0), ("lunch", "food", 1.0)]);
        let toks = ["i", "love", "having", "lunch"];
        assert_eq!(g.extract_concepts(&toks), vec![id(&g, "having_lunch")]);
        assert_eq!(g.extract_concepts(&["having", "lunch"]), vec![id(&g, "having_lunch")]);
        assert_eq!(
            g.extract_concepts(&["lunch", "food", "lunch"]),
            vec![id(&g, "lunch"), id(&g, "food"), id(&g, "lunch")]
        );
        assert!(g.extract_concepts(&["nothing", "here"]).is_empty());
    }

    #[test]
    fn chain_distances() {
        let g = graph(&[("a", "b", 2.0), ("b", "c", 4.0)]);
        let d = g.distance_from_target(id(&g, "c")).unwrap();
        assert_eq!(d.get(id(&g, "c")), Some(0.0));
        assert_eq!(d.get(id(&g, "b")), Some(0.25));
        assert_eq!(d.get(id(&g, "a")), Some(0.75));
        assert_eq!(
            g.shortest_path(id(&g, "a"), id(&g, "c")).unwrap().unwrap(),
            vec![id(&g, "a"), id(&g, "b"), id(&g, "c")]
        );
        assert_eq!(
            g.shortest_path(id(&g, "a"), id(&g, "a")).unwrap().unwrap(),
            vec![id(&g, "a")]
        );
    }

    #[test]
    fn parallel_paths_prefer_strong_edges() {
        let g = graph(&[("a", "c", 1.0), ("a", "b", 10.0), ("b", "c", 10.0)]);
        let d = g.distance_from_target(id(&g, "c")).unwrap();
        assert!((d.get(id(&g, "a")).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(
            g.shortest_path(id(&g, "a"), id(&g, "c")).unwrap().unwrap(),
            vec![id(&g, "a"), id(&g, "b"), id(&g, "c")]
        );
    }

    #[test]
    fn unreachable_is_absent() {
        let g = graph(&[("a", "b", 2.0), ("c", "d", 2.0)]);
        let d = g.distance_from_target(id(&g, "a")).unwrap();
        assert_eq!(d.get(id(&g, "c")), None);
        assert!(g.shortest_path(id(&g, "c"), id(&g, "a")).unwrap().is_none());
    }

    #[test]
    fn equal_length_paths_break_ties_by_node_id() {
        // a-b-d and a-c-d have equal length; b < c
        let g = graph(&[("a", "b", 2.0), ("a", "c", 2.0), ("b", "d", 2.0), ("c", "d", 2.0)]);
        let p = g.shortest_path(id(&g, "a"), id(&g, "d")).unwrap().unwrap();
        assert_eq!(p, vec![id(&g, "a"), id(&g, "b"), id(&g, "d")]);
    }

    #[test]
    fn snapshot_detects_stale_vocab() {
        let (vocab, kv) = vocabs(&["food", "music"], &["food", "music"]);
        let g = graph(&[("food", "music", 2.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.snap");
        g.save_snapshot(&p, &vocab, &kv).unwrap();
        let back = CkgGraph::load_snapshot(&p, &vocab, &kv).unwrap();
        assert_eq!(back.edges(), g.edges());
        let (vocab2, kv2) = vocabs(&["food", "music", "extra"], &["food", "music"]);
        assert!(matches!(
            CkgGraph::load_snapshot(&p, &vocab2, &kv2),
            Err(Error::StaleSnapshot { .. })
        ));
    }
}
