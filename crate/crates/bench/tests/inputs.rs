use keyguide::NodeId;
use keyguide_bench::random_graph;

#[test]
fn random_graphs_are_connected_and_seeded() {
    let g = random_graph(200, 3, 5);
    assert_eq!(g.node_count(), 200);
    let d = g.distance_from_target(NodeId::from_index(0)).unwrap();
    assert_eq!(d.reachable().count(), 200);
    let h = random_graph(200, 3, 5);
    assert_eq!(g.edges(), h.edges());
}
