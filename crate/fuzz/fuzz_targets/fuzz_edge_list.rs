//! The edge-list parser must never panic, and accepted graphs must
//! survive a write/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use netnewton::topology::Graph;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(graph) = Graph::parse_edge_list(text) {
            let rewritten = graph.to_edge_list();
            let reparsed = Graph::parse_edge_list(&rewritten)
                .expect("serialized edge list must parse");
            assert_eq!(graph.n(), reparsed.n());
            assert_eq!(graph.to_edge_list(), reparsed.to_edge_list());
        }
    }
});
