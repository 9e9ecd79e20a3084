//! Regenerates the two-community fixture under `tests/fixtures/sbm`.

use std::path::Path;

use specformer::graph::{stochastic_block_model, write_node_dataset};

fn main() {
    let graph = stochastic_block_model(&[100, 100], 0.2, 0.01, 16, 0).expect("valid parameters");
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sbm");
    write_node_dataset(&dir, &graph).expect("writable fixture directory");
    println!(
        "{} nodes, {} edges -> {}",
        graph.num_nodes(),
        graph.num_edges(),
        dir.display()
    );
}
