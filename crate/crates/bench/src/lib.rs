//! Benchmark fixtures.

use extcontrol::graph::{GraphDocument, NodeKind, NodeSpec, SelectionSwig};
use extcontrol::simulation::{self, DgpConfig};
use extcontrol::TrialDataset;

pub fn dataset(n_rct: usize, n_ec: usize) -> TrialDataset {
    simulation::generate(&DgpConfig { n_rct, n_ec, nonlinear: true, seed: 11, ..DgpConfig::default() }).unwrap()
}

/// Selection nodes on every other covariate of a chain `W1 -> ... -> Wk`,
/// each covariate also pointing at `Y`.
pub fn chain_swig(k: usize) -> SelectionSwig {
    let mut nodes = vec![
        NodeSpec { name: "A".into(), kind: NodeKind::Treatment },
        NodeSpec { name: "Y".into(), kind: NodeKind::Outcome },
    ];
    let mut edges = vec![("A".to_string(), "Y".to_string())];
    for i in 1..=k {
        let w = format!("W{i}");
        nodes.push(NodeSpec { name: w.clone(), kind: NodeKind::Covariate });
        edges.push((w.clone(), "Y".into()));
        if i > 1 {
            edges.push((format!("W{}", i - 1), w.clone()));
        }
        if i % 2 == 1 {
            let s = format!("S{i}");
            nodes.push(NodeSpec { name: s.clone(), kind: NodeKind::Selection });
            edges.push((s, w));
        }
    }
    SelectionSwig::from_document(&GraphDocument { nodes, edges }).unwrap()
}
