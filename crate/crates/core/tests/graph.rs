use extcontrol::graph::{GraphDocument, GraphError, NodeKind, NodeSpec, SelectionSwig};

use NodeKind::*;

fn swig(nodes: &[(&str, NodeKind)], edges: &[(&str, &str)]) -> SelectionSwig {
    SelectionSwig::from_document(&GraphDocument {
        nodes: nodes.iter().map(|&(n, k)| NodeSpec { name: n.into(), kind: k }).collect(),
        edges: edges.iter().map(|&(u, v)| (u.into(), v.into())).collect(),
    })
    .unwrap()
}

fn strings(sets: &[&[&str]]) -> Vec<Vec<String>> {
    sets.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect()
}

#[test]
fn only_the_imbalanced_cause_needs_adjustment() {
    // W1 and W2 both cause Y; only W1 differs across sources.
    let g = swig(
        &[("S_W1", Selection), ("W1", Covariate), ("W2", Covariate), ("A", Treatment), ("Y", Outcome)],
        &[("S_W1", "W1"), ("W1", "Y"), ("W2", "Y"), ("A", "Y"), ("W1", "A"), ("W2", "A")],
    );
    assert!(g.verify_adjustment(&["W1"]).unwrap().sufficient);
    assert!(g.verify_adjustment(&["W1", "W2"]).unwrap().sufficient);
    assert!(!g.verify_adjustment(&["W2"]).unwrap().sufficient);
    assert_eq!(g.minimal_adjustment_sets(2).unwrap(), strings(&[&["W1"]]));
}

#[test]
fn mismeasured_proxy_cannot_close_the_path() {
    // S_W1 -> W1 (unobserved) -> Y, W1 -> W1* <- S_W1*: conditioning on the
    // proxy W1* opens S_W1* -> W1* <- W1 -> Y and leaves S_W1 -> W1 -> Y open.
    let g = swig(
        &[
            ("S_W1", Selection),
            ("S_W1s", Selection),
            ("W1", Unobserved),
            ("W1s", Covariate),
            ("A", Treatment),
            ("Y", Outcome),
        ],
        &[("S_W1", "W1"), ("S_W1s", "W1s"), ("W1", "W1s"), ("W1", "Y"), ("A", "Y")],
    );
    let empty = g.verify_adjustment(&[]).unwrap();
    assert!(!empty.sufficient);
    assert_eq!(empty.witness.as_deref(), Some("S_W1 -> W1 -> Y"));
    assert!(!g.verify_adjustment(&["W1s"]).unwrap().sufficient);
    assert!(g.minimal_adjustment_sets(3).unwrap().is_empty());
}

#[test]
fn selection_into_the_outcome_is_never_adjustable() {
    let g = swig(
        &[("S_Y", Selection), ("W", Covariate), ("A", Treatment), ("Y", Outcome)],
        &[("S_Y", "Y"), ("W", "Y"), ("A", "Y")],
    );
    let v = g.verify_adjustment(&["W"]).unwrap();
    assert!(!v.sufficient);
    assert_eq!(v.witness.as_deref(), Some("S_Y -> Y"));
}

#[test]
fn treatment_paths_are_cut_by_the_split() {
    // Before splitting, S -> W -> A -> Y would be open; on the SWIG the
    // outcome depends on the fixed value a = 0 instead of A.
    let g = swig(
        &[("S", Selection), ("W", Covariate), ("A", Treatment), ("Y", Outcome)],
        &[("S", "W"), ("W", "A"), ("A", "Y")],
    );
    let split = g.node_split().unwrap();
    assert!(split.split_applied());
    assert!(split.verify_adjustment(&[]).unwrap().sufficient);
    let raw = g.d_separated(&["S"], &["Y"], &[]).unwrap();
    assert!(!raw.separated);
}

#[test]
fn several_minimal_sets_in_lexicographic_order() {
    // S -> W1 -> W2 -> Y and S -> W3 -> Y: either W1 or W2 blocks the chain.
    let g = swig(
        &[("S", Selection), ("W1", Covariate), ("W2", Covariate), ("W3", Covariate), ("A", Treatment), ("Y", Outcome)],
        &[("S", "W1"), ("W1", "W2"), ("W2", "Y"), ("S", "W3"), ("W3", "Y"), ("A", "Y")],
    );
    assert_eq!(g.minimal_adjustment_sets(3).unwrap(), strings(&[&["W1", "W3"], &["W2", "W3"]]));
    assert_eq!(g.minimal_adjustment_sets(1).unwrap(), Vec::<Vec<String>>::new());
}

#[test]
fn malformed_documents_are_rejected() {
    assert!(matches!(SelectionSwig::from_json("[]"), Err(GraphError::Parse(_))));
    let text = r#"{"nodes":[{"name":"A","kind":"treatment"},{"name":"Y","kind":"outcome"}],"edges":[["A","Z"]]}"#;
    assert_eq!(SelectionSwig::from_json(text).unwrap_err(), GraphError::UnknownNode("Z".into()));
    let text = r#"{"nodes":[{"name":"A","kind":"treatment"},{"name":"A","kind":"outcome"}],"edges":[]}"#;
    assert_eq!(SelectionSwig::from_json(text).unwrap_err(), GraphError::Duplicate("A".into()));
    let text = r#"{"nodes":[{"name":"A","kind":"treatment"}],"edges":[]}"#;
    assert_eq!(SelectionSwig::from_json(text).unwrap_err(), GraphError::Arity { kind: "outcome", count: 0 });
}
