//! Selection diagrams, node-splitting on treatment, and d-separation.
//!
//! A selection node `S -> Z` marks a variable whose mechanism differs between
//! the study and external-control populations. After the treatment is split,
//! the outcome stands for `Y^0`, and a covariate set `X` licenses pooling the
//! two control groups when `Y^0` is d-separated from every selection node
//! given `X`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Parse(String),
    #[error("duplicate node '{0}'")]
    Duplicate(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("graph has a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("selection node '{node}' has parent '{parent}'; selection nodes must be roots")]
    SelectionParent { node: String, parent: String },
    #[error("selection node '{node}' points into '{child}', which is neither a covariate nor the outcome")]
    SelectionTarget { node: String, child: String },
    #[error("expected exactly one {kind} node, found {count}")]
    Arity { kind: &'static str, count: usize },
    #[error("treatment has already been split")]
    AlreadySplit,
    #[error("query sets overlap at '{0}'")]
    Overlap(String),
    #[error("invalid adjustment set: {0}")]
    InvalidSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Covariate,
    Treatment,
    Outcome,
    Selection,
    Intervention,
    Unobserved,
}

/// Plain DAG over `0..n` with d-separation queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds the graph; returns the node sequence of a cycle if there is one.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Dag, Vec<usize>> {
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(u, v) in edges {
            if !children[u].contains(&v) {
                children[u].push(v);
                parents[v].push(u);
            }
        }
        for l in parents.iter_mut().chain(children.iter_mut()) {
            l.sort_unstable();
        }
        let dag = Dag { parents, children };
        match dag.find_cycle() {
            Some(c) => Err(c),
            None => Ok(dag),
        }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.children[u].binary_search(&v).is_ok()
    }

    fn find_cycle(&self) -> Option<Vec<usize>> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let n = self.len();
        let mut state = vec![0u8; n];
        let mut stack_path = Vec::new();
        fn visit(g: &Dag, v: usize, state: &mut [u8], path: &mut Vec<usize>) -> Option<Vec<usize>> {
            state[v] = 1;
            path.push(v);
            for &c in &g.children[v] {
                if state[c] == 1 {
                    let start = path.iter().position(|&u| u == c).unwrap();
                    let mut cycle = path[start..].to_vec();
                    cycle.push(c);
                    return Some(cycle);
                }
                if state[c] == 0 {
                    if let Some(cy) = visit(g, c, state, path) {
                        return Some(cy);
                    }
                }
            }
            path.pop();
            state[v] = 2;
            None
        }
        for v in 0..n {
            if state[v] == 0 {
                if let Some(c) = visit(self, v, &mut state, &mut stack_path) {
                    return Some(c);
                }
            }
        }
        None
    }

    /// `z` together with all its ancestors.
    pub fn ancestral_closure(&self, z: &[usize]) -> Vec<bool> {
        let mut anc = vec![false; self.len()];
        let mut queue: Vec<usize> = z.to_vec();
        while let Some(v) = queue.pop() {
            if !anc[v] {
                anc[v] = true;
                queue.extend_from_slice(&self.parents[v]);
            }
        }
        anc
    }

    /// Nodes d-connected to some node of `a` given `z` (Bayes-ball reachability).
    pub fn reachable(&self, a: &[usize], z: &[usize]) -> Vec<bool> {
        let n = self.len();
        let anc = self.ancestral_closure(z);
        let mut in_z = vec![false; n];
        for &v in z {
            in_z[v] = true;
        }
        // visited[v][0]: arrived from a child (moving up); [1]: from a parent.
        let mut visited = vec![[false; 2]; n];
        let mut reached = vec![false; n];
        let mut queue: VecDeque<(usize, usize)> = a.iter().map(|&v| (v, 0)).collect();
        while let Some((v, dir)) = queue.pop_front() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if !in_z[v] {
                reached[v] = true;
            }
            if dir == 0 && !in_z[v] {
                queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                queue.extend(self.children[v].iter().map(|&c| (c, 1)));
            } else if dir == 1 {
                if !in_z[v] {
                    queue.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
                if anc[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                }
            }
        }
        reached
    }

    /// Whether every node of `a` is d-separated from every node of `b` given `z`.
    pub fn d_separated(&self, a: &[usize], b: &[usize], z: &[usize]) -> bool {
        let reached = self.reachable(a, z);
        !b.iter().any(|&v| reached[v])
    }

    /// A simple path from `a` to `b` that is open given `z`, if one exists.
    pub fn witness(&self, a: &[usize], b: &[usize], z: &[usize]) -> Option<Vec<usize>> {
        let n = self.len();
        let anc = self.ancestral_closure(z);
        let mut in_z = vec![false; n];
        for &v in z {
            in_z[v] = true;
        }
        let mut is_target = vec![false; n];
        for &v in b {
            is_target[v] = true;
        }
        let mut sorted_a = a.to_vec();
        sorted_a.sort_unstable();
        sorted_a.dedup();
        // Breadth-first over open simple paths so the first hit is a shortest one.
        let mut frontier: VecDeque<Vec<usize>> = sorted_a.iter().map(|&s| vec![s]).collect();
        while let Some(path) = frontier.pop_front() {
            let v = *path.last().unwrap();
            if path.len() > 1 && is_target[v] {
                return Some(path);
            }
            let mut nbrs: Vec<usize> = self.parents[v].iter().chain(&self.children[v]).copied().collect();
            nbrs.sort_unstable();
            nbrs.dedup();
            for w in nbrs {
                if path.contains(&w) {
                    continue;
                }
                if path.len() >= 2 {
                    let u = path[path.len() - 2];
                    let collider = self.has_edge(u, v) && self.has_edge(w, v);
                    let open = if collider { anc[v] } else { !in_z[v] };
                    if !open {
                        continue;
                    }
                }
                let mut next = path.clone();
                next.push(w);
                frontier.push_back(next);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
}

/// JSON form: `{"nodes":[{"name":"W1","kind":"covariate"}, ...], "edges":[["S","W1"], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSwig {
    names: Vec<String>,
    kinds: Vec<NodeKind>,
    dag: Dag,
    index: BTreeMap<String, usize>,
    treatment: usize,
    outcome: usize,
    intervention: Option<usize>,
}

/// Result of a d-separation query; `witness` is an open path when connected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Separation {
    pub separated: bool,
    pub witness: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentVerdict {
    pub x_set: Vec<String>,
    pub sufficient: bool,
    /// Open path from a selection node to the outcome, rendered with arrows.
    pub witness: Option<String>,
}

impl fmt::Display for AdjustmentVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set = format!("{{{}}}", self.x_set.join(", "));
        match &self.witness {
            None => write!(f, "{set} is sufficient for adjustment"),
            Some(w) => write!(f, "{set} is not sufficient; open path: {w}"),
        }
    }
}

impl SelectionSwig {
    pub fn from_document(doc: &GraphDocument) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, node) in doc.nodes.iter().enumerate() {
            if index.insert(node.name.clone(), i).is_some() {
                return Err(GraphError::Duplicate(node.name.clone()));
            }
        }
        let lookup = |name: &str| index.get(name).copied().ok_or_else(|| GraphError::UnknownNode(name.to_string()));
        let edges: Vec<(usize, usize)> =
            doc.edges.iter().map(|(u, v)| Ok((lookup(u)?, lookup(v)?))).collect::<Result<_, GraphError>>()?;
        let names: Vec<String> = doc.nodes.iter().map(|n| n.name.clone()).collect();
        let kinds: Vec<NodeKind> = doc.nodes.iter().map(|n| n.kind).collect();
        let dag = Dag::from_edges(names.len(), &edges)
            .map_err(|cycle| GraphError::Cycle(cycle.iter().map(|&i| names[i].clone()).collect()))?;

        let of_kind = |k: NodeKind| (0..names.len()).filter(|&i| kinds[i] == k).collect::<Vec<_>>();
        let single = |k: NodeKind, label: &'static str| -> Result<usize, GraphError> {
            let v = of_kind(k);
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(GraphError::Arity { kind: label, count: v.len() })
            }
        };
        let treatment = single(NodeKind::Treatment, "treatment")?;
        let outcome = single(NodeKind::Outcome, "outcome")?;
        let interventions = of_kind(NodeKind::Intervention);
        if interventions.len() > 1 {
            return Err(GraphError::Arity { kind: "intervention", count: interventions.len() });
        }
        for s in of_kind(NodeKind::Selection) {
            if let Some(&p) = dag.parents(s).first() {
                return Err(GraphError::SelectionParent { node: names[s].clone(), parent: names[p].clone() });
            }
            for &c in dag.children(s) {
                if !matches!(kinds[c], NodeKind::Covariate | NodeKind::Unobserved | NodeKind::Outcome) {
                    return Err(GraphError::SelectionTarget { node: names[s].clone(), child: names[c].clone() });
                }
            }
        }
        Ok(SelectionSwig { names, kinds, dag, index, treatment, outcome, intervention: interventions.first().copied() })
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        Self::from_document(&doc)
    }

    pub fn to_document(&self) -> GraphDocument {
        let nodes = self.names.iter().zip(&self.kinds).map(|(n, &k)| NodeSpec { name: n.clone(), kind: k }).collect();
        let mut edges = Vec::new();
        for u in 0..self.names.len() {
            for &v in self.dag.children(u) {
                edges.push((self.names[u].clone(), self.names[v].clone()));
            }
        }
        GraphDocument { nodes, edges }
    }

    pub fn split_applied(&self) -> bool {
        self.intervention.is_some()
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kind(&self, name: &str) -> Option<NodeKind> {
        self.index.get(name).map(|&i| self.kinds[i])
    }

    pub fn treatment(&self) -> &str {
        &self.names[self.treatment]
    }

    pub fn outcome(&self) -> &str {
        &self.names[self.outcome]
    }

    pub fn intervention(&self) -> Option<&str> {
        self.intervention.map(|i| self.names[i].as_str())
    }

    pub fn nodes_of(&self, kind: NodeKind) -> Vec<&str> {
        (0..self.names.len()).filter(|&i| self.kinds[i] == kind).map(|i| self.names[i].as_str()).collect()
    }

    pub fn parents_of(&self, name: &str) -> Result<Vec<&str>, GraphError> {
        let v = self.id(name)?;
        Ok(self.dag.parents(v).iter().map(|&p| self.names[p].as_str()).collect())
    }

    pub fn children_of(&self, name: &str) -> Result<Vec<&str>, GraphError> {
        let v = self.id(name)?;
        Ok(self.dag.children(v).iter().map(|&c| self.names[c].as_str()).collect())
    }

    fn id(&self, name: &str) -> Result<usize, GraphError> {
        self.index.get(name).copied().ok_or_else(|| GraphError::UnknownNode(name.to_string()))
    }

    fn ids(&self, names: &[&str]) -> Result<Vec<usize>, GraphError> {
        names.iter().map(|n| self.id(n)).collect()
    }

    /// Splits the treatment: it keeps its parents, and a new intervention
    /// node `<A>=0` takes over all of its outgoing edges.
    pub fn node_split(&self) -> Result<SelectionSwig, GraphError> {
        if self.split_applied() {
            return Err(GraphError::AlreadySplit);
        }
        let a = self.treatment;
        let fixed = format!("{}=0", self.names[a]);
        if self.index.contains_key(&fixed) {
            return Err(GraphError::Duplicate(fixed));
        }
        let mut doc = self.to_document();
        for e in doc.edges.iter_mut() {
            if e.0 == self.names[a] {
                e.0 = fixed.clone();
            }
        }
        doc.nodes.push(NodeSpec { name: fixed, kind: NodeKind::Intervention });
        Self::from_document(&doc)
    }

    /// d-separation of `set_a` and `set_b` given `given`; the intervention
    /// node, when present, always counts as conditioned on.
    pub fn d_separated(&self, set_a: &[&str], set_b: &[&str], given: &[&str]) -> Result<Separation, GraphError> {
        let a = self.ids(set_a)?;
        let b = self.ids(set_b)?;
        let mut z = self.ids(given)?;
        for (i, &u) in a.iter().enumerate() {
            if b.contains(&u) || z.contains(&u) {
                return Err(GraphError::Overlap(set_a[i].to_string()));
            }
        }
        for (i, &u) in b.iter().enumerate() {
            if z.contains(&u) {
                return Err(GraphError::Overlap(set_b[i].to_string()));
            }
        }
        if let Some(f) = self.intervention {
            if !z.contains(&f) && !a.contains(&f) && !b.contains(&f) {
                z.push(f);
            }
        }
        if self.dag.d_separated(&a, &b, &z) {
            return Ok(Separation { separated: true, witness: None });
        }
        let path = self.dag.witness(&a, &b, &z).expect("reachable nodes have an open path");
        Ok(Separation { separated: false, witness: Some(path.iter().map(|&i| self.names[i].clone()).collect()) })
    }

    /// Renders a node sequence with edge directions, e.g. `S -> W1 <- U`.
    pub fn render_path(&self, path: &[String]) -> String {
        let mut out = String::new();
        for (k, name) in path.iter().enumerate() {
            if k > 0 {
                let (u, v) = (self.index[&path[k - 1]], self.index[name]);
                out.push_str(if self.dag.has_edge(u, v) { " -> " } else { " <- " });
            }
            out.push_str(name);
        }
        out
    }

    /// Checks `Y^0 _||_ S | X` for all selection nodes `S`. Splits the
    /// treatment first if that has not happened yet.
    pub fn verify_adjustment(&self, x_set: &[&str]) -> Result<AdjustmentVerdict, GraphError> {
        if !self.split_applied() {
            return self.node_split()?.verify_adjustment(x_set);
        }
        let mut names: Vec<String> = Vec::with_capacity(x_set.len());
        for &x in x_set {
            match self.kind(x) {
                None => return Err(GraphError::UnknownNode(x.to_string())),
                Some(NodeKind::Covariate) => names.push(x.to_string()),
                Some(NodeKind::Unobserved) => return Err(GraphError::InvalidSet(format!("'{x}' is unobserved"))),
                Some(k) => return Err(GraphError::InvalidSet(format!("'{x}' is a {k:?} node, not a covariate"))),
            }
        }
        names.sort();
        names.dedup();
        let selection = self.nodes_of(NodeKind::Selection);
        if selection.is_empty() {
            return Ok(AdjustmentVerdict { x_set: names, sufficient: true, witness: None });
        }
        let given: Vec<&str> = names.iter().map(String::as_str).collect();
        let sep = self.d_separated(&selection, &[self.outcome()], &given)?;
        Ok(AdjustmentVerdict {
            x_set: names,
            sufficient: sep.separated,
            witness: sep.witness.map(|p| self.render_path(&p)),
        })
    }

    /// All inclusion-minimal sufficient covariate sets of size at most
    /// `max_size`, by size and then lexicographically. Exhaustive.
    pub fn minimal_adjustment_sets(&self, max_size: usize) -> Result<Vec<Vec<String>>, GraphError> {
        let mut candidates: Vec<&str> = self.nodes_of(NodeKind::Covariate);
        candidates.sort_unstable();
        let p = candidates.len();
        let mut found: Vec<Vec<usize>> = Vec::new();
        for size in 0..=max_size.min(p) {
            let mut combo: Vec<usize> = (0..size).collect();
            loop {
                if !found.iter().any(|m| m.iter().all(|i| combo.contains(i))) {
                    let set: Vec<&str> = combo.iter().map(|&i| candidates[i]).collect();
                    if self.verify_adjustment(&set)?.sufficient {
                        found.push(combo.clone());
                    }
                }
                if !next_combination(&mut combo, p) {
                    break;
                }
            }
        }
        Ok(found.into_iter().map(|c| c.into_iter().map(|i| candidates[i].to_string()).collect()).collect())
    }
}

/// Advances `combo` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swig(nodes: &[(&str, NodeKind)], edges: &[(&str, &str)]) -> Result<SelectionSwig, GraphError> {
        SelectionSwig::from_document(&GraphDocument {
            nodes: nodes.iter().map(|&(n, k)| NodeSpec { name: n.into(), kind: k }).collect(),
            edges: edges.iter().map(|&(u, v)| (u.into(), v.into())).collect(),
        })
    }

    use NodeKind::*;

    fn fig_a() -> SelectionSwig {
        swig(
            &[("S", Selection), ("W1", Covariate), ("W2", Covariate), ("A", Treatment), ("Y", Outcome)],
            &[("S", "W1"), ("W1", "Y"), ("A", "Y"), ("W2", "Y")],
        )
        .unwrap()
    }

    #[test]
    fn chain_and_collider() {
        let g = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(g.d_separated(&[0], &[2], &[1]));
        assert!(!g.d_separated(&[0], &[2], &[]));
        assert_eq!(g.witness(&[0], &[2], &[]), Some(vec![0, 1, 2]));
        let g = Dag::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        assert!(g.d_separated(&[0], &[1], &[]));
        assert!(!g.d_separated(&[0], &[1], &[2]));
    }

    #[test]
    fn cycle_is_reported() {
        let err = swig(&[("A", Treatment), ("Y", Outcome), ("W1", Covariate)], &[("Y", "W1"), ("W1", "Y")]).unwrap_err();
        assert!(matches!(err, GraphError::Cycle(ref c) if c.len() == 3));
    }

    #[test]
    fn construction_rules() {
        let err = swig(&[("S", Selection), ("W", Covariate), ("A", Treatment), ("Y", Outcome)], &[("W", "S")]).unwrap_err();
        assert!(matches!(err, GraphError::SelectionParent { .. }));
        let err = swig(&[("S", Selection), ("A", Treatment), ("Y", Outcome)], &[("S", "A")]).unwrap_err();
        assert!(matches!(err, GraphError::SelectionTarget { .. }));
        let err = swig(&[("A", Treatment), ("B", Treatment), ("Y", Outcome)], &[]).unwrap_err();
        assert_eq!(err, GraphError::Arity { kind: "treatment", count: 2 });
        assert!(swig(
            &[("S1", Selection), ("S2", Selection), ("W1", Covariate), ("W2", Covariate), ("A", Treatment), ("Y", Outcome)],
            &[("S1", "W1"), ("S2", "W2")]
        )
        .is_ok());
    }

    #[test]
    fn split_moves_outgoing_edges() {
        let g = swig(&[("W", Covariate), ("A", Treatment), ("Y", Outcome)], &[("W", "A"), ("A", "Y")]).unwrap();
        let s = g.node_split().unwrap();
        assert_eq!(s.parents_of("A").unwrap(), vec!["W"]);
        assert!(s.children_of("A").unwrap().is_empty());
        assert_eq!(s.children_of("A=0").unwrap(), vec!["Y"]);
        assert_eq!(s.node_split().unwrap_err(), GraphError::AlreadySplit);
        let lone = swig(&[("A", Treatment), ("Y", Outcome)], &[]).unwrap().node_split().unwrap();
        assert!(lone.children_of("A=0").unwrap().is_empty());
    }

    #[test]
    fn figure_a_verdicts() {
        let g = fig_a();
        assert_eq!(g.node_count(), 5);
        assert!(g.verify_adjustment(&["W1"]).unwrap().sufficient);
        let v = g.verify_adjustment(&[]).unwrap();
        assert_eq!(v.witness.as_deref(), Some("S -> W1 -> Y"));
        assert_eq!(g.minimal_adjustment_sets(3).unwrap(), vec![vec!["W1".to_string()]]);
    }

    #[test]
    fn no_selection_nodes_any_set_suffices() {
        let g = swig(&[("W", Covariate), ("A", Treatment), ("Y", Outcome)], &[("W", "Y")]).unwrap();
        assert!(g.verify_adjustment(&[]).unwrap().sufficient);
        assert_eq!(g.minimal_adjustment_sets(1).unwrap(), vec![Vec::<String>::new()]);
    }

    #[test]
    fn collider_breaks_monotonicity() {
        let g = swig(
            &[("S", Selection), ("W", Covariate), ("C", Covariate), ("U", Unobserved), ("A", Treatment), ("Y", Outcome)],
            &[("S", "W"), ("W", "Y"), ("S", "C"), ("U", "C"), ("U", "Y"), ("A", "Y")],
        )
        .unwrap();
        assert!(g.verify_adjustment(&["W"]).unwrap().sufficient);
        let v = g.verify_adjustment(&["C", "W"]).unwrap();
        assert!(!v.sufficient);
        assert_eq!(v.witness.as_deref(), Some("S -> C <- U -> Y"));
        assert!(matches!(g.verify_adjustment(&["U"]), Err(GraphError::InvalidSet(_))));
        assert!(matches!(g.verify_adjustment(&["Y"]), Err(GraphError::InvalidSet(_))));
    }

    #[test]
    fn intervention_blocks_paths_through_treatment() {
        // W -> A -> Y and S -> W: after the split A=0 -> Y has no parent link to W.
        let g = swig(
            &[("S", Selection), ("W", Covariate), ("A", Treatment), ("Y", Outcome)],
            &[("S", "W"), ("W", "A"), ("A", "Y")],
        )
        .unwrap();
        assert!(g.verify_adjustment(&[]).unwrap().sufficient);
    }

    #[test]
    fn json_round_trip() {
        let g = fig_a();
        let text = serde_json::to_string(&g.to_document()).unwrap();
        assert_eq!(SelectionSwig::from_json(&text).unwrap(), g);
        assert!(matches!(SelectionSwig::from_json("{"), Err(GraphError::Parse(_))));
    }

    #[test]
    fn combinations_enumerate_in_order() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }
}
