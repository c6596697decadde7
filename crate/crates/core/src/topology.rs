//! Tree graphs carrying functional tensor networks, including the
//! wavelet-hierarchical (FHT-W) trees for 1D and 2D lattices.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{FhtwError, Result};
use crate::wavelet::ScaleLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeKind {
    /// carries the physical leg of `variable`
    External { variable: usize },
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    #[serde(flatten)]
    pub kind: NodeKind,
    pub name: String,
}

impl NodeInfo {
    pub fn variable(&self) -> Option<usize> {
        match self.kind {
            NodeKind::External { variable } => Some(variable),
            NodeKind::Internal => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub from: usize,
    pub to: usize,
}

impl DirectedEdge {
    pub fn new(from: usize, to: usize) -> Self {
        DirectedEdge { from, to }
    }

    pub fn reversed(self) -> Self {
        DirectedEdge {
            from: self.to,
            to: self.from,
        }
    }
}

/// A rooted tree whose external nodes carry the variables `0..d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeTopology {
    nodes: Vec<NodeInfo>,
    edges: Vec<(usize, usize)>,
    root: usize,
    // derived
    neighbors: Vec<Vec<(usize, usize)>>,
    parent: Vec<Option<(usize, usize)>>,
    children: Vec<Vec<(usize, usize)>>,
    postorder: Vec<usize>,
    var_node: Vec<usize>,
}

impl TreeTopology {
    pub fn new(nodes: Vec<NodeInfo>, edges: Vec<(usize, usize)>, root: usize) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(FhtwError::invalid("a tree needs at least one node"));
        }
        if root >= n {
            return Err(FhtwError::invalid(format!("root {root} out of range")));
        }
        if edges.len() + 1 != n {
            return Err(FhtwError::invalid(format!(
                "a tree on {n} nodes has {} edges, got {}",
                n - 1,
                edges.len()
            )));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (id, &(a, b)) in edges.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(FhtwError::invalid(format!("bad edge ({a}, {b})")));
            }
            neighbors[a].push((b, id));
            neighbors[b].push((a, id));
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        let mut var_node = vec![usize::MAX; n];
        let mut d = 0;
        for (id, node) in nodes.iter().enumerate() {
            if let Some(v) = node.variable() {
                if v >= n || var_node[v] != usize::MAX {
                    return Err(FhtwError::invalid(format!("variable {v} bound twice or out of range")));
                }
                var_node[v] = id;
                d += 1;
            }
        }
        var_node.truncate(d);
        if var_node.iter().any(|&x| x == usize::MAX) {
            return Err(FhtwError::invalid("external variables must cover 0..d exactly"));
        }

        // BFS from the root for parents; with |E| = |V| - 1, reaching every
        // node certifies connectivity and acyclicity.
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(w, e) in &neighbors[u] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((u, e));
                    children[u].push((w, e));
                    queue.push_back(w);
                }
            }
        }
        if order.len() != n {
            return Err(FhtwError::invalid("edge list does not form a connected tree"));
        }
        order.reverse();

        Ok(TreeTopology {
            nodes,
            edges,
            root,
            neighbors,
            parent,
            children,
            postorder: order,
            var_node,
        })
    }

    /// Chain of `d` external nodes (a tensor-train layout), rooted at variable 0.
    pub fn chain(d: usize) -> Result<Self> {
        let nodes = (0..d)
            .map(|v| NodeInfo {
                kind: NodeKind::External { variable: v },
                name: format!("x{v}"),
            })
            .collect();
        let edges = (1..d).map(|v| (v - 1, v)).collect();
        Self::new(nodes, edges, 0)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of external nodes (= variables).
    pub fn dim(&self) -> usize {
        self.var_node.len()
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &NodeInfo {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn variable_node(&self, variable: usize) -> usize {
        self.var_node[variable]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// `(neighbor, edge id)` pairs.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.neighbors[node]
    }

    pub fn parent(&self, node: usize) -> Option<(usize, usize)> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[(usize, usize)] {
        &self.children[node]
    }

    /// Leaves-to-root order; every node appears after all of its children.
    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    /// Incident edges in leg order: parent edge first, then children by node id.
    pub fn incident(&self, node: usize) -> Vec<(usize, usize)> {
        self.parent[node]
            .iter()
            .copied()
            .chain(self.children[node].iter().copied())
            .collect()
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.neighbors
            .get(a)?
            .iter()
            .find(|&&(w, _)| w == b)
            .map(|&(_, e)| e)
    }

    /// Whether `to` is the parent of `from` under the configured root.
    pub fn points_to_parent(&self, e: DirectedEdge) -> bool {
        matches!(self.parent[e.from], Some((p, _)) if p == e.to)
    }

    fn check_edge(&self, e: DirectedEdge) -> Result<usize> {
        self.edge_id(e.from, e.to).ok_or_else(|| {
            FhtwError::invalid(format!("({}, {}) is not an edge of the tree", e.from, e.to))
        })
    }

    /// Nodes of the component containing `e.from` once `e` is deleted, with
    /// hop distance from `e.from`.
    fn component(&self, e: DirectedEdge) -> Vec<(usize, usize)> {
        let mut out = vec![(e.from, 0)];
        let mut queue = VecDeque::from([(e.from, e.to, 0usize)]);
        while let Some((u, came_from, dist)) = queue.pop_front() {
            for &(w, _) in &self.neighbors[u] {
                if w != came_from {
                    out.push((w, dist + 1));
                    queue.push_back((w, u, dist + 1));
                }
            }
        }
        out
    }

    /// Variables on the `from` side of a directed edge, ascending.
    pub fn subtree_variables(&self, e: DirectedEdge) -> Result<Vec<usize>> {
        self.check_edge(e)?;
        let mut vars: Vec<usize> = self
            .component(e)
            .into_iter()
            .filter_map(|(u, _)| self.nodes[u].variable())
            .collect();
        vars.sort_unstable();
        Ok(vars)
    }

    /// Up to `count` variables of the `from` side closest to `e.to` (ties by
    /// ascending variable index), returned in canonical ascending order.
    pub fn interface_variables(&self, e: DirectedEdge, count: usize) -> Result<Vec<usize>> {
        self.check_edge(e)?;
        let mut found: Vec<(usize, usize)> = self
            .component(e)
            .into_iter()
            .filter_map(|(u, dist)| self.nodes[u].variable().map(|v| (dist, v)))
            .collect();
        found.sort_unstable();
        let mut vars: Vec<usize> = found.into_iter().take(count).map(|(_, v)| v).collect();
        vars.sort_unstable();
        Ok(vars)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                serde_json::json!({
                    "id": id,
                    "kind": if n.variable().is_some() { "external" } else { "internal" },
                    "variable": n.variable(),
                    "label": n.name,
                })
            })
            .collect();
        serde_json::json!({
            "root": self.root,
            "external_count": self.dim(),
            "nodes": nodes,
            "edges": self.edges,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let bad = |why: &str| FhtwError::data("topology", why.to_string());
        let root = value["root"].as_u64().ok_or_else(|| bad("missing root"))? as usize;
        let raw_nodes = value["nodes"].as_array().ok_or_else(|| bad("missing nodes"))?;
        let mut nodes = Vec::with_capacity(raw_nodes.len());
        for (i, n) in raw_nodes.iter().enumerate() {
            if n["id"].as_u64() != Some(i as u64) {
                return Err(bad("node ids must be 0..n in order"));
            }
            let name = n["label"].as_str().unwrap_or_default().to_string();
            let kind = match n["kind"].as_str() {
                Some("external") => NodeKind::External {
                    variable: n["variable"].as_u64().ok_or_else(|| bad("external node without variable"))?
                        as usize,
                },
                Some("internal") => NodeKind::Internal,
                _ => return Err(bad("unknown node kind")),
            };
            nodes.push(NodeInfo { kind, name });
        }
        let edges: Vec<(usize, usize)> = serde_json::from_value(value["edges"].clone())
            .map_err(|e| FhtwError::data("topology edges", e.to_string()))?;
        Self::new(nodes, edges, root)
    }
}

/// Builds the FHT-W tree on `2^levels` wavelet coordinates.
///
/// External node `v[k,l]` has id equal to the canonical flat index of
/// `c[k,l]` and carries that variable; internal nodes `w[k,l]`, one per
/// `l in 0..=levels-2` and `k in 1..=2^l`, follow in level-major order.
/// `w[k,l]` joins `v[k,l]` to its two children `v[2k-1,l+1]` and `v[2k,l+1]`.
/// The root is `v[1,-1]`.
pub fn build_tree_1d(levels: u32) -> Result<TreeTopology> {
    if levels < 1 {
        return Err(FhtwError::invalid("tree needs at least one level"));
    }
    if levels > 30 {
        return Err(FhtwError::invalid(format!("{levels} levels is too many")));
    }
    let d = 1usize << levels;
    let mut nodes: Vec<NodeInfo> = (0..d)
        .map(|v| NodeInfo {
            kind: NodeKind::External { variable: v },
            name: format!("v{}", bracket(ScaleLabel::from_flat(v))),
        })
        .collect();
    let mut edges = vec![(1usize, 0usize)];
    for l in 0..levels.saturating_sub(1) {
        for k in 1..=(1usize << l) {
            let w = nodes.len();
            nodes.push(NodeInfo {
                kind: NodeKind::Internal,
                name: format!("w[{k},{l}]"),
            });
            let v = ScaleLabel::new(k, l as i32).flat();
            let left = ScaleLabel::new(2 * k - 1, l as i32 + 1).flat();
            let right = ScaleLabel::new(2 * k, l as i32 + 1).flat();
            edges.push((w, v));
            edges.push((w, left));
            edges.push((w, right));
        }
    }
    TreeTopology::new(nodes, edges, 0)
}

/// FHT-W tree for an `m x m` grid with `m = 2^levels`: the 1D tree with
/// `2 * levels` scale levels, bound to the 2D canonical flattening.
pub fn build_tree_2d(levels: u32) -> Result<TreeTopology> {
    if levels < 1 {
        return Err(FhtwError::invalid("tree needs at least one level"));
    }
    build_tree_1d(2 * levels)
}

fn bracket(label: ScaleLabel) -> String {
    format!("[{},{}]", label.k, label.l)
}

/// Per-edge target ranks and sketch sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankBudget {
    pub ranks: Vec<usize>,
    pub sketch_sizes: Vec<usize>,
}

impl RankBudget {
    pub fn uniform(tree: &TreeTopology, rank: usize, sketch_size: usize) -> Result<Self> {
        check_pair(rank, sketch_size)?;
        Ok(RankBudget {
            ranks: vec![rank; tree.num_edges()],
            sketch_sizes: vec![sketch_size; tree.num_edges()],
        })
    }

    pub fn with_override(mut self, edge: usize, rank: usize, sketch_size: usize) -> Result<Self> {
        check_pair(rank, sketch_size)?;
        if edge >= self.ranks.len() {
            return Err(FhtwError::invalid(format!("edge {edge} out of range")));
        }
        self.ranks[edge] = rank;
        self.sketch_sizes[edge] = sketch_size;
        Ok(self)
    }
}

fn check_pair(rank: usize, sketch_size: usize) -> Result<()> {
    if rank == 0 {
        return Err(FhtwError::invalid("ranks must be positive"));
    }
    if sketch_size <= rank {
        return Err(FhtwError::invalid(format!(
            "sketch size {sketch_size} must exceed rank {rank}"
        )));
    }
    Ok(())
}
