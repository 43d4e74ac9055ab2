//! s-t max-flow / min-cut with Boykov–Kolmogorov search-tree reuse.
//!
//! [`FlowGraph`] is a plain description (terminal links plus pairwise arcs);
//! [`max_flow`] copies it into residual form and grows two search trees, one
//! from the source and one from the sink, augmenting whenever they touch and
//! re-adopting orphaned subtrees instead of restarting the search.

use std::collections::VecDeque;

/// Terminal or non-terminal endpoint of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Source,
    Sink,
    Node(usize),
}

/// Capacitated directed graph over `n` non-terminal nodes plus source and sink.
#[derive(Debug, Clone, Default)]
pub struct FlowGraph {
    /// Per node: (source -> node, node -> sink) capacities.
    tlinks: Vec<(f64, f64)>,
    /// (i, j, capacity i->j, capacity j->i).
    edges: Vec<(usize, usize, f64, f64)>,
    /// Capacity of direct source -> sink arcs.
    direct: f64,
}

impl FlowGraph {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            tlinks: vec![(0.0, 0.0); num_nodes],
            edges: Vec::new(),
            direct: 0.0,
        }
    }

    /// Non-terminal node count.
    pub fn num_inner_nodes(&self) -> usize {
        self.tlinks.len()
    }

    /// Node count including both terminals.
    pub fn num_nodes(&self) -> usize {
        self.tlinks.len() + 2
    }

    pub fn add_tlinks(&mut self, node: usize, source_cap: f64, sink_cap: f64) {
        debug_assert!(source_cap >= 0.0 && sink_cap >= 0.0);
        let t = &mut self.tlinks[node];
        t.0 += source_cap;
        t.1 += sink_cap;
    }

    /// Adds a pair of opposite arcs between two non-terminal nodes.
    pub fn add_pair(&mut self, i: usize, j: usize, cap_ij: f64, cap_ji: f64) {
        debug_assert!(cap_ij >= 0.0 && cap_ji >= 0.0 && i != j);
        self.edges.push((i, j, cap_ij, cap_ji));
    }

    /// Adds one directed arc between arbitrary endpoints. Arcs into the
    /// source or out of the sink never carry s-t flow and are dropped.
    pub fn add_arc(&mut self, from: NodeRef, to: NodeRef, cap: f64) {
        match (from, to) {
            (NodeRef::Source, NodeRef::Sink) => self.direct += cap,
            (NodeRef::Source, NodeRef::Node(j)) => self.add_tlinks(j, cap, 0.0),
            (NodeRef::Node(i), NodeRef::Sink) => self.add_tlinks(i, 0.0, cap),
            (NodeRef::Node(i), NodeRef::Node(j)) if i != j => self.add_pair(i, j, cap, 0.0),
            _ => {}
        }
    }

    pub fn tlinks(&self, node: usize) -> (f64, f64) {
        self.tlinks[node]
    }

    pub fn pairs(&self) -> &[(usize, usize, f64, f64)] {
        &self.edges
    }

    /// Total capacity from `i` to `j` over all pair entries.
    pub fn capacity(&self, i: usize, j: usize) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b, ab, ba)| {
                if (a, b) == (i, j) {
                    ab
                } else if (a, b) == (j, i) {
                    ba
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn direct_capacity(&self) -> f64 {
        self.direct
    }
}

/// Result of a min-cut: flow value and, per non-terminal node, whether it is on the source side.
#[derive(Debug, Clone, PartialEq)]
pub struct MinCut {
    pub flow: f64,
    pub source_side: Vec<bool>,
}

pub fn max_flow(graph: &FlowGraph) -> MinCut {
    let mut solver = Solver::new(graph);
    solver.run();
    let source_side = (0..solver.nodes.len())
        .map(|i| solver.nodes[i].tree == Tree::Source && solver.nodes[i].parent != Parent::None)
        .collect();
    MinCut {
        flow: solver.flow,
        source_side,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tree {
    Source,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Parent {
    None,
    Terminal,
    Orphan,
    Arc(usize),
}

#[derive(Debug, Clone)]
struct Node {
    first: usize,
    tr_cap: f64,
    parent: Parent,
    tree: Tree,
    ts: u64,
    dist: u64,
    active: bool,
}

const NO_ARC: usize = usize::MAX;

struct Solver {
    nodes: Vec<Node>,
    /// Arc `a` and its reverse `a ^ 1` are stored adjacently.
    head: Vec<usize>,
    next: Vec<usize>,
    r_cap: Vec<f64>,
    flow: f64,
    active: VecDeque<usize>,
    orphans: VecDeque<usize>,
    time: u64,
}

impl Solver {
    fn new(graph: &FlowGraph) -> Self {
        let n = graph.tlinks.len();
        let mut nodes: Vec<Node> = graph
            .tlinks
            .iter()
            .map(|&(s, t)| Node {
                first: NO_ARC,
                tr_cap: s - t,
                parent: Parent::None,
                tree: Tree::Source,
                ts: 0,
                dist: 0,
                active: false,
            })
            .collect();
        let mut flow = graph.direct + graph.tlinks.iter().map(|&(s, t)| s.min(t)).sum::<f64>();
        let m = graph.edges.len() * 2;
        let mut head = Vec::with_capacity(m);
        let mut next = Vec::with_capacity(m);
        let mut r_cap = Vec::with_capacity(m);
        for &(i, j, cij, cji) in &graph.edges {
            let a = head.len();
            head.push(j);
            next.push(nodes[i].first);
            r_cap.push(cij);
            nodes[i].first = a;
            head.push(i);
            next.push(nodes[j].first);
            r_cap.push(cji);
            nodes[j].first = a + 1;
        }
        let mut active = VecDeque::new();
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.tr_cap != 0.0 {
                node.tree = if node.tr_cap > 0.0 {
                    Tree::Source
                } else {
                    Tree::Sink
                };
                node.parent = Parent::Terminal;
                node.dist = 1;
                node.active = true;
                active.push_back(i);
            }
        }
        if n == 0 {
            flow = graph.direct;
        }
        Self {
            nodes,
            head,
            next,
            r_cap,
            flow,
            active,
            orphans: VecDeque::new(),
            time: 0,
        }
    }

    fn activate(&mut self, i: usize) {
        if !self.nodes[i].active {
            self.nodes[i].active = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<usize> {
        while let Some(i) = self.active.pop_front() {
            self.nodes[i].active = false;
            if self.nodes[i].parent != Parent::None {
                return Some(i);
            }
        }
        None
    }

    fn run(&mut self) {
        let mut current: Option<usize> = None;
        loop {
            let i = match current.filter(|&i| self.nodes[i].parent != Parent::None) {
                Some(i) => i,
                None => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };
            current = None;

            let Some(bridge) = self.grow(i) else { continue };
            // Keep expanding from this node after the augmentation.
            current = Some(i);
            self.time += 1;
            self.augment(bridge);
            self.adopt();
        }
    }

    /// Expands the tree containing `i`; returns an arc from the source tree into the sink tree.
    fn grow(&mut self, i: usize) -> Option<usize> {
        let tree = self.nodes[i].tree;
        let mut a = self.nodes[i].first;
        while a != NO_ARC {
            let j = self.head[a];
            let cap = match tree {
                Tree::Source => self.r_cap[a],
                Tree::Sink => self.r_cap[a ^ 1],
            };
            if cap > 0.0 {
                if self.nodes[j].parent == Parent::None {
                    self.nodes[j].tree = tree;
                    self.nodes[j].parent = Parent::Arc(a ^ 1);
                    self.nodes[j].ts = self.nodes[i].ts;
                    self.nodes[j].dist = self.nodes[i].dist + 1;
                    self.activate(j);
                } else if self.nodes[j].tree != tree {
                    return Some(match tree {
                        Tree::Source => a,
                        Tree::Sink => a ^ 1,
                    });
                } else if self.nodes[j].ts <= self.nodes[i].ts
                    && self.nodes[j].dist > self.nodes[i].dist
                {
                    // Shorten the path to the terminal.
                    self.nodes[j].parent = Parent::Arc(a ^ 1);
                    self.nodes[j].ts = self.nodes[i].ts;
                    self.nodes[j].dist = self.nodes[i].dist + 1;
                }
            }
            a = self.next[a];
        }
        None
    }

    fn augment(&mut self, bridge: usize) {
        let mut bottleneck = self.r_cap[bridge];
        // Source side: walk from the bridge tail towards the source.
        let mut i = self.head[bridge ^ 1];
        while let Parent::Arc(a) = self.nodes[i].parent {
            bottleneck = bottleneck.min(self.r_cap[a ^ 1]);
            i = self.head[a];
        }
        bottleneck = bottleneck.min(self.nodes[i].tr_cap);
        // Sink side.
        let mut i = self.head[bridge];
        while let Parent::Arc(a) = self.nodes[i].parent {
            bottleneck = bottleneck.min(self.r_cap[a]);
            i = self.head[a];
        }
        bottleneck = bottleneck.min(-self.nodes[i].tr_cap);

        self.r_cap[bridge ^ 1] += bottleneck;
        self.r_cap[bridge] -= bottleneck;

        let mut i = self.head[bridge ^ 1];
        while let Parent::Arc(a) = self.nodes[i].parent {
            self.r_cap[a] += bottleneck;
            self.r_cap[a ^ 1] -= bottleneck;
            if self.r_cap[a ^ 1] <= 0.0 {
                self.r_cap[a ^ 1] = 0.0;
                self.make_orphan(i);
            }
            i = self.head[a];
        }
        self.nodes[i].tr_cap -= bottleneck;
        if self.nodes[i].tr_cap <= 0.0 {
            self.nodes[i].tr_cap = 0.0;
            self.make_orphan(i);
        }

        let mut i = self.head[bridge];
        while let Parent::Arc(a) = self.nodes[i].parent {
            self.r_cap[a ^ 1] += bottleneck;
            self.r_cap[a] -= bottleneck;
            if self.r_cap[a] <= 0.0 {
                self.r_cap[a] = 0.0;
                self.make_orphan(i);
            }
            i = self.head[a];
        }
        self.nodes[i].tr_cap += bottleneck;
        if self.nodes[i].tr_cap >= 0.0 {
            self.nodes[i].tr_cap = 0.0;
            self.make_orphan(i);
        }

        self.flow += bottleneck;
    }

    fn make_orphan(&mut self, i: usize) {
        self.nodes[i].parent = Parent::Orphan;
        self.orphans.push_front(i);
    }

    fn adopt(&mut self) {
        while let Some(i) = self.orphans.pop_front() {
            self.process_orphan(i);
        }
    }

    /// Walks parents from `j`; returns the distance to a terminal or `None` if the path hits an orphan.
    fn origin_distance(&self, mut j: usize) -> Option<u64> {
        let mut d = 0;
        loop {
            if self.nodes[j].ts == self.time {
                return Some(d + self.nodes[j].dist);
            }
            d += 1;
            match self.nodes[j].parent {
                Parent::Terminal => return Some(d),
                Parent::Orphan | Parent::None => return None,
                Parent::Arc(a) => j = self.head[a],
            }
        }
    }

    fn process_orphan(&mut self, i: usize) {
        let tree = self.nodes[i].tree;
        let mut best: Option<(usize, u64)> = None;
        let mut next_arc = self.nodes[i].first;
        while next_arc != NO_ARC {
            let a0 = next_arc;
            next_arc = self.next[a0];
            // Residual must point from the candidate parent towards `i` (source tree)
            // or from `i` towards it (sink tree).
            let cap = match tree {
                Tree::Source => self.r_cap[a0 ^ 1],
                Tree::Sink => self.r_cap[a0],
            };
            let j = self.head[a0];
            if cap <= 0.0 || self.nodes[j].tree != tree || self.nodes[j].parent == Parent::None {
                continue;
            }
            let Some(d) = self.origin_distance(j) else {
                continue;
            };
            if best.is_none_or(|(_, dmin)| d < dmin) {
                best = Some((a0, d));
            }
            // Stamp the verified path so later checks stop early.
            let mut k = j;
            let mut dk = d;
            while self.nodes[k].ts != self.time {
                self.nodes[k].ts = self.time;
                self.nodes[k].dist = dk;
                dk -= 1;
                match self.nodes[k].parent {
                    Parent::Arc(a) => k = self.head[a],
                    _ => break,
                }
            }
        }

        if let Some((a0, d)) = best {
            self.nodes[i].parent = Parent::Arc(a0);
            self.nodes[i].ts = self.time;
            self.nodes[i].dist = d + 1;
            return;
        }

        // No valid parent: `i` becomes free; neighbours may re-grow into it.
        let mut next_arc = self.nodes[i].first;
        while next_arc != NO_ARC {
            let a0 = next_arc;
            next_arc = self.next[a0];
            let j = self.head[a0];
            if self.nodes[j].tree != tree || self.nodes[j].parent == Parent::None {
                continue;
            }
            let cap = match tree {
                Tree::Source => self.r_cap[a0 ^ 1],
                Tree::Sink => self.r_cap[a0],
            };
            if cap > 0.0 {
                self.activate(j);
            }
            if let Parent::Arc(a) = self.nodes[j].parent {
                if self.head[a] == i {
                    self.make_orphan(j);
                }
            }
        }
        self.nodes[i].parent = Parent::None;
    }
}
