//! Substructure partitions, the multilevel hierarchy, and interface
//! classification into globs (corners and edges).
//!
//! Substructuring is level-generic: a `LevelSpace` holds nodes with a
//! variable number of dofs and elements with dense stiffness blocks.
//! Level 1 wraps the finite element mesh; on level l+1 the nodes are the
//! level-l globs, the elements are the level-l substructures, and the
//! element matrices are the coarse basis energies. The same partitioning,
//! classification and assembly code then runs unchanged on every level.

use std::collections::BTreeSet;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::{ElasticMaterial, FreeSystem, Mesh};

/// Displacement component tag carried by dofs that represent one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    X,
    Y,
}

/// Assignment of one level's elements to substructures.
///
/// Elements live on a logical grid (`elem_div` per axis); substructures
/// keep their own grid indexing (`sub_div`) even after jagging, which is
/// what makes agglomeration onto the next level well defined.
#[derive(Debug, Clone)]
pub struct Partition {
    pub level: usize,
    pub elem_div: (usize, usize),
    pub sub_div: (usize, usize),
    /// Row-major over the element grid.
    pub elem_to_sub: Vec<usize>,
}

impl Partition {
    pub fn n_subs(&self) -> usize {
        self.sub_div.0 * self.sub_div.1
    }

    pub fn n_elems(&self) -> usize {
        self.elem_div.0 * self.elem_div.1
    }

    pub fn sub_coords(&self, s: usize) -> (usize, usize) {
        (s % self.sub_div.0, s / self.sub_div.0)
    }

    pub fn elems_of(&self, s: usize) -> Vec<usize> {
        (0..self.n_elems())
            .filter(|&e| self.elem_to_sub[e] == s)
            .collect()
    }

    /// Elements per substructure axis for the unjagged layout.
    pub fn block_div(&self) -> (usize, usize) {
        (self.elem_div.0 / self.sub_div.0, self.elem_div.1 / self.sub_div.1)
    }

    /// Coarsening ratio H_l / H_(l-1) along x: how many of the previous
    /// level's cells one substructure spans.
    pub fn coarsening_ratio(&self) -> usize {
        self.elem_div.0 / self.sub_div.0
    }

    fn is_connected(&self, s: usize) -> bool {
        let elems = self.elems_of(s);
        if elems.is_empty() {
            return false;
        }
        let (ex, _) = self.elem_div;
        let mut seen = BTreeSet::new();
        let mut stack = vec![elems[0]];
        seen.insert(elems[0]);
        while let Some(e) = stack.pop() {
            let (cx, cy) = (e % ex, e / ex);
            let mut push = |nx: usize, ny: usize| {
                let ne = ny * ex + nx;
                if self.elem_to_sub[ne] == s && seen.insert(ne) {
                    stack.push(ne);
                }
            };
            if cx > 0 {
                push(cx - 1, cy);
            }
            if cx + 1 < ex {
                push(cx + 1, cy);
            }
            if cy > 0 {
                push(cx, cy - 1);
            }
            if cy + 1 < self.elem_div.1 {
                push(cx, cy + 1);
            }
        }
        seen.len() == elems.len()
    }
}

/// Splits an element grid into kx-by-ky axis-aligned substructures.
pub fn partition_regular_grid(
    elem_div: (usize, usize),
    kx: usize,
    ky: usize,
    level: usize,
) -> Result<Partition> {
    let (ex, ey) = elem_div;
    if kx == 0 || ky == 0 || ex % kx != 0 || ey % ky != 0 {
        return Err(Error::NonDividingPartition { kx, ky, ex, ey });
    }
    let (bw, bh) = (ex / kx, ey / ky);
    let mut elem_to_sub = Vec::with_capacity(ex * ey);
    for iy in 0..ey {
        for ix in 0..ex {
            elem_to_sub.push((iy / bh) * kx + ix / bw);
        }
    }
    Ok(Partition {
        level,
        elem_div,
        sub_div: (kx, ky),
        elem_to_sub,
    })
}

/// Groups fx-by-fy blocks of level-l substructures into level-(l+1)
/// substructures; the result's elements are the input's substructures.
pub fn agglomerate(p: &Partition, fx: usize, fy: usize) -> Result<Partition> {
    partition_regular_grid(p.sub_div, p.sub_div.0 / fx.max(1), p.sub_div.1 / fy.max(1), p.level + 1)
        .map_err(|_| Error::NonDividingPartition {
            kx: fx,
            ky: fy,
            ex: p.sub_div.0,
            ey: p.sub_div.1,
        })
}

/// Reassigns elements along the shared edge of an adjacent pair in an
/// alternating sawtooth: teeth of depth `amplitude` and length
/// `period / 2` are carved out of `t` and given to `s`.
pub fn jag_interface_edge(
    p: &Partition,
    pair: (usize, usize),
    amplitude: usize,
    period: usize,
) -> Result<Partition> {
    let (s, t) = pair;
    if amplitude == 0 {
        return Ok(p.clone());
    }
    let (sx, sy) = p.sub_coords(s);
    let (tx, ty) = p.sub_coords(t);
    let (bw, bh) = p.block_div();
    let vertical = sy == ty && (sx + 1 == tx || tx + 1 == sx);
    let horizontal = sx == tx && (sy + 1 == ty || ty + 1 == sy);
    if !(vertical || horizontal) {
        return Err(Error::NotAdjacent { s, t });
    }
    let width = if vertical { bw } else { bh };
    if amplitude >= width {
        return Err(Error::JagTooDeep { amplitude, width });
    }
    let half = (period / 2).max(1);
    let mut out = p.clone();
    let (ex, _) = p.elem_div;
    let edge_len = if vertical { bh } else { bw };
    for r in 0..edge_len {
        if (r / half) % 2 == 0 {
            continue;
        }
        for d in 0..amplitude {
            let (cx, cy) = if vertical {
                let row = sy * bh + r;
                let col = if sx < tx { tx * bw + d } else { sx * bw - 1 - d };
                (col, row)
            } else {
                let col = sx * bw + r;
                let row = if sy < ty { ty * bh + d } else { sy * bh - 1 - d };
                (col, row)
            };
            let e = cy * ex + cx;
            if out.elem_to_sub[e] != t {
                return Err(Error::NonConforming {
                    reason: format!("element {e} on the {s}-{t} edge is not owned by {t}"),
                });
            }
            out.elem_to_sub[e] = s;
        }
    }
    for &sub in &[s, t] {
        if !out.is_connected(sub) {
            return Err(Error::JagDisconnects { sub });
        }
    }
    Ok(out)
}

/// Element-to-substructure map from fine elements to the last level of a
/// partition chain (level-l partitions are over level-(l-1) substructures).
pub fn composite_map(parts: &[Partition]) -> Vec<usize> {
    assert!(!parts.is_empty());
    let mut map = parts[0].elem_to_sub.clone();
    for p in &parts[1..] {
        for m in map.iter_mut() {
            *m = p.elem_to_sub[*m];
        }
    }
    map
}

/// One level's finite element structure. Nodes carry a variable number
/// of dofs; elements carry dense stiffness blocks over their dofs.
#[derive(Debug, Clone)]
pub struct LevelSpace {
    pub level: usize,
    pub n_dofs: usize,
    /// Node -> global dof ids (ascending). Empty for eliminated nodes.
    pub node_dofs: Vec<Vec<usize>>,
    pub dof_node: Vec<usize>,
    pub dof_component: Vec<Option<Component>>,
    /// Node adjacency used to walk edge globs into paths (sorted).
    pub node_adj: Vec<Vec<usize>>,
    /// Fine mesh nodes backing each node, for adjacency across levels.
    pub node_support: Vec<Vec<usize>>,
    /// Nodes removed with the essential boundary conditions. Coarse
    /// levels have none, but may carry nodes without dofs.
    pub eliminated: Vec<bool>,
    /// Adjacency of the underlying fine mesh, carried through the levels
    /// so glob supports can be connected at any depth.
    pub fine_adj: Vec<Vec<usize>>,
    pub elem_nodes: Vec<Vec<usize>>,
    /// Element -> dof list matching the element matrix layout.
    pub elem_dofs: Vec<Vec<usize>>,
    pub elem_mats: Vec<DMatrix<f64>>,
    /// Rigid-body-mode representation: x/y translation and rotation.
    pub rbm: DMatrix<f64>,
}

impl LevelSpace {
    pub fn n_nodes(&self) -> usize {
        self.node_dofs.len()
    }

    /// Wraps the fine free-dof problem as the level-1 space.
    pub fn from_mesh(mesh: &Mesh, material: &ElasticMaterial, sys: &FreeSystem) -> Self {
        let n_nodes = mesh.n_nodes();
        let mut node_dofs = vec![Vec::new(); n_nodes];
        let mut dof_node = vec![0; sys.n_free()];
        let mut dof_component = vec![None; sys.n_free()];
        for (n, dofs) in node_dofs.iter_mut().enumerate() {
            for c in 0..2 {
                let f = sys.free_of[2 * n + c];
                if f != usize::MAX {
                    dofs.push(f);
                    dof_node[f] = n;
                    dof_component[f] = Some(if c == 0 { Component::X } else { Component::Y });
                }
            }
        }
        let mut node_adj = vec![Vec::new(); n_nodes];
        for iy in 0..=mesh.ny {
            for ix in 0..=mesh.nx {
                let n = mesh.node_index(ix, iy);
                if ix < mesh.nx {
                    let m = mesh.node_index(ix + 1, iy);
                    node_adj[n].push(m);
                    node_adj[m].push(n);
                }
                if iy < mesh.ny {
                    let m = mesh.node_index(ix, iy + 1);
                    node_adj[n].push(m);
                    node_adj[m].push(n);
                }
            }
        }
        for adj in node_adj.iter_mut() {
            adj.sort_unstable();
            adj.dedup();
        }

        let ke = crate::fem::element_stiffness_q1_rect(
            material,
            1.0 / mesh.nx as f64,
            1.0 / mesh.ny as f64,
        );
        let mut elem_dofs = Vec::with_capacity(mesh.n_elems());
        let mut elem_mats = Vec::with_capacity(mesh.n_elems());
        for quad in &mesh.elems {
            let full: Vec<usize> = quad.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
            let keep: Vec<usize> = (0..8).filter(|&i| sys.free_of[full[i]] != usize::MAX).collect();
            let dofs: Vec<usize> = keep.iter().map(|&i| sys.free_of[full[i]]).collect();
            let mut mat = DMatrix::zeros(keep.len(), keep.len());
            for (a, &i) in keep.iter().enumerate() {
                for (b, &j) in keep.iter().enumerate() {
                    mat[(a, b)] = ke[(i, j)];
                }
            }
            elem_dofs.push(dofs);
            elem_mats.push(mat);
        }

        let mut rbm = DMatrix::zeros(sys.n_free(), 3);
        for (f, &g) in sys.free_dofs.iter().enumerate() {
            let node = g / 2;
            let p = mesh.coords[node];
            if g % 2 == 0 {
                rbm[(f, 0)] = 1.0;
                rbm[(f, 2)] = -(p[1] - 0.5);
            } else {
                rbm[(f, 1)] = 1.0;
                rbm[(f, 2)] = p[0] - 0.5;
            }
        }

        LevelSpace {
            level: 1,
            n_dofs: sys.n_free(),
            node_dofs,
            dof_node,
            dof_component,
            fine_adj: node_adj.clone(),
            node_adj,
            node_support: (0..n_nodes).map(|n| vec![n]).collect(),
            eliminated: mesh.boundary.clone(),
            elem_nodes: mesh.elems.iter().map(|q| {
                let mut v = q.to_vec();
                v.sort_unstable();
                v
            }).collect(),
            elem_dofs,
            elem_mats,
            rbm,
        }
    }
}

/// A connected interface piece shared by exactly two substructures.
#[derive(Debug, Clone)]
pub struct EdgeGlob {
    pub pair: (usize, usize),
    /// Node path, walked from one endpoint to the other.
    pub nodes: Vec<usize>,
}

/// A node shared by three or more substructures, or promoted to corner
/// status to pin relative rigid motions of a pair.
#[derive(Debug, Clone)]
pub struct Corner {
    pub node: usize,
    pub sharing: Vec<usize>,
}

/// Interface classification of one level: every interface node belongs
/// to exactly one corner or one edge glob.
#[derive(Debug, Clone)]
pub struct GlobSet {
    pub corners: Vec<Corner>,
    pub edges: Vec<EdgeGlob>,
    /// Substructure pairs sharing an edge, sorted lexicographically.
    pub adjacency: Vec<(usize, usize)>,
    /// Per node: sorted substructures sharing it (empty off the interface).
    pub node_sharing: Vec<Vec<usize>>,
}

impl GlobSet {
    pub fn corner_nodes(&self) -> Vec<usize> {
        self.corners.iter().map(|c| c.node).collect()
    }

    pub fn edges_of_pair(&self, pair: (usize, usize)) -> Vec<&EdgeGlob> {
        self.edges.iter().filter(|e| e.pair == pair).collect()
    }
}

/// Orders the nodes of a connected component into a path, starting from
/// the lowest-numbered endpoint and preferring low-numbered neighbors.
fn walk_path(component: &BTreeSet<usize>, adj: &[Vec<usize>]) -> Vec<usize> {
    let degree = |n: usize| adj[n].iter().filter(|m| component.contains(m)).count();
    let start = component
        .iter()
        .copied()
        .filter(|&n| degree(n) <= 1)
        .min()
        .or_else(|| component.iter().copied().min())
        .unwrap();
    let mut path = vec![start];
    let mut visited: BTreeSet<usize> = BTreeSet::from([start]);
    let mut current = start;
    loop {
        let next = adj[current]
            .iter()
            .copied()
            .find(|n| component.contains(n) && !visited.contains(n));
        match next {
            Some(n) => {
                visited.insert(n);
                path.push(n);
                current = n;
            }
            None => break,
        }
    }
    // leftovers can only appear on non-path components; keep them ordered
    for &n in component {
        if !visited.contains(&n) {
            path.push(n);
        }
    }
    path
}

/// Classifies interface nodes into corners (shared by 3+ substructures)
/// and edges (connected runs shared by exactly 2), and lists adjacent
/// pairs.
pub fn classify_globs(space: &LevelSpace, partition: &Partition) -> Result<GlobSet> {
    assert_eq!(space.elem_nodes.len(), partition.n_elems());
    let mut node_sharing = vec![Vec::new(); space.n_nodes()];
    for (e, nodes) in space.elem_nodes.iter().enumerate() {
        let s = partition.elem_to_sub[e];
        for &n in nodes {
            node_sharing[n].push(s);
        }
    }
    for sharing in node_sharing.iter_mut() {
        sharing.sort_unstable();
        sharing.dedup();
    }

    let mut corners = Vec::new();
    let mut by_pair: Vec<((usize, usize), BTreeSet<usize>)> = Vec::new();
    for n in 0..space.n_nodes() {
        if space.eliminated[n] || node_sharing[n].len() < 2 {
            continue;
        }
        if node_sharing[n].len() >= 3 {
            corners.push(Corner {
                node: n,
                sharing: node_sharing[n].clone(),
            });
        } else {
            let pair = (node_sharing[n][0], node_sharing[n][1]);
            match by_pair.iter_mut().find(|(p, _)| *p == pair) {
                Some((_, set)) => {
                    set.insert(n);
                }
                None => {
                    by_pair.push((pair, BTreeSet::from([n])));
                }
            }
        }
    }
    by_pair.sort_by_key(|(p, _)| *p);

    let mut edges = Vec::new();
    let mut adjacency = Vec::new();
    for (pair, nodes) in by_pair {
        adjacency.push(pair);
        // split into connected components under node adjacency
        let mut remaining = nodes;
        while let Some(&seed) = remaining.iter().next() {
            let mut comp = BTreeSet::from([seed]);
            let mut stack = vec![seed];
            remaining.remove(&seed);
            while let Some(n) = stack.pop() {
                for &m in &space.node_adj[n] {
                    if remaining.contains(&m) {
                        remaining.remove(&m);
                        comp.insert(m);
                        stack.push(m);
                    }
                }
            }
            edges.push(EdgeGlob {
                pair,
                nodes: walk_path(&comp, &space.node_adj),
            });
        }
    }
    edges.sort_by_key(|e| (e.pair, e.nodes[0]));

    Ok(GlobSet {
        corners,
        edges,
        adjacency,
        node_sharing,
    })
}

/// Selects initial corner constraints: every cross-point, plus promoted
/// edge nodes (endpoints first) so each adjacent pair shares at least two
/// constrained nodes and cannot move rigidly relative to its neighbor.
///
/// On coarse levels some edge nodes carry no dofs (an edge glob without
/// coarse dofs); those cannot pin anything and are skipped.
pub fn select_initial_corners(globs: &GlobSet, space: &LevelSpace) -> GlobSet {
    let mut corner_set: BTreeSet<usize> = globs.corners.iter().map(|c| c.node).collect();

    for &pair in &globs.adjacency {
        // candidate promotions: both path ends first, then inward
        let mut path = Vec::new();
        for e in globs.edges.iter().filter(|e| e.pair == pair) {
            path.extend(e.nodes.iter().copied());
        }
        let mut candidates = Vec::new();
        let (mut lo, mut hi) = (0usize, path.len());
        while lo < hi {
            hi -= 1;
            candidates.push(path[hi]);
            if lo < hi {
                candidates.push(path[lo]);
                lo += 1;
            }
        }
        candidates.retain(|&n| !space.node_dofs[n].is_empty() && !corner_set.contains(&n));

        loop {
            let shared = corner_set
                .iter()
                .filter(|&&n| {
                    !space.node_dofs[n].is_empty()
                        && globs.node_sharing[n].contains(&pair.0)
                        && globs.node_sharing[n].contains(&pair.1)
                })
                .count();
            if shared >= 2 {
                break;
            }
            // prefer a candidate not sitting next to an existing shared corner
            let adjacent_to_corner = |n: usize| {
                space.node_adj[n].iter().any(|m| {
                    corner_set.contains(m)
                        && globs.node_sharing[*m].contains(&pair.0)
                        && globs.node_sharing[*m].contains(&pair.1)
                })
            };
            let pick = candidates
                .iter()
                .position(|&n| !adjacent_to_corner(n))
                .or(if candidates.is_empty() { None } else { Some(0) });
            match pick {
                Some(i) => {
                    corner_set.insert(candidates.remove(i));
                }
                None => {
                    warn!(
                        "pair {pair:?} keeps fewer than two shared corner constraints; \
                         no dof-carrying edge nodes left to promote"
                    );
                    break;
                }
            }
        }
    }

    // rebuild the edge globs from the nodes that stayed unconstrained
    let mut edges = Vec::new();
    for &pair in &globs.adjacency {
        let mut remaining: BTreeSet<usize> = globs
            .edges
            .iter()
            .filter(|e| e.pair == pair)
            .flat_map(|e| e.nodes.iter().copied())
            .filter(|n| !corner_set.contains(n))
            .collect();
        while let Some(&seed) = remaining.iter().next() {
            let mut comp = BTreeSet::from([seed]);
            let mut stack = vec![seed];
            remaining.remove(&seed);
            while let Some(n) = stack.pop() {
                for &m in &space.node_adj[n] {
                    if remaining.contains(&m) {
                        remaining.remove(&m);
                        comp.insert(m);
                        stack.push(m);
                    }
                }
            }
            edges.push(EdgeGlob {
                pair,
                nodes: walk_path(&comp, &space.node_adj),
            });
        }
    }
    edges.sort_by_key(|e| (e.pair, e.nodes[0]));

    let corners = corner_set
        .into_iter()
        .map(|node| Corner {
            node,
            sharing: globs.node_sharing[node].clone(),
        })
        .collect();
    GlobSet {
        corners,
        edges,
        adjacency: globs.adjacency.clone(),
        node_sharing: globs.node_sharing.clone(),
    }
}

/// Per-substructure dof bookkeeping: the 0-1 restriction map is stored
/// as the sorted global dof list plus its inverse.
#[derive(Debug, Clone)]
pub struct Substructure {
    pub id: usize,
    pub elems: Vec<usize>,
    /// Sorted global dof ids; the local index of a dof is its position.
    pub dofs: Vec<usize>,
    /// Global dof -> local index (usize::MAX outside this substructure).
    pub local_of: Vec<usize>,
    /// True for local dofs on the interface with other substructures.
    pub interface: Vec<bool>,
}

impl Substructure {
    pub fn n_local(&self) -> usize {
        self.dofs.len()
    }

    pub fn interface_locals(&self) -> Vec<usize> {
        (0..self.n_local()).filter(|&i| self.interface[i]).collect()
    }

    pub fn interior_locals(&self) -> Vec<usize> {
        (0..self.n_local()).filter(|&i| !self.interface[i]).collect()
    }
}

/// Builds substructure dof maps from a partition and its glob set.
pub fn build_substructures(
    space: &LevelSpace,
    partition: &Partition,
    globs: &GlobSet,
) -> Vec<Substructure> {
    let n_subs = partition.n_subs();
    let mut subs = Vec::with_capacity(n_subs);
    for s in 0..n_subs {
        let elems = partition.elems_of(s);
        let mut dof_set = BTreeSet::new();
        for &e in &elems {
            for &d in &space.elem_dofs[e] {
                dof_set.insert(d);
            }
        }
        let dofs: Vec<usize> = dof_set.into_iter().collect();
        let mut local_of = vec![usize::MAX; space.n_dofs];
        for (i, &d) in dofs.iter().enumerate() {
            local_of[d] = i;
        }
        let interface = dofs
            .iter()
            .map(|&d| globs.node_sharing[space.dof_node[d]].len() >= 2)
            .collect();
        subs.push(Substructure {
            id: s,
            elems,
            dofs,
            local_of,
            interface,
        });
    }
    subs
}
