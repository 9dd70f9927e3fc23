//! Per-level BDDC operators: substructure factorizations, the weighted
//! averaging operator E, energy-minimal coarse bases, and the coarse
//! element matrices handed to the next level.

use nalgebra::{DMatrix, DVector};

use crate::bddc::constraints::{CoarseDofKind, CoarseSelection, GlobRef};
use crate::decomposition::{
    build_substructures, GlobSet, LevelSpace, Partition, Substructure,
};
use crate::error::{Error, Result};
use crate::linalg::{factor_spd, SaddleSolver, SpdFactor};
use crate::sparse::{self, SparseSymmetricMatrix};

/// Interface averaging weight choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Weights proportional to local stiffness diagonals (the default).
    Stiffness,
    /// Equal weights across sharing substructures.
    Multiplicity,
}

/// One substructure with its factorizations and interface Schur
/// complement.
pub struct SubOps {
    pub geom: Substructure,
    pub stiffness: DMatrix<f64>,
    pub interior_locals: Vec<usize>,
    pub interface_locals: Vec<usize>,
    pub interior_chol: Option<SpdFactor>,
    /// Interface Schur complement, indexed by `interface_locals`.
    pub schur: DMatrix<f64>,
}

impl SubOps {
    fn build(geom: Substructure, space: &LevelSpace) -> Result<Self> {
        let n = geom.n_local();
        let stiffness = sparse::subassemble(
            n,
            &geom.local_of,
            &geom.elems,
            &space.elem_dofs,
            &space.elem_mats,
        );
        let interior_locals = geom.interior_locals();
        let interface_locals = geom.interface_locals();
        let (ni, nb) = (interior_locals.len(), interface_locals.len());

        let view = |rows: &[usize], cols: &[usize]| -> DMatrix<f64> {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| stiffness[(rows[i], cols[j])])
        };
        let k_bb = view(&interface_locals, &interface_locals);
        let (interior_chol, schur) = if ni == 0 {
            (None, k_bb)
        } else {
            let k_ii = view(&interior_locals, &interior_locals);
            let chol = factor_spd(&k_ii)?;
            if nb == 0 {
                (Some(chol), k_bb)
            } else {
                let k_ib = view(&interior_locals, &interface_locals);
                let solved = chol.solve_mat(&k_ib);
                let schur = &k_bb - k_ib.transpose() * solved;
                let schur_t = schur.transpose();
                (Some(chol), (schur + schur_t) * 0.5)
            }
        };
        Ok(SubOps {
            geom,
            stiffness,
            interior_locals,
            interface_locals,
            interior_chol,
            schur,
        })
    }
}

/// Geometry plus factorizations of one level, before the coarse space is
/// chosen. Pair eigenproblems and coarse-space construction both read
/// from this.
pub struct LevelAssembly {
    pub space: LevelSpace,
    pub partition: Partition,
    pub globs: GlobSet,
    pub subs: Vec<SubOps>,
    pub stiffness: SparseSymmetricMatrix,
    /// Sorted global dofs shared by two or more substructures.
    pub interface_dofs: Vec<usize>,
}

impl LevelAssembly {
    /// Builds substructures and their factorizations over a classified
    /// partition (`globs` comes from `select_initial_corners`).
    pub fn build(space: LevelSpace, partition: Partition, globs: GlobSet) -> Result<Self> {
        let stiffness = sparse::assemble(space.n_dofs, &space.elem_dofs, &space.elem_mats);
        let geoms = build_substructures(&space, &partition, &globs);
        let mut subs = Vec::with_capacity(geoms.len());
        for geom in geoms {
            subs.push(SubOps::build(geom, &space)?);
        }
        let interface_dofs: Vec<usize> = (0..space.n_dofs)
            .filter(|&d| globs.node_sharing[space.dof_node[d]].len() >= 2)
            .collect();
        Ok(LevelAssembly {
            space,
            partition,
            globs,
            subs,
            stiffness,
            interface_dofs,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs
    }

    /// Substructures sharing the given global dof.
    pub fn sharing_of_dof(&self, d: usize) -> &[usize] {
        &self.globs.node_sharing[self.space.dof_node[d]]
    }
}

/// The weighted averaging operator E from the broken space onto the
/// continuous space; weights per dof sum to one across sharing
/// substructures.
pub struct AveragingOperator {
    /// Per substructure: weight of each local dof.
    pub weights: Vec<DVector<f64>>,
}

/// Stiffness (or multiplicity) scaling weights from the local diagonals.
pub fn build_averaging(assembly: &LevelAssembly, scaling: Scaling) -> Result<AveragingOperator> {
    let mut weights: Vec<DVector<f64>> = assembly
        .subs
        .iter()
        .map(|s| DVector::from_element(s.geom.n_local(), 1.0))
        .collect();
    for &d in &assembly.interface_dofs {
        let sharing = assembly.sharing_of_dof(d);
        let mut total = 0.0;
        let mut parts = Vec::with_capacity(sharing.len());
        for &s in sharing {
            let li = assembly.subs[s].geom.local_of[d];
            assert_ne!(li, usize::MAX, "sharing substructure misses dof");
            let w = match scaling {
                Scaling::Stiffness => assembly.subs[s].stiffness[(li, li)],
                Scaling::Multiplicity => 1.0,
            };
            parts.push((s, li, w));
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::ZeroWeightSum { dof: d });
        }
        for (s, li, w) in parts {
            weights[s][li] = w / total;
        }
    }
    Ok(AveragingOperator { weights })
}

impl AveragingOperator {
    /// u = E w for per-substructure local vectors w.
    pub fn average(&self, subs: &[SubOps], w: &[DVector<f64>], n_dofs: usize) -> DVector<f64> {
        let mut u = DVector::zeros(n_dofs);
        for (s, sub) in subs.iter().enumerate() {
            for (li, &d) in sub.geom.dofs.iter().enumerate() {
                u[d] += self.weights[s][li] * w[s][li];
            }
        }
        u
    }

    /// (E' r) localized: per-substructure weighted restrictions of a
    /// residual functional.
    pub fn localize(&self, subs: &[SubOps], r: &DVector<f64>) -> Vec<DVector<f64>> {
        subs.iter()
            .enumerate()
            .map(|(s, sub)| {
                DVector::from_fn(sub.geom.n_local(), |li, _| {
                    self.weights[s][li] * r[sub.geom.dofs[li]]
                })
            })
            .collect()
    }

    /// Pair-renormalized weight of `s` against `t` at a shared dof.
    pub fn pair_weight(
        &self,
        subs: &[SubOps],
        s: usize,
        t: usize,
        dof: usize,
    ) -> f64 {
        let ls = subs[s].geom.local_of[dof];
        let lt = subs[t].geom.local_of[dof];
        debug_assert!(ls != usize::MAX && lt != usize::MAX);
        let ws = self.weights[s][ls];
        let wt = self.weights[t][lt];
        ws / (ws + wt)
    }
}

/// A level with its coarse space finalized: constrained solvers, the
/// energy-minimal basis, and the coarse element matrices that become the
/// next level's elements.
pub struct LevelOps {
    pub assembly: LevelAssembly,
    pub selection: CoarseSelection,
    pub averaging: AveragingOperator,
    /// Per substructure: global coarse dof ids, ascending.
    pub sub_coarse_ids: Vec<Vec<usize>>,
    /// Per substructure: constraint rows over local dofs, one per coarse id.
    pub sub_constraints: Vec<DMatrix<f64>>,
    saddle: Vec<SaddleSolver>,
    /// Per substructure: energy-minimal basis, one column per coarse id.
    pub basis: Vec<DMatrix<f64>>,
    /// Per substructure: coarse element matrix a(psi_i, psi_j).
    pub coarse_mats: Vec<DMatrix<f64>>,
}

impl LevelOps {
    pub fn finalize(
        assembly: LevelAssembly,
        selection: CoarseSelection,
        averaging: AveragingOperator,
    ) -> Result<Self> {
        let mut sub_coarse_ids = Vec::with_capacity(assembly.subs.len());
        let mut sub_constraints = Vec::with_capacity(assembly.subs.len());
        let mut saddle = Vec::with_capacity(assembly.subs.len());
        let mut basis = Vec::with_capacity(assembly.subs.len());
        let mut coarse_mats = Vec::with_capacity(assembly.subs.len());
        for sub in &assembly.subs {
            let (ids, c) = selection.rows_for_sub(&assembly.globs, &sub.geom);
            let solver = SaddleSolver::new(&sub.stiffness, &c)
                .map_err(|_| Error::SingularSubstructure { sub: sub.geom.id })?;
            if solver.n_constraints() != c.nrows() {
                return Err(Error::SingularSubstructure { sub: sub.geom.id });
            }
            let m = ids.len();
            let n = sub.geom.n_local();
            let mut psi = DMatrix::zeros(n, m);
            for j in 0..m {
                let mut e = DVector::zeros(m);
                e[j] = 1.0;
                let (x, _) = solver.solve(&DVector::zeros(n), &e);
                psi.set_column(j, &x);
            }
            let kpsi = &sub.stiffness * &psi;
            let coarse = psi.transpose() * kpsi;
            let coarse_t = coarse.transpose();
            sub_coarse_ids.push(ids);
            sub_constraints.push(c);
            saddle.push(solver);
            basis.push(psi);
            coarse_mats.push((coarse + coarse_t) * 0.5);
        }
        Ok(LevelOps {
            assembly,
            selection,
            averaging,
            sub_coarse_ids,
            sub_constraints,
            saddle,
            basis,
            coarse_mats,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.assembly.n_dofs()
    }

    pub fn n_coarse(&self) -> usize {
        self.selection.n_coarse()
    }

    /// Interior pre- or post-correction: solves the decoupled Dirichlet
    /// problems on all substructure interiors.
    pub fn interior_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.n_dofs());
        for sub in &self.assembly.subs {
            let Some(chol) = &sub.interior_chol else {
                continue;
            };
            if sub.interior_locals.is_empty() {
                continue;
            }
            let rhs = DVector::from_fn(sub.interior_locals.len(), |i, _| {
                r[sub.geom.dofs[sub.interior_locals[i]]]
            });
            let x = chol.solve(&rhs);
            for (i, &li) in sub.interior_locals.iter().enumerate() {
                u[sub.geom.dofs[li]] = x[i];
            }
        }
        u
    }

    /// Substructure corrections: per substructure, minimize energy against
    /// the weighted residual with all coarse dofs pinned to zero.
    pub fn delta_correction(&self, r_b: &DVector<f64>) -> Vec<DVector<f64>> {
        let localized = self.averaging.localize(&self.assembly.subs, r_b);
        self.assembly
            .subs
            .iter()
            .enumerate()
            .map(|(s, _)| {
                let m = self.sub_coarse_ids[s].len();
                let (w, _) = self.saddle[s].solve(&localized[s], &DVector::zeros(m));
                w
            })
            .collect()
    }

    /// Restriction of a residual to the next level (coarse) space.
    pub fn restrict_residual(&self, r_b: &DVector<f64>) -> DVector<f64> {
        let localized = self.averaging.localize(&self.assembly.subs, r_b);
        let mut r_next = DVector::zeros(self.n_coarse());
        for (s, ids) in self.sub_coarse_ids.iter().enumerate() {
            let contrib = self.basis[s].transpose() * &localized[s];
            for (j, &id) in ids.iter().enumerate() {
                r_next[id] += contrib[j];
            }
        }
        r_next
    }

    /// Broken prolongation of a coarse solution through the basis.
    pub fn prolong(&self, u_next: &DVector<f64>) -> Vec<DVector<f64>> {
        self.assembly
            .subs
            .iter()
            .enumerate()
            .map(|(s, _)| {
                let ids = &self.sub_coarse_ids[s];
                let coeff = DVector::from_fn(ids.len(), |j, _| u_next[ids[j]]);
                &self.basis[s] * coeff
            })
            .collect()
    }

    pub fn average(&self, w: &[DVector<f64>]) -> DVector<f64> {
        self.averaging
            .average(&self.assembly.subs, w, self.n_dofs())
    }

    /// Builds the next level's finite element structure: nodes are this
    /// level's globs, elements are this level's substructures with the
    /// coarse matrices as element stiffness.
    pub fn next_space(&self) -> LevelSpace {
        let globs = &self.assembly.globs;
        let space = &self.assembly.space;
        let n_corners = globs.corners.len();
        let n_nodes = n_corners + globs.edges.len();
        let node_of_glob = |g: GlobRef| -> usize {
            match g {
                GlobRef::Corner(ci) => ci,
                GlobRef::Edge(ei) => n_corners + ei,
            }
        };

        let n_dofs = self.selection.n_coarse();
        let mut node_dofs = vec![Vec::new(); n_nodes];
        let mut dof_node = vec![0usize; n_dofs];
        let mut dof_component = vec![None; n_dofs];
        for (id, dof) in self.selection.dofs.iter().enumerate() {
            let node = node_of_glob(dof.glob);
            node_dofs[node].push(id);
            dof_node[id] = node;
            dof_component[id] = match dof.kind {
                CoarseDofKind::CornerValue => space.dof_component[dof.column[0].0],
                CoarseDofKind::EdgeAverage(c) => Some(c),
                CoarseDofKind::Adaptive => None,
            };
        }
        for dofs in node_dofs.iter_mut() {
            dofs.sort_unstable();
        }

        // fine supports and adjacency through the fine mesh
        let mut node_support: Vec<Vec<usize>> = Vec::with_capacity(n_nodes);
        for corner in &globs.corners {
            node_support.push(space.node_support[corner.node].clone());
        }
        for edge in &globs.edges {
            let mut sup: Vec<usize> = edge
                .nodes
                .iter()
                .flat_map(|&n| space.node_support[n].iter().copied())
                .collect();
            sup.sort_unstable();
            node_support.push(sup);
        }
        let n_fine = space.fine_adj.len();
        let mut owner = vec![usize::MAX; n_fine];
        for (g, sup) in node_support.iter().enumerate() {
            for &f in sup {
                owner[f] = g;
            }
        }
        let mut node_adj = vec![Vec::new(); n_nodes];
        for (f, adj) in space.fine_adj.iter().enumerate() {
            let a = owner[f];
            if a == usize::MAX {
                continue;
            }
            for &f2 in adj {
                let b = owner[f2];
                if b != usize::MAX && b != a {
                    node_adj[a].push(b);
                }
            }
        }
        for adj in node_adj.iter_mut() {
            adj.sort_unstable();
            adj.dedup();
        }

        // elements: substructures with their coarse dofs as element dofs
        let mut elem_nodes = Vec::with_capacity(self.assembly.subs.len());
        for sub in &self.assembly.subs {
            let s = sub.geom.id;
            let mut nodes: Vec<usize> = globs
                .corners
                .iter()
                .enumerate()
                .filter(|(_, c)| c.sharing.contains(&s))
                .map(|(ci, _)| ci)
                .chain(
                    globs
                        .edges
                        .iter()
                        .enumerate()
                        .filter(|(_, e)| e.pair.0 == s || e.pair.1 == s)
                        .map(|(ei, _)| n_corners + ei),
                )
                .collect();
            nodes.sort_unstable();
            elem_nodes.push(nodes);
        }

        let rbm = {
            let mut r = DMatrix::zeros(n_dofs, 3);
            for (id, dof) in self.selection.dofs.iter().enumerate() {
                for &(d, v) in &dof.column {
                    for k in 0..3 {
                        r[(id, k)] += v * space.rbm[(d, k)];
                    }
                }
            }
            r
        };

        LevelSpace {
            level: space.level + 1,
            n_dofs,
            node_dofs,
            dof_node,
            dof_component,
            node_adj,
            node_support,
            eliminated: vec![false; n_nodes],
            fine_adj: space.fine_adj.clone(),
            elem_nodes,
            elem_dofs: self.sub_coarse_ids.clone(),
            elem_mats: self.coarse_mats.clone(),
            rbm,
        }
    }
}
