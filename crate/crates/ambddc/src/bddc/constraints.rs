//! Coarse degree-of-freedom selection: corner values, arithmetic edge
//! averages, and adaptively generated edge functionals.
//!
//! A coarse dof is stored as a sparse column over the level's global
//! dofs (a row of the selection matrix Q_P, kept transposed). The
//! per-substructure constraint matrices C are restrictions of these
//! columns, so C R = R_c Q_P' holds by construction.

use log::warn;
use nalgebra::DMatrix;

use crate::decomposition::{Component, GlobSet, LevelSpace, Substructure};

/// Where a coarse dof lives; adaptively generated dofs attach to the
/// edge glob they were produced on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobRef {
    Corner(usize),
    /// Index into `GlobSet::edges`.
    Edge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseDofKind {
    CornerValue,
    EdgeAverage(Component),
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct CoarseDof {
    pub kind: CoarseDofKind,
    pub glob: GlobRef,
    /// Sparse column over the level's dofs, sorted by dof id.
    pub column: Vec<(usize, f64)>,
}

/// The level's coarse dof set (columns of Q_P).
#[derive(Debug, Clone)]
pub struct CoarseSelection {
    pub dofs: Vec<CoarseDof>,
}

impl CoarseSelection {
    pub fn n_coarse(&self) -> usize {
        self.dofs.len()
    }

    /// Corner rows, one unit row per dof of each corner node, plus
    /// optional per-component arithmetic averages over each edge glob.
    pub fn build_initial(space: &LevelSpace, globs: &GlobSet, edge_averages: bool) -> Self {
        let mut dofs = Vec::new();
        for (ci, corner) in globs.corners.iter().enumerate() {
            for &d in &space.node_dofs[corner.node] {
                dofs.push(CoarseDof {
                    kind: CoarseDofKind::CornerValue,
                    glob: GlobRef::Corner(ci),
                    column: vec![(d, 1.0)],
                });
            }
        }
        if edge_averages {
            for (ei, edge) in globs.edges.iter().enumerate() {
                for comp in [Component::X, Component::Y] {
                    let members: Vec<usize> = edge
                        .nodes
                        .iter()
                        .flat_map(|&n| space.node_dofs[n].iter().copied())
                        .filter(|&d| space.dof_component[d] == Some(comp))
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    let w = 1.0 / members.len() as f64;
                    let mut column: Vec<(usize, f64)> =
                        members.into_iter().map(|d| (d, w)).collect();
                    column.sort_by_key(|e| e.0);
                    dofs.push(CoarseDof {
                        kind: CoarseDofKind::EdgeAverage(comp),
                        glob: GlobRef::Edge(ei),
                    column,
                    });
                }
            }
        }
        CoarseSelection { dofs }
    }

    /// Appends adaptive columns for an edge glob. Columns nearly parallel
    /// to an existing column on the same glob are dropped with a warning.
    pub fn augment(&mut self, glob: GlobRef, columns: Vec<Vec<(usize, f64)>>) -> usize {
        let mut added = 0;
        for column in columns {
            let norm: f64 = column.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if norm == 0.0 {
                warn!("dropping zero adaptive column on {glob:?}");
                continue;
            }
            let mut parallel = false;
            for existing in self.dofs.iter().filter(|d| d.glob == glob) {
                let enorm: f64 = existing.column.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
                let mut dot = 0.0;
                let mut i = 0;
                let mut j = 0;
                while i < column.len() && j < existing.column.len() {
                    match column[i].0.cmp(&existing.column[j].0) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            dot += column[i].1 * existing.column[j].1;
                            i += 1;
                            j += 1;
                        }
                    }
                }
                let cosine = (dot / (norm * enorm)).abs();
                // sin(theta) < 1e-8 means the directions coincide
                if (1.0 - cosine * cosine).max(0.0).sqrt() < 1e-8 {
                    warn!("dropping near-parallel adaptive column on {glob:?}");
                    parallel = true;
                    break;
                }
            }
            if parallel {
                continue;
            }
            self.dofs.push(CoarseDof {
                kind: CoarseDofKind::Adaptive,
                glob,
                column,
            });
            added += 1;
        }
        added
    }

    /// Coarse dof ids whose glob touches substructure `s`.
    pub fn ids_for_sub(&self, globs: &GlobSet, s: usize) -> Vec<usize> {
        self.dofs
            .iter()
            .enumerate()
            .filter(|(_, d)| match d.glob {
                GlobRef::Corner(ci) => globs.corners[ci].sharing.contains(&s),
                GlobRef::Edge(ei) => {
                    let p = globs.edges[ei].pair;
                    p.0 == s || p.1 == s
                }
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Constraint matrix C_s: one row per coarse dof of the substructure,
    /// columns over its local dofs.
    pub fn rows_for_sub(
        &self,
        globs: &GlobSet,
        sub: &Substructure,
    ) -> (Vec<usize>, DMatrix<f64>) {
        let ids = self.ids_for_sub(globs, sub.id);
        let mut c = DMatrix::zeros(ids.len(), sub.n_local());
        for (r, &id) in ids.iter().enumerate() {
            for &(d, v) in &self.dofs[id].column {
                let li = sub.local_of[d];
                if li != usize::MAX {
                    c[(r, li)] = v;
                }
            }
        }
        (ids, c)
    }
}
