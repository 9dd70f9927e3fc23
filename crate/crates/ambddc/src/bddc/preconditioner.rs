//! The multilevel BDDC preconditioner: interior pre-correction,
//! substructure and coarse corrections, weighted averaging, and interior
//! post-correction, recursing through the level hierarchy with a direct
//! solve on top.

use nalgebra::{DMatrix, DVector};

use crate::bddc::level::LevelOps;
use crate::error::Result;
use crate::linalg::{factor_spd, SpdFactor};

pub struct MultilevelBddc {
    pub levels: Vec<LevelOps>,
    top: Option<SpdFactor>,
    top_dim: usize,
    /// With interface reduction, level-1 interior corrections move into
    /// the preprocessing step and the preconditioner acts on interface
    /// vectors; both forms produce the same conjugate gradient iterates.
    pub reduced: bool,
    /// Sorted level-1 interface dofs (the reduced solve space).
    pub interface_dofs: Vec<usize>,
    interface_index: Vec<usize>,
    /// Per level-1 substructure: position of each interface local dof in
    /// `interface_dofs`.
    sub_interface_pos: Vec<Vec<usize>>,
}

impl MultilevelBddc {
    /// Assembles and factors the top-level problem from the last level's
    /// coarse element matrices.
    pub fn new(levels: Vec<LevelOps>, reduced: bool) -> Result<Self> {
        assert!(!levels.is_empty());
        let last = levels.last().unwrap();
        let top_dim = last.n_coarse();
        let top = if top_dim == 0 {
            None
        } else {
            let mut a = DMatrix::zeros(top_dim, top_dim);
            for (ids, m) in last.sub_coarse_ids.iter().zip(&last.coarse_mats) {
                for (i, &gi) in ids.iter().enumerate() {
                    for (j, &gj) in ids.iter().enumerate() {
                        a[(gi, gj)] += m[(i, j)];
                    }
                }
            }
            Some(factor_spd(&a)?)
        };

        let l1 = &levels[0];
        let interface_dofs = l1.assembly.interface_dofs.clone();
        let mut interface_index = vec![usize::MAX; l1.n_dofs()];
        for (i, &d) in interface_dofs.iter().enumerate() {
            interface_index[d] = i;
        }
        let sub_interface_pos = l1
            .assembly
            .subs
            .iter()
            .map(|sub| {
                sub.interface_locals
                    .iter()
                    .map(|&li| interface_index[sub.geom.dofs[li]])
                    .collect()
            })
            .collect();

        Ok(MultilevelBddc {
            levels,
            top,
            top_dim,
            reduced,
            interface_dofs,
            interface_index,
            sub_interface_pos,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    /// Size of the directly factored top-level problem.
    pub fn top_dim(&self) -> usize {
        self.top_dim
    }

    /// Dimension of the space the preconditioner acts on.
    pub fn solve_dim(&self) -> usize {
        if self.reduced {
            self.interface_dofs.len()
        } else {
            self.levels[0].n_dofs()
        }
    }

    pub fn n_interface(&self) -> usize {
        self.interface_dofs.len()
    }

    /// Applies the preconditioner; over the full space, or over interface
    /// vectors in reduced form.
    pub fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        if self.reduced {
            let full = self.scatter_interface(r);
            let u = self.apply_level(0, &full);
            self.gather_interface(&u)
        } else {
            self.apply_level(0, r)
        }
    }

    fn apply_level(&self, li: usize, r: &DVector<f64>) -> DVector<f64> {
        if li == self.levels.len() {
            return match &self.top {
                Some(top) => top.solve(r),
                None => DVector::zeros(0),
            };
        }
        let lv = &self.levels[li];
        let skip_interior = self.reduced && li == 0;

        // interior pre-correction and updated residual
        let (u_i, r_b) = if skip_interior {
            (DVector::zeros(lv.n_dofs()), r.clone())
        } else {
            let u_i = lv.interior_solve(r);
            let r_b = r - lv.assembly.stiffness.matvec(&u_i);
            (u_i, r_b)
        };

        // independent substructure corrections and the coarse residual
        let mut w = lv.delta_correction(&r_b);
        let r_next = lv.restrict_residual(&r_b);
        let u_next = self.apply_level(li + 1, &r_next);
        let wp = lv.prolong(&u_next);
        for (ws, wps) in w.iter_mut().zip(&wp) {
            *ws += wps;
        }

        // average the corrections across interfaces
        let u_b = lv.average(&w);
        if skip_interior {
            return u_b;
        }

        // interior post-correction
        let v_i = lv.interior_solve(&lv.assembly.stiffness.matvec(&u_b));
        u_i + u_b - v_i
    }

    pub fn scatter_interface(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.levels[0].n_dofs());
        for (i, &d) in self.interface_dofs.iter().enumerate() {
            full[d] = x[i];
        }
        full
    }

    pub fn gather_interface(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.interface_dofs.len(), |i, _| full[self.interface_dofs[i]])
    }

    /// The assembled interface Schur complement action, summed from the
    /// per-substructure Schur complements.
    pub fn apply_schur(&self, x: &DVector<f64>) -> DVector<f64> {
        let l1 = &self.levels[0];
        let mut y = DVector::zeros(x.len());
        for (s, sub) in l1.assembly.subs.iter().enumerate() {
            let pos = &self.sub_interface_pos[s];
            if pos.is_empty() {
                continue;
            }
            let xs = DVector::from_fn(pos.len(), |i, _| x[pos[i]]);
            let ys = &sub.schur * xs;
            for (i, &p) in pos.iter().enumerate() {
                y[p] += ys[i];
            }
        }
        y
    }

    /// Operator action on the solve space: sparse stiffness in full form,
    /// assembled Schur complement in reduced form.
    pub fn apply_operator(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.reduced {
            self.apply_schur(x)
        } else {
            self.levels[0].assembly.stiffness.matvec(x)
        }
    }

    /// Condenses a full right-hand side onto the interface.
    pub fn reduce_rhs(&self, f: &DVector<f64>) -> DVector<f64> {
        let lift = self.levels[0].interior_solve(f);
        let g = f - self.levels[0].assembly.stiffness.matvec(&lift);
        self.gather_interface(&g)
    }

    /// Extends an interface solution back to the full space by solving
    /// the interior problems against the right-hand side.
    pub fn recover_full(&self, f: &DVector<f64>, u_interface: &DVector<f64>) -> DVector<f64> {
        let mut u = self.scatter_interface(u_interface);
        let r = f - self.levels[0].assembly.stiffness.matvec(&u);
        u += self.levels[0].interior_solve(&r);
        u
    }

    /// Initial guess for the unreduced form that matches the reduced
    /// iteration: exact interior solve, zero on the interface.
    pub fn interior_lift(&self, f: &DVector<f64>) -> DVector<f64> {
        self.levels[0].interior_solve(f)
    }

    pub fn interface_index_of(&self, dof: usize) -> usize {
        self.interface_index[dof]
    }
}
