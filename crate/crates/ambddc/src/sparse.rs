//! Symmetric sparse matrices in upper-triangle CSR form.
//!
//! Stiffness matrices and coarse operators are symmetric, so only entries
//! with `row <= col` are stored. Assembly is canonicalized: triplets are
//! sorted by (row, col, bit pattern) before summation, which makes the
//! result independent of the order elements were visited in.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Builds from (row, col, value) triplets; mirrored entries are folded
    /// into the upper triangle and duplicates summed in a canonical order.
    pub fn from_triplets(dim: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .into_iter()
            .filter(|&(_, _, v)| v != 0.0)
            .map(|(i, j, v)| if i <= j { (i, j, v) } else { (j, i, v) })
            .collect();
        entries.sort_by(|a, b| {
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then_with(|| a.2.total_cmp(&b.2))
        });

        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            debug_assert!(j < dim);
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }

        let mut row_ptr = vec![0usize; dim + 1];
        for &(i, _, _) in &merged {
            row_ptr[i + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = merged.iter().map(|e| e.1).collect();
        let values = merged.iter().map(|e| e.2).collect();
        SparseSymmetricMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored (upper-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x, expanding the symmetric storage on the fly.
    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = DVector::zeros(self.dim);
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let v = self.values[k];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// Iterates over stored upper-triangle entries as (row, col, value).
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim);
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] += self.values[k];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                m[(i, j)] += self.values[k];
                if i != j {
                    m[(j, i)] += self.values[k];
                }
            }
        }
        m
    }

    /// Writes Matrix Market coordinate symmetric format (lower triangle,
    /// one-based indices).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.dim, self.dim, self.nnz())?;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                // stored upper (i <= j); MM symmetric wants row >= col
                writeln!(w, "{} {} {:e}", self.col_idx[k] + 1, i + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

/// Assembles element matrices into a global symmetric sparse matrix.
///
/// `elem_dofs[e]` lists the global dof of each local row/column of
/// `elem_mats[e]`.
pub fn assemble(
    dim: usize,
    elem_dofs: &[Vec<usize>],
    elem_mats: &[DMatrix<f64>],
) -> SparseSymmetricMatrix {
    assert_eq!(elem_dofs.len(), elem_mats.len());
    let mut triplets = Vec::new();
    for (dofs, mat) in elem_dofs.iter().zip(elem_mats) {
        assert_eq!(dofs.len(), mat.nrows());
        for (a, &gi) in dofs.iter().enumerate() {
            for (b, &gj) in dofs.iter().enumerate() {
                if gi <= gj {
                    triplets.push((gi, gj, mat[(a, b)]));
                }
            }
        }
    }
    SparseSymmetricMatrix::from_triplets(dim, triplets)
}

/// Assembles the listed elements densely over a local dof set.
///
/// `local_of[g]` maps a global dof to its local index, `usize::MAX`
/// meaning "not part of this block". Used for substructure stiffness
/// blocks, where the subassembly (not a submatrix of the global matrix)
/// is required.
pub fn subassemble(
    local_dim: usize,
    local_of: &[usize],
    elems: &[usize],
    elem_dofs: &[Vec<usize>],
    elem_mats: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(local_dim, local_dim);
    for &e in elems {
        let dofs = &elem_dofs[e];
        let mat = &elem_mats[e];
        for (a, &gi) in dofs.iter().enumerate() {
            let li = local_of[gi];
            if li == usize::MAX {
                continue;
            }
            for (b, &gj) in dofs.iter().enumerate() {
                let lj = local_of[gj];
                if lj == usize::MAX {
                    continue;
                }
                m[(li, lj)] += mat[(a, b)];
            }
        }
    }
    m
}

/// Writes a sparse rectangular matrix (given as columns) in Matrix Market
/// coordinate general format. Used for coarse-dof selection dumps.
pub fn write_matrix_market_general<W: Write>(
    w: &mut W,
    nrows: usize,
    columns: &[Vec<(usize, f64)>],
) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    let nnz: usize = columns.iter().map(|c| c.len()).sum();
    writeln!(w, "{} {} {}", nrows, columns.len(), nnz)?;
    for (j, col) in columns.iter().enumerate() {
        for &(i, v) in col {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
    }
    Ok(())
}
