//! Dense kernels: symmetric factorization, saddle-point solves for
//! constrained energy minimization, and a generalized symmetric
//! eigensolver reduced to a standard symmetric problem.
//!
//! Everything here is sized for local substructure and pair problems,
//! which stay in the hundreds of unknowns; dense factorizations are the
//! right tool at that scale.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1e-300);
    let mut max_asym = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { max_asym });
    }
    Ok(())
}

/// Locates the first nonpositive pivot of a failed Cholesky attempt.
fn find_bad_pivot(m: &DMatrix<f64>) -> (usize, f64) {
    let n = m.nrows();
    let mut a = m.clone();
    for k in 0..n {
        let d = a[(k, k)];
        if d <= 0.0 || !d.is_finite() {
            return (k, d);
        }
        let ds = d.sqrt();
        for i in (k + 1)..n {
            a[(i, k)] /= ds;
        }
        for j in (k + 1)..n {
            for i in j..n {
                let lj = a[(j, k)];
                a[(i, j)] -= a[(i, k)] * lj;
            }
        }
    }
    (n, 0.0)
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    dim: usize,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

/// Factors a symmetric positive definite matrix; reports the offending
/// pivot on breakdown.
pub fn factor_spd(matrix: &DMatrix<f64>) -> Result<SpdFactor> {
    check_symmetric(matrix)?;
    let dim = matrix.nrows();
    match matrix.clone().cholesky() {
        Some(chol) => Ok(SpdFactor { chol, dim }),
        None => {
            let (pivot, value) = find_bad_pivot(matrix);
            Err(Error::NotPositiveDefinite { pivot, value })
        }
    }
}

/// A bordered system [K C'; C 0] for minimizing 1/2 x'Kx - b'x subject
/// to Cx = c. K must be positive definite on null(C).
pub struct SaddleSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
    m: usize,
    /// Rows of the original C kept after redundancy removal.
    kept_rows: Vec<usize>,
}

impl SaddleSolver {
    /// Builds the bordered factorization. Redundant constraint rows are
    /// removed by rank-revealing QR with relative tolerance 1e-10.
    pub fn new(k: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(k)?;
        let n = k.nrows();
        assert!(c.ncols() == n || c.nrows() == 0);
        let kept_rows = independent_rows(c);
        if kept_rows.len() < c.nrows() {
            warn!(
                "saddle solver: removed {} redundant constraint rows",
                c.nrows() - kept_rows.len()
            );
        }
        let m = kept_rows.len();
        let mut bordered = DMatrix::zeros(n + m, n + m);
        bordered.view_mut((0, 0), (n, n)).copy_from(k);
        for (r, &orig) in kept_rows.iter().enumerate() {
            for j in 0..n {
                bordered[(n + r, j)] = c[(orig, j)];
                bordered[(j, n + r)] = c[(orig, j)];
            }
        }
        let lu = bordered.lu();
        // a vanishing pivot signals null(K) meeting null(C)
        let u = lu.u();
        let diag_max = (0..n + m).map(|i| u[(i, i)].abs()).fold(0.0f64, f64::max);
        for i in 0..n + m {
            if u[(i, i)].abs() <= 1e-12 * diag_max.max(1e-300) {
                return Err(Error::SaddleIncompatible);
            }
        }
        Ok(SaddleSolver { lu, n, m, kept_rows })
    }

    pub fn n_primal(&self) -> usize {
        self.n
    }

    pub fn n_constraints(&self) -> usize {
        self.m
    }

    /// Solves for (primal, multipliers) given primal rhs and constraint
    /// values. `rhs_constraint` is indexed by the original C rows.
    pub fn solve(
        &self,
        rhs_primal: &DVector<f64>,
        rhs_constraint: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let mut rhs = DVector::zeros(self.n + self.m);
        rhs.rows_mut(0, self.n).copy_from(rhs_primal);
        for (r, &orig) in self.kept_rows.iter().enumerate() {
            rhs[self.n + r] = rhs_constraint[orig];
        }
        let sol = self.lu.solve(&rhs).expect("factored system is nonsingular");
        (
            sol.rows(0, self.n).into_owned(),
            sol.rows(self.n, self.m).into_owned(),
        )
    }
}

/// One-shot constrained minimization of 1/2 x'Kx - rhs'x s.t. Cx = c.
pub fn solve_saddle(
    k: &DMatrix<f64>,
    c: &DMatrix<f64>,
    rhs_primal: &DVector<f64>,
    rhs_constraint: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if c.nrows() == 0 {
        let x = factor_spd(k)?.solve(rhs_primal);
        return Ok((x, DVector::zeros(0)));
    }
    let solver = SaddleSolver::new(k, c)?;
    Ok(solver.solve(rhs_primal, rhs_constraint))
}

/// Indices of a maximal independent subset of rows of `c`, found by
/// norm-pivoted Gram-Schmidt (rank-revealing, relative tolerance 1e-10).
pub fn independent_rows(c: &DMatrix<f64>) -> Vec<usize> {
    let m = c.nrows();
    if m == 0 {
        return Vec::new();
    }
    let mut rows: Vec<DVector<f64>> = (0..m).map(|i| c.row(i).transpose()).collect();
    let scale = rows.iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    let mut active: Vec<usize> = (0..m).collect();
    let mut selected = Vec::new();
    while !active.is_empty() {
        let mut best = 0;
        let mut best_norm = -1.0;
        for (pos, &idx) in active.iter().enumerate() {
            let n = rows[idx].norm();
            if n > best_norm {
                best_norm = n;
                best = pos;
            }
        }
        if best_norm <= RANK_TOL * scale.max(1e-300) {
            break;
        }
        let idx = active.remove(best);
        let q = &rows[idx] / best_norm;
        selected.push(idx);
        for &j in &active {
            let d = q.dot(&rows[j]);
            let upd = &q * d;
            rows[j] -= upd;
        }
    }
    selected.sort_unstable();
    selected
}

/// Orthonormal basis of the column span of `m`, by norm-pivoted
/// Gram-Schmidt with relative rank tolerance 1e-10. Returns an n-by-r
/// matrix with orthonormal columns.
pub fn orthonormal_span(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let k = m.ncols();
    let mut cols: Vec<DVector<f64>> = (0..k).map(|j| m.column(j).into_owned()).collect();
    let scale = cols.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut active: Vec<usize> = (0..k).collect();
    loop {
        let mut best = usize::MAX;
        let mut best_norm = -1.0;
        for (pos, &idx) in active.iter().enumerate() {
            let nn = cols[idx].norm();
            if nn > best_norm {
                best_norm = nn;
                best = pos;
            }
        }
        if best == usize::MAX || best_norm <= RANK_TOL * scale.max(1e-300) {
            break;
        }
        let idx = active.remove(best);
        let mut q = &cols[idx] / best_norm;
        // re-orthogonalize once against the accepted basis
        for b in &basis {
            let d = b.dot(&q);
            q -= b * d;
        }
        let qn = q.norm();
        if qn <= RANK_TOL {
            continue;
        }
        q /= qn;
        for &j in &active {
            let d = q.dot(&cols[j]);
            let upd = &q * d;
            cols[j] -= upd;
        }
        basis.push(q);
    }
    let mut out = DMatrix::zeros(n, basis.len());
    for (j, b) in basis.iter().enumerate() {
        out.set_column(j, b);
    }
    out
}

/// Eigenpairs of the symmetric generalized problem X w = omega Y w.
pub struct GeneralizedEig {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Y-orthonormal eigenvectors, one column per eigenvalue.
    pub eigenvectors: DMatrix<f64>,
}

/// Solves X w = omega Y w for symmetric X and positive definite Y by
/// the Cholesky reduction L^-1 X L^-T q = omega q, w = L^-T q.
pub fn eig_sym_generalized(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<GeneralizedEig> {
    check_symmetric(x)?;
    check_symmetric(y)?;
    let n = x.nrows();
    assert_eq!(y.nrows(), n);
    if n == 0 {
        return Ok(GeneralizedEig {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let chol = y.clone().cholesky().ok_or_else(|| {
        let (pivot, value) = find_bad_pivot(y);
        Error::NotPositiveDefinite { pivot, value }
    })?;
    let l = chol.l();
    // B = L^-1 X L^-T by two triangular solves
    let mut b = x.clone();
    l.solve_lower_triangular_mut(&mut b);
    b.transpose_mut();
    l.solve_lower_triangular_mut(&mut b);
    let bt = b.transpose();
    let sym = (b + bt) * 0.5;
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &bb| eig.eigenvalues[bb].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut q = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        q.set_column(col, &eig.eigenvectors.column(i));
    }
    // w = L^-T q
    let lt = l.transpose();
    let vectors = lt
        .solve_upper_triangular(&q)
        .expect("triangular factor is nonsingular");
    Ok(GeneralizedEig {
        eigenvalues,
        eigenvectors: vectors,
    })
}
