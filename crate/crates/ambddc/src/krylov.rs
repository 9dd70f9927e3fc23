//! Preconditioned conjugate gradients with a Lanczos condition-number
//! estimate, plus an explicit-spectrum oracle for small instances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::eig_sym_generalized;

/// Absolute fallback for vanishing right-hand sides.
const ABS_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative preconditioned residual per iteration, starting at 1.
    pub residual_history: Vec<f64>,
    pub ritz_min: f64,
    pub ritz_max: f64,
    /// Condition estimate from the Lanczos tridiagonal.
    pub kappa: f64,
    pub converged: bool,
    pub achieved_tol: f64,
}

/// Runs preconditioned conjugate gradients until the relative
/// preconditioned residual drops below `tol`.
///
/// The Lanczos tridiagonal is rebuilt from the PCG coefficients and its
/// extreme eigenvalues give the condition estimate.
pub fn pcg<A, M>(
    apply_a: A,
    apply_m: M,
    b: &DVector<f64>,
    tol: f64,
    max_it: usize,
) -> Result<(DVector<f64>, SolveReport)>
where
    A: Fn(&DVector<f64>) -> DVector<f64>,
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    pcg_traced(apply_a, apply_m, b, tol, max_it, |_, _| {})
}

/// Like [`pcg`], invoking `on_iterate` with every iterate produced.
pub fn pcg_traced<A, M, T>(
    apply_a: A,
    apply_m: M,
    b: &DVector<f64>,
    tol: f64,
    max_it: usize,
    mut on_iterate: T,
) -> Result<(DVector<f64>, SolveReport)>
where
    A: Fn(&DVector<f64>) -> DVector<f64>,
    M: Fn(&DVector<f64>) -> DVector<f64>,
    T: FnMut(usize, &DVector<f64>),
{
    let n = b.len();
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut z = apply_m(&r);
    let mut rho = r.dot(&z);
    let rho0 = rho;
    if rho0 < 0.0 {
        return Err(Error::IndefiniteOperator {
            iteration: 0,
            curvature: rho0,
        });
    }
    let norm0 = rho0.sqrt();
    let mut history = vec![1.0];
    if n == 0 || norm0 <= ABS_TOL {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                residual_history: history,
                ritz_min: 1.0,
                ritz_max: 1.0,
                kappa: 1.0,
                converged: true,
                achieved_tol: 0.0,
            },
        ));
    }

    let mut p = z.clone();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut converged = false;
    let mut rel = 1.0;
    let mut iterations = 0;

    for it in 0..max_it {
        let q = apply_a(&p);
        let curvature = p.dot(&q);
        if curvature <= 0.0 {
            return Err(Error::IndefiniteOperator {
                iteration: it,
                curvature,
            });
        }
        let alpha = rho / curvature;
        x.axpy(alpha, &p, 1.0);
        on_iterate(it, &x);
        r.axpy(-alpha, &q, 1.0);
        z = apply_m(&r);
        let rho_new = r.dot(&z);
        rel = (rho_new.max(0.0)).sqrt() / norm0;
        history.push(rel);
        iterations = it + 1;
        alphas.push(alpha);
        if rel <= tol || rho_new.sqrt() <= ABS_TOL {
            converged = true;
            break;
        }
        let beta = rho_new / rho;
        betas.push(beta);
        rho = rho_new;
        p = &z + &p * beta;
    }

    let (ritz_min, ritz_max) = lanczos_extremes(&alphas, &betas);
    let kappa = if ritz_min > 0.0 { ritz_max / ritz_min } else { f64::INFINITY };
    Ok((
        x,
        SolveReport {
            iterations,
            residual_history: history,
            ritz_min,
            ritz_max,
            kappa,
            converged,
            achieved_tol: rel,
        },
    ))
}

/// Extreme eigenvalues of the Lanczos tridiagonal assembled from the PCG
/// alpha and beta coefficients.
fn lanczos_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    if k == 0 {
        return (1.0, 1.0);
    }
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut d = 1.0 / alphas[i];
        if i > 0 {
            d += betas[i - 1] / alphas[i - 1];
        }
        t[(i, i)] = d;
        if i + 1 < k {
            let off = betas[i].sqrt() / alphas[i];
            t[(i, i + 1)] = off;
            t[(i + 1, i)] = off;
        }
    }
    let eig = t.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Dense spectrum of the preconditioned operator M A, formed column by
/// column and symmetrized in the A-inner product: the eigenvalues of
/// (A M A) w = lambda A w are exactly those of M A.
pub fn explicit_spectrum_oracle<A, M>(apply_a: A, apply_m: M, n: usize) -> Result<Vec<f64>>
where
    A: Fn(&DVector<f64>) -> DVector<f64>,
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    const LIMIT: usize = 2000;
    if n > LIMIT {
        return Err(Error::OracleTooLarge { dim: n, limit: LIMIT });
    }
    let mut a = DMatrix::zeros(n, n);
    let mut ma = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let aj = apply_a(&e);
        ma.set_column(j, &apply_m(&aj));
        a.set_column(j, &aj);
    }
    let a_sym = (&a + a.transpose()) * 0.5;
    let ama = &a_sym * &ma;
    let ama_sym = (&ama + ama.transpose()) * 0.5;
    let eig = eig_sym_generalized(&ama_sym, &a_sym)?;
    let mut vals = eig.eigenvalues;
    vals.reverse(); // ascending
    Ok(vals)
}

/// Condition number from an explicit spectrum.
pub fn spectrum_condition(eigs: &[f64]) -> f64 {
    let lo = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi / lo
}
