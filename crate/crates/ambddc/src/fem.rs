//! Structured Q1 meshes and plane-strain elasticity assembly on the unit
//! square, with homogeneous Dirichlet conditions on the whole boundary.
//!
//! Degrees of freedom are node-major with interleaved (u_x, u_y)
//! components. Boundary dofs are eliminated, not penalized, so every
//! downstream space is built over free dofs only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sparse::{self, SparseSymmetricMatrix};

/// Uniform quad mesh of the unit square.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    /// Node coordinate pairs, row-major (x fastest).
    pub coords: Vec<[f64; 2]>,
    /// Element connectivity, 4 nodes counterclockwise.
    pub elems: Vec<[usize; 4]>,
    /// True for nodes on the domain boundary.
    pub boundary: Vec<bool>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elems(&self) -> usize {
        self.elems.len()
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    /// Characteristic mesh size along x.
    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }
}

pub fn build_unit_square_mesh(nx: usize, ny: usize) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::MeshTooSmall { nx, ny });
    }
    let n_nodes = (nx + 1) * (ny + 1);
    let mut coords = Vec::with_capacity(n_nodes);
    let mut boundary = Vec::with_capacity(n_nodes);
    for iy in 0..=ny {
        for ix in 0..=nx {
            coords.push([ix as f64 / nx as f64, iy as f64 / ny as f64]);
            boundary.push(ix == 0 || ix == nx || iy == 0 || iy == ny);
        }
    }
    let mut elems = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let n0 = iy * (nx + 1) + ix;
            elems.push([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1]);
        }
    }
    Ok(Mesh {
        nx,
        ny,
        coords,
        elems,
        boundary,
    })
}

/// Isotropic material in Lamé parameters.
#[derive(Debug, Clone, Copy)]
pub struct ElasticMaterial {
    pub lambda: f64,
    pub mu: f64,
}

impl ElasticMaterial {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 0.0 || !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidMaterial { lambda, mu });
        }
        Ok(ElasticMaterial { lambda, mu })
    }
}

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Q1 shape function derivatives with respect to (xi, eta) at a point,
/// nodes ordered counterclockwise from (-1,-1).
fn q1_dshape(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta) / 4.0, -(1.0 - xi) / 4.0],
        [(1.0 - eta) / 4.0, -(1.0 + xi) / 4.0],
        [(1.0 + eta) / 4.0, (1.0 + xi) / 4.0],
        [-(1.0 + eta) / 4.0, (1.0 - xi) / 4.0],
    ]
}

/// Element stiffness for a square Q1 plane-strain element of side `h`,
/// 2 dofs per node, via 2x2 Gauss quadrature (exact here).
///
/// The result is independent of `h`: the 1/h^2 gradient scaling cancels
/// the h^2 area factor in 2D.
pub fn element_stiffness_q1(material: &ElasticMaterial, h: f64) -> DMatrix<f64> {
    element_stiffness_q1_rect(material, h, h)
}

/// Element stiffness for an axis-aligned hx-by-hy Q1 rectangle; meshes
/// with nx != ny produce these.
pub fn element_stiffness_q1_rect(material: &ElasticMaterial, hx: f64, hy: f64) -> DMatrix<f64> {
    assert!(hx > 0.0 && hy > 0.0, "element size must be positive");
    let (la, mu) = (material.lambda, material.mu);
    // plane strain, engineering shear strain ordering (exx, eyy, gxy)
    let d = DMatrix::from_row_slice(
        3,
        3,
        &[
            la + 2.0 * mu,
            la,
            0.0,
            la,
            la + 2.0 * mu,
            0.0,
            0.0,
            0.0,
            mu,
        ],
    );
    let (jx, jy) = (hx / 2.0, hy / 2.0);
    let det = jx * jy;
    let mut k = DMatrix::zeros(8, 8);
    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            let ds = q1_dshape(xi, eta);
            let mut b = DMatrix::zeros(3, 8);
            for (a, g) in ds.iter().enumerate() {
                let gx = g[0] / jx;
                let gy = g[1] / jy;
                b[(0, 2 * a)] = gx;
                b[(1, 2 * a + 1)] = gy;
                b[(2, 2 * a)] = gy;
                b[(2, 2 * a + 1)] = gx;
            }
            k += det * b.transpose() * &d * b;
        }
    }
    // enforce exact symmetry against rounding in the triple product
    let kt = k.transpose();
    (k + kt) * 0.5
}

/// Global stiffness over all dofs (2 per node), before boundary elimination.
pub fn assemble_stiffness(mesh: &Mesh, material: &ElasticMaterial) -> SparseSymmetricMatrix {
    let ke = element_stiffness_q1_rect(material, 1.0 / mesh.nx as f64, 1.0 / mesh.ny as f64);
    let elem_dofs: Vec<Vec<usize>> = mesh
        .elems
        .iter()
        .map(|nodes| {
            nodes
                .iter()
                .flat_map(|&n| [2 * n, 2 * n + 1])
                .collect::<Vec<_>>()
        })
        .collect();
    let elem_mats = vec![ke; mesh.n_elems()];
    sparse::assemble(2 * mesh.n_nodes(), &elem_dofs, &elem_mats)
}

/// Free-dof system after eliminating boundary rows and columns.
#[derive(Debug, Clone)]
pub struct FreeSystem {
    pub matrix: SparseSymmetricMatrix,
    /// Global (all-dof) index of each free dof.
    pub free_dofs: Vec<usize>,
    /// Map all-dof index -> free index, usize::MAX for constrained dofs.
    pub free_of: Vec<usize>,
}

impl FreeSystem {
    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }
}

pub fn apply_dirichlet(matrix: &SparseSymmetricMatrix, mesh: &Mesh) -> Result<FreeSystem> {
    assert_eq!(matrix.dim(), 2 * mesh.n_nodes());
    let mut free_of = vec![usize::MAX; 2 * mesh.n_nodes()];
    let mut free_dofs = Vec::new();
    for (n, &on_boundary) in mesh.boundary.iter().enumerate() {
        if !on_boundary {
            for c in 0..2 {
                free_of[2 * n + c] = free_dofs.len();
                free_dofs.push(2 * n + c);
            }
        }
    }
    if free_dofs.is_empty() {
        return Err(Error::AllDofsConstrained);
    }
    let mut triplets = Vec::new();
    for (gi, gj, v) in matrix.entries() {
        let (fi, fj) = (free_of[gi], free_of[gj]);
        if fi != usize::MAX && fj != usize::MAX {
            triplets.push((fi, fj, v));
        }
    }
    Ok(FreeSystem {
        matrix: SparseSymmetricMatrix::from_triplets(free_dofs.len(), triplets),
        free_dofs,
        free_of,
    })
}

/// Consistent load vector over free dofs for a body force field.
pub fn build_rhs<F>(mesh: &Mesh, system: &FreeSystem, body_force: F) -> DVector<f64>
where
    F: Fn([f64; 2]) -> [f64; 2],
{
    let jx = 1.0 / (2.0 * mesh.nx as f64);
    let jy = 1.0 / (2.0 * mesh.ny as f64);
    let det = jx * jy;
    let mut full = vec![0.0f64; 2 * mesh.n_nodes()];
    for quad in &mesh.elems {
        let x0 = mesh.coords[quad[0]];
        for &xi in &GAUSS_2 {
            for &eta in &GAUSS_2 {
                let shapes = [
                    (1.0 - xi) * (1.0 - eta) / 4.0,
                    (1.0 + xi) * (1.0 - eta) / 4.0,
                    (1.0 + xi) * (1.0 + eta) / 4.0,
                    (1.0 - xi) * (1.0 + eta) / 4.0,
                ];
                let px = x0[0] + (xi + 1.0) * jx;
                let py = x0[1] + (eta + 1.0) * jy;
                let f = body_force([px, py]);
                for (a, &n) in quad.iter().enumerate() {
                    full[2 * n] += det * shapes[a] * f[0];
                    full[2 * n + 1] += det * shapes[a] * f[1];
                }
            }
        }
    }
    DVector::from_iterator(
        system.n_free(),
        system.free_dofs.iter().map(|&g| full[g]),
    )
}

/// Uniform unit body force in both components, the default experiment load.
pub fn unit_body_force(_x: [f64; 2]) -> [f64; 2] {
    [1.0, 1.0]
}

/// Rigid body modes over all dofs: x-translation, y-translation, and
/// in-plane rotation about `center`.
pub fn rigid_body_modes(coords: &[[f64; 2]], center: [f64; 2]) -> DMatrix<f64> {
    let n = coords.len();
    let mut r = DMatrix::zeros(2 * n, 3);
    for (i, p) in coords.iter().enumerate() {
        r[(2 * i, 0)] = 1.0;
        r[(2 * i + 1, 1)] = 1.0;
        r[(2 * i, 2)] = -(p[1] - center[1]);
        r[(2 * i + 1, 2)] = p[0] - center[0];
    }
    r
}
