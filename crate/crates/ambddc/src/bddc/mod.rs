//! Per-level BDDC operators and the multilevel preconditioner.

pub mod constraints;
pub mod level;
pub mod preconditioner;

pub use constraints::{CoarseDof, CoarseDofKind, CoarseSelection, GlobRef};
pub use level::{build_averaging, AveragingOperator, LevelAssembly, LevelOps, Scaling, SubOps};
pub use preconditioner::MultilevelBddc;

#[cfg(test)]
mod tests {
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::decomposition::{
        classify_globs, partition_regular_grid, select_initial_corners, LevelSpace,
    };
    use crate::fem::{
        apply_dirichlet, assemble_stiffness, build_unit_square_mesh, ElasticMaterial,
    };
    use crate::setup::{self, ConstraintMode, SetupConfig};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn assembly_for(nx: usize, k: usize) -> (LevelAssembly, CoarseSelection) {
        let mesh = build_unit_square_mesh(nx, nx).unwrap();
        let mat = ElasticMaterial::new(1.0, 2.0).unwrap();
        let a = assemble_stiffness(&mesh, &mat);
        let sys = apply_dirichlet(&a, &mesh).unwrap();
        let space = LevelSpace::from_mesh(&mesh, &mat, &sys);
        let p = partition_regular_grid((nx, nx), k, k, 1).unwrap();
        let raw = classify_globs(&space, &p).unwrap();
        let globs = select_initial_corners(&raw, &space);
        let assembly = LevelAssembly::build(space, p, globs).unwrap();
        let selection = CoarseSelection::build_initial(&assembly.space, &assembly.globs, false);
        (assembly, selection)
    }

    fn ops_for(nx: usize, k: usize, edge_averages: bool) -> LevelOps {
        let (assembly, _) = assembly_for(nx, k);
        let selection =
            CoarseSelection::build_initial(&assembly.space, &assembly.globs, edge_averages);
        let averaging = build_averaging(&assembly, Scaling::Stiffness).unwrap();
        LevelOps::finalize(assembly, selection, averaging).unwrap()
    }

    fn setup_for(nx: usize, k: usize) -> setup::BddcSetup {
        let cfg = SetupConfig {
            nx,
            ny: nx,
            material: ElasticMaterial::new(1.0, 2.0).unwrap(),
            subs: (k, k),
            agglomerate: vec![],
            jags: vec![],
            mode: ConstraintMode::Corners,
            tau: f64::INFINITY,
            scaling: Scaling::Stiffness,
            reduced: false,
        };
        setup::build(&cfg).unwrap()
    }

    #[test]
    fn corner_constraints_count_two_per_node() {
        let (assembly, selection) = assembly_for(8, 2);
        assert_eq!(
            selection.n_coarse(),
            2 * assembly.globs.corners.len(),
            "two dofs per corner node"
        );
        for dof in &selection.dofs {
            assert_eq!(dof.kind, CoarseDofKind::CornerValue);
            assert_eq!(dof.column.len(), 1);
            assert_eq!(dof.column[0].1, 1.0);
        }
    }

    #[test]
    fn edge_averages_have_uniform_weights() {
        let (assembly, _) = assembly_for(8, 2);
        let selection = CoarseSelection::build_initial(&assembly.space, &assembly.globs, true);
        let averages: Vec<&CoarseDof> = selection
            .dofs
            .iter()
            .filter(|d| matches!(d.kind, CoarseDofKind::EdgeAverage(_)))
            .collect();
        assert_eq!(averages.len(), 2 * assembly.globs.edges.len());
        for dof in averages {
            let GlobRef::Edge(ei) = dof.glob else {
                panic!("average not on an edge");
            };
            let n = assembly.globs.edges[ei].nodes.len();
            assert_eq!(dof.column.len(), n);
            for &(_, w) in &dof.column {
                assert_eq!(w, 1.0 / n as f64);
            }
        }
    }

    #[test]
    fn constraint_restriction_identity_holds() {
        // C_s (R_s u) agrees with the global coarse evaluation Q_P' u
        let (assembly, selection) = assembly_for(12, 3);
        let mut r = rng(5);
        let u = DVector::from_fn(assembly.n_dofs(), |_, _| r.gen_range(-1.0..1.0));
        let global: Vec<f64> = selection
            .dofs
            .iter()
            .map(|d| d.column.iter().map(|&(g, v)| v * u[g]).sum())
            .collect();
        for sub in &assembly.subs {
            let (ids, c) = selection.rows_for_sub(&assembly.globs, &sub.geom);
            let local = DVector::from_fn(sub.geom.n_local(), |i, _| u[sub.geom.dofs[i]]);
            let vals = &c * &local;
            for (row, &id) in ids.iter().enumerate() {
                assert!((vals[row] - global[id]).abs() < 1e-12 * global[id].abs().max(1.0));
            }
        }
    }

    #[test]
    fn averaging_weights_are_half_on_symmetric_pairs() {
        let ops = ops_for(8, 2, false);
        let assembly = &ops.assembly;
        for &d in &assembly.interface_dofs {
            let sharing = assembly.sharing_of_dof(d);
            if sharing.len() == 2 {
                let w = ops
                    .averaging
                    .pair_weight(&assembly.subs, sharing[0], sharing[1], d);
                assert!((w - 0.5).abs() < 1e-12, "uniform material gives 1/2");
            }
        }
    }

    #[test]
    fn averaging_weights_sum_to_one() {
        let ops = ops_for(12, 3, false);
        let assembly = &ops.assembly;
        for d in 0..assembly.n_dofs() {
            let mut total = 0.0;
            for (s, sub) in assembly.subs.iter().enumerate() {
                let li = sub.geom.local_of[d];
                if li != usize::MAX {
                    total += ops.averaging.weights[s][li];
                }
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_restores_continuous_vectors() {
        let ops = ops_for(8, 2, false);
        let mut r = rng(9);
        let u = DVector::from_fn(ops.n_dofs(), |_, _| r.gen_range(-1.0..1.0));
        let broken: Vec<DVector<f64>> = ops
            .assembly
            .subs
            .iter()
            .map(|sub| DVector::from_fn(sub.geom.n_local(), |i, _| u[sub.geom.dofs[i]]))
            .collect();
        let averaged = ops.average(&broken);
        assert!((&averaged - &u).amax() < 1e-12);
        // idempotent: re-broadcasting and averaging changes nothing
        let rebroken: Vec<DVector<f64>> = ops
            .assembly
            .subs
            .iter()
            .map(|sub| DVector::from_fn(sub.geom.n_local(), |i, _| averaged[sub.geom.dofs[i]]))
            .collect();
        assert!((ops.average(&rebroken) - &averaged).amax() < 1e-12);
    }

    #[test]
    fn coarse_basis_has_unit_coarse_dofs() {
        let ops = ops_for(8, 2, false);
        for (s, psi) in ops.basis.iter().enumerate() {
            let c = &ops.sub_constraints[s];
            let eye = c * psi;
            let m = c.nrows();
            for i in 0..m {
                for j in 0..m {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((eye[(i, j)] - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn coarse_matrix_is_psd_with_rigid_modes_for_floating_substructures() {
        // 3x3 partition: the center substructure floats
        let ops = ops_for(12, 3, false);
        let center = 4;
        let kc = &ops.coarse_mats[center];
        let eig = kc.clone().symmetric_eigen();
        let max = eig.eigenvalues.amax();
        let nullity = eig
            .eigenvalues
            .iter()
            .filter(|&&l| l.abs() < 1e-9 * max)
            .count();
        assert_eq!(nullity, 3, "three rigid modes in the coarse nullspace");
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9 * max));
    }

    #[test]
    fn coarse_basis_is_energy_orthogonal_to_constrained_space() {
        let ops = ops_for(8, 2, false);
        let mut r = rng(17);
        for (s, sub) in ops.assembly.subs.iter().enumerate() {
            let c = &ops.sub_constraints[s];
            let psi = &ops.basis[s];
            let kpsi = &sub.stiffness * psi;
            let scale = kpsi.amax().max(1.0);
            for _ in 0..50 {
                let z = DVector::from_fn(sub.geom.n_local(), |_, _| r.gen_range(-1.0..1.0));
                // project z onto null C via the saddle solve with zero rhs
                let (zc, _) = crate::linalg::solve_saddle(
                    &nalgebra::DMatrix::identity(sub.geom.n_local(), sub.geom.n_local()),
                    c,
                    &z,
                    &DVector::zeros(c.nrows()),
                )
                .unwrap();
                let inner = kpsi.transpose() * &zc;
                assert!(
                    inner.amax() < 1e-9 * scale * zc.norm().max(1.0),
                    "basis must be a-orthogonal to zero-coarse-dof functions"
                );
            }
        }
    }

    #[test]
    fn delta_correction_of_zero_residual_is_zero() {
        let ops = ops_for(8, 2, false);
        let w = ops.delta_correction(&DVector::zeros(ops.n_dofs()));
        for ws in w {
            assert_eq!(ws.amax(), 0.0);
        }
    }

    #[test]
    fn delta_correction_has_zero_coarse_dofs_and_is_a_orthogonal_to_basis() {
        let ops = ops_for(8, 2, false);
        let mut r = rng(23);
        let rb = DVector::from_fn(ops.n_dofs(), |_, _| r.gen_range(-1.0..1.0));
        let w = ops.delta_correction(&rb);
        for (s, sub) in ops.assembly.subs.iter().enumerate() {
            let cw = &ops.sub_constraints[s] * &w[s];
            assert!(cw.amax() <= 1e-10 * w[s].amax().max(1.0));
            let inner = ops.basis[s].transpose() * (&sub.stiffness * &w[s]);
            let scale = (w[s].norm() * sub.stiffness.amax()).max(1.0);
            assert!(inner.amax() <= 1e-9 * scale);
        }
    }

    #[test]
    fn updated_residual_vanishes_on_interiors() {
        let ops = ops_for(8, 2, false);
        let mut r = rng(31);
        let res = DVector::from_fn(ops.n_dofs(), |_, _| r.gen_range(-1.0..1.0));
        let u_i = ops.interior_solve(&res);
        let r_b = &res - ops.assembly.stiffness.matvec(&u_i);
        for sub in &ops.assembly.subs {
            for &li in &sub.interior_locals {
                assert!(
                    r_b[sub.geom.dofs[li]].abs() < 1e-10 * res.amax(),
                    "interior residual survives the pre-correction"
                );
            }
        }
    }

    #[test]
    fn harmonic_interface_data_needs_no_post_correction() {
        let ops = ops_for(8, 2, false);
        let mut r = rng(37);
        // build a discrete harmonic u_b: interface values extended by
        // interior solves
        let mut u_b = DVector::zeros(ops.n_dofs());
        for &d in &ops.assembly.interface_dofs {
            u_b[d] = r.gen_range(-1.0..1.0);
        }
        let correction = ops.interior_solve(&-ops.assembly.stiffness.matvec(&u_b));
        u_b += &correction;
        let v_i = ops.interior_solve(&ops.assembly.stiffness.matvec(&u_b));
        assert!(v_i.amax() < 1e-9 * u_b.amax());
    }

    #[test]
    fn single_substructure_preconditioner_is_exact_inverse() {
        let built = setup_for(8, 1);
        let pre = &built.preconditioner;
        assert_eq!(pre.top_dim(), 0);
        let mut r = rng(41);
        let rhs = DVector::from_fn(built.system.n_free(), |_, _| r.gen_range(-1.0..1.0));
        let u = pre.apply(&rhs);
        let back = built.system.matrix.matvec(&u);
        assert!((back - &rhs).amax() < 1e-9 * rhs.amax());
    }

    #[test]
    fn preconditioner_is_symmetric_and_positive_definite() {
        for reduced in [false, true] {
            let cfg = SetupConfig {
                nx: 8,
                ny: 8,
                material: ElasticMaterial::new(1.0, 2.0).unwrap(),
                subs: (2, 2),
                agglomerate: vec![],
                jags: vec![],
                mode: ConstraintMode::Corners,
                tau: f64::INFINITY,
                scaling: Scaling::Stiffness,
                reduced,
            };
            let built = setup::build(&cfg).unwrap();
            let pre = &built.preconditioner;
            let n = pre.solve_dim();
            let mut r = rng(47);
            for _ in 0..10 {
                let r1 = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
                let r2 = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
                let m1 = pre.apply(&r1);
                let m2 = pre.apply(&r2);
                let s12 = m1.dot(&r2);
                let s21 = m2.dot(&r1);
                assert!(
                    (s12 - s21).abs() <= 1e-9 * s12.abs().max(s21.abs()).max(1e-12),
                    "asymmetry {s12} vs {s21} (reduced = {reduced})"
                );
            }
            for _ in 0..100 {
                let v = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
                assert!(pre.apply(&v).dot(&v) > 0.0);
            }
        }
    }

    #[test]
    fn space_decomposition_is_a_orthogonal() {
        // substructure corrections against coarse basis columns
        let ops = ops_for(12, 3, false);
        let mut r = rng(53);
        for trial in 0..5 {
            let rb = DVector::from_fn(ops.n_dofs(), |_, _| r.gen_range(-1.0..1.0));
            let w = ops.delta_correction(&rb);
            for (s, sub) in ops.assembly.subs.iter().enumerate() {
                let kw = &sub.stiffness * &w[s];
                let wnorm_a = w[s].dot(&kw).max(0.0).sqrt();
                for j in 0..ops.basis[s].ncols() {
                    let psi = ops.basis[s].column(j);
                    let kpsi = &sub.stiffness * psi;
                    let pnorm_a = psi.dot(&kpsi).max(0.0).sqrt();
                    let inner = psi.dot(&kw).abs();
                    assert!(
                        inner <= 1e-9 * (wnorm_a * pnorm_a).max(1e-12),
                        "trial {trial}: a(w_delta, psi_{j}) = {inner}"
                    );
                }
            }
        }
    }
}
