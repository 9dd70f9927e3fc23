//! Cross-module pipeline checks: interface reduction versus the plain
//! multilevel form, spectrum oracles, and harness determinism.

use nalgebra::DVector;

use ambddc::bddc::level::Scaling;
use ambddc::fem::ElasticMaterial;
use ambddc::harness::{run_experiment, ExperimentConfig};
use ambddc::krylov::{explicit_spectrum_oracle, pcg, pcg_traced, spectrum_condition};
use ambddc::setup::{self, ConstraintMode, JagSpec, SetupConfig};

fn setup_config(nx: usize, k: usize, reduced: bool) -> SetupConfig {
    SetupConfig {
        nx,
        ny: nx,
        material: ElasticMaterial::new(1.0, 2.0).unwrap(),
        subs: (k, k),
        agglomerate: vec![],
        jags: vec![],
        mode: ConstraintMode::Corners,
        tau: f64::INFINITY,
        scaling: Scaling::Stiffness,
        reduced,
    }
}

fn experiment_config(text: &str) -> ExperimentConfig {
    let table: toml::Table = text.parse().unwrap();
    ExperimentConfig::from_table(&table).unwrap()
}

#[test]
fn reduced_and_unreduced_paths_produce_identical_iterates() {
    let mut cfg = setup_config(16, 2, true);
    let reduced = setup::build(&cfg).unwrap();
    cfg.reduced = false;
    let full = setup::build(&cfg).unwrap();

    let f = reduced.default_rhs();
    let pre_r = &reduced.preconditioner;
    let pre_f = &full.preconditioner;

    let g = pre_r.reduce_rhs(&f);
    let mut reduced_iterates: Vec<DVector<f64>> = Vec::new();
    let (x_red, rep_r) = pcg_traced(
        |v| pre_r.apply_operator(v),
        |v| pre_r.apply(v),
        &g,
        1e-8,
        200,
        |_, x| reduced_iterates.push(x.clone()),
    )
    .unwrap();

    // start the full iteration from the interior lift so the residual is
    // interface-only; iterates then track the reduced ones exactly
    let lift = pre_f.interior_lift(&f);
    let b = &f - full.system.matrix.matvec(&lift);
    let mut full_iterates: Vec<DVector<f64>> = Vec::new();
    let (x_full, rep_f) = pcg_traced(
        |v| pre_f.apply_operator(v),
        |v| pre_f.apply(v),
        &b,
        1e-8,
        200,
        |_, x| full_iterates.push(x.clone()),
    )
    .unwrap();

    assert_eq!(rep_r.iterations, rep_f.iterations, "same iteration counts");
    assert!(
        (rep_r.kappa - rep_f.kappa).abs() <= 1e-6 * rep_f.kappa,
        "kappa {} vs {}",
        rep_r.kappa,
        rep_f.kappa
    );
    let scale = x_red.amax().max(1e-12);
    for (yr, xf) in reduced_iterates.iter().zip(&full_iterates) {
        let xf_interface = pre_r.gather_interface(xf);
        assert!(
            (yr - &xf_interface).amax() <= 1e-9 * scale,
            "iterates diverge beyond tolerance"
        );
    }

    // both final solutions solve the same problem
    let u_red = pre_r.recover_full(&f, &x_red);
    let u_full = &lift + x_full;
    assert!((&u_red - &u_full).amax() <= 1e-8 * u_full.amax());
    let resid = &f - full.system.matrix.matvec(&u_full);
    assert!(resid.norm() <= 1e-6 * f.norm());
}

#[test]
fn lanczos_kappa_matches_explicit_spectrum_oracle() {
    // 8x8 mesh, 2x2 substructures: dense oracle on the interface operator
    let built = setup::build(&setup_config(8, 2, true)).unwrap();
    let pre = &built.preconditioner;
    let n = pre.solve_dim();
    let eigs = explicit_spectrum_oracle(|v| pre.apply_operator(v), |v| pre.apply(v), n).unwrap();
    assert!(eigs.iter().all(|&l| l > 0.0), "spectrum must be positive");
    let lambda_min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(
        lambda_min >= 1.0 - 1e-6,
        "preconditioned spectrum dips below one: {lambda_min}"
    );
    let kappa_truth = spectrum_condition(&eigs);

    // a seeded random right-hand side excites the whole spectrum, which
    // the physical (symmetric) load does not
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let (_, rep) = pcg(
        |v| pre.apply_operator(v),
        |v| pre.apply(v),
        &g,
        1e-8,
        200,
    )
    .unwrap();
    assert!(rep.converged);
    assert!(
        (rep.kappa - kappa_truth).abs() <= 0.05 * kappa_truth,
        "Lanczos {} vs oracle {}",
        rep.kappa,
        kappa_truth
    );
    assert!(rep.kappa <= kappa_truth * 1.05);
}

#[test]
fn unreduced_operator_spectrum_also_stays_above_one() {
    let built = setup::build(&setup_config(8, 2, false)).unwrap();
    let pre = &built.preconditioner;
    let n = pre.solve_dim();
    let eigs = explicit_spectrum_oracle(|v| pre.apply_operator(v), |v| pre.apply(v), n).unwrap();
    let lambda_min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(lambda_min >= 1.0 - 1e-6);
}

#[test]
fn infinite_threshold_equals_corners_only() {
    let corners = experiment_config(
        "nx = 16\nny = 16\nsubs_x = 2\nsubs_y = 2\nmode = \"corners\"\njag1_s = 0\njag1_t = 1\n",
    );
    let adaptive_inf = experiment_config(
        "nx = 16\nny = 16\nsubs_x = 2\nsubs_y = 2\nmode = \"adaptive\"\ntau = \"inf\"\njag1_s = 0\njag1_t = 1\n",
    );
    let a = run_experiment(&corners, None).unwrap();
    let b = run_experiment(&adaptive_inf, None).unwrap();
    assert_eq!(a.row.nc, b.row.nc);
    assert_eq!(a.row.iterations, b.row.iterations);
    assert_eq!(a.row.kappa.to_bits(), b.row.kappa.to_bits());
    assert!(b.row.omega_tilde.is_none());
}

#[test]
fn adaptive_beats_corners_on_jagged_problem() {
    let base = "nx = 32\nny = 32\nsubs_x = 4\nsubs_y = 4\njag1_s = 9\njag1_t = 10\n";
    let corners = experiment_config(&format!("{base}mode = \"corners\"\n"));
    let adaptive = experiment_config(&format!("{base}mode = \"adaptive\"\ntau = 2.0\n"));
    let a = run_experiment(&corners, None).unwrap();
    let b = run_experiment(&adaptive, None).unwrap();
    assert!(a.report.converged && b.report.converged);
    assert!(
        b.row.kappa < a.row.kappa,
        "enrichment should improve conditioning ({} vs {})",
        b.row.kappa,
        a.row.kappa
    );
    assert!(b.row.iterations <= a.row.iterations);
    assert!(b.row.nc[0] > a.row.nc[0]);
}

#[test]
fn rerunning_a_config_is_byte_identical() {
    let cfg = experiment_config(
        "nx = 16\nny = 16\nsubs_x = 2\nsubs_y = 2\nmode = \"adaptive\"\ntau = 2.0\nseed = 7\njag1_s = 0\njag1_t = 1\n",
    );
    let base = std::env::temp_dir().join("ambddc_pipeline_determinism");
    let _ = std::fs::remove_dir_all(&base);
    let out1 = base.join("run1");
    let out2 = base.join("run2");
    run_experiment(&cfg, Some(&out1)).unwrap();
    run_experiment(&cfg, Some(&out2)).unwrap();
    for name in ["summary.csv", "l2_tau2/residuals.csv", "l2_tau2/spectra_level1.csv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn three_level_jagged_setup_converges_and_verifies() {
    let cfg = ExperimentConfig {
        label: None,
        nx: 32,
        ny: 32,
        lambda: 1.0,
        mu: 2.0,
        subs_x: 4,
        subs_y: 4,
        levels: 3,
        agglomerate: vec![(2, 2)],
        jags: vec![
            JagSpec { level: 1, pair: (9, 10), amplitude: 1, period: 2 },
            JagSpec { level: 2, pair: (2, 3), amplitude: 1, period: 2 },
        ],
        mode: ConstraintMode::Adaptive,
        tau: 3.0,
        tol: 1e-8,
        max_it: 300,
        seed: 0,
        reduction: true,
        scaling: Scaling::Stiffness,
        dump_matrix_market: false,
    };
    let out = run_experiment(&cfg, None).unwrap();
    assert!(out.report.converged);
    let f = out.setup.default_rhs();
    let r = &f - out.setup.system.matrix.matvec(&out.solution);
    assert!(r.norm() <= 1e-6 * f.norm());
    // the indicator respects the two-level product bound
    let ind = out.setup.indicator.as_ref().unwrap();
    assert!(ind.omega_tilde <= 3.0f64.powi(2) * (1.0 + 1e-5));
    for b in out.setup.verify_pair_bounds(3.0).unwrap() {
        assert!(
            b.top <= 3.0 * (1.0 + 1e-6),
            "level {} pair {:?} top {}",
            b.level,
            b.pair,
            b.top
        );
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .unwrap()
        .to_path_buf();
    for name in ["configs/desk_l2.toml", "configs/desk_l3.toml"] {
        let cfg = ExperimentConfig::load(&root.join(name), &[]).unwrap();
        assert_eq!((cfg.nx, cfg.ny), (64, 64));
        assert_eq!((cfg.subs_x, cfg.subs_y), (4, 4));
        assert_eq!(cfg.mode, ConstraintMode::Adaptive);
        cfg.to_setup().unwrap();
    }
    let l3 = ExperimentConfig::load(&root.join("configs/desk_l3.toml"), &[]).unwrap();
    assert_eq!(l3.levels, 3);
    assert_eq!(l3.jags.len(), 2);
}

#[test]
fn multiplicity_scaling_also_converges() {
    let cfg = experiment_config(
        "nx = 16\nny = 16\nsubs_x = 2\nsubs_y = 2\nmode = \"corners\"\nscaling = \"multiplicity\"\n",
    );
    let out = run_experiment(&cfg, None).unwrap();
    assert!(out.report.converged);
}

#[test]
fn spectra_csv_has_one_row_per_pair() {
    let cfg = experiment_config(
        "nx = 16\nny = 16\nsubs_x = 2\nsubs_y = 2\nmode = \"adaptive\"\ntau = 2.0\njag1_s = 0\njag1_t = 1\n",
    );
    let out = run_experiment(&cfg, None).unwrap();
    let spectra = &out.setup.spectra[0];
    let dir = std::env::temp_dir().join("ambddc_spectra_rows");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("s.csv");
    ambddc::harness::emit_spectra(&path, spectra).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + spectra.pairs.len());
    assert_eq!(
        spectra.pairs.len(),
        out.setup.preconditioner.levels[0].assembly.globs.adjacency.len()
    );
}

#[test]
fn iteration_counts_are_element_order_invariant() {
    use ambddc::bddc::level::{build_averaging, LevelAssembly};
    use ambddc::bddc::{CoarseSelection, LevelOps, MultilevelBddc};
    use ambddc::decomposition::{
        classify_globs, partition_regular_grid, select_initial_corners, LevelSpace,
    };
    use ambddc::fem::{
        apply_dirichlet, assemble_stiffness, build_rhs, build_unit_square_mesh, unit_body_force,
    };

    let mat = ElasticMaterial::new(1.0, 2.0).unwrap();
    let mut counts = Vec::new();
    for reverse in [false, true] {
        let mut mesh = build_unit_square_mesh(16, 16).unwrap();
        let mut partition = partition_regular_grid((16, 16), 2, 2, 1).unwrap();
        if reverse {
            mesh.elems.reverse();
            partition.elem_to_sub.reverse();
        }
        let a = assemble_stiffness(&mesh, &mat);
        let sys = apply_dirichlet(&a, &mesh).unwrap();
        let f = build_rhs(&mesh, &sys, unit_body_force);
        let space = LevelSpace::from_mesh(&mesh, &mat, &sys);
        let raw = classify_globs(&space, &partition).unwrap();
        let globs = select_initial_corners(&raw, &space);
        let assembly = LevelAssembly::build(space, partition, globs).unwrap();
        let selection = CoarseSelection::build_initial(&assembly.space, &assembly.globs, false);
        let averaging = build_averaging(&assembly, Scaling::Stiffness).unwrap();
        let ops = LevelOps::finalize(assembly, selection, averaging).unwrap();
        let pre = MultilevelBddc::new(vec![ops], true).unwrap();
        let g = pre.reduce_rhs(&f);
        let (_, rep) = pcg(|v| pre.apply_operator(v), |v| pre.apply(v), &g, 1e-8, 200).unwrap();
        assert!(rep.converged);
        counts.push(rep.iterations);
    }
    assert_eq!(counts[0], counts[1]);
}

#[test]
fn unreduced_production_run_matches_reduced_solution() {
    let base = "nx = 16\nny = 16\nsubs_x = 2\nsubs_y = 2\nmode = \"corners\"\n";
    let reduced = experiment_config(base);
    let unreduced = experiment_config(&format!("{base}reduction = false\n"));
    let a = run_experiment(&reduced, None).unwrap();
    let b = run_experiment(&unreduced, None).unwrap();
    assert!((&a.solution - &b.solution).amax() <= 1e-7 * a.solution.amax());
}
