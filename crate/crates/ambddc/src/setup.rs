//! End-to-end construction of the solver: mesh, hierarchy of partitions,
//! per-level coarse spaces (fixed or adaptively enriched), and the
//! assembled multilevel preconditioner.

use nalgebra::DVector;

use crate::adaptive::{
    adaptive_sweep, condition_indicator, verify_pair_bounds, IndicatorReport, LevelSpectra,
};
use crate::bddc::level::{build_averaging, LevelAssembly, LevelOps, Scaling};
use crate::bddc::{CoarseSelection, MultilevelBddc};
use crate::decomposition::{
    agglomerate, classify_globs, jag_interface_edge, partition_regular_grid,
    select_initial_corners, LevelSpace, Partition,
};
use crate::error::{Error, Result};
use crate::fem::{
    apply_dirichlet, assemble_stiffness, build_unit_square_mesh, ElasticMaterial, FreeSystem, Mesh,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// Corner constraints only.
    Corners,
    /// Corners plus arithmetic averages over each edge.
    CornersEdges,
    /// Corners plus eigenvector-generated edge constraints.
    Adaptive,
}

/// A sawtooth perturbation of one interface at one level.
#[derive(Debug, Clone, Copy)]
pub struct JagSpec {
    pub level: usize,
    pub pair: (usize, usize),
    pub amplitude: usize,
    pub period: usize,
}

#[derive(Debug, Clone)]
pub struct SetupConfig {
    pub nx: usize,
    pub ny: usize,
    pub material: ElasticMaterial,
    /// Level-1 substructure counts per axis.
    pub subs: (usize, usize),
    /// Agglomeration factors for each additional level (length L - 2).
    pub agglomerate: Vec<(usize, usize)>,
    pub jags: Vec<JagSpec>,
    pub mode: ConstraintMode,
    /// Eigenvalue threshold for adaptive enrichment; infinite means no
    /// enrichment happens and the run degenerates to corners only.
    pub tau: f64,
    pub scaling: Scaling,
    /// Fold the level-1 interior corrections into a Schur-complement
    /// preprocessing step (the default).
    pub reduced: bool,
}

impl SetupConfig {
    pub fn n_levels(&self) -> usize {
        2 + self.agglomerate.len()
    }
}

/// Everything a run needs: the problem, the preconditioner, and the
/// adaptive reports.
pub struct BddcSetup {
    pub mesh: Mesh,
    pub system: FreeSystem,
    pub preconditioner: MultilevelBddc,
    pub partitions: Vec<Partition>,
    pub spectra: Vec<LevelSpectra>,
    pub indicator: Option<IndicatorReport>,
    /// Coarse dof count of each decomposition level.
    pub nc_per_level: Vec<usize>,
}

pub fn build(cfg: &SetupConfig) -> Result<BddcSetup> {
    if cfg.mode == ConstraintMode::Adaptive && (cfg.tau.is_nan() || cfg.tau <= 1.0) {
        return Err(Error::Config(format!(
            "adaptive threshold tau = {} must exceed 1",
            cfg.tau
        )));
    }
    let mesh = build_unit_square_mesh(cfg.nx, cfg.ny)?;
    let full = assemble_stiffness(&mesh, &cfg.material);
    let system = apply_dirichlet(&full, &mesh)?;
    let mut space = LevelSpace::from_mesh(&mesh, &cfg.material, &system);

    // partitions for every decomposition level, jagged where requested
    let n_levels = cfg.n_levels();
    let mut partitions: Vec<Partition> = Vec::new();
    for level in 1..n_levels {
        let mut p = if level == 1 {
            partition_regular_grid((cfg.nx, cfg.ny), cfg.subs.0, cfg.subs.1, 1)?
        } else {
            let (fx, fy) = cfg.agglomerate[level - 2];
            agglomerate(partitions.last().unwrap(), fx, fy)?
        };
        for jag in cfg.jags.iter().filter(|j| j.level == level) {
            p = jag_interface_edge(&p, jag.pair, jag.amplitude, jag.period)?;
        }
        partitions.push(p);
    }

    let adaptive_on = cfg.mode == ConstraintMode::Adaptive && cfg.tau.is_finite();
    let mut levels: Vec<LevelOps> = Vec::new();
    let mut spectra: Vec<LevelSpectra> = Vec::new();
    let mut nc_per_level = Vec::new();
    for partition in partitions.iter() {
        let raw_globs = classify_globs(&space, partition)?;
        let globs = select_initial_corners(&raw_globs, &space);
        let assembly = LevelAssembly::build(space, partition.clone(), globs)?;
        let mut selection = CoarseSelection::build_initial(
            &assembly.space,
            &assembly.globs,
            cfg.mode == ConstraintMode::CornersEdges,
        );
        let averaging = build_averaging(&assembly, cfg.scaling)?;
        if adaptive_on {
            spectra.push(adaptive_sweep(&assembly, &averaging, &mut selection, cfg.tau)?);
        }
        nc_per_level.push(selection.n_coarse());
        let ops = LevelOps::finalize(assembly, selection, averaging)?;
        space = ops.next_space();
        levels.push(ops);
    }

    let preconditioner = MultilevelBddc::new(levels, cfg.reduced)?;
    let indicator = adaptive_on.then(|| condition_indicator(cfg.tau, &spectra));

    Ok(BddcSetup {
        mesh,
        system,
        preconditioner,
        partitions,
        spectra,
        indicator,
        nc_per_level,
    })
}

/// The recomputed top eigenvalue of one pair after augmentation.
#[derive(Debug, Clone, Copy)]
pub struct PairBound {
    pub level: usize,
    pub pair: (usize, usize),
    pub top: f64,
}

impl BddcSetup {
    /// Re-solves every pair eigenproblem against the final coarse
    /// selection; the reported top eigenvalues must not exceed the
    /// threshold used during enrichment.
    pub fn verify_pair_bounds(&self, tau: f64) -> Result<Vec<PairBound>> {
        let mut out = Vec::new();
        for ops in &self.preconditioner.levels {
            let bounds = verify_pair_bounds(&ops.assembly, &ops.averaging, &ops.selection, tau)?;
            for (pair, top) in bounds {
                out.push(PairBound {
                    level: ops.assembly.space.level,
                    pair,
                    top,
                });
            }
        }
        Ok(out)
    }

    /// The default uniform unit body force.
    pub fn default_rhs(&self) -> DVector<f64> {
        crate::fem::build_rhs(&self.mesh, &self.system, crate::fem::unit_body_force)
    }
}
