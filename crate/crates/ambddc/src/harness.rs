//! Experiment driver: flat key-value configuration, the assemble ->
//! decompose -> setup -> PCG pipeline, and CSV result tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::bddc::level::Scaling;
use crate::decomposition::composite_map;
use crate::error::{Error, Result};
use crate::fem::ElasticMaterial;
use crate::krylov::{pcg, SolveReport};
use crate::setup::{self, BddcSetup, ConstraintMode, JagSpec, SetupConfig};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    pub nx: usize,
    pub ny: usize,
    pub lambda: f64,
    pub mu: f64,
    pub subs_x: usize,
    pub subs_y: usize,
    pub levels: usize,
    pub agglomerate: Vec<(usize, usize)>,
    pub jags: Vec<JagSpec>,
    pub mode: ConstraintMode,
    pub tau: f64,
    pub tol: f64,
    pub max_it: usize,
    pub seed: u64,
    pub reduction: bool,
    pub scaling: Scaling,
    pub dump_matrix_market: bool,
}

fn get<'t>(table: &'t toml::Table, key: &str) -> Option<&'t toml::Value> {
    table.get(key)
}

fn get_usize(table: &toml::Table, key: &str, default: Option<usize>) -> Result<usize> {
    match get(table, key) {
        Some(v) => v
            .as_integer()
            .filter(|&i| i >= 0)
            .map(|i| i as usize)
            .ok_or_else(|| Error::Config(format!("{key} must be a non-negative integer"))),
        None => default.ok_or_else(|| Error::Config(format!("missing key {key}"))),
    }
}

fn get_f64(table: &toml::Table, key: &str, default: Option<f64>) -> Result<f64> {
    match get(table, key) {
        Some(v) => v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .ok_or_else(|| Error::Config(format!("{key} must be a number"))),
        None => default.ok_or_else(|| Error::Config(format!("missing key {key}"))),
    }
}

fn get_bool(table: &toml::Table, key: &str, default: bool) -> Result<bool> {
    match get(table, key) {
        Some(v) => v
            .as_bool()
            .ok_or_else(|| Error::Config(format!("{key} must be a boolean"))),
        None => Ok(default),
    }
}

impl ExperimentConfig {
    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let nx = get_usize(table, "nx", None)?;
        let ny = get_usize(table, "ny", None)?;
        let lambda = get_f64(table, "lambda", Some(1.0))?;
        let mu = get_f64(table, "mu", Some(2.0))?;
        let subs_x = get_usize(table, "subs_x", None)?;
        let subs_y = get_usize(table, "subs_y", None)?;
        let levels = get_usize(table, "levels", Some(2))?;
        if levels < 2 {
            return Err(Error::Config("levels must be at least 2".into()));
        }
        let mut agglomerate = Vec::new();
        for k in 1..levels.saturating_sub(1) {
            let fx = get_usize(table, &format!("agg{k}_x"), None)?;
            let fy = get_usize(table, &format!("agg{k}_y"), None)?;
            agglomerate.push((fx, fy));
        }
        let mut jags = Vec::new();
        for level in 1..levels {
            let skey = format!("jag{level}_s");
            if get(table, &skey).is_some() {
                jags.push(JagSpec {
                    level,
                    pair: (
                        get_usize(table, &skey, None)?,
                        get_usize(table, &format!("jag{level}_t"), None)?,
                    ),
                    amplitude: get_usize(table, &format!("jag{level}_amplitude"), Some(1))?,
                    period: get_usize(table, &format!("jag{level}_period"), Some(2))?,
                });
            }
        }
        let mode = match get(table, "mode").and_then(|v| v.as_str()).unwrap_or("corners") {
            "corners" | "c" => ConstraintMode::Corners,
            "corners+edges" | "c+e" => ConstraintMode::CornersEdges,
            "adaptive" => ConstraintMode::Adaptive,
            other => {
                return Err(Error::Config(format!(
                    "mode must be corners, corners+edges or adaptive, got {other}"
                )))
            }
        };
        let tau = match get(table, "tau") {
            Some(v) => match v.as_str() {
                Some("inf") | Some("infinity") => f64::INFINITY,
                Some(other) => {
                    return Err(Error::Config(format!("tau must be a number or \"inf\", got {other}")))
                }
                None => get_f64(table, "tau", None)?,
            },
            None => f64::INFINITY,
        };
        let scaling = match get(table, "scaling").and_then(|v| v.as_str()).unwrap_or("stiffness") {
            "stiffness" => Scaling::Stiffness,
            "multiplicity" => Scaling::Multiplicity,
            other => {
                return Err(Error::Config(format!(
                    "scaling must be stiffness or multiplicity, got {other}"
                )))
            }
        };
        Ok(ExperimentConfig {
            label: get(table, "label").and_then(|v| v.as_str()).map(String::from),
            nx,
            ny,
            lambda,
            mu,
            subs_x,
            subs_y,
            levels,
            agglomerate,
            jags,
            mode,
            tau,
            tol: get_f64(table, "tol", Some(1e-8))?,
            max_it: get_usize(table, "max_it", Some(500))?,
            seed: get_usize(table, "seed", Some(0))? as u64,
            reduction: get_bool(table, "reduction", true)?,
            scaling,
            dump_matrix_market: get_bool(table, "dump_matrix_market", false)?,
        })
    }

    /// Loads a config file and applies `key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        apply_overrides(&mut table, overrides)?;
        Self::from_table(&table)
    }

    pub fn to_setup(&self) -> Result<SetupConfig> {
        Ok(SetupConfig {
            nx: self.nx,
            ny: self.ny,
            material: ElasticMaterial::new(self.lambda, self.mu)?,
            subs: (self.subs_x, self.subs_y),
            agglomerate: self.agglomerate.clone(),
            jags: self.jags.clone(),
            mode: self.mode,
            tau: self.tau,
            scaling: self.scaling,
            reduced: self.reduction,
        })
    }

    pub fn default_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let tail = match self.mode {
            ConstraintMode::Corners => "c".to_string(),
            ConstraintMode::CornersEdges => "ce".to_string(),
            ConstraintMode::Adaptive => {
                if self.tau.is_infinite() {
                    "tauinf".to_string()
                } else {
                    format!("tau{}", format_tau(self.tau))
                }
            }
        };
        format!("l{}_{}", self.levels, tail)
    }

    fn constraint_label(&self) -> String {
        match self.mode {
            ConstraintMode::Corners => "c".to_string(),
            ConstraintMode::CornersEdges => "c+e".to_string(),
            ConstraintMode::Adaptive => {
                if self.tau.is_infinite() {
                    "inf(=c)".to_string()
                } else {
                    format_tau(self.tau)
                }
            }
        }
    }
}

fn format_tau(tau: f64) -> String {
    if tau == tau.trunc() {
        format!("{}", tau as i64)
    } else {
        format!("{tau}")
    }
}

pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be key=value, got {ov}")))?;
        let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
            Ok(t) => t["v"].clone(),
            Err(_) => toml::Value::String(value.to_string()),
        };
        table.insert(key.trim().to_string(), parsed);
    }
    Ok(())
}

/// One line of a result table.
#[derive(Debug, Clone)]
pub struct ResultRow {
    /// Constraint mode or threshold, as the tables label it.
    pub label: String,
    /// Threshold for adaptive rows, used only for ordering.
    pub tau: Option<f64>,
    /// Coarse dofs per decomposition level.
    pub nc: Vec<usize>,
    /// Largest directly solved coarse block relative to the average
    /// subdomain problem.
    pub c_ratio: f64,
    pub omega_tilde: Option<f64>,
    pub kappa: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ResultRow {
    fn csv_line(&self) -> String {
        let nc = self
            .nc
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("+");
        let omega = self
            .omega_tilde
            .map(|o| format!("{o:.4}"))
            .unwrap_or_default();
        format!(
            "{},{},{:.1},{},{:.4},{}\n",
            self.label, nc, self.c_ratio, omega, self.kappa, self.iterations
        )
    }
}

/// Counting rule for the table columns, written above the header line.
/// Multilevel Nc entries are joined with '+', level 1 first; every level
/// counts all of its selection columns, promoted corners included.
pub const SUMMARY_NOTE: &str = "# Nc: coarse dofs per level (level 1 first, '+'-joined); \
C: largest directly factored coarse block over the mean subdomain size\n";

pub const SUMMARY_HEADER: &str = "constraint/tau,Nc,C,omega_tilde,kappa,it\n";

pub struct ExperimentOutcome {
    pub row: ResultRow,
    pub report: SolveReport,
    pub setup: BddcSetup,
    pub solution: DVector<f64>,
}

/// Runs the full pipeline for one configuration; when `out_dir` is given,
/// appends the summary row and writes the per-run artifacts under
/// `<out_dir>/<label>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let built = setup::build(&cfg.to_setup()?)?;
    let f = built.default_rhs();
    let pre = &built.preconditioner;
    let (solution, report) = if cfg.reduction {
        let g = pre.reduce_rhs(&f);
        let (x, report) = pcg(
            |v| pre.apply_operator(v),
            |v| pre.apply(v),
            &g,
            cfg.tol,
            cfg.max_it,
        )?;
        (pre.recover_full(&f, &x), report)
    } else {
        pcg(
            |v| pre.apply_operator(v),
            |v| pre.apply(v),
            &f,
            cfg.tol,
            cfg.max_it,
        )?
    };

    let row = ResultRow {
        label: cfg.constraint_label(),
        tau: (cfg.mode == ConstraintMode::Adaptive).then_some(cfg.tau),
        nc: built.nc_per_level.clone(),
        c_ratio: coarse_size_ratio(&built),
        omega_tilde: built.indicator.as_ref().map(|i| i.omega_tilde),
        kappa: report.kappa,
        iterations: report.iterations,
        converged: report.converged,
    };

    if let Some(dir) = out_dir {
        write_run_artifacts(cfg, &built, &report, &row, dir)?;
    }

    Ok(ExperimentOutcome {
        row,
        report,
        setup: built,
        solution,
    })
}

/// Size of the largest directly factored coarse block, relative to the
/// average subdomain problem size. The level-l coarse problem is spread
/// over the level-(l+1) substructures; the top block is factored whole.
fn coarse_size_ratio(built: &BddcSetup) -> f64 {
    let n1 = built.partitions[0].n_subs();
    let avg_sub = built.system.n_free() as f64 / n1 as f64;
    let mut worst: f64 = 0.0;
    for (i, &nc) in built.nc_per_level.iter().enumerate() {
        let spread = if i + 1 < built.partitions.len() {
            built.partitions[i + 1].n_subs()
        } else {
            1
        };
        worst = worst.max(nc as f64 / spread as f64 / avg_sub);
    }
    worst
}

fn write_run_artifacts(
    cfg: &ExperimentConfig,
    built: &BddcSetup,
    report: &SolveReport,
    row: &ResultRow,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    append_summary(&dir.join("summary.csv"), row)?;

    let run_dir = dir.join(cfg.default_label());
    fs::create_dir_all(&run_dir)?;
    emit_residuals(&run_dir.join("residuals.csv"), report)?;
    emit_partition(&run_dir.join("partition.csv"), built)?;
    for spectra in &built.spectra {
        emit_spectra(
            &run_dir.join(format!("spectra_level{}.csv", spectra.level)),
            spectra,
        )?;
    }
    if cfg.dump_matrix_market {
        dump_matrix_market(&run_dir, built)?;
    }
    Ok(())
}

pub fn append_summary(path: &Path, row: &ResultRow) -> Result<()> {
    let existed = path.exists();
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if !existed {
        file.write_all(SUMMARY_NOTE.as_bytes())?;
        file.write_all(SUMMARY_HEADER.as_bytes())?;
    }
    file.write_all(row.csv_line().as_bytes())?;
    Ok(())
}

/// Writes a result table: adaptive rows are ordered by descending
/// threshold with the infinite row first; other rows keep their order.
pub fn emit_tables(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut fixed: Vec<&ResultRow> = rows.iter().filter(|r| r.tau.is_none()).collect();
    let mut adaptive: Vec<&ResultRow> = rows.iter().filter(|r| r.tau.is_some()).collect();
    adaptive.sort_by(|a, b| b.tau.unwrap().total_cmp(&a.tau.unwrap()));
    fixed.extend(adaptive);
    let mut text = String::from(SUMMARY_NOTE);
    text.push_str(SUMMARY_HEADER);
    for row in fixed {
        text.push_str(&row.csv_line());
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn emit_residuals(path: &Path, report: &SolveReport) -> Result<()> {
    let mut text = String::from("iter,rel_residual\n");
    for (i, r) in report.residual_history.iter().enumerate() {
        text.push_str(&format!("{i},{r:e}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn emit_spectra(path: &Path, spectra: &crate::adaptive::LevelSpectra) -> Result<()> {
    let mut text = String::from("s,t,lambda_1,lambda_2,lambda_3,lambda_4,lambda_5,lambda_6,lambda_7,lambda_8\n");
    for p in &spectra.pairs {
        let mut fields = vec![p.pair.0.to_string(), p.pair.1.to_string()];
        for k in 0..8 {
            fields.push(
                p.leading
                    .get(k)
                    .map(|l| format!("{l:.4}"))
                    .unwrap_or_default(),
            );
        }
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Element-to-substructure map of every level, over fine elements.
pub fn emit_partition(path: &Path, built: &BddcSetup) -> Result<()> {
    let mut header = String::from("element");
    for l in 1..=built.partitions.len() {
        header.push_str(&format!(",level_{l}"));
    }
    header.push('\n');
    let maps: Vec<Vec<usize>> = (1..=built.partitions.len())
        .map(|l| composite_map(&built.partitions[..l]))
        .collect();
    let mut text = header;
    for e in 0..built.partitions[0].n_elems() {
        let mut fields = vec![e.to_string()];
        for m in &maps {
            fields.push(m[e].to_string());
        }
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn dump_matrix_market(dir: &Path, built: &BddcSetup) -> Result<()> {
    let mut f = fs::File::create(dir.join("stiffness.mtx"))?;
    built.system.matrix.write_matrix_market(&mut f)?;
    for (i, ops) in built.preconditioner.levels.iter().enumerate() {
        let level = i + 1;
        let columns: Vec<Vec<(usize, f64)>> = ops
            .selection
            .dofs
            .iter()
            .map(|d| d.column.clone())
            .collect();
        let mut f = fs::File::create(dir.join(format!("qp_l{level}.mtx")))?;
        crate::sparse::write_matrix_market_general(&mut f, ops.n_dofs(), &columns)?;
        let coarse = crate::sparse::assemble(
            ops.n_coarse(),
            &ops.sub_coarse_ids,
            &ops.coarse_mats,
        );
        let mut f = fs::File::create(dir.join(format!("coarse_l{level}.mtx")))?;
        coarse.write_matrix_market(&mut f)?;
    }
    Ok(())
}

/// Runs the non-adaptive and adaptive families across level counts and
/// thresholds, one table file per family. Returns whether every run
/// converged.
pub fn run_sweep(base: &ExperimentConfig, out: &Path, taus: &[f64]) -> Result<bool> {
    fs::create_dir_all(out)?;
    let mut all_converged = true;
    let mut level_variants = vec![2usize];
    if base.levels > 2 {
        level_variants.push(base.levels);
    }
    for &levels in &level_variants {
        let make = |mode: ConstraintMode, tau: f64| -> ExperimentConfig {
            let mut c = base.clone();
            c.label = None;
            c.levels = levels;
            c.agglomerate = base.agglomerate[..levels - 2].to_vec();
            c.jags = base.jags.iter().copied().filter(|j| j.level < levels).collect();
            c.mode = mode;
            c.tau = tau;
            c
        };

        let mut rows = Vec::new();
        for mode in [ConstraintMode::Corners, ConstraintMode::CornersEdges] {
            let cfg = make(mode, f64::INFINITY);
            let outcome = run_experiment(&cfg, Some(out))?;
            all_converged &= outcome.report.converged;
            rows.push(outcome.row);
        }
        emit_tables(&out.join(format!("nonadaptive_l{levels}.csv")), &rows)?;

        let mut rows = Vec::new();
        let cfg = make(ConstraintMode::Adaptive, f64::INFINITY);
        let outcome = run_experiment(&cfg, Some(out))?;
        all_converged &= outcome.report.converged;
        rows.push(outcome.row);
        for &tau in taus {
            let cfg = make(ConstraintMode::Adaptive, tau);
            let outcome = run_experiment(&cfg, Some(out))?;
            all_converged &= outcome.report.converged;
            rows.push(outcome.row);
        }
        emit_tables(&out.join(format!("adaptive_l{levels}.csv")), &rows)?;
    }
    Ok(all_converged)
}
