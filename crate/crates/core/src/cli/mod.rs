//! Batch driver behind the `redinv` binary.
//!
//! Every command reads one JSON config, writes CSV/JSON artifacts and a
//! `manifest.json` into the run's output directory. Snapshot sets and
//! piecewise families are cached under `cache/` keyed by a SHA-256 of the
//! config fragment that determines them.

pub mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affine_opt::{build_problem, primal_dual_solve, PrimalDualOptions};
use crate::benchmarks::{compare_estimators, held_out_grid, CompareConfig};
use crate::error::{Error, Result};
use crate::forward::{greedy_reduced_basis, parameter_grid, training_set_from, ParametricModel, TrainingSet};
use crate::joint::{geim, nested_greedy, JointRun};
use crate::linalg::Subspace;
use crate::omp::{collective_omp, worst_case_omp, GreedyOptions};
use crate::pbdw::{AffinePbdw, PbdwOperator};
use crate::piecewise::{build_family, AdmissibleFamily, FamilyData, Selection};
use crate::sensing::{Dictionary, ObservationSetup};

pub use config::ExperimentConfig;
use config::{MethodSpec, NoiseSpec, OmpVariant, SelectionSpec};
pub use report::{report, ReportRow};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pipeline stage selected on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Snapshots,
    Place,
    Fit,
    Estimate,
    Family,
    Benchmark,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Snapshots => "snapshots",
            Command::Place => "place",
            Command::Fit => "fit",
            Command::Estimate => "estimate",
            Command::Family => "family",
            Command::Benchmark => "benchmark",
        }
    }

    fn accepts(self, method: &MethodSpec) -> bool {
        use MethodSpec::*;
        match self {
            Command::Snapshots => true,
            Command::Place => matches!(method, OmpPlace(_) | Nested(_) | Geim(_)),
            Command::Fit => matches!(method, Pbdw(_) | AffineOpt(_)),
            Command::Estimate => matches!(method, Pbdw(_) | AffineOpt(_) | Piecewise(_)),
            Command::Family => matches!(method, Piecewise(_)),
            Command::Benchmark => matches!(method, Benchmark(_)),
        }
    }
}

/// Exit status for an error: 2 for configuration problems, 3 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    let root = match e {
        Error::Context { source, .. } => source.as_ref(),
        e => e,
    };
    if root.is_schema() || matches!(root, Error::Io { .. }) {
        2
    } else {
        3
    }
}

/// Worker-pool size: `REDINV_THREADS` overrides the flag; default 1.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let n = match std::env::var("REDINV_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| Error::Schema {
            path: "REDINV_THREADS".into(),
            message: format!("expected a positive integer, got {v:?}"),
        })?,
        Err(_) => flag.unwrap_or(1),
    };
    if n == 0 {
        return Err(Error::Schema {
            path: "threads".into(),
            message: "must be at least 1".into(),
        });
    }
    Ok(n)
}

/// Numbers shown by `report`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// `m(n)` of joint selections.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_of_n: Vec<usize>,
    /// `(σ, δ̃_σ)` pairs of benchmark runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta_tilde: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub command: String,
    pub method: String,
    pub version: String,
    pub config_sha256: String,
    pub threads: usize,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    /// SHA-256 of every artifact written.
    pub outputs: BTreeMap<String, String>,
    pub summary: Summary,
}

/// Result of a successful command.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    model: ParametricModel,
    timings: BTreeMap<String, f64>,
    outputs: BTreeMap<String, String>,
    summary: Summary,
}

impl Run {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f(self)?;
        *self.timings.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        Ok(r)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn cache_key(&self, parts: &impl Serialize) -> Result<String> {
        let bytes = serde_json::to_vec(&(VERSION, parts))?;
        Ok(sha256_hex(&bytes)[..16].to_string())
    }

    fn cache_path(&self, kind: &str, key: &str, ext: &str) -> PathBuf {
        self.out.join("cache").join(format!("{kind}-{key}.{ext}"))
    }

    /// Training set on the configured grid, cached.
    fn training(&mut self) -> Result<TrainingSet> {
        let grid = parameter_grid(self.model.param_box(), &self.cfg.training.grid)?;
        self.snapshot_set("snapshots", grid)
    }

    fn held_out(&mut self) -> Result<Option<TrainingSet>> {
        match self.cfg.training.held_out.clone() {
            Some(res) => {
                let grid = held_out_grid(self.model.param_box(), &res)?;
                Ok(Some(self.snapshot_set("held_out", grid)?))
            }
            None => Ok(None),
        }
    }

    fn snapshot_set(&mut self, kind: &str, params: Vec<Vec<f64>>) -> Result<TrainingSet> {
        let key = self.cache_key(&(&self.cfg.model, &params))?;
        let path = self.cache_path(kind, &key, "csv");
        if path.exists() {
            log::info!("reusing cached {kind} {}", path.display());
            return read_snapshots(&path, self.model.param_dim(), self.model.n_h());
        }
        let t = self.timed(kind, |r| training_set_from(&r.model, params))?;
        let bytes = snapshots_csv(&t)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(t)
    }

    fn dictionary(&self) -> Result<Dictionary> {
        self.cfg.build_dictionary(&self.model)
    }

    fn setup(&self, dict: &Dictionary) -> Result<ObservationSetup> {
        dict.observation(self.model.space(), &self.cfg.selected_sensors(dict))
    }

    fn error_table(&mut self, rel: &str, t: &TrainingSet, errors: &[f64]) -> Result<()> {
        let d = self.model.param_dim();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["index".to_string()];
        header.extend((0..d).map(|i| format!("y{i}")));
        header.push("error".into());
        wtr.write_record(&header)?;
        for (j, e) in errors.iter().enumerate() {
            let mut row = vec![j.to_string()];
            row.extend(t.params()[j].iter().map(|v| fmt(*v)));
            row.push(fmt(*e));
            wtr.write_record(&row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::io(rel, e.into_error()))?;
        self.write(rel, &bytes)?;
        let worst = errors.iter().cloned().fold(0.0, f64::max);
        self.summary.worst = Some(worst);
        self.summary.mean = Some(errors.iter().sum::<f64>() / errors.len().max(1) as f64);
        Ok(())
    }
}

fn snapshots_csv(t: &TrainingSet) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for j in 0..t.len() {
        let row: Vec<String> = t.params()[j]
            .iter()
            .copied()
            .chain(t.snapshots().column(j).iter().copied())
            .map(|v| format!("{v:e}"))
            .collect();
        wtr.write_record(&row)?;
    }
    wtr.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

fn read_snapshots(path: &Path, d: usize, n_h: usize) -> Result<TrainingSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut params = Vec::new();
    let mut cols = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("corrupt cache {}: {e}", path.display())))?;
        if vals.len() != d + n_h {
            return Err(Error::InvalidInput(format!("corrupt cache {}", path.display())));
        }
        params.push(vals[..d].to_vec());
        cols.push(DVector::from_column_slice(&vals[d..]));
    }
    TrainingSet::new(params, DMatrix::from_columns(&cols))
}

/// Executes `command` on the config at `config_path`.
pub fn run(command: Command, config_path: &Path, threads: usize) -> Result<RunOutcome> {
    let start = Instant::now();
    let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    if !command.accepts(&cfg.method) {
        return Err(schema(
            "method",
            format!("`{}` cannot run method `{}`", command.name(), cfg.method.name()),
        ));
    }
    let out = cfg.output_dir(config_path);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let model = cfg.build_model()?;
    let mut run = Run {
        cfg,
        out,
        model,
        timings: BTreeMap::new(),
        outputs: BTreeMap::new(),
        summary: Summary::default(),
    };
    let stage = match command {
        Command::Snapshots => snapshots(&mut run),
        Command::Place => place(&mut run),
        Command::Fit => fit(&mut run),
        Command::Estimate => estimate(&mut run),
        Command::Family => family(&mut run),
        Command::Benchmark => benchmark(&mut run),
    };
    stage.map_err(|e| e.context(format!("{}::{}", command.name(), run.cfg.method.name())))?;
    run.timings.insert("total".into(), start.elapsed().as_secs_f64());
    let manifest = Manifest {
        name: run.cfg.name.clone(),
        command: command.name().into(),
        method: run.cfg.method.name().into(),
        version: VERSION.into(),
        config_sha256: sha256_hex(text.as_bytes()),
        threads,
        timings: run.timings,
        outputs: run.outputs,
        summary: run.summary,
    };
    let path = run.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(RunOutcome {
        output_dir: run.out,
        manifest,
    })
}

fn snapshots(run: &mut Run) -> Result<()> {
    let t = run.training()?;
    let space = run.model.space();
    let norms: Vec<f64> = (0..t.len()).map(|j| space.norm(&t.snapshot(j))).collect();
    let d = run.model.param_dim();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string()];
    header.extend((0..d).map(|i| format!("y{i}")));
    header.push("norm".into());
    wtr.write_record(&header)?;
    for (j, nrm) in norms.iter().enumerate() {
        let mut row = vec![j.to_string()];
        row.extend(t.params()[j].iter().map(|v| fmt(*v)));
        row.push(fmt(*nrm));
        wtr.write_record(&row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io("training.csv", e.into_error()))?;
    run.write("training.csv", &bytes)?;
    run.summary.k = Some(t.len());
    if run.cfg.training.held_out.is_some() {
        run.held_out()?;
    }
    Ok(())
}

fn reduced_space(run: &Run, t: &TrainingSet, n: usize) -> Result<Subspace> {
    let gb = greedy_reduced_basis(run.model.space(), t.snapshots(), n, 0.0)?;
    if gb.basis.dim() < n {
        log::warn!("training set spans only {} of the requested {n} dimensions", gb.basis.dim());
    }
    Ok(gb.basis)
}

fn joint_csv(run: &mut Run, jr: &JointRun) -> Result<()> {
    let mut buf = Vec::new();
    jr.write_csv(&mut buf)?;
    run.write("joint.csv", &buf)?;
    run.summary.n = Some(jr.n());
    run.summary.m = jr.m_of_n.last().copied();
    run.summary.m_of_n = jr.m_of_n.clone();
    run.summary.beta = jr.beta_history.last().copied();
    run.summary.mu = run.summary.beta.map(|b| 1.0 / b);
    run.summary.worst = jr.err_history.last().copied();
    Ok(())
}

fn place(run: &mut Run) -> Result<()> {
    let t = run.training()?;
    let dict = run.dictionary()?;
    let space = run.model.space().clone();
    match run.cfg.method.clone() {
        MethodSpec::OmpPlace(p) => {
            let vn = reduced_space(run, &t, p.n)?;
            let opts = GreedyOptions {
                beta_star: p.beta_star,
                kappa: p.kappa,
                m_max: p.m_max,
                rm_target: None,
            };
            let g = run.timed("place", |_| match p.variant {
                OmpVariant::Collective => collective_omp(&space, &vn, &dict, &opts),
                OmpVariant::WorstCase => worst_case_omp(&space, &vn, &dict, &opts),
            })?;
            let mut buf = Vec::new();
            g.write_csv(&mut buf, &dict)?;
            run.write("placement.csv", &buf)?;
            run.summary.n = Some(vn.dim());
            run.summary.m = Some(g.m());
            run.summary.beta = Some(g.final_beta());
            run.summary.mu = Some(1.0 / g.final_beta());
            if !g.reached {
                log::warn!("beta* = {} not reached within m_max = {}", p.beta_star, p.m_max);
            }
        }
        MethodSpec::Nested(p) => {
            let jr = run.timed("place", |_| {
                nested_greedy(&space, &t, &dict, p.beta_lower, p.eps_stop, p.n_max, p.m_max)
            })?;
            joint_csv(run, &jr)?;
        }
        MethodSpec::Geim(p) => {
            let jr = run.timed("place", |_| geim(&space, &t, &dict, p.n_max, p.eps_stop))?;
            joint_csv(run, &jr)?;
        }
        _ => unreachable!("checked by Command::accepts"),
    }
    Ok(())
}

enum Fitted {
    Linear(PbdwOperator),
    Affine(AffinePbdw),
    Optimal(crate::affine_opt::AffineRecoveryMap),
}

impl Fitted {
    fn reconstruct(&self, coords: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Fitted::Linear(op) => Ok(op.reconstruct(coords)),
            Fitted::Affine(op) => Ok(op.reconstruct(coords)),
            Fitted::Optimal(map) => map.apply(coords),
        }
    }
}

#[derive(Serialize)]
struct PbdwRecord<'a> {
    method: &'a str,
    n: usize,
    m: usize,
    beta: f64,
    mu: f64,
    sensors: &'a [crate::sensing::Sensor],
    basis_sha256: String,
}

#[derive(Serialize)]
struct MapRecord {
    psi_sha256: String,
    rows: usize,
    cols: usize,
    cbar: Vec<f64>,
    bbar_row_major: Vec<f64>,
    training_points: usize,
    eps_n: f64,
    best_objective: f64,
    iterations: usize,
}

fn matrix_hash(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn fit_operator(run: &mut Run, t: &TrainingSet, setup: &ObservationSetup, write: bool) -> Result<Fitted> {
    let space = run.model.space().clone();
    match run.cfg.method.clone() {
        MethodSpec::Pbdw(p) => {
            let fitted = run.timed("fit", |r| {
                if p.affine {
                    let ubar = r.model.solve(&r.model.param_box().center())?;
                    let centered = DMatrix::from_columns(
                        &(0..t.len()).map(|j| t.snapshot(j) - &ubar).collect::<Vec<_>>(),
                    );
                    let gb = greedy_reduced_basis(&space, &centered, p.n, 0.0)?;
                    Ok(Fitted::Affine(AffinePbdw::fit(&space, ubar, &gb.basis, setup)?))
                } else {
                    let vn = reduced_space(r, t, p.n)?;
                    Ok(Fitted::Linear(PbdwOperator::fit(&space, &vn, setup)?))
                }
            })?;
            let op = match &fitted {
                Fitted::Linear(op) => op,
                Fitted::Affine(a) => a.linear(),
                Fitted::Optimal(_) => unreachable!(),
            };
            run.summary.beta = Some(op.beta());
            run.summary.mu = Some(op.mu());
            run.summary.n = Some(op.n());
            run.summary.m = Some(op.m());
            if write {
                let rec = PbdwRecord {
                    method: if p.affine { "affine_pbdw" } else { "pbdw" },
                    n: op.n(),
                    m: op.m(),
                    beta: op.beta(),
                    mu: op.mu(),
                    sensors: setup.sensors(),
                    basis_sha256: matrix_hash(op.reduced_space().basis()),
                };
                run.write("operator.json", serde_json::to_string_pretty(&rec)?.as_bytes())?;
            }
            Ok(fitted)
        }
        MethodSpec::AffineOpt(p) => {
            let zn = reduced_space(run, t, p.n)?;
            let prob = build_problem(&space, t, setup, &zn)?;
            let opts = PrimalDualOptions {
                iters: p.iters,
                stall_tol: p.stall_tol,
                ..Default::default()
            };
            let res = run.timed("fit", |_| primal_dual_solve(&prob, &opts))?;
            run.summary.n = Some(zn.dim());
            run.summary.m = Some(setup.m());
            if write {
                let psi = res.map.psi().expect("built from a frame");
                let rec = MapRecord {
                    psi_sha256: matrix_hash(psi),
                    rows: res.map.bbar.nrows(),
                    cols: res.map.bbar.ncols(),
                    cbar: res.map.cbar.iter().copied().collect(),
                    bbar_row_major: res.map.bbar.transpose().iter().copied().collect(),
                    training_points: t.len(),
                    eps_n: prob.eps_n,
                    best_objective: res.best_objective,
                    iterations: res.iterations,
                };
                run.write("map.json", serde_json::to_string_pretty(&rec)?.as_bytes())?;
                let mut wtr = csv::Writer::from_writer(Vec::new());
                wtr.write_record(["iteration", "objective", "best"])?;
                for s in &res.history {
                    wtr.write_record([s.iteration.to_string(), fmt(s.objective), fmt(s.best)])?;
                }
                let bytes = wtr.into_inner().map_err(|e| Error::io("history.csv", e.into_error()))?;
                run.write("history.csv", &bytes)?;
            }
            Ok(Fitted::Optimal(res.map))
        }
        _ => unreachable!("checked by Command::accepts"),
    }
}

fn fit(run: &mut Run) -> Result<()> {
    let t = run.training()?;
    let dict = run.dictionary()?;
    let setup = run.setup(&dict)?;
    let op = fit_operator(run, &t, &setup, true)?;
    let space = run.model.space().clone();
    let errors = (0..t.len())
        .map(|j| {
            let u = t.snapshot(j);
            Ok(space.distance(&u, &op.reconstruct(&setup.coords(&u))?))
        })
        .collect::<Result<Vec<_>>>()?;
    run.error_table("errors.csv", &t, &errors)
}

fn noisy_coords(setup: &ObservationSetup, u: &DVector<f64>, noise: &Option<NoiseSpec>, j: usize) -> Result<DVector<f64>> {
    let data = setup.measure(u);
    let data = match noise {
        Some(n) => setup.add_noise(&data, n.level, n.seed.wrapping_add(j as u64))?,
        None => data,
    };
    Ok(setup.coords(&data.w))
}

fn load_or_build_family(run: &mut Run, t: &TrainingSet, setup: &ObservationSetup) -> Result<AdmissibleFamily> {
    let MethodSpec::Piecewise(p) = run.cfg.method.clone() else {
        unreachable!("checked by Command::accepts")
    };
    let key = run.cache_key(&(&run.cfg.model, &run.cfg.training.grid, &run.cfg.sensors, p.criterion, p.strategy, p.budget))?;
    let path = run.cache_path("family", &key, "json");
    if path.exists() {
        log::info!("reusing cached family {}", path.display());
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let data: FamilyData = serde_json::from_str(&text)?;
        return AdmissibleFamily::from_data(&run.model, setup, data);
    }
    let fam = run.timed("family", |r| {
        build_family(&r.model, t, setup, p.criterion.into(), p.strategy.into(), p.budget)
    })?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&path, serde_json::to_vec(&fam.to_data())?).map_err(|e| Error::io(&path, e))?;
    Ok(fam)
}

fn estimate(run: &mut Run) -> Result<()> {
    let t = run.training()?;
    let eval = run.held_out()?.unwrap_or_else(|| t.clone());
    let dict = run.dictionary()?;
    let setup = run.setup(&dict)?;
    let space = run.model.space().clone();
    match run.cfg.method.clone() {
        MethodSpec::Piecewise(p) => {
            let fam = load_or_build_family(run, &t, &setup)?;
            let model = run.model.clone();
            let results = run.timed("estimate", |_| {
                (0..eval.len())
                    .map(|j| {
                        let u = eval.snapshot(j);
                        let coords = noisy_coords(&setup, &u, &p.noise, j)?;
                        let sel = match p.selection {
                            SelectionSpec::Oracle => Selection::Oracle(&u),
                            SelectionSpec::Ideal => Selection::Ideal(&t),
                            SelectionSpec::Surrogate => Selection::Surrogate,
                        };
                        let e = fam.estimate(&model, &coords, sel, Some(&u))?;
                        Ok((e.cell, space.distance(&u, &e.state)))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["index", "cell", "error"])?;
            for (j, (k, e)) in results.iter().enumerate() {
                wtr.write_record([j.to_string(), k.to_string(), fmt(*e)])?;
            }
            let bytes = wtr.into_inner().map_err(|e| Error::io("selection.csv", e.into_error()))?;
            run.write("selection.csv", &bytes)?;
            let errors: Vec<f64> = results.iter().map(|r| r.1).collect();
            run.error_table("errors.csv", &eval, &errors)?;
            run.summary.k = Some(fam.len());
            run.summary.m = Some(setup.m());
        }
        _ => {
            let noise = match &run.cfg.method {
                MethodSpec::Pbdw(p) => p.noise.clone(),
                _ => None,
            };
            let op = fit_operator(run, &t, &setup, false)?;
            let errors = run.timed("estimate", |_| {
                (0..eval.len())
                    .map(|j| {
                        let u = eval.snapshot(j);
                        let coords = noisy_coords(&setup, &u, &noise, j)?;
                        Ok(space.distance(&u, &op.reconstruct(&coords)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            run.error_table("errors.csv", &eval, &errors)?;
        }
    }
    Ok(())
}

fn family(run: &mut Run) -> Result<()> {
    let t = run.training()?;
    let dict = run.dictionary()?;
    let setup = run.setup(&dict)?;
    let fam = load_or_build_family(run, &t, &setup)?;
    run.write("family.json", fam.to_json()?.as_bytes())?;
    let d = run.model.param_dim();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string()];
    header.extend((0..d).map(|i| format!("lo{i}")));
    header.extend((0..d).map(|i| format!("hi{i}")));
    header.extend(["level", "chosen_n", "eps", "mu", "tau", "train_points"].map(String::from));
    wtr.write_record(&header)?;
    for (k, c) in fam.cells.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(c.param_box.lo.iter().chain(&c.param_box.hi).map(|v| fmt(*v)));
        row.extend([
            c.level.to_string(),
            c.chosen_n.to_string(),
            fmt(c.eps_chosen()),
            fmt(c.mu_chosen()),
            fmt(c.tau),
            c.train_idx.len().to_string(),
        ]);
        wtr.write_record(&row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::io("cells.csv", e.into_error()))?;
    run.write("cells.csv", &bytes)?;
    for (k, c) in fam.cells.iter().enumerate() {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["ubar".to_string()];
        header.extend((0..c.chosen_n).map(|i| format!("v{i}")));
        wtr.write_record(&header)?;
        for i in 0..c.ubar.len() {
            let mut row = vec![fmt(c.ubar[i])];
            row.extend((0..c.chosen_n).map(|n| fmt(c.basis.basis()[(i, n)])));
            wtr.write_record(&row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::io("bases", e.into_error()))?;
        run.write(&format!("bases/cell_{k}.csv"), &bytes)?;
    }
    run.summary.k = Some(fam.len());
    run.summary.m = Some(setup.m());
    run.summary.mu = fam.cells.iter().map(|c| c.mu_chosen()).reduce(f64::max);
    if fam.partial {
        log::warn!("family is partial: the cell budget was reached");
    }
    Ok(())
}

fn benchmark(run: &mut Run) -> Result<()> {
    let MethodSpec::Benchmark(p) = run.cfg.method.clone() else {
        unreachable!("checked by Command::accepts")
    };
    let t = run.training()?;
    let held = run
        .held_out()?
        .ok_or_else(|| schema("training.held_out", "benchmark needs a held-out grid"))?;
    let dict = run.dictionary()?;
    let setup = run.setup(&dict)?;
    let cfg = CompareConfig {
        n: p.n,
        sigma: p.sigma,
        budget: p.budget,
        strategy: p.strategy.into(),
        primal_dual: PrimalDualOptions {
            iters: p.iters,
            ..Default::default()
        },
        sigmas: p.sigmas.clone(),
        width_order: p.width_order,
    };
    let report = run.timed("benchmark", |r| compare_estimators(&r.model, &t, &held, &setup, &cfg))?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    run.write("benchmark.csv", &buf)?;
    run.write("benchmark.json", report.to_json()?.as_bytes())?;
    if let Some(row) = report.estimator("piecewise_surrogate") {
        run.summary.worst = Some(row.worst);
        run.summary.mean = Some(row.mean);
    }
    run.summary.k = Some(report.piecewise_cells);
    run.summary.m = Some(setup.m());
    run.summary.delta_tilde = report.delta_tilde.iter().map(|d| (d.sigma, d.delta_tilde)).collect();
    Ok(())
}
