//! Scenario orchestration: build, diagonalize, run the requested diagnostics
//! for every (scan value, realization) task and write CSV tables plus a JSON
//! manifest.

pub mod config;
pub mod selftest;
pub mod states;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    preset, Diagnostic, GridKind, InitialStateSpec, ModelInstance, ReferenceHamiltonian, ScanSpec,
    ScanVariable, Scenario, ScenarioConfig, PRESETS,
};
pub use states::{make_initial_state, neel_config, StateInputs};

use crate::error::{Error, Result};
use crate::evolve::{
    entropy_trace, expectation_trace, infinite_time_averages, long_time_fluctuations,
    survival_probability, InfiniteTimeAverages, TimeGrid,
};
use crate::hilbert::{SpinBasis, StateVector};
use crate::models::{build_qmbs, build_spin_chain, sigma_z, uncoupled_factors, Observable};
use crate::probes::{
    crossover_from_fit, decay_rate, detect_regimes, fdt_predict, fit_chi, loglog_slope,
    microcanonical_variance, qfi_trace, FdtRecord, GeneratorObservable, ShellWeighting,
};
use crate::spectra::{
    diagonalize, dos_at_energy, eigenvalues, level_spacing_distribution, r_statistic, DosEstimate,
    EigenSystem,
};

/// Rows of one CSV file produced by a single task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableRows {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskMeta {
    pub scan_index: usize,
    pub scan_value: f64,
    pub realization: usize,
    pub seed: u64,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub meta: TaskMeta,
    pub tables: BTreeMap<&'static str, TableRows>,
    /// Per-task scalars averaged over realizations in `summary.csv`.
    pub scalars: BTreeMap<&'static str, f64>,
    pub fdt: Option<FdtRecord>,
}

impl TaskOutput {
    fn add(&mut self, table: &'static str, header: &[&'static str], row: Vec<String>) {
        let entry = self.tables.entry(table).or_default();
        if entry.header.is_empty() {
            entry.header = [&["scan_value", "realization", "seed"][..], header].concat();
        }
        let mut full = vec![
            num(self.meta.scan_value),
            self.meta.realization.to_string(),
            self.meta.seed.to_string(),
        ];
        full.extend(row);
        entry.rows.push(full);
    }
}

/// Shortest round-trip decimal form; identical across runs and platforms.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// `2π D(E)`.
pub fn heisenberg_time(dos: &DosEstimate) -> f64 {
    2.0 * std::f64::consts::PI * dos.value
}

struct Prepared {
    instance: ModelInstance,
    es: EigenSystem,
    uncoupled: Option<EigenSystem>,
    psi0: StateVector,
    observable: Observable,
    energy: f64,
    dos: DosEstimate,
}

fn needs_uncoupled(cfg: &ScenarioConfig) -> bool {
    cfg.diagnostics.contains(&Diagnostic::Fdt)
        || matches!(
            cfg.initial_state,
            InitialStateSpec::EigenstateIndex {
                reference: ReferenceHamiltonian::Uncoupled,
                ..
            }
        )
}

fn needs_bath(cfg: &ScenarioConfig) -> bool {
    needs_uncoupled(cfg)
        || matches!(
            cfg.initial_state,
            InitialStateSpec::ProbeUpXBathEigenstate { .. }
                | InitialStateSpec::ProbeUpZBathEigenstate { .. }
        )
}

fn prepare(cfg: &ScenarioConfig, scan_value: f64, seed: u64) -> Result<Prepared> {
    let mut instance = cfg.instance(scan_value)?;
    let (h, probe_site) = match &mut instance {
        ModelInstance::SpinChain(p) => {
            p.disorder_seed = seed;
            (build_spin_chain(p)?, 1)
        }
        ModelInstance::Pxp(p) => (build_qmbs(p)?, p.probe_site),
    };
    let es = diagonalize(&h)?;
    let basis: Arc<SpinBasis> = h.basis().clone();
    let (bath, uncoupled) = match &instance {
        ModelInstance::SpinChain(p) if needs_bath(cfg) => {
            let (field, bath_h) = uncoupled_factors(p)?;
            let bath = diagonalize(&bath_h)?;
            let uncoupled = needs_uncoupled(cfg)
                .then(|| EigenSystem::with_probe_spin(field, &bath))
                .transpose()?;
            (Some(bath), uncoupled)
        }
        ModelInstance::Pxp(p) if needs_uncoupled(cfg) => {
            let probe_term = sigma_z(&basis, p.probe_site)?.scaled(p.b);
            (None, Some(EigenSystem::from_diagonal(&probe_term)?))
        }
        _ => (None, None),
    };
    let inputs = StateInputs {
        basis: &basis,
        full: Some(&es),
        uncoupled: uncoupled.as_ref(),
        bath: bath.as_ref(),
        realization_seed: seed,
    };
    let psi0 = make_initial_state(&cfg.initial_state, &inputs)?;
    let observable = sigma_z(&basis, cfg.analysis.observable_site.unwrap_or(probe_site))?;
    let energy: f64 = es
        .coefficients(&psi0)?
        .iter()
        .zip(es.energies())
        .map(|(a, e)| a.norm_sqr() * e)
        .sum();
    let e = es.energies();
    let clamped = energy.clamp(e[0], e[e.len() - 1]);
    let dos = dos_at_energy(e, clamped, cfg.analysis.dos_bandwidth)?;
    Ok(Prepared {
        instance,
        es,
        uncoupled,
        psi0,
        observable,
        energy,
        dos,
    })
}

fn time_grid(cfg: &ScenarioConfig, dos: &DosEstimate) -> Result<TimeGrid> {
    let spec = &cfg.time;
    let t_max = spec
        .t_max
        .unwrap_or(spec.horizon_factor * heisenberg_time(dos));
    match spec.kind {
        GridKind::Linear => TimeGrid::linear(spec.t_min, t_max, spec.points),
        GridKind::Log => TimeGrid::logarithmic(spec.t_min.max(1e-3), t_max, spec.points),
    }
}

fn decay_grid(cfg: &ScenarioConfig, dos: &DosEstimate) -> Result<TimeGrid> {
    let t_max = heisenberg_time(dos).max(1.0);
    let log = TimeGrid::logarithmic(1e-2, t_max, cfg.analysis.decay_points.max(2))?;
    TimeGrid::new(
        std::iter::once(0.0)
            .chain(log.points().iter().copied())
            .collect(),
    )
}

fn level_rows(energies: &[f64], a: &config::AnalysisSpec, out: &mut TaskOutput) -> Result<()> {
    let r = r_statistic(energies, a.window)?;
    out.add(
        "r_statistic",
        &["mean_r", "n_ratios", "excluded_triplets"],
        vec![
            num(r.mean_r),
            r.n_ratios.to_string(),
            r.excluded_triplets.to_string(),
        ],
    );
    out.scalars.insert("mean_r", r.mean_r);
    match level_spacing_distribution(energies, a.window, a.histogram_bins) {
        Ok(rep) => {
            out.add(
                "spacing_ks",
                &["ks_poisson", "ks_wigner_dyson"],
                vec![num(rep.ks_poisson), num(rep.ks_wigner_dyson)],
            );
            out.scalars.insert("ks_poisson", rep.ks_poisson);
            out.scalars.insert("ks_wigner_dyson", rep.ks_wigner_dyson);
            for (s, d) in rep.histogram.bin_centers.iter().zip(&rep.histogram.density) {
                out.add(
                    "spacing_histogram",
                    &["s_bin_center", "density"],
                    vec![num(*s), num(*d)],
                );
            }
            Ok(())
        }
        Err(Error::TooFewLevels { needed, got }) => {
            log::warn!("spacing histogram skipped: {got} levels in window, need {needed}");
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Level statistics need no eigenvectors or initial state.
fn levels_only(
    cfg: &ScenarioConfig,
    scan_value: f64,
    seed: u64,
    out: &mut TaskOutput,
) -> Result<()> {
    let mut instance = cfg.instance(scan_value)?;
    let h = match &mut instance {
        ModelInstance::SpinChain(p) => {
            p.disorder_seed = seed;
            build_spin_chain(p)?
        }
        ModelInstance::Pxp(p) => build_qmbs(p)?,
    };
    level_rows(&eigenvalues(&h)?, &cfg.analysis, out)
}

fn run_diagnostics(cfg: &ScenarioConfig, prep: &Prepared, out: &mut TaskOutput) -> Result<()> {
    let a = &cfg.analysis;
    let es = &prep.es;
    for diagnostic in &cfg.diagnostics {
        match diagnostic {
            Diagnostic::Levels => level_rows(es.energies(), a, out)?,
            Diagnostic::Dos => {
                out.add(
                    "dos_initial",
                    &["energy", "dos", "bandwidth"],
                    vec![
                        num(prep.dos.energy),
                        num(prep.dos.value),
                        num(prep.dos.bandwidth),
                    ],
                );
                out.scalars.insert("dos_initial", prep.dos.value);
                let e = es.energies();
                let (lo, hi) = (e[0], e[e.len() - 1]);
                let points = a.dos_points.max(2);
                for k in 0..points {
                    let x = (lo + (hi - lo) * k as f64 / (points - 1) as f64).min(hi);
                    let d = dos_at_energy(e, x, a.dos_bandwidth)?;
                    out.add("dos", &["energy", "dos"], vec![num(x), num(d.value)]);
                }
            }
            Diagnostic::Entropy => {
                let grid = time_grid(cfg, &prep.dos)?;
                let trace = entropy_trace(es, &prep.psi0, &grid, &a.kept_sites)?;
                for (t, s) in trace.times().iter().zip(&trace.values) {
                    out.add("entropy", &["t", "entropy"], vec![num(*t), num(*s)]);
                }
            }
            Diagnostic::Survival => {
                let grid = time_grid(cfg, &prep.dos)?;
                let trace = survival_probability(es, &prep.psi0, &grid)?;
                for (t, f) in trace.times().iter().zip(&trace.values) {
                    out.add("survival", &["t", "survival"], vec![num(*t), num(*f)]);
                }
            }
            Diagnostic::Qfi => {
                let grid = time_grid(cfg, &prep.dos)?;
                let gen = GeneratorObservable::new(es, prep.observable.clone())?;
                let trace = qfi_trace(es, &prep.psi0, &gen, &grid)?;
                for (t, q) in trace.times().iter().zip(&trace.values) {
                    out.add("qfi", &["t", "qfi"], vec![num(*t), num(*q)]);
                }
                let regimes = detect_regimes(&trace)?;
                let lq = &regimes.linear_quadratic;
                let crossover = crossover_from_fit(lq, &prep.dos).ok();
                out.add(
                    "qfi_fits",
                    &[
                        "alpha",
                        "beta",
                        "gamma",
                        "r2_adj_linear_quadratic",
                        "r2_adj_quadratic",
                        "r2_gap",
                        "tau",
                        "dos",
                        "tau_over_dos",
                        "window_lo",
                        "window_hi",
                    ],
                    vec![
                        num(lq.coefficients[0]),
                        num(lq.coefficients[1]),
                        num(regimes.quadratic.coefficients[0]),
                        num(lq.r2_adjusted),
                        num(regimes.quadratic.r2_adjusted),
                        num(regimes.r2_gap()),
                        crossover.map_or(String::new(), |c| num(c.tau)),
                        num(prep.dos.value),
                        crossover.map_or(String::new(), |c| num(c.ratio)),
                        num(lq.window.0),
                        num(lq.window.1),
                    ],
                );
                out.scalars.insert("qfi_r2_gap", regimes.r2_gap());
                out.scalars.insert("qfi_alpha", lq.coefficients[0]);
            }
            Diagnostic::Fluctuations => {
                let horizon = a.fluctuation_horizon_factor * heisenberg_time(&prep.dos);
                let f = long_time_fluctuations(
                    es,
                    &prep.psi0,
                    &prep.observable,
                    a.fluctuation_mode,
                    horizon,
                    a.fluctuation_samples,
                )?;
                out.add(
                    "fluctuations",
                    &["mode", "horizon", "value", "closed_form"],
                    vec![
                        format!("{:?}", f.mode),
                        num(f.horizon),
                        num(f.value),
                        f.closed_form.map_or(String::new(), num),
                    ],
                );
                out.scalars.insert("delta2", f.value);
                if let Some(c) = f.closed_form {
                    out.scalars.insert("delta2_closed_form", c);
                }
            }
            Diagnostic::Fdt => {
                let record = fdt_record(cfg, prep, out)?;
                out.scalars.insert("delta2", record.delta2);
                out.scalars.insert("gamma", record.gamma);
                out.scalars
                    .insert("predicted_delta2", record.predicted_delta2);
                out.fdt = Some(record);
            }
        }
    }
    Ok(())
}

fn fdt_record(cfg: &ScenarioConfig, prep: &Prepared, out: &mut TaskOutput) -> Result<FdtRecord> {
    let es = &prep.es;
    let es0 = prep
        .uncoupled
        .as_ref()
        .ok_or_else(|| Error::Config("FDT needs the uncoupled eigensystem".into()))?;
    let InfiniteTimeAverages {
        mean,
        fluctuation: delta2,
    } = infinite_time_averages(es, &prep.psi0, &prep.observable)?;
    let grid = decay_grid(cfg, &prep.dos)?;
    let trace = expectation_trace(es, &prep.psi0, &prep.observable, &grid)?;
    let decay = decay_rate(&trace, mean)?;
    // a flat uncoupled spectrum (PXP at B = 0) puts every state in the shell
    let width = es0.spectral_width();
    let half_width = if width > 0.0 {
        cfg.analysis.shell_fraction * width
    } else {
        f64::INFINITY
    };
    let delta_o2 = microcanonical_variance(
        es0,
        es,
        &prep.psi0,
        &prep.observable,
        ShellWeighting::EnergyShell { half_width },
    )?;
    let chi = cfg.analysis.chi;
    let predicted = fdt_predict(delta_o2, prep.dos.value, decay.gamma, chi)?;
    out.add(
        "fdt_decay",
        &[
            "energy",
            "initial",
            "asymptote",
            "long_time_mean",
            "gamma",
            "t_fit",
            "rms_residual",
            "relaxed",
        ],
        vec![
            num(prep.energy),
            num(decay.initial),
            num(decay.asymptote),
            num(mean),
            num(decay.gamma),
            num(decay.t_fit),
            num(decay.rms_residual),
            decay.relaxed.to_string(),
        ],
    );
    Ok(FdtRecord {
        scenario: cfg.scenario.label().to_string(),
        n: prep.instance.n_sites(),
        scan_value: out.meta.scan_value,
        seed: out.meta.seed,
        delta2,
        gamma: decay.gamma,
        dos: prep.dos.value,
        delta_o2,
        predicted_delta2: predicted,
        chi_used: chi,
    })
}

/// Runs one (scan value, realization) task; failures are recorded, not raised.
pub fn run_task(cfg: &ScenarioConfig, scan_index: usize, realization: usize) -> TaskOutput {
    let scan_value = cfg.scan.values[scan_index];
    let seed = cfg.base_seed.wrapping_add(realization as u64);
    let start = Instant::now();
    let mut out = TaskOutput {
        meta: TaskMeta {
            scan_index,
            scan_value,
            realization,
            seed,
            wall_seconds: 0.0,
            error: None,
        },
        tables: BTreeMap::new(),
        scalars: BTreeMap::new(),
        fdt: None,
    };
    let result = if cfg.diagnostics.iter().all(|d| *d == Diagnostic::Levels) {
        levels_only(cfg, scan_value, seed, &mut out)
    } else {
        prepare(cfg, scan_value, seed).and_then(|prep| run_diagnostics(cfg, &prep, &mut out))
    };
    if let Err(e) = result {
        log::error!("task scan={scan_value} realization={realization} failed: {e}");
        out.meta.error = Some(e.to_string());
        out.tables.clear();
        out.scalars.clear();
        out.fdt = None;
    }
    out.meta.wall_seconds = start.elapsed().as_secs_f64();
    out
}

/// Executes every task on a pool of `threads` workers; results come back in
/// (scan value, realization) order regardless of scheduling.
pub fn run_tasks(cfg: &ScenarioConfig, threads: usize) -> Result<Vec<TaskOutput>> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.scan.values.len())
        .flat_map(|s| (0..cfg.n_realizations).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| run_task(cfg, s, r))
            .collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero for a single value.
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidParams(
            "cannot summarize an empty group".into(),
        ));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary { mean, stderr, n })
}

/// Mean and standard error per group key, in key order.
pub fn aggregate<K: Ord + Clone>(records: &[(K, f64)]) -> Result<Vec<(K, Summary)>> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in records {
        groups.entry(k.clone()).or_default().push(*v);
    }
    groups
        .into_iter()
        .map(|(k, v)| Ok((k, summarize(&v)?)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub output: PathBuf,
    pub files: Vec<String>,
    pub tasks: usize,
    pub failures: usize,
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    library: &'static str,
    version: &'static str,
    scenario: &'static str,
    threads: usize,
    config: &'a ScenarioConfig,
    files: &'a [String],
    tasks: Vec<&'a TaskMeta>,
    failures: usize,
    total_wall_seconds: f64,
}

/// Writes per-task tables (concatenated in task order), the aggregated
/// summaries and `manifest.json` into `dir`.
pub fn write_outputs(
    cfg: &ScenarioConfig,
    outputs: &[TaskOutput],
    dir: &Path,
    threads: usize,
) -> Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    let mut merged: BTreeMap<&'static str, TableRows> = BTreeMap::new();
    for out in outputs {
        for (name, table) in &out.tables {
            let entry = merged.entry(name).or_default();
            if entry.header.is_empty() {
                entry.header = table.header.clone();
            }
            entry.rows.extend(table.rows.iter().cloned());
        }
    }
    let mut files = Vec::new();
    for (name, table) in &merged {
        let file = format!("{name}.csv");
        write_csv(&dir.join(&file), &table.header, &table.rows)?;
        files.push(file);
    }

    let ok: Vec<&TaskOutput> = outputs.iter().filter(|o| o.meta.error.is_none()).collect();
    let mut scalar_records: Vec<((usize, &'static str), f64)> = Vec::new();
    for out in &ok {
        for (k, v) in &out.scalars {
            scalar_records.push(((out.meta.scan_index, *k), *v));
        }
    }
    if !scalar_records.is_empty() {
        let rows: Vec<Vec<String>> = aggregate(&scalar_records)?
            .into_iter()
            .map(|((idx, name), s)| {
                vec![
                    num(cfg.scan.values[idx]),
                    name.to_string(),
                    num(s.mean),
                    num(s.stderr),
                    s.n.to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("summary.csv"),
            &["scan_value", "quantity", "mean", "stderr", "n"],
            &rows,
        )?;
        files.push("summary.csv".into());
    }
    let r_records: Vec<(usize, f64)> = ok
        .iter()
        .filter_map(|o| o.scalars.get("mean_r").map(|r| (o.meta.scan_index, *r)))
        .collect();
    if !r_records.is_empty() {
        let rows: Vec<Vec<String>> = aggregate(&r_records)?
            .into_iter()
            .map(|(idx, s)| {
                vec![
                    num(cfg.scan.values[idx]),
                    num(s.mean),
                    num(s.stderr),
                    s.n.to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("r_summary.csv"),
            &["W_or_J", "mean_r", "stderr", "n_realizations"],
            &rows,
        )?;
        files.push("r_summary.csv".into());
    }
    let records: Vec<FdtRecord> = ok.iter().filter_map(|o| o.fdt.clone()).collect();
    if !records.is_empty() {
        let rows: Vec<Vec<String>> = records
            .iter()
            .map(|r| {
                vec![
                    r.scenario.clone(),
                    r.n.to_string(),
                    num(r.scan_value),
                    r.seed.to_string(),
                    num(r.delta2),
                    num(r.gamma),
                    num(r.dos),
                    num(r.delta_o2),
                    num(r.predicted_delta2),
                    num(r.chi_used),
                ]
            })
            .collect();
        write_csv(
            &dir.join("fdt.csv"),
            &[
                "scenario",
                "N",
                "W_or_J",
                "seed",
                "delta2",
                "gamma",
                "dos",
                "delta_O2",
                "predicted_delta2",
                "chi_used",
            ],
            &rows,
        )?;
        files.push("fdt.csv".into());
        if let Ok(fit) = fit_chi(&records) {
            let slope = loglog_slope(&records).map_or(String::new(), num);
            write_csv(
                &dir.join("fdt_fit.csv"),
                &[
                    "chi",
                    "rms_relative_residual",
                    "max_relative_residual",
                    "n_records",
                    "loglog_slope",
                ],
                &[vec![
                    num(fit.chi),
                    num(fit.rms_relative_residual),
                    num(fit.max_relative_residual),
                    fit.n_records.to_string(),
                    slope,
                ]],
            )?;
            files.push("fdt_fit.csv".into());
        }
    }
    files.sort();

    let failures = outputs.len() - ok.len();
    let manifest = Manifest {
        library: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario: cfg.scenario.label(),
        threads,
        config: cfg,
        files: &files,
        tasks: outputs.iter().map(|o| &o.meta).collect(),
        failures,
        total_wall_seconds: outputs.iter().map(|o| o.meta.wall_seconds).sum(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(RunSummary {
        output: dir.to_path_buf(),
        files,
        tasks: outputs.len(),
        failures,
    })
}

/// Runs every task and writes the result bundle into `cfg.output`.
pub fn run_scenario(cfg: &ScenarioConfig, threads: usize) -> Result<RunSummary> {
    let outputs = run_tasks(cfg, threads)?;
    write_outputs(cfg, &outputs, &cfg.output, threads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::FluctuationMode;

    fn small(diagnostics: Vec<Diagnostic>) -> ScenarioConfig {
        let mut cfg = preset("fig1b").unwrap();
        cfg.spin_chain.n = 6;
        cfg.spin_chain.contact = 3;
        cfg.scan.values = vec![0.5, 3.0];
        cfg.n_realizations = 2;
        cfg.diagnostics = diagnostics;
        cfg.time.points = 40;
        cfg.analysis.fluctuation_samples = 64;
        cfg.analysis.decay_points = 80;
        cfg
    }

    #[test]
    fn summary_arithmetic() {
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let same = summarize(&[0.25; 30]).unwrap();
        assert_eq!(same.mean, 0.25);
        assert_eq!(same.stderr, 0.0);
        assert!(summarize(&[]).is_err());
        let groups = aggregate(&[(2, 1.0), (1, 5.0), (2, 3.0)]).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, 1);
        assert_eq!(groups[1].1.mean, 2.0);
    }

    #[test]
    fn every_diagnostic_runs_on_a_small_chain() {
        use Diagnostic::*;
        let cfg = small(vec![Levels, Dos, Entropy, Survival, Qfi, Fluctuations]);
        let outputs = run_tasks(&cfg, 1).unwrap();
        assert_eq!(outputs.len(), 4);
        for o in &outputs {
            assert!(o.meta.error.is_none(), "{:?}", o.meta.error);
            for name in [
                "r_statistic",
                "dos",
                "entropy",
                "survival",
                "qfi",
                "qfi_fits",
                "fluctuations",
            ] {
                assert!(o.tables.contains_key(name), "missing {name}");
            }
        }
        // seeds are counter based and shared across scan values
        assert_eq!(outputs[0].meta.seed, outputs[2].meta.seed);
        assert_ne!(outputs[0].meta.seed, outputs[1].meta.seed);
    }

    #[test]
    fn fluctuation_scalars_in_every_mode() {
        let mut cfg = small(vec![Diagnostic::Fluctuations]);
        for mode in [
            FluctuationMode::TemporalVariance,
            FluctuationMode::QuantumVariance,
            FluctuationMode::ClosedForm,
        ] {
            cfg.analysis.fluctuation_mode = mode;
            for o in run_tasks(&cfg, 1).unwrap() {
                assert!(o.meta.error.is_none(), "{:?}", o.meta.error);
                assert!(o.scalars["delta2"] >= 0.0, "{mode:?}");
                assert_eq!(
                    o.scalars.contains_key("delta2_closed_form"),
                    mode == FluctuationMode::TemporalVariance
                );
            }
        }
    }

    #[test]
    fn pxp_fdt_at_zero_field() {
        let mut cfg = preset("fig3c").unwrap();
        cfg.scan.values = vec![8.0, 10.0];
        cfg.analysis.decay_points = 120;
        let outputs = run_tasks(&cfg, 1).unwrap();
        for o in &outputs {
            assert!(o.meta.error.is_none(), "{:?}", o.meta.error);
            let r = o.fdt.as_ref().unwrap();
            assert!(
                r.delta2 > 0.0 && r.gamma > 0.0 && r.dos > 0.0 && r.delta_o2 > 0.0,
                "{r:?}"
            );
        }
    }

    #[test]
    fn failures_are_recorded_per_task() {
        let mut cfg = small(vec![Diagnostic::Dos]);
        cfg.initial_state = InitialStateSpec::EigenstateIndex {
            index: 10_000,
            reference: ReferenceHamiltonian::Full,
        };
        let outputs = run_tasks(&cfg, 1).unwrap();
        assert!(outputs.iter().all(|o| o.meta.error.is_some()));
        let dir = tempfile::tempdir().unwrap();
        let summary = write_outputs(&cfg, &outputs, dir.path(), 1).unwrap();
        assert_eq!(summary.failures, 4);
        assert!(dir.path().join("manifest.json").exists());
    }
}
