//! Seeded multi-run experiments: run a model N times, sweep loss or CBR,
//! compare models on identical seeds, and emit CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::metrics::{export_csv, DownloadRecord, LedgerBook};
use crate::protocols::{run_model, Model, ProtocolParams, RunConfig, RunOutput};
use crate::topology::{build_paper_topology, parse_topology, LinkKind, Topology};

#[derive(Error, Debug)]
pub enum ExpError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug)]
pub enum TopologySource {
    BuiltinPaper,
    File(PathBuf),
    Inline(Arc<Topology>),
}

/// A scalar parameter or a swept list of values.
#[derive(Clone, Debug)]
pub enum Axis {
    Scalar(f64),
    Sweep(Vec<f64>),
}

impl Axis {
    pub fn is_sweep(&self) -> bool {
        matches!(self, Axis::Sweep(_))
    }

    fn scalar(&self) -> Option<f64> {
        match self {
            Axis::Scalar(v) => Some(*v),
            Axis::Sweep(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub model: Model,
    pub topology: TopologySource,
    pub file_size: u64,
    pub piece_size: u32,
    pub runs: u32,
    pub base_seed: u64,
    /// Induced LAN-spoke loss, as a fraction.
    pub loss: Axis,
    /// CBR cross-traffic fraction of the bottleneck.
    pub cbr: Axis,
    /// Output directory; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    pub params: ProtocolParams,
    pub engine: crate::engine::EngineConfig,
}

impl ExperimentConfig {
    pub fn new(model: Model) -> Self {
        ExperimentConfig {
            model,
            topology: TopologySource::BuiltinPaper,
            file_size: 1 << 20,
            piece_size: 256 * 1024,
            runs: 5,
            base_seed: 1,
            loss: Axis::Scalar(0.0),
            cbr: Axis::Scalar(0.0),
            out_dir: None,
            params: ProtocolParams::default(),
            engine: crate::engine::EngineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        if self.runs == 0 {
            return Err(ExpError::Config("runs must be at least 1".into()));
        }
        if self.file_size == 0 {
            return Err(ExpError::Config("file size must be positive".into()));
        }
        if self.piece_size == 0 {
            return Err(ExpError::Config("piece size must be positive".into()));
        }
        for (name, axis) in [("loss", &self.loss), ("cbr", &self.cbr)] {
            let values: Vec<f64> = match axis {
                Axis::Scalar(v) => vec![*v],
                Axis::Sweep(vs) => {
                    if vs.is_empty() {
                        return Err(ExpError::Config(format!("{name} sweep list is empty")));
                    }
                    if !vs.windows(2).all(|w| w[0] < w[1]) {
                        return Err(ExpError::Config(format!(
                            "{name} sweep values must be strictly ascending"
                        )));
                    }
                    vs.clone()
                }
            };
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ExpError::Config(format!(
                    "{name} values must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn resolve_topology(&self) -> Result<Arc<Topology>, ExpError> {
        match &self.topology {
            TopologySource::BuiltinPaper => Ok(Arc::new(build_paper_topology())),
            TopologySource::File(path) => {
                let text = fs::read_to_string(path)?;
                parse_topology(&text)
                    .map(Arc::new)
                    .map_err(|e| ExpError::Config(format!("{}: {e}", path.display())))
            }
            TopologySource::Inline(t) => Ok(t.clone()),
        }
    }
}

/// Key figures of one run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub seed: u64,
    pub completed: usize,
    pub failed: usize,
    pub mean_completion_s: f64,
    pub min_completion_s: f64,
    pub max_completion_s: f64,
    pub mean_core_stress: f64,
    pub core_content_bytes: u64,
    pub mean_access_stress: f64,
    pub all_files_match: bool,
}

impl RunSummary {
    fn from_output(seed: u64, topo: &Topology, out: &RunOutput) -> Self {
        let times: Vec<f64> = out
            .records
            .iter()
            .filter_map(DownloadRecord::completion_secs)
            .collect();
        let mean = if times.is_empty() {
            f64::NAN
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        };
        RunSummary {
            seed,
            completed: out.completed,
            failed: out.failed,
            mean_completion_s: mean,
            min_completion_s: times.iter().copied().fold(f64::INFINITY, f64::min),
            max_completion_s: times.iter().copied().fold(0.0, f64::max),
            mean_core_stress: out
                .ledger
                .mean_stress_by_kind(topo, LinkKind::Core)
                .unwrap_or(f64::NAN),
            core_content_bytes: out.ledger.content_bytes_by_kind(topo, LinkKind::Core),
            mean_access_stress: out
                .ledger
                .mean_stress_by_kind(topo, LinkKind::Access)
                .unwrap_or(f64::NAN),
            all_files_match: out.all_files_match,
        }
    }
}

/// Per-configuration aggregate over the seeded runs.
#[derive(Clone, Debug)]
pub struct AggregateReport {
    pub model: Model,
    pub per_run: Vec<RunSummary>,
    pub mean_completion_s: f64,
    pub min_completion_s: f64,
    pub max_completion_s: f64,
    pub mean_core_stress: f64,
    pub mean_core_content_bytes: f64,
    pub failed_runs: usize,
}

impl AggregateReport {
    fn from_runs(model: Model, per_run: Vec<RunSummary>) -> Self {
        let ok: Vec<&RunSummary> = per_run
            .iter()
            .filter(|r| r.failed == 0 && r.mean_completion_s.is_finite())
            .collect();
        let failed_runs = per_run.len() - ok.len();
        let mean = |f: fn(&RunSummary) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
            }
        };
        AggregateReport {
            model,
            mean_completion_s: mean(|r| r.mean_completion_s),
            min_completion_s: ok
                .iter()
                .map(|r| r.min_completion_s)
                .fold(f64::INFINITY, f64::min),
            max_completion_s: ok.iter().map(|r| r.max_completion_s).fold(0.0, f64::max),
            mean_core_stress: mean(|r| r.mean_core_stress),
            mean_core_content_bytes: mean(|r| r.core_content_bytes as f64),
            failed_runs,
            per_run,
        }
    }
}

fn fmt6(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn run_config_for(cfg: &ExperimentConfig, seed: u64, loss: f64, cbr: f64) -> RunConfig {
    RunConfig {
        model: cfg.model,
        file_size: cfg.file_size,
        piece_size: cfg.piece_size,
        seed,
        loss_spokes: loss,
        cbr_fraction: cbr,
        client_limit: None,
        linger: crate::time::SimTime::ZERO,
        params: cfg.params.clone(),
        engine: cfg.engine.clone(),
        record_handshakes: false,
    }
}

/// Executes all seeded runs for one configuration point, writing per-run CSV
/// trees when an output directory is set. Returns the raw outputs alongside
/// the aggregate so callers can inspect ledgers directly.
pub fn run_experiment_with_outputs(
    cfg: &ExperimentConfig,
) -> Result<(AggregateReport, Vec<RunOutput>), ExpError> {
    cfg.validate()?;
    let loss = cfg
        .loss
        .scalar()
        .ok_or_else(|| ExpError::Config("loss must be a single value here".into()))?;
    let cbr = cfg
        .cbr
        .scalar()
        .ok_or_else(|| ExpError::Config("cbr must be a single value here".into()))?;
    let topo = cfg.resolve_topology()?;

    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    for i in 0..cfg.runs {
        let seed = cfg.base_seed + i as u64;
        let out = run_model(&topo, &run_config_for(cfg, seed, loss, cbr));
        if let Some(dir) = &cfg.out_dir {
            let run_dir = dir.join(format!("run-{i}"));
            export_csv(&out.ledger, &topo, &out.records, &run_dir)?;
        }
        summaries.push(RunSummary::from_output(seed, &topo, &out));
        outputs.push(out);
    }
    let report = AggregateReport::from_runs(cfg.model, summaries);
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.csv"), summary_csv(&report))?;
        fs::write(
            dir.join("links_mean.csv"),
            links_mean_csv(&topo, &outputs)?,
        )?;
    }
    Ok((report, outputs))
}

/// The runner's public face: aggregate plus CSV tree.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateReport, ExpError> {
    run_experiment_with_outputs(cfg).map(|(report, _)| report)
}

fn summary_csv(report: &AggregateReport) -> String {
    let mut out = String::from(
        "model,runs,failed_runs,mean_completion_s,min_completion_s,max_completion_s,\
         mean_core_stress,mean_core_content_bytes\n",
    );
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        report.model.as_str(),
        report.per_run.len(),
        report.failed_runs,
        fmt6(report.mean_completion_s),
        fmt6(report.min_completion_s),
        fmt6(report.max_completion_s),
        fmt6(report.mean_core_stress),
        fmt6(report.mean_core_content_bytes),
    )
    .unwrap();
    out
}

fn links_mean_csv(topo: &Topology, outputs: &[RunOutput]) -> Result<String, ExpError> {
    let mut out = String::from("link,direction,mean_bytes,mean_stress\n");
    let mut rows: Vec<(String, String, f64, Option<f64>)> = Vec::new();
    let n = outputs.len() as f64;
    for (i, _) in topo.links().iter().enumerate() {
        let link = crate::topology::LinkId(i as u32);
        for dir in [crate::topology::Dir::Forward, crate::topology::Dir::Reverse] {
            let mut bytes = 0.0;
            let mut stresses = Vec::new();
            let mut any = false;
            for o in outputs {
                let d = o.ledger.dir(link, dir);
                bytes += d.bytes_total as f64;
                if d.packets_total > 0 {
                    any = true;
                }
                if let Some(s) = d.stress() {
                    stresses.push(s);
                }
            }
            if !any {
                continue;
            }
            let stress = (!stresses.is_empty())
                .then(|| stresses.iter().sum::<f64>() / stresses.len() as f64);
            rows.push((topo.link_name(link), topo.dir_name(link, dir), bytes / n, stress));
        }
    }
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    for (link, dir, bytes, stress) in rows {
        writeln!(
            out,
            "{link},{dir},{},{}",
            fmt6(bytes),
            stress.map(fmt6).unwrap_or_default()
        )
        .unwrap();
    }
    Ok(out)
}

/// One aggregate per value of the single swept axis; writes `sweep.csv` and
/// per-point subtrees when an output directory is set.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<(f64, AggregateReport)>, ExpError> {
    cfg.validate()?;
    let (axis_name, values, fixed_cbr, fixed_loss) = match (&cfg.loss, &cfg.cbr) {
        (Axis::Sweep(_), Axis::Sweep(_)) => {
            return Err(ExpError::Config(
                "exactly one of loss and cbr may be swept at a time".into(),
            ));
        }
        (Axis::Sweep(vs), Axis::Scalar(c)) => ("loss", vs.clone(), *c, 0.0),
        (Axis::Scalar(l), Axis::Sweep(vs)) => ("cbr", vs.clone(), 0.0, *l),
        (Axis::Scalar(_), Axis::Scalar(_)) => {
            return Err(ExpError::Config(
                "sweep requires a list-valued loss or cbr axis".into(),
            ));
        }
    };

    let mut points = Vec::new();
    for v in values {
        let mut point_cfg = cfg.clone();
        if axis_name == "loss" {
            point_cfg.loss = Axis::Scalar(v);
            point_cfg.cbr = Axis::Scalar(fixed_cbr);
        } else {
            point_cfg.cbr = Axis::Scalar(v);
            point_cfg.loss = Axis::Scalar(fixed_loss);
        }
        point_cfg.out_dir = cfg
            .out_dir
            .as_ref()
            .map(|d| d.join(format!("{axis_name}-{v:.4}")));
        let (report, _) = run_experiment_with_outputs(&point_cfg)?;
        points.push((v, report));
    }

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("axis_value,mean_completion_s,mean_core_stress,mean_core_bytes\n");
        for (v, report) in &points {
            writeln!(
                csv,
                "{},{},{},{}",
                fmt6(*v),
                fmt6(report.mean_completion_s),
                fmt6(report.mean_core_stress),
                fmt6(report.mean_core_content_bytes),
            )
            .unwrap();
        }
        fs::write(dir.join("sweep.csv"), csv)?;
    }
    Ok(points)
}

/// All three models on identical seeds and topology.
pub struct CompareReport {
    pub per_model: Vec<AggregateReport>,
}

impl CompareReport {
    pub fn model(&self, model: Model) -> &AggregateReport {
        self.per_model
            .iter()
            .find(|r| r.model == model)
            .expect("all models present")
    }

    /// Percent reduction of hybrid's metric relative to `base`.
    pub fn reduction_pct(&self, base: Model, f: fn(&AggregateReport) -> f64) -> f64 {
        let hybrid = f(self.model(Model::Hybrid));
        let base = f(self.model(base));
        (1.0 - hybrid / base) * 100.0
    }
}

pub fn compare_models(cfg: &ExperimentConfig) -> Result<CompareReport, ExpError> {
    cfg.validate()?;
    let mut per_model = Vec::new();
    for model in Model::ALL {
        let mut model_cfg = cfg.clone();
        model_cfg.model = model;
        model_cfg.out_dir = cfg.out_dir.as_ref().map(|d| d.join(model.as_str()));
        let (report, _) = run_experiment_with_outputs(&model_cfg)?;
        per_model.push(report);
    }
    let report = CompareReport { per_model };

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        let mut csv =
            String::from("model,mean_completion_s,total_core_content_bytes,mean_core_stress\n");
        for r in &report.per_model {
            writeln!(
                csv,
                "{},{},{},{}",
                r.model.as_str(),
                fmt6(r.mean_completion_s),
                fmt6(r.mean_core_content_bytes),
                fmt6(r.mean_core_stress),
            )
            .unwrap();
        }
        for (label, base) in [("hybrid_vs_p2p", Model::P2p), ("hybrid_vs_www", Model::Www)] {
            writeln!(
                csv,
                "{label},{},{},{}",
                fmt6(report.reduction_pct(base, |r| r.mean_completion_s)),
                fmt6(report.reduction_pct(base, |r| r.mean_core_content_bytes)),
                fmt6(report.reduction_pct(base, |r| r.mean_core_stress)),
            )
            .unwrap();
        }
        fs::write(dir.join("compare.csv"), csv)?;
    }
    Ok(report)
}

/// Recomputes a ledger's distinct counts from its fingerprint log; used by
/// the dedup oracle checks.
pub fn brute_force_distinct(book: &LedgerBook) -> Vec<(u64, u64)> {
    book.iter()
        .filter_map(|(_, _, d)| {
            d.fingerprint_log().map(|log| {
                let set: std::collections::BTreeSet<_> = log.iter().collect();
                (d.distinct_payloads(), set.len() as u64)
            })
        })
        .collect()
}

/// Reads `path` and hashes every file under it, for byte-identity checks.
pub fn hash_tree(path: &Path) -> Result<u64, io::Error> {
    use crate::rng::{fnv1a, fnv1a_fold};
    let mut entries: Vec<PathBuf> = Vec::new();
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        paths.sort();
        for p in paths {
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    walk(path, &mut entries)?;
    let mut h = 0xfeed_u64;
    for p in entries {
        let rel = p.strip_prefix(path).unwrap_or(&p);
        h = fnv1a_fold(h, fnv1a(rel.to_string_lossy().as_bytes()));
        h = fnv1a_fold(h, fnv1a(&fs::read(&p)?));
    }
    Ok(h)
}
