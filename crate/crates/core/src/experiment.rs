//! End-to-end experiment commands: benchmark generation, the normalization
//! comparison grid, the two adaptation tasks, retrieval curves, the `lambda`
//! sweep and checkpoint evaluation.
//!
//! Every command writes into one output directory and refuses a non-empty
//! one unless `overwrite` is set. CSV tables carry a header row and end
//! with `# config_hash=<hash>`. Grid cells can run on several threads;
//! results are always merged in cell order, so outputs do not depend on
//! the thread count.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::checkpoint::{ensure_trained, load_model, save_model};
use crate::config::{config_hash, Regime, TrainConfig};
use crate::datagen::{load_split, named_benchmark, SceneDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{retrieval_curve, sample_representations, EvalReport, RetrievalCurve};
use crate::model::SegmentationModel;
use crate::norm::{DomainTag, NormKind};
use crate::rng::{stream, STREAM_EVAL};
use crate::trainer::{evaluate, sweep_lambda, train, TrainData};

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

/// Output location and scheduling shared by all commands.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub overwrite: bool,
    /// Worker threads for independent grid cells; `0` and `1` run inline.
    pub parallel: usize,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            overwrite: false,
            parallel: 1,
        }
    }

    /// Creates the output directory, rejecting a non-empty one unless
    /// overwriting was requested.
    pub fn prepare(&self) -> Result<()> {
        if self.out.exists() {
            if !self.out.is_dir() {
                return Err(Error::WouldOverwrite(self.out.display().to_string()));
            }
            let occupied = fs::read_dir(&self.out)?.next().is_some();
            if occupied && !self.overwrite {
                return Err(Error::WouldOverwrite(self.out.display().to_string()));
            }
        }
        fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

/// The two adaptation tasks over the four-domain benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Large gap: `S -> T`, unseen `U1`, `U2`.
    S2t,
    /// Small gap: `T -> U1`, unseen `U2`.
    T2u1,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::S2t => "s2t",
            Task::T2u1 => "t2u1",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Task::S2t => "S",
            Task::T2u1 => "T",
        }
    }

    pub fn target(self) -> &'static str {
        match self {
            Task::S2t => "T",
            Task::T2u1 => "U1",
        }
    }

    pub fn unseen(self) -> &'static [&'static str] {
        match self {
            Task::S2t => &["U1", "U2"],
            Task::T2u1 => &["U2"],
        }
    }

    /// Evaluation columns: source, target, then the unseen domains.
    pub fn domains(self) -> Vec<(&'static str, DomainTag)> {
        let mut d = vec![(self.source(), DomainTag::Source), (self.target(), DomainTag::Target)];
        d.extend(self.unseen().iter().map(|u| (*u, DomainTag::Unseen)));
        d
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s2t" => Ok(Task::S2t),
            "t2u1" => Ok(Task::T2u1),
            other => Err(Error::Usage(format!("unknown task `{other}`, expected s2t or t2u1"))),
        }
    }
}

/// Tag under which a domain is evaluated. A source-only model never saw
/// the target domain, so the target is evaluated as unseen (split batch
/// normalization then falls back to its source statistics).
pub fn eval_tag(regime: Regime, tag: DomainTag) -> DomainTag {
    match (regime, tag) {
        (Regime::SourceOnly, DomainTag::Target) => DomainTag::Unseen,
        _ => tag,
    }
}

/// Training splits plus the validation split of every evaluated domain.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub task: Task,
    pub source_train: SceneDataset,
    pub target_train: SceneDataset,
    pub val: Vec<(&'static str, DomainTag, SceneDataset)>,
}

impl TaskData {
    pub fn load(dir: &Path, task: Task) -> Result<Self> {
        let val = task
            .domains()
            .into_iter()
            .map(|(name, tag)| Ok((name, tag, load_split(dir, name, Split::Val)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            task,
            source_train: load_split(dir, task.source(), Split::Train)?,
            target_train: load_split(dir, task.target(), Split::Train)?,
            val,
        })
    }

    pub fn train_data(&self) -> TrainData<'_> {
        TrainData::new(&self.source_train, &self.target_train)
    }

    pub fn val_of(&self, domain: &str) -> Result<&SceneDataset> {
        self.val
            .iter()
            .find(|(n, _, _)| *n == domain)
            .map(|(_, _, d)| d)
            .ok_or_else(|| Error::invalid(format!("task {} has no domain `{domain}`", self.task.as_str())))
    }

    /// mIoU on every validation split, in [`Task::domains`] order.
    pub fn evaluate_all(&self, model: &SegmentationModel, regime: Regime) -> Result<Vec<f64>> {
        self.val
            .iter()
            .map(|(_, tag, ds)| Ok(evaluate(model, ds, eval_tag(regime, *tag))?.miou))
            .collect()
    }
}

/// Runs `f` over `cells` on up to `parallel` threads and returns results
/// in cell order. The first failing cell (by index) wins.
pub fn run_cells<C, T, F>(cells: &[C], parallel: usize, f: F) -> Result<Vec<T>>
where
    C: Sync,
    T: Send,
    F: Fn(&C) -> Result<T> + Sync,
{
    let workers = parallel.clamp(1, cells.len().max(1));
    if workers == 1 {
        return cells.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = f(&cells[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every cell ran"))
        .collect()
}

/// Plain CSV table with a trailing provenance comment.
fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>], hash: &str) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    writeln!(buf, "# config_hash={hash}")?;
    fs::write(path, buf)?;
    Ok(())
}

fn write_report(path: &Path, report: &EvalReport, hash: &str) -> Result<()> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf, hash)?;
    fs::write(path, buf)?;
    Ok(())
}

fn seeds_text(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Usage("at least one seed required".into()));
    }
    Ok(())
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// Run record written next to the outputs as `manifest.txt`.
#[derive(Clone, Debug)]
pub struct ExperimentManifest {
    pub experiment: String,
    /// Canonical text from which the config hash is computed.
    pub config_snapshot: String,
    pub data_manifest: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub wall_clock_secs: f64,
}

impl ExperimentManifest {
    pub fn config_hash(&self) -> String {
        config_hash(&self.config_snapshot)
    }

    pub fn to_text(&self) -> String {
        let mut m = String::new();
        let _ = writeln!(m, "experiment = {}", self.experiment);
        let _ = writeln!(m, "config_hash = {}", self.config_hash());
        let _ = writeln!(m, "seeds = {}", seeds_text(&self.seeds));
        if let Some(d) = &self.data_manifest {
            let _ = writeln!(m, "data_manifest = {}", d.display());
        }
        for c in &self.checkpoints {
            let _ = writeln!(m, "checkpoint = {}", c.display());
        }
        for o in &self.outputs {
            let _ = writeln!(m, "output = {}", o.display());
        }
        let _ = writeln!(m, "wall_clock_secs = {:.3}", self.wall_clock_secs);
        m.push_str("[config]\n");
        m.push_str(&self.config_snapshot);
        m
    }

    /// Writes `manifest.txt` into `dir` after checking every listed file.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        if let Some(missing) = self.checkpoints.iter().chain(&self.outputs).find(|p| !p.exists()) {
            return Err(Error::invalid(format!("listed output {} was not written", missing.display())));
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

fn data_manifest(dir: &Path) -> Option<PathBuf> {
    let p = dir.join("manifest.txt");
    p.exists().then_some(p)
}

/// Writes the four-domain benchmark `name` into `opts.out`.
pub fn cmd_gen_data(name: &str, seed: u64, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let benchmark = named_benchmark(name, seed)?;
    opts.prepare()?;
    benchmark.write(&opts.out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRun {
    pub kind: NormKind,
    pub regime: Regime,
    pub seed: u64,
    pub source_miou: f64,
    pub target_miou: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub kind: NormKind,
    pub regime: Regime,
    pub source: Spread,
    pub target: Spread,
    /// Mean target mIoU minus the same kind's source-only mean.
    pub target_delta: Option<f64>,
    pub source_delta: Option<f64>,
}

/// Trains every `(kind, regime, seed)` cell of the normalization grid on
/// `task` and summarizes source and target mIoU per `(kind, regime)`.
pub fn cmd_compare_norms(
    data_dir: &Path,
    task: Task,
    base: &TrainConfig,
    kinds: &[NormKind],
    regimes: &[Regime],
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<Vec<CompareRow>> {
    check_seeds(seeds)?;
    if kinds.is_empty() || regimes.is_empty() {
        return Err(Error::Usage("compare-norms needs at least one kind and one regime".into()));
    }
    let started = Instant::now();
    let data = TaskData::load(data_dir, task)?;
    opts.prepare()?;
    let mut cells = Vec::new();
    for &kind in kinds {
        for &regime in regimes {
            for &seed in seeds {
                cells.push((kind, regime, seed));
            }
        }
    }
    let source_val = data.val_of(task.source())?;
    let target_val = data.val_of(task.target())?;
    let runs = run_cells(&cells, opts.parallel, |&(kind, regime, seed)| {
        let cfg = TrainConfig {
            norm_kind: kind,
            regime,
            seed,
            ..base.clone()
        };
        let out = train(&cfg, data.train_data())?;
        Ok(CompareRun {
            kind,
            regime,
            seed,
            source_miou: evaluate(&out.model, source_val, DomainTag::Source)?.miou,
            target_miou: evaluate(&out.model, target_val, eval_tag(regime, DomainTag::Target))?.miou,
        })
    })?;

    let mut rows = Vec::new();
    for &kind in kinds {
        for &regime in regimes {
            let sel: Vec<&CompareRun> = runs.iter().filter(|r| r.kind == kind && r.regime == regime).collect();
            let src: Vec<f64> = sel.iter().map(|r| r.source_miou).collect();
            let tgt: Vec<f64> = sel.iter().map(|r| r.target_miou).collect();
            rows.push(CompareRow {
                kind,
                regime,
                source: Spread::of(&src),
                target: Spread::of(&tgt),
                target_delta: None,
                source_delta: None,
            });
        }
    }
    let baselines: Vec<(NormKind, Spread, Spread)> = rows
        .iter()
        .filter(|r| r.regime == Regime::SourceOnly)
        .map(|r| (r.kind, r.source, r.target))
        .collect();
    for row in &mut rows {
        if let Some((_, s, t)) = baselines.iter().find(|(k, _, _)| *k == row.kind) {
            row.source_delta = Some(row.source.mean - s.mean);
            row.target_delta = Some(row.target.mean - t.mean);
        }
    }

    let snapshot = format!(
        "command = compare-norms\ntask = {}\nkinds = {}\nregimes = {}\nseeds = {}\n{}",
        task.as_str(),
        kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","),
        regimes.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(","),
        seeds_text(seeds),
        base.to_text()
    );
    let hash = config_hash(&snapshot);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.kind.to_string(),
                r.regime.to_string(),
                seeds.len().to_string(),
                r.source.mean.to_string(),
                r.source.min.to_string(),
                r.source.max.to_string(),
                r.target.mean.to_string(),
                r.target.min.to_string(),
                r.target.max.to_string(),
                opt(r.source_delta),
                opt(r.target_delta),
            ]
        })
        .collect();
    let summary = opts.out.join("compare_norms.csv");
    write_table(
        &summary,
        &[
            "norm_kind",
            "regime",
            "seeds",
            "source_miou_mean",
            "source_miou_min",
            "source_miou_max",
            "target_miou_mean",
            "target_miou_min",
            "target_miou_max",
            "source_delta_vs_source_only",
            "target_delta_vs_source_only",
        ],
        &table,
        &hash,
    )?;
    let per_run: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.kind.to_string(),
                r.regime.to_string(),
                r.seed.to_string(),
                r.source_miou.to_string(),
                r.target_miou.to_string(),
            ]
        })
        .collect();
    let runs_path = opts.out.join("compare_norms_runs.csv");
    write_table(&runs_path, &["norm_kind", "regime", "seed", "source_miou", "target_miou"], &per_run, &hash)?;
    ExperimentManifest {
        experiment: "compare-norms".into(),
        config_snapshot: snapshot,
        data_manifest: data_manifest(data_dir),
        checkpoints: Vec::new(),
        outputs: vec![summary, runs_path],
        seeds: seeds.to_vec(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&opts.out)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptRow {
    pub regime: Regime,
    pub seed: u64,
    /// mIoU per domain, in [`Task::domains`] order.
    pub miou: Vec<f64>,
    /// Target mIoU minus source-only target mIoU for the same seed.
    pub gap_reduction: f64,
}

/// Trains source-only and adversarial models per seed, saves checkpoints
/// and training logs, and tabulates mIoU on every domain.
pub fn cmd_adapt(data_dir: &Path, task: Task, base: &TrainConfig, seeds: &[u64], opts: &RunOptions) -> Result<Vec<AdaptRow>> {
    check_seeds(seeds)?;
    let started = Instant::now();
    let data = TaskData::load(data_dir, task)?;
    opts.prepare()?;
    let ckpt_dir = opts.out.join("checkpoints");
    let log_dir = opts.out.join("logs");
    fs::create_dir_all(&ckpt_dir)?;
    fs::create_dir_all(&log_dir)?;

    let regimes = [Regime::SourceOnly, Regime::Uada];
    let cells: Vec<(Regime, u64)> = regimes
        .iter()
        .flat_map(|r| seeds.iter().map(move |s| (*r, *s)))
        .collect();
    let results = run_cells(&cells, opts.parallel, |&(regime, seed)| {
        let cfg = TrainConfig {
            regime,
            seed,
            ..base.clone()
        };
        let out = train(&cfg, data.train_data())?;
        let stem = format!("{}_{}_seed{seed}", task.as_str(), regime.as_str());
        let ckpt = ckpt_dir.join(format!("{stem}.ckpt"));
        save_model(&out.model, &ckpt)?;
        let log = log_dir.join(format!("{stem}.csv"));
        let mut buf = Vec::new();
        out.log.write_csv(&mut buf, &cfg.hash())?;
        fs::write(&log, buf)?;
        Ok((data.evaluate_all(&out.model, regime)?, ckpt, log))
    })?;

    let target_col = 1;
    let mut rows = Vec::new();
    for (i, &(regime, seed)) in cells.iter().enumerate() {
        let baseline = cells
            .iter()
            .position(|c| *c == (Regime::SourceOnly, seed))
            .expect("source-only cell per seed");
        rows.push(AdaptRow {
            regime,
            seed,
            miou: results[i].0.clone(),
            gap_reduction: results[i].0[target_col] - results[baseline].0[target_col],
        });
    }

    let snapshot = format!(
        "command = adapt\ntask = {}\nseeds = {}\n{}",
        task.as_str(),
        seeds_text(seeds),
        base.to_text()
    );
    let hash = config_hash(&snapshot);
    let mut header = vec!["regime".to_string(), "seed".to_string()];
    header.extend(task.domains().iter().map(|(n, _)| n.to_string()));
    header.push("gap_reduction".into());
    let mut table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.regime.to_string(), r.seed.to_string()];
            v.extend(r.miou.iter().map(f64::to_string));
            v.push(r.gap_reduction.to_string());
            v
        })
        .collect();
    for regime in regimes {
        let sel: Vec<&AdaptRow> = rows.iter().filter(|r| r.regime == regime).collect();
        let n = sel.len() as f64;
        let mut v = vec![regime.to_string(), "mean".to_string()];
        for col in 0..task.domains().len() {
            v.push((sel.iter().map(|r| r.miou[col]).sum::<f64>() / n).to_string());
        }
        v.push((sel.iter().map(|r| r.gap_reduction).sum::<f64>() / n).to_string());
        table.push(v);
    }
    let csv_path = opts.out.join(format!("adapt_{}.csv", task.as_str()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&csv_path, &header_refs, &table, &hash)?;

    let mut outputs = vec![csv_path];
    outputs.extend(results.iter().map(|r| r.2.clone()));
    ExperimentManifest {
        experiment: format!("adapt-{}", task.as_str()),
        config_snapshot: snapshot,
        data_manifest: data_manifest(data_dir),
        checkpoints: results.iter().map(|r| r.1.clone()).collect(),
        outputs,
        seeds: seeds.to_vec(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&opts.out)?;
    Ok(rows)
}

/// Largest useful curve length for `n_per_domain` samples per domain.
pub fn default_max_m(n_per_domain: usize) -> usize {
    (2 * n_per_domain).saturating_sub(1).min(50)
}

/// Retrieval curve over `n_per_domain` evaluation-mode representations per
/// domain, positions drawn from the evaluation stream of `seed` (source
/// first, then target).
pub fn alignment_curve(
    model: &SegmentationModel,
    source: &SceneDataset,
    target: &SceneDataset,
    n_per_domain: usize,
    max_m: usize,
    seed: u64,
) -> Result<RetrievalCurve> {
    let mut rng = stream(seed, STREAM_EVAL);
    let rs = sample_representations(model, &source.images, DomainTag::Source, n_per_domain, &mut rng)?;
    let rt = sample_representations(model, &target.images, DomainTag::Target, n_per_domain, &mut rng)?;
    retrieval_curve(&rs, &rt, max_m)
}

/// Retrieval curve between source-val and target-val representations of a
/// trained checkpoint, written as an evaluation report whose per-class
/// rows describe the target domain.
pub fn cmd_retrieval(
    checkpoint: &Path,
    data_dir: &Path,
    task: Task,
    n_per_domain: usize,
    max_m: Option<usize>,
    seed: u64,
    opts: &RunOptions,
) -> Result<EvalReport> {
    let model = load_model(checkpoint)?;
    ensure_trained(&model)?;
    let source = load_split(data_dir, task.source(), Split::Val)?;
    let target = load_split(data_dir, task.target(), Split::Val)?;
    let max_m = max_m.unwrap_or_else(|| default_max_m(n_per_domain));
    let curve = alignment_curve(&model, &source, &target, n_per_domain, max_m, seed)?;
    let report = evaluate(&model, &target, DomainTag::Target)?.with_retrieval(curve)?;
    opts.prepare()?;
    let snapshot = format!(
        "command = retrieval\ncheckpoint_digest = {}\ntask = {}\nn_per_domain = {n_per_domain}\nmax_m = {max_m}\nseed = {seed}\n",
        file_digest(checkpoint)?,
        task.as_str()
    );
    let path = opts.out.join("retrieval.csv");
    write_report(&path, &report, &config_hash(&snapshot))?;
    ExperimentManifest {
        experiment: "retrieval".into(),
        config_snapshot: snapshot,
        data_manifest: data_manifest(data_dir),
        checkpoints: vec![checkpoint.to_path_buf()],
        outputs: vec![path],
        seeds: vec![seed],
        wall_clock_secs: 0.0,
    }
    .write(&opts.out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub lambda: f64,
    pub target: Spread,
    pub per_seed: Vec<(u64, f64)>,
}

/// The `lambda` sweep on `task`, one summary row per value (ascending) and
/// one per-seed row per `(lambda, seed)`.
pub fn cmd_sweep_lambda(
    data_dir: &Path,
    task: Task,
    base: &TrainConfig,
    lambdas: &[f64],
    seeds: &[u64],
    opts: &RunOptions,
) -> Result<Vec<SweepSummary>> {
    check_seeds(seeds)?;
    if lambdas.is_empty() {
        return Err(Error::Usage("sweep needs at least one lambda".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::Usage(format!("lambda {l} must be finite and >= 0")));
    }
    let started = Instant::now();
    let data = TaskData::load(data_dir, task)?;
    opts.prepare()?;
    let target_val = data.val_of(task.target())?;
    let per_seed = run_cells(seeds, opts.parallel, |&seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        sweep_lambda(&cfg, lambdas, data.train_data(), target_val)
    })?;

    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let summaries: Vec<SweepSummary> = sorted
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let ps: Vec<(u64, f64)> = seeds.iter().zip(&per_seed).map(|(s, rows)| (*s, rows[i].target_miou)).collect();
            let vals: Vec<f64> = ps.iter().map(|p| p.1).collect();
            SweepSummary {
                lambda,
                target: Spread::of(&vals),
                per_seed: ps,
            }
        })
        .collect();

    let snapshot = format!(
        "command = sweep-lambda\ntask = {}\nlambdas = {}\nseeds = {}\n{}",
        task.as_str(),
        sorted.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        seeds_text(seeds),
        base.to_text()
    );
    let hash = config_hash(&snapshot);
    let table: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                task.as_str().to_string(),
                s.lambda.to_string(),
                seeds.len().to_string(),
                s.target.mean.to_string(),
                s.target.min.to_string(),
                s.target.max.to_string(),
            ]
        })
        .collect();
    let path = opts.out.join("sweep_lambda.csv");
    write_table(
        &path,
        &["task", "lambda", "seeds", "target_miou_mean", "target_miou_min", "target_miou_max"],
        &table,
        &hash,
    )?;
    let runs: Vec<Vec<String>> = summaries
        .iter()
        .flat_map(|s| {
            s.per_seed
                .iter()
                .map(move |(seed, m)| vec![task.as_str().to_string(), s.lambda.to_string(), seed.to_string(), m.to_string()])
        })
        .collect();
    let runs_path = opts.out.join("sweep_lambda_runs.csv");
    write_table(&runs_path, &["task", "lambda", "seed", "target_miou"], &runs, &hash)?;
    ExperimentManifest {
        experiment: format!("sweep-lambda-{}", task.as_str()),
        config_snapshot: snapshot,
        data_manifest: data_manifest(data_dir),
        checkpoints: Vec::new(),
        outputs: vec![path, runs_path],
        seeds: seeds.to_vec(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
    .write(&opts.out)?;
    Ok(summaries)
}

/// Evaluates a checkpoint on one domain's validation split.
pub fn cmd_eval(checkpoint: &Path, data_dir: &Path, domain: &str, tag: DomainTag, opts: &RunOptions) -> Result<EvalReport> {
    let model = load_model(checkpoint)?;
    ensure_trained(&model)?;
    let ds = load_split(data_dir, domain, Split::Val)?;
    let report = evaluate(&model, &ds, tag)?;
    opts.prepare()?;
    let snapshot = format!(
        "command = eval\ncheckpoint_digest = {}\ndomain = {domain}\ntag = {tag:?}\n",
        file_digest(checkpoint)?
    );
    let path = opts.out.join(format!("eval_{domain}.csv"));
    write_report(&path, &report, &config_hash(&snapshot))?;
    ExperimentManifest {
        experiment: "eval".into(),
        config_snapshot: snapshot,
        data_manifest: data_manifest(data_dir),
        checkpoints: vec![checkpoint.to_path_buf()],
        outputs: vec![path],
        seeds: Vec::new(),
        wall_clock_secs: 0.0,
    }
    .write(&opts.out)?;
    Ok(report)
}
