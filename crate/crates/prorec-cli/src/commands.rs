//! Implementations of the CLI subcommands. Each writes its artifacts under
//! the `--out` directory and prints a one-paragraph summary to stdout.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use prorec::data::{write_interactions_tsv, write_ledger_tsv, write_split_tsv};
use prorec::eval::{metric_table, rank_predictions, MetricRow};
use prorec::model::InteractionMatrix;
use prorec::pipeline::{run_prorec, PipelineOutput, ProRecConfig, ThresholdKind};
use prorec::{
    inject_noise, load_interactions, noise_hit_ratio, popularity_marginals, split_random,
    synthetic_dataset,
};
use prorec::{DataFormat, Dataset, NoiseLedger, SplitResult};
use serde::Serialize;

use crate::config::CliConfig;

/// Per-invocation context assembled from the global flags.
pub struct Invocation {
    pub config: CliConfig,
    pub out: PathBuf,
    pub seed_override: Option<u64>,
    pub csv: bool,
}

impl Invocation {
    fn ensure_out(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create output directory {}", self.out.display()))?;
        Ok(())
    }

    fn pipeline_config(&self) -> anyhow::Result<ProRecConfig> {
        let mut cfg = self.config.model.to_pipeline_config()?;
        if let Some(seed) = self.seed_override {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Resolves a dataset path, falling back to `$PROREC_DATA_DIR` for relative
/// paths that do not exist from the working directory.
fn resolve_data_path(raw: &str) -> PathBuf {
    let path = Path::new(raw);
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    if let Ok(root) = std::env::var("PROREC_DATA_DIR") {
        let fallback = Path::new(&root).join(path);
        if fallback.exists() {
            return fallback;
        }
    }
    path.to_path_buf()
}

fn load_dataset(config: &CliConfig) -> anyhow::Result<Dataset> {
    match config.data.source.as_str() {
        "synthetic" => {
            let ds = synthetic_dataset(&config.data.synthetic_config())?;
            Ok(Dataset {
                name: config.data.name.clone(),
                ..ds
            })
        }
        "file" => {
            let raw = config.data.path.as_deref().ok_or_else(|| {
                prorec::Error::InvalidArgument(
                    "data.source = \"file\" requires data.path".to_string(),
                )
            })?;
            let path = resolve_data_path(raw);
            Ok(load_interactions(&path, DataFormat::TsvTriplet)
                .map_err(|e| match e {
                    // Attach the path to bare IO errors so the message is
                    // actionable.
                    prorec::Error::Io(io) => prorec::Error::Io(std::io::Error::new(
                        io.kind(),
                        format!("{}: {io}", path.display()),
                    )),
                    other => other,
                })?)
        }
        other => Err(prorec::Error::InvalidArgument(format!(
            "unknown data.source {other:?}; expected \"synthetic\" or \"file\""
        ))
        .into()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct IngestSummary {
    name: String,
    source: String,
    n_users: usize,
    n_items: usize,
    interactions: usize,
    dataset_tsv: String,
}

pub fn cmd_ingest(inv: &Invocation) -> anyhow::Result<()> {
    inv.ensure_out()?;
    let ds = load_dataset(&inv.config)?;
    let tsv_name = format!("{}.tsv", ds.name);
    let tsv_path = inv.out.join(&tsv_name);
    let mut file = fs::File::create(&tsv_path)
        .with_context(|| format!("cannot write {}", tsv_path.display()))?;
    write_interactions_tsv(&ds, &mut file)?;
    let summary = IngestSummary {
        name: ds.name.clone(),
        source: inv.config.data.source.clone(),
        n_users: ds.interactions.n_users(),
        n_items: ds.interactions.n_items(),
        interactions: ds.interactions.nnz(),
        dataset_tsv: tsv_name,
    };
    write_json(&inv.out.join("ingest_summary.json"), &summary)?;
    println!(
        "ingested {}: {} users x {} items, {} interactions -> {}",
        summary.name,
        summary.n_users,
        summary.n_items,
        summary.interactions,
        tsv_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SplitSummary {
    scheme: String,
    seed: u64,
    train: usize,
    val: Option<usize>,
    test: usize,
    trainless_users: usize,
    manifest_tsv: String,
}

pub fn cmd_split(inv: &Invocation) -> anyhow::Result<()> {
    inv.ensure_out()?;
    let ds = load_dataset(&inv.config)?;
    let section = inv.config.split.clone().unwrap_or_default();
    let split = split_random(&ds, section.scheme()?, section.seed)?;
    let manifest = "split.tsv".to_string();
    let path = inv.out.join(&manifest);
    let mut file =
        fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    write_split_tsv(&ds, &split, &mut file)?;
    let summary = SplitSummary {
        scheme: section.scheme,
        seed: section.seed,
        train: split.train.nnz(),
        val: split.val.as_ref().map(InteractionMatrix::nnz),
        test: split.test.nnz(),
        trainless_users: split.trainless_users.len(),
        manifest_tsv: manifest,
    };
    write_json(&inv.out.join("split_summary.json"), &summary)?;
    println!(
        "split {} ({} seed {}): train {} / val {} / test {} -> {}",
        ds.name,
        summary.scheme,
        summary.seed,
        summary.train,
        summary.val.map_or("-".to_string(), |v| v.to_string()),
        summary.test,
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// inject-noise
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct NoiseSummary {
    ratio: f64,
    seed: u64,
    injected: usize,
    interactions_before: usize,
    interactions_after: usize,
    noisy_tsv: String,
    ledger_tsv: String,
}

pub fn cmd_inject_noise(inv: &Invocation) -> anyhow::Result<()> {
    inv.ensure_out()?;
    let ds = load_dataset(&inv.config)?;
    let section = inv.config.noise.clone().unwrap_or_default();
    let before = ds.interactions.nnz();
    let (noisy, ledger) = inject_noise(&ds.interactions, section.ratio, section.seed)?;
    let noisy_ds = Dataset {
        interactions: noisy,
        ..ds
    };

    let noisy_name = format!("{}_noisy.tsv", noisy_ds.name);
    let noisy_path = inv.out.join(&noisy_name);
    let mut file = fs::File::create(&noisy_path)
        .with_context(|| format!("cannot write {}", noisy_path.display()))?;
    write_interactions_tsv(&noisy_ds, &mut file)?;

    let ledger_name = "noise_ledger.tsv".to_string();
    let ledger_path = inv.out.join(&ledger_name);
    let mut file = fs::File::create(&ledger_path)
        .with_context(|| format!("cannot write {}", ledger_path.display()))?;
    write_ledger_tsv(&ledger, &mut file)?;

    let summary = NoiseSummary {
        ratio: section.ratio,
        seed: section.seed,
        injected: ledger.injected.len(),
        interactions_before: before,
        interactions_after: noisy_ds.interactions.nnz(),
        noisy_tsv: noisy_name,
        ledger_tsv: ledger_name,
    };
    write_json(&inv.out.join("noise_summary.json"), &summary)?;
    println!(
        "injected {} noisy pairs ({}%) into {}: {} -> {} interactions",
        summary.injected,
        section.ratio * 100.0,
        noisy_ds.name,
        before,
        summary.interactions_after
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Everything the pipeline needs for one experiment: the (possibly noisy)
/// training matrix plus the folds and ledger that explain it.
struct PreparedRun {
    dataset: Dataset,
    train: InteractionMatrix,
    split: Option<SplitResult>,
    ledger: Option<NoiseLedger>,
}

fn prepare_run(config: &CliConfig) -> anyhow::Result<PreparedRun> {
    let dataset = load_dataset(config)?;
    let (train, split) = match &config.split {
        Some(section) => {
            let split = split_random(&dataset, section.scheme()?, section.seed)?;
            (split.train.clone(), Some(split))
        }
        None => (dataset.interactions.clone(), None),
    };
    let (train, ledger) = match &config.noise {
        Some(section) => {
            let (noisy, ledger) = inject_noise(&train, section.ratio, section.seed)?;
            (noisy, Some(ledger))
        }
        None => (train, None),
    };
    Ok(PreparedRun {
        dataset,
        train,
        split,
        ledger,
    })
}

/// Deterministic portion of a run: everything except wall-clock timings.
#[derive(Serialize)]
struct RunReport {
    dataset: DatasetInfo,
    config: CliConfig,
    seed_used: u64,
    trace: TraceInfo,
    metrics: Option<Vec<MetricRow>>,
    noise: Option<NoiseInfo>,
    artifacts: ArtifactPaths,
}

#[derive(Serialize)]
struct DatasetInfo {
    name: String,
    n_users: usize,
    n_items: usize,
    interactions_total: usize,
    interactions_train: usize,
}

#[derive(Serialize)]
struct TraceInfo {
    initial_objective: f64,
    objectives: Vec<f64>,
    transport_objectives: Vec<f64>,
    relabeled_pairs: Vec<usize>,
    converged: bool,
    violations: Vec<usize>,
}

#[derive(Serialize)]
struct NoiseInfo {
    ratio: f64,
    injected: usize,
    hit_ratio: f64,
}

#[derive(Serialize)]
struct ArtifactPaths {
    report: String,
    timings: String,
    trace: String,
    case_data: String,
    metrics_csv: Option<String>,
}

#[derive(Serialize)]
struct RunTimings {
    secs_total: f64,
    secs_pipeline: f64,
    secs_eval: f64,
    per_iteration: Vec<IterationTimings>,
}

#[derive(Serialize)]
struct IterationTimings {
    iteration: usize,
    secs_als: f64,
    secs_transport: f64,
    secs_denoise: f64,
    secs_blend: f64,
}

fn evaluate(
    output: &PipelineOutput,
    train: &InteractionMatrix,
    split: &SplitResult,
    ks: &[usize],
) -> anyhow::Result<Vec<MetricRow>> {
    if ks.is_empty() {
        return Err(prorec::Error::InvalidArgument("eval.ks is empty".to_string()).into());
    }
    let k_max = *ks.iter().max().expect("nonempty ks");
    let scores = output.model.predict_scores()?;
    let ranked = rank_predictions(&scores, train, k_max)?;
    Ok(metric_table(&ranked, &split.test, ks)?)
}

fn write_case_data(
    path: &Path,
    prepared: &PreparedRun,
    output: &PipelineOutput,
) -> anyhow::Result<()> {
    let mut file =
        fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    writeln!(file, "user,item,label,score,threshold,r,blended")?;
    let ds = &prepared.dataset;
    for (i, j, label) in prepared.train.iter() {
        let user = &ds.user_ids[i as usize];
        let item = &ds.item_ids[j as usize];
        let denoise = &output.denoise.users[i as usize];
        let score = denoise
            .items
            .binary_search(&j)
            .ok()
            .and_then(|pos| denoise.scores.get(pos))
            .map_or(String::new(), |s| format!("{s}"));
        let threshold = denoise
            .threshold
            .map_or(String::new(), |t| format!("{t}"));
        let r = output.denoise.relabel.get(i as usize, j as usize).unwrap_or(1.0);
        let blended = output.x.get(i as usize, j as usize);
        writeln!(file, "{user},{item},{label},{score},{threshold},{r},{blended}")?;
    }
    Ok(())
}

fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> anyhow::Result<()> {
    let mut file =
        fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    writeln!(file, "metric,k,value,n_users")?;
    for row in rows {
        writeln!(file, "{},{},{},{}", row.metric, row.k, row.value, row.n_users)?;
    }
    Ok(())
}

pub fn cmd_run(inv: &Invocation) -> anyhow::Result<()> {
    inv.ensure_out()?;
    let started = Instant::now();
    let prepared = prepare_run(&inv.config)?;
    let pcfg = inv.pipeline_config()?;
    let marginals = popularity_marginals(&prepared.train)?;

    let pipeline_started = Instant::now();
    let output = run_prorec(&prepared.train, &marginals, &pcfg)?;
    let secs_pipeline = pipeline_started.elapsed().as_secs_f64();

    let eval_started = Instant::now();
    let metrics = match &prepared.split {
        Some(split) => Some(evaluate(&output, &prepared.train, split, &inv.config.eval.ks)?),
        None => None,
    };
    let noise = match &prepared.ledger {
        Some(ledger) => Some(NoiseInfo {
            ratio: ledger.ratio,
            injected: ledger.injected.len(),
            hit_ratio: noise_hit_ratio(&output.denoise.relabel, ledger)?,
        }),
        None => None,
    };
    let secs_eval = eval_started.elapsed().as_secs_f64();

    let metrics_csv = if inv.csv && metrics.is_some() {
        Some("metrics.csv".to_string())
    } else {
        None
    };
    let artifacts = ArtifactPaths {
        report: "report.json".to_string(),
        timings: "timings.json".to_string(),
        trace: "trace.jsonl".to_string(),
        case_data: "case_data.csv".to_string(),
        metrics_csv: metrics_csv.clone(),
    };

    let report = RunReport {
        dataset: DatasetInfo {
            name: prepared.dataset.name.clone(),
            n_users: prepared.train.n_users(),
            n_items: prepared.train.n_items(),
            interactions_total: prepared.dataset.interactions.nnz(),
            interactions_train: prepared.train.nnz(),
        },
        config: inv.config.clone(),
        seed_used: pcfg.seed,
        trace: TraceInfo {
            initial_objective: output.trace.initial_objective,
            objectives: output.trace.records.iter().map(|r| r.objective).collect(),
            transport_objectives: output
                .trace
                .records
                .iter()
                .map(|r| r.transport_objective)
                .collect(),
            relabeled_pairs: output
                .trace
                .records
                .iter()
                .map(|r| r.relabeled_pairs)
                .collect(),
            converged: output.trace.converged,
            violations: output.trace.violations.clone(),
        },
        metrics,
        noise,
        artifacts,
    };
    write_json(&inv.out.join("report.json"), &report)?;

    let timings = RunTimings {
        secs_total: started.elapsed().as_secs_f64(),
        secs_pipeline,
        secs_eval,
        per_iteration: output
            .trace
            .records
            .iter()
            .map(|r| IterationTimings {
                iteration: r.iteration,
                secs_als: r.secs_als,
                secs_transport: r.secs_transport,
                secs_denoise: r.secs_denoise,
                secs_blend: r.secs_blend,
            })
            .collect(),
    };
    write_json(&inv.out.join("timings.json"), &timings)?;

    let trace_path = inv.out.join("trace.jsonl");
    let mut trace_file = fs::File::create(&trace_path)
        .with_context(|| format!("cannot write {}", trace_path.display()))?;
    for record in &output.trace.records {
        writeln!(trace_file, "{}", serde_json::to_string(record)?)?;
    }

    write_case_data(&inv.out.join("case_data.csv"), &prepared, &output)?;
    if let Some(name) = metrics_csv {
        write_metrics_csv(
            &inv.out.join(name),
            report.metrics.as_deref().unwrap_or(&[]),
        )?;
    }

    let last_objective = report
        .trace
        .objectives
        .last()
        .copied()
        .unwrap_or(report.trace.initial_objective);
    println!(
        "run complete: {} outer iterations, objective {:.6} -> {:.6}, converged {}",
        report.trace.objectives.len(),
        report.trace.initial_objective,
        last_objective,
        report.trace.converged
    );
    if let Some(rows) = &report.metrics {
        for row in rows.iter().filter(|r| r.k == rows[0].k) {
            println!("  {}@{} = {:.4} ({} users)", row.metric, row.k, row.value, row.n_users);
        }
    }
    if let Some(noise) = &report.noise {
        println!(
            "  noise hit ratio {:.4} over {} injected pairs",
            noise.hit_ratio, noise.injected
        );
    }
    println!("  artifacts in {}", inv.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Serialize, Clone)]
struct SweepRow {
    gamma: f64,
    lambda: f64,
    beta: f64,
    ndcg5: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepReport {
    seed: u64,
    points: usize,
    failures: usize,
    best: Option<SweepRow>,
    rows: Vec<SweepRow>,
}

pub fn cmd_sweep(inv: &Invocation) -> anyhow::Result<()> {
    inv.ensure_out()?;
    let split_section = inv.config.split.clone().unwrap_or_default();
    if !split_section.scheme()?.has_val() {
        return Err(prorec::Error::InvalidArgument(
            "sweep ranks grid points by validation NDCG@5 and needs a validation fold: \
             set [split] scheme = \"5:2:3\""
                .to_string(),
        )
        .into());
    }
    let prepared = prepare_run(&inv.config)?;
    let split = prepared.split.as_ref().expect("sweep always splits");
    let val = split.val.as_ref().expect("5:2:3 always has a val fold");
    let marginals = popularity_marginals(&prepared.train)?;

    let base = inv.pipeline_config()?;
    let sweep = &inv.config.sweep;
    let seed = inv
        .seed_override
        .or(sweep.seed)
        .unwrap_or(inv.config.model.seed);

    let mut rows = Vec::new();
    for &gamma in &sweep.gamma {
        for &lambda in &sweep.lambda {
            for &beta in &sweep.beta {
                let cfg = ProRecConfig {
                    gamma,
                    lambda,
                    beta,
                    seed,
                    ..base.clone()
                };
                let outcome = run_point(&cfg, &prepared.train, &marginals, val);
                let row = match outcome {
                    Ok(ndcg) => SweepRow {
                        gamma,
                        lambda,
                        beta,
                        ndcg5: Some(ndcg),
                        error: None,
                    },
                    Err(err) => SweepRow {
                        gamma,
                        lambda,
                        beta,
                        ndcg5: None,
                        error: Some(format!("{err:#}")),
                    },
                };
                if let Some(e) = &row.error {
                    log::warn!(
                        "sweep point gamma={gamma} lambda={lambda} beta={beta} failed: {e}"
                    );
                }
                rows.push(row);
            }
        }
    }

    // Sort by validation NDCG@5 descending; the stable sort keeps ties and
    // failures in grid order, failures after every scored row.
    rows.sort_by(|a, b| match (a.ndcg5, b.ndcg5) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Equal),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });

    let report = SweepReport {
        seed,
        points: rows.len(),
        failures: rows.iter().filter(|r| r.error.is_some()).count(),
        best: rows.first().filter(|r| r.ndcg5.is_some()).cloned(),
        rows,
    };
    write_json(&inv.out.join("sweep.json"), &report)?;
    if inv.csv {
        let path = inv.out.join("sweep.csv");
        let mut file =
            fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        writeln!(file, "gamma,lambda,beta,ndcg5,error")?;
        for row in &report.rows {
            writeln!(
                file,
                "{},{},{},{},{}",
                row.gamma,
                row.lambda,
                row.beta,
                row.ndcg5.map_or(String::new(), |v| v.to_string()),
                row.error.as_deref().unwrap_or("").replace(',', ";")
            )?;
        }
    }

    match &report.best {
        Some(best) => println!(
            "sweep complete: {} points, {} failures; best gamma={} lambda={} beta={} \
             (val NDCG@5 = {:.4})",
            report.points,
            report.failures,
            best.gamma,
            best.lambda,
            best.beta,
            best.ndcg5.unwrap_or(f64::NAN)
        ),
        None => println!(
            "sweep complete: {} points, all failed — see sweep.json",
            report.points
        ),
    }
    Ok(())
}

fn run_point(
    cfg: &ProRecConfig,
    train: &InteractionMatrix,
    marginals: &prorec::Marginals,
    val: &InteractionMatrix,
) -> anyhow::Result<f64> {
    let output = run_prorec(train, marginals, cfg)?;
    let scores = output.model.predict_scores()?;
    let ranked = rank_predictions(&scores, train, 5)?;
    Ok(prorec::eval::ndcg_at_k(&ranked, val, 5)?.value)
}

// ---------------------------------------------------------------------------
// noise-experiment
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct NoiseLevelRow {
    level: f64,
    seeds: u64,
    hit_ratio_mean: f64,
    hit_ratio_std: f64,
    recall5_denoised_mean: f64,
    recall5_denoised_std: f64,
    recall5_plain_mean: f64,
    recall5_plain_std: f64,
}

#[derive(Serialize)]
struct NoiseExperimentReport {
    levels: Vec<f64>,
    seeds: u64,
    rows: Vec<NoiseLevelRow>,
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

pub fn cmd_noise_experiment(inv: &Invocation, levels: &[f64], seeds: u64) -> anyhow::Result<()> {
    inv.ensure_out()?;
    if levels.is_empty() {
        return Err(
            prorec::Error::InvalidArgument("noise levels list is empty".to_string()).into(),
        );
    }
    for &level in levels {
        if !level.is_finite() || level <= 0.0 || level >= 1.0 {
            return Err(prorec::Error::InvalidArgument(format!(
                "noise level {level} outside (0, 1)"
            ))
            .into());
        }
    }
    if seeds == 0 {
        return Err(prorec::Error::InvalidArgument("seeds must be >= 1".to_string()).into());
    }

    let dataset = load_dataset(&inv.config)?;
    let split_section = inv.config.split.clone().unwrap_or_default();
    let scheme = split_section.scheme()?;
    let noise_seed0 = inv.config.noise.clone().unwrap_or_default().seed;
    let base = inv.pipeline_config()?;

    let mut rows = Vec::new();
    for &level in levels {
        let mut hrs = Vec::new();
        let mut denoised = Vec::new();
        let mut plain = Vec::new();
        for s in 0..seeds {
            let split = split_random(&dataset, scheme, split_section.seed + s)?;
            let (noisy_train, ledger) = inject_noise(&split.train, level, noise_seed0 + s)?;
            let marginals = popularity_marginals(&noisy_train)?;

            let denoised_cfg = ProRecConfig {
                seed: base.seed + s,
                ..base.clone()
            };
            let plain_cfg = ProRecConfig {
                lambda: 1.0,
                threshold: ThresholdKind::None,
                seed: base.seed + s,
                ..base.clone()
            };

            let out = run_prorec(&noisy_train, &marginals, &denoised_cfg)?;
            hrs.push(noise_hit_ratio(&out.denoise.relabel, &ledger)?);
            let scores = out.model.predict_scores()?;
            let ranked = rank_predictions(&scores, &noisy_train, 5)?;
            denoised.push(prorec::eval::recall_at_k(&ranked, &split.test, 5)?.value);

            let out = run_prorec(&noisy_train, &marginals, &plain_cfg)?;
            let scores = out.model.predict_scores()?;
            let ranked = rank_predictions(&scores, &noisy_train, 5)?;
            plain.push(prorec::eval::recall_at_k(&ranked, &split.test, 5)?.value);
        }
        let (hr_mean, hr_std) = mean_std(&hrs);
        let (dn_mean, dn_std) = mean_std(&denoised);
        let (pl_mean, pl_std) = mean_std(&plain);
        rows.push(NoiseLevelRow {
            level,
            seeds,
            hit_ratio_mean: hr_mean,
            hit_ratio_std: hr_std,
            recall5_denoised_mean: dn_mean,
            recall5_denoised_std: dn_std,
            recall5_plain_mean: pl_mean,
            recall5_plain_std: pl_std,
        });
        println!(
            "level {:.2}: HR {:.3}±{:.3}, Recall@5 denoised {:.4}±{:.4} vs plain {:.4}±{:.4}",
            level, hr_mean, hr_std, dn_mean, dn_std, pl_mean, pl_std
        );
    }

    let report = NoiseExperimentReport {
        levels: levels.to_vec(),
        seeds,
        rows,
    };
    write_json(&inv.out.join("noise_experiment.json"), &report)?;
    if inv.csv {
        let path = inv.out.join("noise_experiment.csv");
        let mut file =
            fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        writeln!(
            file,
            "level,seeds,hit_ratio_mean,hit_ratio_std,recall5_denoised_mean,\
             recall5_denoised_std,recall5_plain_mean,recall5_plain_std"
        )?;
        for r in &report.rows {
            writeln!(
                file,
                "{},{},{},{},{},{},{},{}",
                r.level,
                r.seeds,
                r.hit_ratio_mean,
                r.hit_ratio_std,
                r.recall5_denoised_mean,
                r.recall5_denoised_std,
                r.recall5_plain_mean,
                r.recall5_plain_std
            )?;
        }
    }
    println!("noise experiment written to {}", inv.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// export-case
// ---------------------------------------------------------------------------

pub fn cmd_export_case(inv: &Invocation, users: &[String]) -> anyhow::Result<()> {
    inv.ensure_out()?;
    let source = inv.out.join("case_data.csv");
    let text = fs::read_to_string(&source).map_err(|e| {
        prorec::Error::Io(std::io::Error::new(
            e.kind(),
            format!(
                "{}: {e} (run `prorec run` with the same --out first)",
                source.display()
            ),
        ))
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("user,item,label,score,threshold,r,blended");

    let wanted: Vec<&String> = users.iter().filter(|u| !u.is_empty()).collect();
    let wanted_set: HashSet<&str> = wanted.iter().map(|u| u.as_str()).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut selected = Vec::new();
    for line in lines {
        let Some(user) = line.split(',').next() else {
            continue;
        };
        if wanted_set.contains(user) {
            seen.insert(user);
            selected.push(line);
        }
    }
    for user in &wanted {
        if !seen.contains(user.as_str()) {
            log::warn!("unknown user id {user:?}: not present in {}", source.display());
        }
    }

    let path = inv.out.join("case_export.csv");
    let mut file =
        fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    writeln!(file, "{header}")?;
    for line in &selected {
        writeln!(file, "{line}")?;
    }
    println!(
        "exported {} rows for {} of {} requested users -> {}",
        selected.len(),
        seen.len(),
        wanted.len(),
        path.display()
    );
    Ok(())
}
