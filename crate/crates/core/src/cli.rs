//! Command-line front end. `main` only forwards `argv` to [`run`].
//!
//! Every subcommand writes into the output directory and leaves a
//! `manifest-<command>.json` describing what it wrote. Manifests hold no
//! timestamps or absolute paths, so rerunning a command with the same
//! config and seed reproduces every file byte for byte.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::lrp::{diff_saliency, lrp_relevance, normalize_saliency, render_map, render_overlay};
use crate::metrics::MetricsReport;
use crate::network::FreezePlan;
use crate::pipeline::{
    best_tradeoff, load_sweep_report, predict_images, retrain_head, run_forgetting_sweep,
    save_model_outputs, select_divergent_samples, source_test_metrics, target_test_metrics,
    train_source, transfer_train,
};
use crate::probe::{
    compare_probe_runs, extract_features, repeated_2fold_cv, Crop, ProbeComparison,
};
use crate::stats::{discordant_counts, mcnemar, TestResult};
use crate::synth::{generate_dataset, Concept, Dataset, LabeledImage};

#[derive(Parser, Debug)]
#[command(
    name = "faud",
    version,
    about = "Measure and explain what a CNN forgets under transfer learning"
)]
struct Cli {
    /// INI config file; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory (overrides `[data] dir`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Worker threads for sweeps and probes.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Generate the planted-concept dataset.
    GenData,
    /// Train the source classifier.
    TrainSource,
    /// Fine-tune a source model on the target task with `--freeze` blocks frozen.
    Transfer(TransferArgs),
    /// Freeze all conv blocks of a model and retrain a source-task head.
    RetrainHead(RetrainArgs),
    /// Source training, FreezeB0..FreezeB5, head retraining and McNemar tests.
    Sweep(SweepArgs),
    /// LRP saliency map for one image.
    Explain(ExplainArgs),
    /// Saliency difference maps on images model A gets right and model B wrong.
    Diff(PairArgs),
    /// Concept probes on two models' last-block features, paired t-test.
    Probe(ProbeArgs),
    /// Per-class McNemar tests of two source-task models.
    Compare(PairArgs),
    /// Tables assembled from an existing sweep and probe outputs.
    Report,
}

#[derive(Args, Debug, Serialize)]
struct TransferArgs {
    #[arg(long)]
    source: PathBuf,
    /// Number of leading conv blocks to freeze (0..=5).
    #[arg(long)]
    freeze: usize,
}

#[derive(Args, Debug, Serialize)]
struct RetrainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Output subdirectory; defaults to the model's directory name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    /// Reuse a trained source checkpoint instead of training one.
    #[arg(long)]
    source: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Image id, e.g. `src-test-00001`.
    #[arg(long)]
    sample: String,
    /// Class name or index; defaults to the predicted class.
    #[arg(long)]
    class: Option<String>,
    /// Also write a PNG heat overlay.
    #[arg(long)]
    png: bool,
}

#[derive(Args, Debug, Serialize)]
struct PairArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    /// Source class name (diff only; compare tests every class).
    #[arg(long)]
    class: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct ProbeArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    /// Concept to probe (C1..C6 or region name); defaults to the config list.
    #[arg(long)]
    concept: Option<String>,
    /// `full`, `bottom` or `bottom:<rows>`.
    #[arg(long)]
    crop: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a Command,
    jobs: usize,
    config: &'a RunConfig,
    outputs: Vec<String>,
}

struct Ctx {
    cfg: RunConfig,
    jobs: usize,
    out: PathBuf,
}

impl Ctx {
    fn dataset(&self) -> Result<Dataset> {
        let dir = &self.cfg.data_dir;
        if !dir.join("labels.csv").exists() {
            return Err(Error::Dataset(format!(
                "no dataset in {} (run `faud gen-data` first)",
                dir.display()
            )));
        }
        Dataset::load(dir)
    }

    fn write(
        &self,
        rel: &str,
        contents: impl AsRef<[u8]>,
        written: &mut Vec<String>,
    ) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p).with_path(p)?;
        }
        std::fs::write(&path, contents).with_path(&path)?;
        written.push(rel.to_string());
        Ok(())
    }
}

/// Parse `args` (including the program name) and run. Returns the process
/// exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<String> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(d) = &cli.data {
        cfg.data_dir = d.clone();
    }
    cfg.validate()?;
    if cli.jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let ctx = Ctx {
        out: cfg.output_dir.clone(),
        cfg,
        jobs: cli.jobs,
    };
    std::fs::create_dir_all(&ctx.out).with_path(&ctx.out)?;
    let mut written = Vec::new();
    let summary = match &cli.command {
        Command::GenData => gen_data(&ctx)?,
        Command::TrainSource => cmd_train_source(&ctx, &mut written)?,
        Command::Transfer(a) => cmd_transfer(&ctx, a, &mut written)?,
        Command::RetrainHead(a) => cmd_retrain(&ctx, a, &mut written)?,
        Command::Sweep(a) => cmd_sweep(&ctx, a, &mut written)?,
        Command::Explain(a) => cmd_explain(&ctx, a, &mut written)?,
        Command::Diff(a) => cmd_diff(&ctx, a, &mut written)?,
        Command::Probe(a) => cmd_probe(&ctx, a, &mut written)?,
        Command::Compare(a) => cmd_compare(&ctx, a, &mut written)?,
        Command::Report => cmd_report(&ctx, &mut written)?,
    };
    let name = serde_json::to_value(&cli.command)?
        .get("command")
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    written.sort();
    let manifest = Manifest {
        command: &cli.command,
        jobs: ctx.jobs,
        config: &ctx.cfg,
        outputs: written,
    };
    let mut ignored = Vec::new();
    ctx.write(
        &format!("manifest-{name}.json"),
        serde_json::to_string_pretty(&manifest)?,
        &mut ignored,
    )?;
    Ok(summary)
}

fn gen_data(ctx: &Ctx) -> Result<String> {
    let spec = crate::synth::TaskSpec::default();
    let ds = generate_dataset(&spec, &ctx.cfg.gen_config())?;
    ds.save(&ctx.cfg.data_dir)?;
    Ok(format!(
        "gen-data: {} source, {} target, {} probe images in {}",
        ds.source.iter().count(),
        ds.target.iter().count(),
        ds.probe.len(),
        ctx.cfg.data_dir.display()
    ))
}

fn cmd_train_source(ctx: &Ctx, written: &mut Vec<String>) -> Result<String> {
    let ds = ctx.dataset()?;
    let (net, report) = train_source(&ds, &ctx.cfg.arch, &ctx.cfg.source, ctx.cfg.seed)?;
    let test = source_test_metrics(&net, &ds)?;
    save_model_outputs(&ctx.out, "source", "source", &net, &test, written)?;
    ctx.write(
        "source/history.json",
        serde_json::to_string_pretty(&report)?,
        written,
    )?;
    Ok(format!(
        "train-source: best epoch {}, test macro F1 {:.4}",
        report.best_epoch, test.macro_f1
    ))
}

fn cmd_transfer(ctx: &Ctx, a: &TransferArgs, written: &mut Vec<String>) -> Result<String> {
    let plan = FreezePlan::new(a.freeze)?;
    let ds = ctx.dataset()?;
    let source = load_checkpoint(&a.source)?;
    let (net, report) = transfer_train(&source, plan, &ds, &ctx.cfg.target, ctx.cfg.seed)?;
    let test = target_test_metrics(&net, &ds)?;
    let dir = plan.label();
    save_model_outputs(&ctx.out, &dir, "transfer", &net, &test, written)?;
    ctx.write(
        &format!("{dir}/transfer_history.json"),
        serde_json::to_string_pretty(&report)?,
        written,
    )?;
    Ok(format!(
        "transfer {dir}: target recall {:.4}",
        test.per_class[1].recall
    ))
}

fn model_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_retrain(ctx: &Ctx, a: &RetrainArgs, written: &mut Vec<String>) -> Result<String> {
    let ds = ctx.dataset()?;
    let model = load_checkpoint(&a.model)?;
    let (net, report) = retrain_head(&model, &ds, &ctx.cfg.retrain, ctx.cfg.seed)?;
    let test = source_test_metrics(&net, &ds)?;
    let dir = a.name.clone().unwrap_or_else(|| model_name(&a.model));
    save_model_outputs(&ctx.out, &dir, "retrain", &net, &test, written)?;
    ctx.write(
        &format!("{dir}/retrain_history.json"),
        serde_json::to_string_pretty(&report)?,
        written,
    )?;
    Ok(format!(
        "retrain-head {dir}: source macro recall {:.4}",
        test.macro_recall
    ))
}

fn load_or_generate(ctx: &Ctx) -> Result<Dataset> {
    if ctx.cfg.data_dir.join("labels.csv").exists() {
        return ctx.dataset();
    }
    log::info!(
        "no dataset in {}, generating one",
        ctx.cfg.data_dir.display()
    );
    gen_data(ctx)?;
    ctx.dataset()
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs, written: &mut Vec<String>) -> Result<String> {
    let ds = load_or_generate(ctx)?;
    let source = a.source.as_deref().map(load_checkpoint).transpose()?;
    let out = run_forgetting_sweep(&ds, &ctx.cfg.sweep_config(), source, ctx.jobs)?;
    written.extend(out.save(&ctx.out)?);
    Ok(format!("sweep: best trade-off {}", out.report.best_model))
}

fn find_image<'a>(ds: &'a Dataset, id: &str) -> Result<&'a LabeledImage> {
    ds.all_images()
        .find(|im| im.id == id)
        .ok_or_else(|| Error::Dataset(format!("no image with id `{id}`")))
}

fn class_id(ds: &Dataset, name: &str) -> Result<usize> {
    match name.parse::<usize>() {
        Ok(i) if i < ds.spec.classes.len() => Ok(i),
        Ok(i) => Err(Error::InvalidArgument(format!(
            "class index {i} out of range"
        ))),
        Err(_) => ds.spec.class_index(name),
    }
}

fn cmd_explain(ctx: &Ctx, a: &ExplainArgs, written: &mut Vec<String>) -> Result<String> {
    let ds = ctx.dataset()?;
    let net = load_checkpoint(&a.model)?;
    let image = find_image(&ds, &a.sample)?;
    let class = match &a.class {
        Some(c) if net.num_classes() == ds.spec.classes.len() => class_id(&ds, c)?,
        Some(c) => c.parse().map_err(|_| {
            Error::InvalidArgument(format!("class `{c}` must be an index for this model"))
        })?,
        None => predict_images(&net, &[image.pixels.as_slice()])?[0],
    };
    let name = model_name(&a.model);
    let trace = lrp_relevance(&net, &image.pixels, class, &name)?;
    let frac = normalize_saliency(&trace.map)?;
    let stem = format!("explain/{name}/{}-class{class}", image.id);
    let pgm = ctx.out.join(format!("{stem}.pgm"));
    std::fs::create_dir_all(pgm.parent().unwrap()).with_path(&pgm)?;
    render_map(&frac, &pgm)?;
    written.extend([format!("{stem}.pgm"), format!("{stem}.json")]);
    ctx.write(
        &format!("{stem}-trace.json"),
        serde_json::to_string(&trace)?,
        written,
    )?;
    if a.png {
        let peak = frac.values.iter().copied().fold(0.0, f64::max);
        let mut vis = frac.clone();
        if peak > 0.0 {
            vis.values.iter_mut().for_each(|v| *v /= peak);
        }
        render_overlay(&vis, &image.pixels, &ctx.out.join(format!("{stem}.png")))?;
        written.push(format!("{stem}.png"));
    }
    Ok(format!(
        "explain {}: class {class}, logit {:.4}, degenerate {}",
        image.id, trace.initial, frac.degenerate
    ))
}

fn cmd_diff(ctx: &Ctx, a: &PairArgs, written: &mut Vec<String>) -> Result<String> {
    let ds = ctx.dataset()?;
    let class_name = a
        .class
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("diff needs --class".into()))?;
    let class = class_id(&ds, class_name)?;
    let net_a = load_checkpoint(&a.model_a)?;
    let net_b = load_checkpoint(&a.model_b)?;
    let (name_a, name_b) = (model_name(&a.model_a), model_name(&a.model_b));
    let ids = select_divergent_samples(&net_a, &net_b, &ds.source.test, class)?;
    let dir = format!("diff/{name_a}-vs-{name_b}/{}", ds.spec.classes[class].name);
    std::fs::create_dir_all(ctx.out.join(&dir)).with_path(&ctx.out.join(&dir))?;
    for id in &ids {
        let im = find_image(&ds, id)?;
        let ra = lrp_relevance(&net_a, &im.pixels, class, &name_a)?;
        let rb = lrp_relevance(&net_b, &im.pixels, class, &name_b)?;
        let d = diff_saliency(&ra.map, &rb.map)?;
        render_map(&d, &ctx.out.join(format!("{dir}/{id}.pgm")))?;
        written.extend([format!("{dir}/{id}.pgm"), format!("{dir}/{id}.json")]);
    }
    ctx.write(
        &format!("{dir}/samples.txt"),
        ids.iter().map(|i| format!("{i}\n")).collect::<String>(),
        written,
    )?;
    Ok(format!(
        "diff: {} divergent {} samples",
        ids.len(),
        ds.spec.classes[class].name
    ))
}

fn crop_label(c: Crop) -> String {
    match c {
        Crop::Full => "full".into(),
        Crop::DropBottom(n) => format!("bottom{n}"),
    }
}

fn cmd_probe(ctx: &Ctx, a: &ProbeArgs, written: &mut Vec<String>) -> Result<String> {
    let ds = ctx.dataset()?;
    let crop = match &a.crop {
        Some(c) => c.parse()?,
        None => ctx.cfg.probe.crop,
    };
    let concepts = match &a.concept {
        Some(c) => vec![c.parse::<Concept>()?],
        None => ctx.cfg.probe.concepts.clone(),
    };
    let iterations = a.iterations.unwrap_or(ctx.cfg.probe.iterations);
    let net_a = load_checkpoint(&a.model_a)?;
    let net_b = load_checkpoint(&a.model_b)?;
    let (name_a, name_b) = (model_name(&a.model_a), model_name(&a.model_b));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut lines = Vec::new();
    for concept in concepts {
        let fa = extract_features(&net_a, &ds.probe, concept, crop, &name_a)?;
        let fb = extract_features(&net_b, &ds.probe, concept, crop, &name_b)?;
        let (ra, rb) = pool.install(|| -> Result<_> {
            Ok((
                repeated_2fold_cv(&fa, iterations, ctx.cfg.seed, &ctx.cfg.probe.svm)?,
                repeated_2fold_cv(&fb, iterations, ctx.cfg.seed, &ctx.cfg.probe.svm)?,
            ))
        })?;
        let cmp = compare_probe_runs(&ra, &rb)?;
        let dir = format!("probe/{name_a}-vs-{name_b}/{concept}-{}", crop_label(crop));
        ctx.write(&format!("{dir}/{name_a}.csv"), ra.to_csv(), written)?;
        ctx.write(&format!("{dir}/{name_b}.csv"), rb.to_csv(), written)?;
        ctx.write(
            &format!("{dir}/comparison.json"),
            serde_json::to_string_pretty(&cmp)?,
            written,
        )?;
        lines.push(format!(
            "{concept}: {name_a} {:.4} vs {name_b} {:.4}, t = {}, p = {:.3e}",
            cmp.mean_a,
            cmp.mean_b,
            cmp.test
                .statistic
                .map_or("n/a".into(), |t| format!("{t:.3}")),
            cmp.test.p_value
        ));
    }
    Ok(format!("probe: {}", lines.join("; ")))
}

#[derive(Serialize)]
struct PairComparison {
    model_a: String,
    model_b: String,
    class: String,
    b: u64,
    c: u64,
    test: TestResult,
}

fn cmd_compare(ctx: &Ctx, a: &PairArgs, written: &mut Vec<String>) -> Result<String> {
    let ds = ctx.dataset()?;
    let net_a = load_checkpoint(&a.model_a)?;
    let net_b = load_checkpoint(&a.model_b)?;
    let (name_a, name_b) = (model_name(&a.model_a), model_name(&a.model_b));
    let px: Vec<&[f32]> = ds
        .source
        .test
        .iter()
        .map(|im| im.pixels.as_slice())
        .collect();
    let truth: Vec<usize> = ds
        .source
        .test
        .iter()
        .map(|im| im.source_class.unwrap_or(usize::MAX))
        .collect();
    let (pa, pb) = (predict_images(&net_a, &px)?, predict_images(&net_b, &px)?);
    let mut rows = Vec::new();
    for (ci, class) in ds.spec.classes.iter().enumerate() {
        let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == ci).collect();
        let right = |p: &[usize]| idx.iter().map(|&i| p[i] == ci).collect::<Vec<_>>();
        let (b, c) = discordant_counts(&right(&pa), &right(&pb))?;
        rows.push(PairComparison {
            model_a: name_a.clone(),
            model_b: name_b.clone(),
            class: class.name.clone(),
            b,
            c,
            test: mcnemar(b, c),
        });
    }
    let significant = rows.iter().filter(|r| r.test.p_value < 0.05).count();
    let dir = format!("compare/{name_a}-vs-{name_b}");
    ctx.write(
        &format!("{dir}/mcnemar.json"),
        serde_json::to_string_pretty(&rows)?,
        written,
    )?;
    Ok(format!(
        "compare: {significant} of {} classes differ at p < 0.05",
        rows.len()
    ))
}

fn probe_comparisons(dir: &Path) -> Result<Vec<ProbeComparison>> {
    let mut found = Vec::new();
    let root = dir.join("probe");
    if !root.is_dir() {
        return Ok(found);
    }
    let mut paths = Vec::new();
    for pair in std::fs::read_dir(&root).with_path(&root)? {
        let pair = pair.with_path(&root)?.path();
        if pair.is_dir() {
            for run in std::fs::read_dir(&pair).with_path(&pair)? {
                let p = run.with_path(&pair)?.path().join("comparison.json");
                if p.exists() {
                    paths.push(p);
                }
            }
        }
    }
    paths.sort();
    for p in paths {
        found.push(serde_json::from_str(
            &std::fs::read_to_string(&p).with_path(&p)?,
        )?);
    }
    Ok(found)
}

fn target_row(model: &str, m: &MetricsReport) -> String {
    let pos = &m.per_class[1];
    format!(
        "{model},{},{},{},{}\n",
        pos.precision, pos.recall, pos.f1, m.accuracy
    )
}

fn cmd_report(ctx: &Ctx, written: &mut Vec<String>) -> Result<String> {
    let report = load_sweep_report(&ctx.out)?;
    let mut table1 =
        String::from("model,target_precision,target_recall,target_f1,target_accuracy\n");
    let mut recalls = format!("model,{}\n", report.class_names.join(","));
    recalls.push_str(&format!(
        "source,{}\n",
        report
            .source_metrics
            .recalls()
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    ));
    for r in &report.records {
        table1.push_str(&target_row(&r.model, &r.target_metrics));
        recalls.push_str(&format!(
            "{},{}\n",
            r.model,
            r.source_recalls
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        ));
    }
    let best = best_tradeoff(&report.tradeoff)
        .map(|r| r.model.clone())
        .unwrap_or_default();
    let mut tradeoff = String::from("model,target_recall,forgotten_recall,score,best\n");
    for r in &report.tradeoff {
        tradeoff.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model,
            r.target_recall,
            r.forgotten_recall,
            r.score,
            r.model == best
        ));
    }
    let probes = probe_comparisons(&ctx.out)?;
    ctx.write("report/table1.csv", table1, written)?;
    ctx.write("report/retrain_recalls.csv", recalls, written)?;
    ctx.write("report/tradeoff.csv", tradeoff, written)?;
    ctx.write(
        "report/mcnemar.csv",
        crate::pipeline::comparisons_csv(&report.comparisons),
        written,
    )?;
    ctx.write(
        "report/probe_comparisons.json",
        serde_json::to_string_pretty(&probes)?,
        written,
    )?;
    Ok(format!(
        "report: best trade-off {best}, {} probe comparisons",
        probes.len()
    ))
}
