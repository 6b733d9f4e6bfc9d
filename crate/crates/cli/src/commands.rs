use std::io::Write;
use std::path::Path;

use flarecdr::dataset::{
    generate_synthetic, load_csv, make_cv_splits, write_csv, Dataset, LabeledInstance, SplitConfig, SplitManifest,
    StandardizationStats, SynthConfig,
};
use flarecdr::eval::{
    paired_ttest, read_probability_csv, threshold_scan, write_probability_csv, write_reports_csv, write_scan_csv,
    MetricReport, ProbabilityRow, ThresholdScan,
};
use flarecdr::explain::{
    beeswarm_data, exact_shapley, global_importance, write_attributions_csv, write_beeswarm_csv, write_global_csv,
    write_waterfall_csv, Background,
};
use flarecdr::features::{frame_feature_names, frame_features, read_grids, VectorFieldMaps};
use flarecdr::models::{MlpConfig, Model, ModelConfig, TransformerConfig};
use flarecdr::seed::derive;
use flarecdr::tensor::Tensor;
use flarecdr::training::{
    parse_range, prepare_fold, sweep_rewards, train_cdr, train_dl, write_sweep_csv, CdrTrainConfig, Checkpoint,
    DlTrainConfig, FoldData, RewardKind,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cli::*;
use crate::run::{basename, open_data, read_artifact, read_config, CliResult, Failure, Run};

/// Trained model plus everything needed to score new data with it.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub trainer: String,
    pub fold: usize,
    pub feature_names: Vec<String>,
    pub standardization: StandardizationStats,
    pub threshold: f64,
    pub checkpoint: Checkpoint,
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::ExtractFeatures(a) => extract(a),
        Command::Split(a) => split(a),
        Command::TrainDl(a) => train_dl_cmd(a),
        Command::TrainCdr(a) => train_cdr_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Scan(a) => scan(a),
        Command::Sweep(a) => sweep(a),
        Command::Explain(a) => explain(a),
        Command::Ttest(a) => ttest(a),
        Command::Compare(a) => compare(a),
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "synth", a.run.seed)?;
    let mut cfg = match &a.config {
        Some(path) => {
            run.input(path)?;
            read_config(path)?
        }
        None => match a.preset {
            Preset::Default => SynthConfig::default(),
            Preset::HighSeparation => SynthConfig::high_separation(),
        },
    };
    if let Some(c) = &a.counts {
        cfg.counts = [c[0], c[1], c[2], c[3]];
    }
    let data = generate_synthetic(&cfg, a.run.seed)?;
    write_csv(&data, run.create("dataset.csv")?)?;
    println!("dataset.csv: {} ARs, class counts {:?}", data.records.len(), data.class_counts());
    run.finish(json!({ "synth": cfg }))?;
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "extract-features", a.run.seed)?;
    run.input(&a.grids)?;
    let grids = read_grids(open_data(&a.grids)?)?;
    if grids.is_empty() || grids.len() % 6 != 0 {
        return Err(Failure::data(format!("{} grids is not a whole number of 6-grid frames", grids.len())));
    }
    let names = frame_feature_names();
    let mut w = csv::Writer::from_writer(run.create("features.csv")?);
    w.write_record(std::iter::once("frame").chain(names.iter().map(String::as_str)))?;
    for (n, frame) in grids.chunks(6).enumerate() {
        let maps = VectorFieldMaps::from_grids(frame[1..].to_vec())?;
        let values = frame_features(&frame[0], &maps)?;
        w.write_record(std::iter::once(n.to_string()).chain(values.iter().map(f64::to_string)))?;
    }
    let n = grids.len() / 6;
    w.flush()?;
    drop(w);
    println!("features.csv: {n} frames x {} features", names.len());
    run.finish(json!({ "grids": basename(&a.grids), "frames": n }))?;
    Ok(())
}

fn split(a: SplitArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "split", a.run.seed)?;
    run.input(&a.data)?;
    let data = load_csv(&a.data)?;
    let mut cfg = SplitConfig { n_splits: a.n_splits, seed: a.run.seed, ..SplitConfig::default() };
    if let Some(r) = &a.ratios {
        cfg.ratios = [r[0], r[1], r[2]];
    }
    if let Some(c) = &a.train_counts {
        cfg.train_counts = Some([c[0], c[1], c[2], c[3]]);
    }
    let splits = make_cv_splits(&data, &cfg)?;
    let manifest = SplitManifest { config: cfg.clone(), splits };
    run.write_json("splits.json", &manifest)?;
    let s = &manifest.splits[0];
    println!("splits.json: {} splits; fold 0 has {}/{}/{} ARs", manifest.splits.len(), s.train.len(), s.val.len(), s.test.len());
    run.finish(json!({ "data": basename(&a.data), "split": cfg }))?;
    Ok(())
}

fn load_dataset(path: &Path, features: Option<&[String]>) -> CliResult<Dataset> {
    let data = load_csv(path)?;
    match features {
        Some(names) => Ok(data.subset_features(names)?),
        None => Ok(data),
    }
}

fn model_config(args: &ModelArgs, run: &mut Run, n_features: usize) -> CliResult<ModelConfig> {
    let cfg = match &args.model {
        Some(path) => {
            run.input(path)?;
            read_config(path)?
        }
        None => match args.arch {
            Arch::Transformer => ModelConfig::Transformer(TransformerConfig::default()),
            Arch::Mlp => ModelConfig::Mlp(MlpConfig::default()),
        },
    };
    Ok(cfg.with_features(n_features))
}

struct Prepared {
    data: Dataset,
    fold: FoldData,
    stats: StandardizationStats,
}

fn prepare(run: &mut Run, args: &DataArgs, fold: usize) -> CliResult<Prepared> {
    run.input(&args.data)?;
    run.input(&args.splits)?;
    let data = load_dataset(&args.data, args.features.as_deref())?;
    let manifest: SplitManifest = read_artifact(&args.splits)?;
    let (fold, stats) = prepare_fold(&data, manifest.get(fold)?)?;
    Ok(Prepared { data, fold, stats })
}

fn data_echo(args: &DataArgs, data: &Dataset) -> serde_json::Value {
    json!({
        "data": basename(&args.data),
        "splits": basename(&args.splits),
        "features": data.feature_names,
    })
}

fn train_dl_cmd(a: TrainDlArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "train-dl", a.run.seed)?;
    let p = prepare(&mut run, &a.data, a.fold)?;
    let model_cfg = model_config(&a.model, &mut run, p.data.n_features())?;
    let mut cfg: DlTrainConfig = match &a.config {
        Some(path) => {
            run.input(path)?;
            read_config(path)?
        }
        None => DlTrainConfig::default(),
    };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = a.lr.unwrap_or(cfg.learning_rate);
    cfg.seed = derive(a.run.seed, 1);
    cfg.validate()?;

    let init = Model::init(&model_cfg, derive(a.run.seed, 0))?;
    let out = train_dl(init, &p.fold.train, &p.fold.val, &cfg)?;
    println!(
        "best epoch {} with validation {} {:.4}",
        out.checkpoint.index,
        out.checkpoint.monitor.name(),
        out.checkpoint.score
    );
    finish_training(run, "dl", a.fold, p, cfg.threshold, out, json!({ "model": model_cfg, "trainer": cfg }), &a.data)
}

fn cdr_config(args: &CdrArgs, run: &mut Run) -> CliResult<CdrTrainConfig> {
    let mut cfg: CdrTrainConfig = match &args.config {
        Some(path) => {
            run.input(path)?;
            read_config(path)?
        }
        None => CdrTrainConfig::default(),
    };
    cfg.episodes = args.episodes.unwrap_or(cfg.episodes);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = args.lr.unwrap_or(cfg.learning_rate);
    let r = &args.rewards;
    cfg.rewards.tp = r.tp.unwrap_or(cfg.rewards.tp);
    cfg.rewards.tn = r.tn.unwrap_or(cfg.rewards.tn);
    cfg.rewards.fp = r.fp.unwrap_or(cfg.rewards.fp);
    cfg.rewards.fn_ = r.fn_.unwrap_or(cfg.rewards.fn_);
    Ok(cfg)
}

fn train_cdr_cmd(a: TrainCdrArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "train-cdr", a.run.seed)?;
    let p = prepare(&mut run, &a.data, a.fold)?;
    let model_cfg = model_config(&a.model, &mut run, p.data.n_features())?;
    let mut cfg = cdr_config(&a.trainer, &mut run)?;
    cfg.seed = derive(a.run.seed, 1);
    cfg.validate()?;

    let init = Model::init(&model_cfg, derive(a.run.seed, 0))?;
    let out = train_cdr(init, &p.fold.train, &p.fold.val, &cfg)?;
    println!(
        "best episode {} with validation {} {:.4}",
        out.checkpoint.index,
        out.checkpoint.monitor.name(),
        out.checkpoint.score
    );
    finish_training(run, "cdr", a.fold, p, cfg.threshold, out, json!({ "model": model_cfg, "trainer": cfg }), &a.data)
}

#[allow(clippy::too_many_arguments)]
fn finish_training(
    mut run: Run,
    trainer: &str,
    fold: usize,
    p: Prepared,
    threshold: f64,
    out: flarecdr::training::TrainOutcome,
    echo: serde_json::Value,
    data_args: &DataArgs,
) -> CliResult<()> {
    let file = CheckpointFile {
        trainer: trainer.into(),
        fold,
        feature_names: p.data.feature_names.clone(),
        standardization: p.stats,
        threshold,
        checkpoint: out.checkpoint,
    };
    run.write_json("checkpoint.json", &file)?;
    let mut log = run.create("train_log.csv")?;
    out.log.write_csv(&mut log)?;
    log.flush()?;
    drop(log);
    let mut config = data_echo(data_args, &p.data);
    config["fold"] = json!(fold);
    config["model"] = echo["model"].clone();
    config["trainer"] = echo["trainer"].clone();
    run.finish(config)?;
    Ok(())
}

fn set_ids(manifest: &SplitManifest, fold: usize, set: SetName) -> CliResult<Vec<u64>> {
    let s = manifest.get(fold)?;
    Ok(match set {
        SetName::Train => s.train.clone(),
        SetName::Val => s.val.clone(),
        SetName::Test => s.test.clone(),
    })
}

fn set_name(set: SetName) -> &'static str {
    match set {
        SetName::Train => "train",
        SetName::Val => "val",
        SetName::Test => "test",
    }
}

/// Standardized instances of one split set, in the checkpoint's feature order.
fn checkpoint_instances(ck: &CheckpointFile, data: &Dataset, manifest: &SplitManifest, set: SetName) -> CliResult<Vec<LabeledInstance>> {
    let data = data.subset_features(&ck.feature_names)?;
    let ids = set_ids(manifest, ck.fold, set)?;
    Ok(ck.standardization.apply_all(&data.select(&ids)?)?)
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "eval", a.run.seed)?;
    for path in &a.checkpoint {
        run.input(path)?;
    }
    run.input(&a.data)?;
    run.input(&a.splits)?;
    let data = load_csv(&a.data)?;
    let manifest: SplitManifest = read_artifact(&a.splits)?;

    let mut reports = Vec::new();
    for (k, path) in a.checkpoint.iter().enumerate() {
        let ck: CheckpointFile = read_artifact(path)?;
        let instances = checkpoint_instances(&ck, &data, &manifest, a.set)?;
        let xs: Vec<&Tensor> = instances.iter().map(|i| &i.x).collect();
        let probs = ck.checkpoint.model.predict_proba_batch(&xs)?;
        let labels: Vec<u8> = instances.iter().map(|i| i.y).collect();
        let report = MetricReport::compute(&probs, &labels, a.threshold.unwrap_or(ck.threshold))?;
        println!(
            "fold {} {}: TSS {:.4} (recall {:.4}, FPR {:.4}), BSS {:.4}",
            ck.fold,
            set_name(a.set),
            report.tss,
            report.recall,
            report.fpr,
            report.bss
        );
        let rows: Vec<ProbabilityRow> = instances
            .iter()
            .zip(&probs)
            .map(|(i, &p)| ProbabilityRow { ar_id: i.ar_id, probability: p, label: i.y })
            .collect();
        let name = if a.checkpoint.len() == 1 { "probabilities.csv".to_string() } else { format!("probabilities_{k}.csv") };
        write_probability_csv(&rows, run.create(&name)?)?;
        reports.push((format!("fold{}_{}", ck.fold, set_name(a.set)), report));
    }
    write_reports_csv(&reports, run.create("report.csv")?)?;
    run.finish(json!({
        "checkpoints": a.checkpoint.iter().map(|p| basename(p)).collect::<Vec<_>>(),
        "data": basename(&a.data),
        "splits": basename(&a.splits),
        "set": set_name(a.set),
        "threshold": a.threshold,
    }))?;
    Ok(())
}

fn print_best(label: &str, scan: &ThresholdScan) {
    let best = scan.best();
    println!("{label}: best TSS {:.4} at threshold {}%", best.tss, best.threshold_pct);
}

fn read_probs(path: &Path) -> CliResult<(Vec<f64>, Vec<u8>)> {
    let rows = read_probability_csv(open_data(path)?)?;
    Ok((rows.iter().map(|r| r.probability).collect(), rows.iter().map(|r| r.label).collect()))
}

fn scan(a: ScanArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "scan", a.run.seed)?;
    run.input(&a.probs)?;
    let (probs, labels) = read_probs(&a.probs)?;
    let scan = threshold_scan(&probs, &labels)?;
    write_scan_csv(&scan, run.create("scan.csv")?)?;
    print_best("scan.csv", &scan);
    run.finish(json!({ "probs": basename(&a.probs) }))?;
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "sweep", a.run.seed)?;
    run.input(&a.data.data)?;
    run.input(&a.data.splits)?;
    let data = load_dataset(&a.data.data, a.data.features.as_deref())?;
    let manifest: SplitManifest = read_artifact(&a.data.splits)?;
    let model_cfg = model_config(&a.model, &mut run, data.n_features())?;
    let mut base = cdr_config(&a.trainer, &mut run)?;
    base.seed = a.run.seed;
    let which: RewardKind = a.which.parse()?;
    let values = parse_range(&a.range)?;
    let fold_ids = a.folds.clone().unwrap_or_else(|| (0..manifest.splits.len()).collect());
    let folds: Vec<FoldData> = fold_ids
        .iter()
        .map(|&f| prepare_fold(&data, manifest.get(f)?).map(|(fold, _)| fold))
        .collect::<flarecdr::Result<_>>()?;

    let rows = sweep_rewards(&base, &model_cfg, which, &values, &folds)?;
    write_sweep_csv(&rows, run.create("sweep.csv")?)?;
    for r in &rows {
        let flag = if r.is_base { " (base)" } else { "" };
        println!("{which}={}: TSS {:.3}±{:.3}, BSS {:.3}±{:.3}{flag}", r.value, r.tss.mean, r.tss.std, r.bss.mean, r.bss.std);
    }
    let mut config = data_echo(&a.data, &data);
    config["folds"] = json!(fold_ids);
    config["which"] = json!(which);
    config["values"] = json!(values);
    config["model"] = json!(model_cfg);
    config["trainer"] = json!(base);
    run.finish(config)?;
    Ok(())
}

fn explain(a: ExplainArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "explain", a.run.seed)?;
    run.input(&a.checkpoint)?;
    run.input(&a.data)?;
    run.input(&a.splits)?;
    let ck: CheckpointFile = read_artifact(&a.checkpoint)?;
    let data = load_csv(&a.data)?;
    let manifest: SplitManifest = read_artifact(&a.splits)?;
    let mut instances = checkpoint_instances(&ck, &data, &manifest, a.set)?;
    if let Some(n) = a.limit {
        instances.truncate(n);
    }
    if instances.is_empty() {
        return Err(Failure::data("no ARs to explain"));
    }
    // Zero is the training mean after standardization.
    let model = &ck.checkpoint.model;
    let attributions = instances
        .par_iter()
        .map(|i| exact_shapley(model, i.ar_id, &i.x, &Background::Zero))
        .collect::<flarecdr::Result<Vec<_>>>()?;
    let global = global_importance(&attributions)?;
    let series: Vec<&Tensor> = instances.iter().map(|i| &i.x).collect();
    let swarm = beeswarm_data(&attributions, &series)?;
    let names = &ck.feature_names;
    write_attributions_csv(&attributions, names, run.create("attributions.csv")?)?;
    write_global_csv(&global, names, run.create("global.csv")?)?;
    write_waterfall_csv(&attributions, names, run.create("waterfall.csv")?)?;
    write_beeswarm_csv(&swarm, names, run.create("beeswarm.csv")?)?;
    // phi0 is the empty-coalition value, which makes efficiency exact; the
    // mean training prediction is the other common reading of the base value.
    let train = checkpoint_instances(&ck, &data, &manifest, SetName::Train)?;
    let train_x: Vec<&Tensor> = train.iter().map(|i| &i.x).collect();
    let train_probs = model.predict_proba_batch(&train_x)?;
    let train_mean = train_probs.iter().sum::<f64>() / train_probs.len().max(1) as f64;
    run.write_json(
        "baseline.json",
        &json!({ "phi0": attributions[0].base_value, "train_mean_prediction": train_mean, "train_ars": train.len() }),
    )?;
    let top = global
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, g)| format!("{} ({g:.4})", names[i]))
        .unwrap_or_default();
    println!("explained {} ARs; top feature {top}", attributions.len());
    run.finish(json!({
        "checkpoint": basename(&a.checkpoint),
        "data": basename(&a.data),
        "splits": basename(&a.splits),
        "set": set_name(a.set),
        "limit": a.limit,
        "background": "training mean",
    }))?;
    Ok(())
}

fn read_column(path: &Path, column: &str) -> CliResult<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(open_data(path)?);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Failure::data(format!("{} has no column {column:?}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("");
        let v = cell
            .trim()
            .parse()
            .map_err(|_| Failure::data(format!("{} line {}: {column} value {cell:?} is not a number", path.display(), i + 2)))?;
        out.push(v);
    }
    Ok(out)
}

fn ttest(a: TtestArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "ttest", a.run.seed)?;
    run.input(&a.a)?;
    run.input(&a.b)?;
    let xa = read_column(&a.a, &a.metric)?;
    let xb = read_column(&a.b, &a.metric)?;
    let result = paired_ttest(&xa, &xb)?;
    run.write_json("ttest.json", &json!({ "metric": a.metric, "n": xa.len(), "result": result }))?;
    println!("{}: t = {:.4}, df = {}, p = {:.4}", a.metric, result.t, result.df, result.p_value);
    run.finish(json!({ "a": basename(&a.a), "b": basename(&a.b), "metric": a.metric }))?;
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult<()> {
    let mut run = Run::new(&a.run.out, "compare", a.run.seed)?;
    let mut named = Vec::new();
    for spec in &a.probs {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--probs {spec:?} must look like NAME=PATH")))?;
        run.input(Path::new(path))?;
        named.push((name.to_string(), Path::new(path).to_path_buf()));
    }
    let mut reports = Vec::new();
    let mut scans = Vec::new();
    for (name, path) in &named {
        let (probs, labels) = read_probs(path)?;
        reports.push((name.clone(), MetricReport::compute(&probs, &labels, a.threshold)?));
        let scan = threshold_scan(&probs, &labels)?;
        print_best(name, &scan);
        scans.push(scan);
    }
    write_reports_csv(&reports, run.create("compare.csv")?)?;
    let mut w = csv::Writer::from_writer(run.create("compare_scan.csv")?);
    w.write_record(std::iter::once("threshold_pct").chain(named.iter().map(|(n, _)| n.as_str())))?;
    for k in 0..=100 {
        w.write_record(std::iter::once(k.to_string()).chain(scans.iter().map(|s| s.points[k].tss.to_string())))?;
    }
    w.flush()?;
    drop(w);
    run.finish(json!({
        "probs": named.iter().map(|(n, p)| format!("{n}={}", basename(p))).collect::<Vec<_>>(),
        "threshold": a.threshold,
    }))?;
    Ok(())
}
