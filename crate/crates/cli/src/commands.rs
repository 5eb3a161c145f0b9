//! One function per subcommand.

use std::path::Path;

use serde::Serialize;
use stanlab::explain::{export_attention, perturbation_test, pointing_game, PerturbCurve, Target};
use stanlab::io::{generate_synthetic, load_dataset, Dataset};
use stanlab::metrics::{evaluate, render_table, MetricReport};
use stanlab::model::{checkpoint, Stan};
use stanlab::train::{train_from, EpochLog};
use stanlab::{Result, StanError};

use crate::config::RunConfig;
use crate::run::{write_jsonl, RunDir};
use crate::{Global, PointingArg, TargetArg};

fn resolve(g: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    cfg.apply_flags(g.seed, g.mode);
    cfg.apply_thread_env(std::env::var("STANLAB_THREADS").ok().as_deref())?;
    Ok(cfg)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn load_model(path: &Path) -> Result<Stan<f32>> {
    let (model, _) = checkpoint::load(path)?;
    Ok(model)
}

pub fn synth(g: &Global) -> Result<()> {
    let cfg = resolve(g)?;
    cfg.synth.validate()?;
    let run = RunDir::create(g.out.as_deref(), "synth", cfg.synth.seed)?;
    let manifest = generate_synthetic(&cfg.synth, &run.path)?;
    let clips: usize = manifest.splits.values().map(Vec::len).sum();
    run.finish("synth", cfg.synth.seed, &cfg, &[])?;
    println!("{} clips written to {}", clips, show(&run.file("manifest.json")));
    Ok(())
}

pub fn train(g: &Global, data_path: &Path) -> Result<()> {
    let mut cfg = resolve(g)?;
    let data = load_dataset(data_path)?;
    cfg.infer_extents(&data)?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    let train_split = data.split("train")?;
    let val = data.split("val").ok();

    let run = RunDir::create(g.out.as_deref(), "train", cfg.train.seed)?;
    let log_path = run.file("log.jsonl");
    let mut log_file = run.create_file("log.jsonl")?;
    let mut log_err = None;
    let model = Stan::<f32>::new(cfg.model.clone())?;
    let outcome = train_from(model, &cfg.train, train_split, val, |e: &EpochLog| {
        if let Err(err) = write_jsonl(&mut log_file, &log_path, e) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }

    let selected_epoch = outcome.best.as_ref().map_or(cfg.train.epochs - 1, |b| b.epoch);
    let meta = serde_json::json!({
        "dataset": data.manifest.name,
        "seed": cfg.train.seed,
        "epoch": selected_epoch,
        "val_top1": outcome.best.as_ref().map(|b| b.val_top1),
    });
    checkpoint::save(outcome.selected(), meta, run.file("model.ckpt"))?;
    checkpoint::save(&outcome.model, serde_json::json!({ "epoch": cfg.train.epochs - 1 }), run.file("last.ckpt"))?;
    run.finish("train", cfg.train.seed, &cfg, &[("data", show(data_path))])?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs, final loss {:.5}, selected epoch {selected_epoch}; checkpoint {}",
        outcome.log.len(),
        last.loss_total,
        show(&run.file("model.ckpt"))
    );
    Ok(())
}

fn split_name(g: &Global) -> &str {
    g.split.as_deref().unwrap_or("test")
}

pub fn eval(g: &Global, ckpt: &Path, data_path: &Path) -> Result<()> {
    let cfg = resolve(g)?;
    let model = load_model(ckpt)?;
    let data = load_dataset(data_path)?;
    let split = split_name(g);
    let report = evaluate(&model, data.split(split)?)?;
    let run = RunDir::create(g.out.as_deref(), "eval", cfg.train.seed)?;
    let row = format!("STAN({})", model.config.mode);
    let table = render_table(&[(row, report)]);
    #[derive(Serialize)]
    struct Out<'a> {
        split: &'a str,
        mode: String,
        #[serde(flatten)]
        report: MetricReport,
    }
    let out = Out {
        split,
        mode: model.config.mode.to_string(),
        report,
    };
    run.write_json("metrics.json", &out)?;
    run.write("metrics.txt", &table)?;
    run.finish("eval", cfg.train.seed, &cfg, &[("checkpoint", show(ckpt)), ("data", show(data_path))])?;
    print!("{table}");
    Ok(())
}

pub fn perturb(
    g: &Global,
    ckpt: &Path,
    data_path: &Path,
    target: TargetArg,
    sigmas: Option<Vec<f64>>,
    trials: Option<usize>,
) -> Result<()> {
    let mut cfg = resolve(g)?;
    if let Some(s) = sigmas {
        cfg.perturb.sigmas = s;
    }
    if let Some(t) = trials {
        cfg.perturb.trials = t;
    }
    cfg.perturb.validate()?;
    let model = load_model(ckpt)?;
    let data = load_dataset(data_path)?;
    let clips = data.split(split_name(g))?;
    let targets: &[Target] = match target {
        TargetArg::Relevant => &[Target::Relevant],
        TargetArg::Irrelevant => &[Target::Irrelevant],
        TargetArg::Both => &[Target::Relevant, Target::Irrelevant],
    };
    let run = RunDir::create(g.out.as_deref(), "perturb", cfg.perturb.seed)?;
    let mut curves: Vec<PerturbCurve> = Vec::new();
    for &t in targets {
        let curve = perturbation_test(&model, clips, &cfg.perturb, t)?;
        run.write(&format!("perturb_{}.csv", t.as_str()), curve.to_csv())?;
        curves.push(curve);
    }
    run.write_json("perturb.json", &curves)?;
    run.finish("perturb", cfg.perturb.seed, &cfg, &[("checkpoint", show(ckpt)), ("data", show(data_path))])?;
    for c in &curves {
        let last = c.points.last().expect("non-empty sigma grid");
        println!("{:<10} TVD at sigma={} {:.6}", c.target.as_str(), last.sigma, last.mean_tvd);
    }
    if let [r, i] = curves.as_slice() {
        let (r, i) = (r.points.last().unwrap(), i.points.last().unwrap());
        println!("ratio      {:.3}", r.mean_tvd / i.mean_tvd);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PointRow {
    split: String,
    clips: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    soft_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    binary_mae: Option<f64>,
    baseline_mae: f64,
}

fn pointing_rows(model: &Stan<f32>, data: &Dataset, only: Option<&str>, mode: PointingArg) -> Result<Vec<PointRow>> {
    let mut rows = Vec::new();
    for (name, clips) in &data.splits {
        if only.is_some_and(|s| s != name) {
            continue;
        }
        if !clips.iter().any(|c| c.grounding.is_some()) {
            continue;
        }
        let r = pointing_game(model, clips)?;
        rows.push(PointRow {
            split: name.clone(),
            clips: r.clips,
            soft_mae: (mode != PointingArg::Binary).then_some(r.soft_mae),
            binary_mae: (mode != PointingArg::Soft).then_some(r.binary_mae),
            baseline_mae: r.baseline_mae,
        });
    }
    if rows.is_empty() {
        return Err(StanError::Config("no selected split carries grounding masks".into()));
    }
    Ok(rows)
}

pub fn point(g: &Global, ckpt: &Path, data_path: &Path, mode: PointingArg) -> Result<()> {
    let cfg = resolve(g)?;
    let model = load_model(ckpt)?;
    let data = load_dataset(data_path)?;
    if let Some(s) = &g.split {
        data.split(s)?;
    }
    let rows = pointing_rows(&model, &data, g.split.as_deref(), mode)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    let mut table = format!("{:<8}  {:>5}  {:>7}  {:>7}  {:>8}\n", "split", "clips", "soft", "binary", "baseline");
    for r in &rows {
        table.push_str(&format!(
            "{:<8}  {:>5}  {:>7}  {:>7}  {:>8.4}\n",
            r.split,
            r.clips,
            fmt(r.soft_mae),
            fmt(r.binary_mae),
            r.baseline_mae
        ));
    }
    let run = RunDir::create(g.out.as_deref(), "point", cfg.train.seed)?;
    run.write_json("pointing.json", &rows)?;
    run.write("pointing.txt", &table)?;
    run.finish("point", cfg.train.seed, &cfg, &[("checkpoint", show(ckpt)), ("data", show(data_path))])?;
    print!("{table}");
    Ok(())
}

pub fn export_attn(g: &Global, ckpt: &Path, data_path: &Path, clip_id: &str, size: usize) -> Result<()> {
    let cfg = resolve(g)?;
    if size == 0 {
        return Err(StanError::Config("--size must be positive".into()));
    }
    let model = load_model(ckpt)?;
    let data = load_dataset(data_path)?;
    let clip = data
        .splits
        .values()
        .flatten()
        .find(|c| c.id == clip_id)
        .ok_or_else(|| StanError::Config(format!("clip {clip_id:?} is not in {}", show(data_path))))?;
    let run = RunDir::create(g.out.as_deref(), "export-attn", cfg.train.seed)?;
    let files = export_attention(&model, clip, &run.path, size)?;
    run.finish(
        "export-attn",
        cfg.train.seed,
        &cfg,
        &[("checkpoint", show(ckpt)), ("data", show(data_path)), ("clip", clip_id.to_string())],
    )?;
    println!(
        "{} space maps, time attention {}",
        files.space_maps.len(),
        show(&files.time_csv)
    );
    Ok(())
}
