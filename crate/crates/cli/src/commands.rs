use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use codectrace::config::Profile;
use codectrace::corpus::manifest::MANIFEST_FILE;
use codectrace::corpus::{build_corpus, CorpusConfig, CorpusManifest, SilenceDetector, Task};
use codectrace::evaluation::{
    evaluate, run_ablation_matrix, run_condition_grid, silence_f1_correlation, Conditions, ContentCondition,
    EvalReport, SilenceCondition,
};
use codectrace::fusion::AttentionMap;
use codectrace::model::{CoarseInit, Variant};
use codectrace::semantic::{pretrain_toy_semantic, PretrainConfig, SemanticBackbone};
use codectrace::training::{self, infer, write_log, Checkpoint, Dataset, Resume, TaskSplits, TrainConfig};

use crate::run::RunDir;
use crate::{AblateArgs, AttnArgs, CliError, EvalArgs, GenCorpusArgs, PretrainArgs, ProfileArgs, TrainArgs, TrainOpts};

pub const BACKBONE_FILE: &str = "backbone.safetensors";
pub const PROBE_FILE: &str = "probe.safetensors";
pub const ATTENTION_SCHEMA: &str = "codectrace.attention/1";

/// Attention maps of one utterance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionExport {
    pub schema: String,
    pub key: String,
    pub task: Task,
    pub variant: Variant,
    pub label: usize,
    pub predicted: usize,
    pub maps: Vec<AttentionMap>,
}

fn load_profile(p: &ProfileArgs) -> Result<Profile> {
    let profile = match p.profile.as_str() {
        "desk" | "paper" => Profile::named(&p.profile)?,
        path => Profile::load(Path::new(path))?,
    };
    profile.validate()?;
    Ok(profile)
}

fn read_corpus(dir: &Path) -> Result<CorpusManifest> {
    let p = dir.join(MANIFEST_FILE);
    if !p.exists() {
        return Err(codectrace::Error::MissingArtifact(p).into());
    }
    Ok(CorpusManifest::read(&p)?)
}

fn load_backbone(path: Option<&Path>, needed: bool, expected_digest: Option<&str>) -> Result<Option<SemanticBackbone>> {
    let Some(path) = path else {
        if needed {
            return Err(CliError::Usage(format!(
                "this variant needs a semantic backbone: run `pretrain-semantic` and pass its {BACKBONE_FILE} via --semantic"
            ))
            .into());
        }
        return Ok(None);
    };
    let file = if path.is_dir() { path.join(BACKBONE_FILE) } else { path.to_path_buf() };
    if !file.exists() {
        return Err(codectrace::Error::MissingArtifact(file).into());
    }
    let b = SemanticBackbone::load(&file)?;
    if let Some(want) = expected_digest {
        if b.digest()? != want {
            return Err(codectrace::Error::Schema {
                context: file.display().to_string(),
                field: "semantic_digest".into(),
            }
            .into());
        }
    }
    Ok(Some(b))
}

fn load_tuned(cfg: &TrainConfig, from: Option<&Path>) -> Result<Option<Checkpoint>> {
    if cfg.coarse_init != CoarseInit::Tuned {
        return Ok(None);
    }
    let Some(dir) = from else {
        return Err(CliError::Contract(
            "--coarse-init tuned needs a baseline checkpoint: train `--variant baseline` first and pass its `best` directory via --tuned-from"
                .into(),
        )
        .into());
    };
    let ckpt = Checkpoint::load(dir).with_context(|| format!("loading the tuned-init checkpoint {}", dir.display()))?;
    if ckpt.meta.variant != Variant::Baseline {
        return Err(CliError::Contract(format!(
            "--tuned-from {} holds a `{}` checkpoint, expected `baseline`",
            dir.display(),
            ckpt.meta.variant
        ))
        .into());
    }
    Ok(Some(ckpt))
}

fn detector(p: &Profile) -> Result<SilenceDetector> {
    Ok(SilenceDetector::new(p.silence.threshold_db, p.silence.frame_ms)?)
}

fn train_config(o: &TrainOpts, variant: Variant) -> Result<TrainConfig> {
    let profile = load_profile(&o.profile)?;
    let mut c = TrainConfig::new(&profile, o.task, variant);
    c.coarse_init = o.coarse_init;
    c.seed = o.seed;
    if let Some(v) = o.epochs {
        c.epochs = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.lr {
        c.lr = v;
    }
    if let Some(v) = o.mask_ratio {
        c.mask_ratio = v;
    }
    if let Some(v) = o.margin {
        c.margin = v;
    }
    if let Some(v) = o.augment {
        c.augment.enabled = v;
    }
    Ok(c)
}

fn echo(cfg: &TrainConfig) {
    println!("profile      {}", cfg.profile.name);
    println!("task         {}", cfg.task);
    println!("variant      {}", cfg.variant);
    println!("coarse_init  {}", cfg.coarse_init);
    println!("epochs       {}", cfg.epochs);
    println!("batch        {}", cfg.batch_size);
    println!("lr           {:e}", cfg.lr);
    println!("weight_decay {:e}", cfg.weight_decay);
    println!("mask         {}", cfg.mask_ratio);
    println!("margin       {}", cfg.margin);
    println!("augment      {}", cfg.augment.enabled);
    println!("seed         {}", cfg.seed);
    println!("digest       {}", cfg.digest());
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<CorpusConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CorpusConfig::default(),
    };
    if let Some(t) = a.task {
        cfg.balance_task = t;
    }
    if let Some(n) = a.n_utts {
        cfg.n_utts = n;
    }
    if let Some(t) = a.id_threshold {
        cfg.id_threshold = t;
    }
    cfg.validate()?;
    let mut run = RunDir::create(&a.out.out, "gen-corpus", a.out.force)?;
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    let m = build_corpus(&cfg, a.seed, &run.path)?;
    let hist = m.histogram(cfg.balance_task);
    log::info!("{} records, {} histogram {:?}", m.len(), cfg.balance_task, hist);
    run.finish(cfg.digest(), a.seed)?;
    Ok(())
}

pub fn pretrain_semantic(a: PretrainArgs) -> Result<()> {
    let profile = load_profile(&a.profile)?;
    let manifest = read_corpus(&a.corpus)?;
    let mut pc = PretrainConfig {
        seed: a.seed,
        ..PretrainConfig::default()
    };
    if let Some(e) = a.epochs {
        pc.epochs = e;
    }
    let mut run = RunDir::create(&a.out.out, "pretrain-semantic", a.out.force)?;
    run.input(&a.corpus.join(MANIFEST_FILE))?;
    let pre = pretrain_toy_semantic(&manifest, &profile.semantic, profile.audio.sample_rate, &pc)?;
    pre.backbone.save(&run.join(BACKBONE_FILE))?;
    pre.probe.save(&run.join(PROBE_FILE))?;
    run.write_json(
        "pretrain.json",
        &serde_json::json!({
            "config": pc,
            "profile": profile.name,
            "losses": pre.losses,
            "backbone_digest": pre.backbone.digest()?,
        }),
    )?;
    let digest = codectrace::digest::json_digest(&(&pc, profile.digest()));
    run.finish(digest, a.seed)?;
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let resumed = match &a.resume {
        Some(dir) => {
            let last = Checkpoint::load(&dir.join("last"))?;
            let best = Checkpoint::load(&dir.join("best"))?;
            Some((last, best))
        }
        None => None,
    };
    let cfg = match &resumed {
        Some((last, _)) => {
            let mut c = last.meta.config.clone();
            if let Some(e) = a.opts.epochs {
                c.epochs = e;
            }
            c
        }
        None => train_config(&a.opts, a.variant)?,
    };
    echo(&cfg);
    cfg.validate()?;
    if a.dry_run {
        return Ok(());
    }
    let tuned = if resumed.is_some() {
        None
    } else {
        load_tuned(&cfg, a.opts.tuned_from.as_deref())?
    };
    let backbone = load_backbone(a.opts.semantic.as_deref(), cfg.variant.uses_semantic(), None)?;
    let manifest = read_corpus(&a.corpus)?;
    let splits = TaskSplits::load(&manifest, cfg.task)?;

    let mut run = RunDir::create(&a.out.out, "train", a.out.force)?;
    run.input(&a.corpus.join(MANIFEST_FILE))?;
    for p in [a.opts.semantic.as_ref(), a.opts.tuned_from.as_ref(), a.resume.as_ref()].into_iter().flatten() {
        run.input(p)?;
    }
    let resume = resumed.as_ref().map(|(last, best)| Resume { last, best });
    let out = training::train(&cfg, &splits.train, &splits.dev, backbone.as_ref(), tuned.as_ref(), resume)?;
    out.best.save(&run.join("best"))?;
    out.last.save(&run.join("last"))?;
    write_log(&run.join("train_log.jsonl"), &out.log)?;
    run.write_json("history.json", &out.history)?;
    if let Some(h) = out.history.last() {
        log::info!("epoch {}: dev macro-F1 {:.4}", h.epoch, h.dev_macro_f1);
    }
    run.finish(cfg.digest(), cfg.seed)?;
    Ok(())
}

fn report_name(c: Conditions) -> String {
    format!("reports/{}.json", c.to_string().replace('/', "_"))
}

fn write_correlation(run: &RunDir, report: &EvalReport, method: codectrace::evaluation::CorrelationMethod) -> Result<()> {
    match silence_f1_correlation(&report.source_groups(), method) {
        Ok(r) => {
            run.write_json("correlation.json", &r)?;
        }
        Err(e) => log::warn!("no silence/F1 correlation for {}: {e}", report.conditions),
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = &ckpt.model;
    let backbone = load_backbone(
        a.semantic.as_deref(),
        model.variant().uses_semantic(),
        ckpt.meta.semantic_digest.as_deref().filter(|_| model.variant().uses_semantic()),
    )?;
    let manifest = read_corpus(&a.corpus)?;
    let splits = TaskSplits::load(&manifest, ckpt.meta.task)?;
    let det = detector(model.profile())?;

    let mut run = RunDir::create(&a.out.out, "eval", a.out.force)?;
    run.input(&a.corpus.join(MANIFEST_FILE))?;
    run.input(&a.checkpoint)?;
    if let Some(p) = &a.semantic {
        run.input(p)?;
    }
    let seen_with = Conditions {
        silence: SilenceCondition::With,
        content: ContentCondition::Seen,
    };
    let mut summary = String::new();
    if a.grid {
        let g = run_condition_grid(model, &splits, backbone.as_ref(), det)?;
        for r in g.cells.iter().chain(g.unseen_codec.as_ref()) {
            run.write_json(&report_name(r.conditions), r)?;
            summary.push_str(&r.render());
            summary.push('\n');
        }
        run.write_json("grid.json", &g)?;
        write_correlation(&run, g.cell(ContentCondition::Seen, SilenceCondition::With).expect("grid has every cell"), a.correlation)?;
        for c in &g.cells {
            println!("{:<28} {:.4}", c.conditions.to_string(), c.macro_f1);
        }
        if let Some(c) = &g.unseen_codec {
            println!("{:<28} {:.4}", c.conditions.to_string(), c.macro_f1);
        }
    } else {
        let r = evaluate(model, &splits.test_seen, backbone.as_ref(), seen_with, det)?;
        run.write_json(&report_name(seen_with), &r)?;
        write_correlation(&run, &r, a.correlation)?;
        summary.push_str(&r.render());
        println!("{:<28} {:.4}", r.conditions.to_string(), r.macro_f1);
    }
    run.write_text("summary.txt", &summary)?;
    run.finish(ckpt.meta.config_digest.clone(), ckpt.meta.config.seed)?;
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let first = *a.variants.first().ok_or_else(|| CliError::Usage("--variants is empty".into()))?;
    let base = train_config(&a.opts, first)?;
    echo(&base);
    let tuned = load_tuned(&base, a.opts.tuned_from.as_deref())?;
    let needs_semantic = a.variants.iter().any(|v| v.uses_semantic());
    let backbone = load_backbone(a.opts.semantic.as_deref(), needs_semantic, None)?;
    let manifest = read_corpus(&a.corpus)?;
    let splits = TaskSplits::load(&manifest, base.task)?;

    let mut run = RunDir::create(&a.out.out, "ablate", a.out.force)?;
    run.input(&a.corpus.join(MANIFEST_FILE))?;
    for p in [a.opts.semantic.as_ref(), a.opts.tuned_from.as_ref()].into_iter().flatten() {
        run.input(p)?;
    }
    let (table, grids) = run_ablation_matrix(
        &base,
        &a.variants,
        &splits,
        backbone.as_ref(),
        tuned.as_ref(),
        detector(&base.profile)?,
        Some(&run.join("checkpoints")),
    )?;
    let rendered = table.render();
    print!("{rendered}");
    run.write_text("table.md", &rendered)?;
    run.write_json("table.json", &table)?;
    run.write_json("grids.json", &grids)?;
    let digest = codectrace::digest::json_digest(&(base.digest(), &a.variants));
    run.finish(digest, base.seed)?;
    Ok(())
}

pub fn attn(a: AttnArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let variant = ckpt.model.variant();
    if !variant.uses_semantic() {
        return Err(CliError::Contract(format!("`{variant}` has no cross-attention fusion to export")).into());
    }
    let backbone = load_backbone(a.semantic.as_deref(), true, ckpt.meta.semantic_digest.as_deref())?;
    let manifest = read_corpus(&a.corpus)?;
    let task = ckpt.meta.task;
    let data = if a.keys.is_empty() {
        let seen = TaskSplits::load(&manifest, task)?.test_seen;
        let n = seen.len().min(a.limit);
        seen.subset(&(0..n).collect::<Vec<_>>())
    } else {
        let all = Dataset::load(&manifest, task)?;
        let mut idx = Vec::with_capacity(a.keys.len());
        for k in &a.keys {
            let i = all
                .records
                .iter()
                .position(|r| &r.key == k)
                .ok_or_else(|| CliError::Usage(format!("no `{task}` record with key `{k}` in the corpus")))?;
            idx.push(i);
        }
        all.subset(&idx)
    };
    if data.is_empty() {
        return Err(CliError::Contract("no seen-content test items to export".into()).into());
    }

    let mut run = RunDir::create(&a.out.out, "attn", a.out.force)?;
    run.input(&a.corpus.join(MANIFEST_FILE))?;
    run.input(&a.checkpoint)?;
    for i in 0..data.len() {
        write_attention(&run, &ckpt, backbone.as_ref(), task, &data.records[i].key, &data.waves[i], data.labels[i])?;
    }
    run.finish(ckpt.meta.config_digest.clone(), ckpt.meta.config.seed)?;
    Ok(())
}

fn write_attention(
    run: &RunDir,
    ckpt: &Checkpoint,
    backbone: Option<&SemanticBackbone>,
    task: Task,
    key: &str,
    wave: &codectrace::audio::Waveform,
    label: usize,
) -> Result<PathBuf> {
    let inf = infer(ckpt, backbone, wave, task, true)?;
    let export = AttentionExport {
        schema: ATTENTION_SCHEMA.into(),
        key: key.to_string(),
        task,
        variant: ckpt.model.variant(),
        label,
        predicted: inf.predicted,
        maps: inf.attention.unwrap_or_default(),
    };
    run.write_json(&format!("attn/{key}.json"), &export)
}
