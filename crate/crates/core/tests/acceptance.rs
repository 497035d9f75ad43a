//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The fast criteria (1, 2, 3, 5, 9, 10, 11) always run. The training
//! criteria (4, 6, 7, 8) take about 50 minutes on one core and run with
//! `ACCEPTANCE_FULL=1`. `ACCEPTANCE_ONLY=1,9,10` selects a subset.

use std::cell::OnceCell;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use codectrace::acoustic::loss::{decoder_errors, recon_margin_loss};
use codectrace::acoustic::mae::{Mae, PatchLayout};
use codectrace::acoustic::coarse::CoarseEncoder;
use codectrace::audio::Waveform;
use codectrace::classifier::awl_combine;
use codectrace::config::{MaeConfig, Profile};
use codectrace::corpus::{build_corpus, CorpusConfig, CorpusManifest, Task};
use codectrace::evaluation::{
    decoder_specialization, macro_f1, pearson, per_class_f1, run_condition_grid, ConditionGrid, ContentCondition,
    SilenceCondition,
};
use codectrace::features::{patchify, plan_mask, unpatchify, Spectrogram};
use codectrace::fusion::{export_attention, AttentionCapture, Stage};
use codectrace::model::{CoarseInit, Model, Variant};
use codectrace::nn::ParamStore;
use codectrace::semantic::{pretrain_toy_semantic, PretrainConfig, SemanticBackbone};
use codectrace::training::{infer, overfit_one_batch, train, Checkpoint, PrepMode, Preparer, TaskSplits, TrainConfig, TrainOutcome};

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

// Scale of the training criteria.
const FULL_UTTS: u64 = 150;
const FULL_ID_THRESHOLD: u64 = 100;
const CORPUS_SEED: u64 = 7;
const AUX_EPOCHS: usize = 30;
const FLOOR_EPOCHS: usize = 20;
const TREND_UTTS: u64 = 60;
const TREND_ID_THRESHOLD: u64 = 40;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_EPOCHS: usize = 30;

// Tolerances.
const GRAD_STEP: f64 = 1e-3;
const GRAD_REL_TOL: f64 = 1e-3;
/// Denominator floor of the relative error, so coordinates with vanishing
/// gradients are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;
const AWL_STEP: f64 = 1e-5;
const AWL_REL_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-6;
const SPECIALIZATION_FLOOR: f64 = 0.70;
const FLOOR_MARGIN: f64 = 0.30;
const OVERFIT_STEPS: usize = 200;
const OVERFIT_FRACTION: f64 = 0.10;

const HEAVY: [u32; 4] = [4, 6, 7, 8];

struct Suite {
    only: Option<BTreeSet<u32>>,
    full: bool,
    results: Vec<(u32, bool)>,
}

impl Suite {
    fn wants(&self, n: u32) -> bool {
        match &self.only {
            Some(s) => s.contains(&n),
            None => self.full || !HEAVY.contains(&n),
        }
    }

    fn run(&mut self, n: u32, name: &str, f: impl FnOnce() -> Check) {
        if !self.wants(n) {
            if HEAVY.contains(&n) && self.only.is_none() {
                println!("criterion {n:>2} SKIP {name}: training run, set ACCEPTANCE_FULL=1");
            }
            return;
        }
        let t = Instant::now();
        let (pass, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        println!(
            "criterion {n:>2} {:<4} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        std::io::stdout().flush().ok();
        self.results.push((n, pass));
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn corpus(dir: &Path, task: Task, n_utts: u64, id_threshold: u64, seed: u64) -> CorpusManifest {
    let cfg = CorpusConfig {
        balance_task: task,
        n_utts,
        id_threshold,
        ..CorpusConfig::default()
    };
    build_corpus(&cfg, seed, dir).expect("corpus")
}

fn backbone(m: &CorpusManifest, epochs: usize) -> SemanticBackbone {
    let p = Profile::desk();
    let pc = PretrainConfig {
        epochs,
        ..PretrainConfig::default()
    };
    pretrain_toy_semantic(m, &p.semantic, p.audio.sample_rate, &pc).expect("pretrain").backbone
}

fn config(task: Task, variant: Variant, epochs: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(&Profile::desk(), task, variant);
    c.epochs = epochs;
    c.seed = seed;
    c.augment.enabled = false;
    c
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    values(t)[0]
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` along one coordinate of `var`.
fn central_diff(var: &Var, index: usize, step: f64, f: &mut dyn FnMut() -> f64) -> f64 {
    let base = values(var.as_tensor());
    let shape = var.as_tensor().shape().clone();
    let set = |delta: f64| {
        let mut v = base.clone();
        v[index] += delta;
        var.set(&Tensor::from_vec(v, shape.clone(), &Device::Cpu).unwrap()).unwrap();
    };
    set(step);
    let plus = f();
    set(-step);
    let minus = f();
    set(0.0);
    (plus - minus) / (2.0 * step)
}

// ---- criterion 1 -----------------------------------------------------------

/// Single masked patch of width 1 and target 0: decoder i's error is `r_i^2`.
fn scalar_errors(r: &[f64]) -> (Tensor, Vec<Tensor>) {
    let target = Tensor::zeros((1, 1, 1), DType::F64, &Device::Cpu).unwrap();
    let recons = r.iter().map(|&v| Tensor::new(&[[[v]]], &Device::Cpu).unwrap()).collect();
    (target, recons)
}

fn margin_oracle(errs: &[f64], y: usize, m: f64) -> f64 {
    let others: Vec<f64> = errs.iter().enumerate().filter(|(i, _)| *i != y).map(|(_, &e)| e).collect();
    let l_other = others.iter().sum::<f64>() / others.len() as f64;
    errs[y] + ((errs[y] - l_other) + m).max(0.0)
}

fn tiny_mae(seed: u64, n_decoders: usize) -> (ParamStore, Mae) {
    let store = ParamStore::new(DType::F64, seed);
    let cfg = MaeConfig {
        d_enc: 8,
        enc_layers: 1,
        d_dec: 8,
        dec_layers: 1,
        heads: 2,
    };
    let layout = PatchLayout {
        frames: 8,
        channels: 8,
        patch_h: 4,
        patch_w: 4,
    };
    let mae = Mae::new(&store.root(), &cfg, layout, n_decoders).unwrap();
    (store, mae)
}

fn criterion_1() -> Check {
    // Worked examples, evaluated bit-for-bit against the scalar formula.
    let mut notes = Vec::new();
    let mut ok = true;
    for (r, y, expect) in [(vec![0.02f64.sqrt(), 0.2f64.sqrt()], 0, 0.02), (vec![0.06f64.sqrt(), 0.05f64.sqrt()], 1, 0.14)] {
        let (t, recons) = scalar_errors(&r);
        let errs: Vec<f64> = r.iter().map(|v| v * v).collect();
        let got = scalar(&recon_margin_loss(&t, &recons, y, &[0], 0.1)?);
        let oracle = margin_oracle(&errs, y, 0.1);
        ok &= got == oracle && (got - expect).abs() <= 2.0 * f64::EPSILON * expect;
        notes.push(format!("{got}"));
    }

    // Gradient with respect to decoder parameters at random points.
    let mut worst = [0f64; 2];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (regime, active) in [(0usize, true), (1, false)] {
        for point in 0..20u64 {
            let (store, mae) = tiny_mae(100 + point + 1000 * regime as u64, 3);
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(x, (1, 8, 8), &Device::Cpu)?;
            let plan = plan_mask((2, 2), 0.5, point)?;
            let out = mae.forward(&x, Some(&plan))?;
            let errs = values(&decoder_errors(&out.target, &out.recons, &out.masked)?);
            let argmax = (0..3).max_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap();
            let argmin = (0..3).min_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap();
            // Active: worst decoder as label with margin 0.1. Inactive: best
            // decoder as label with margin 0.
            let (y, m) = if active { (argmax, 0.1) } else { (argmin, 0.0) };
            let mut loss = || -> f64 {
                let o = mae.forward(&x, Some(&plan)).unwrap();
                scalar(&recon_margin_loss(&o.target, &o.recons, y, &o.masked, m).unwrap())
            };
            let l0 = loss();
            let gap = l0 - errs[y];
            if active != (gap > 0.0) {
                return Ok((false, format!("regime check failed at point {point}: penalty {gap}")));
            }
            let l = recon_margin_loss(&out.target, &out.recons, y, &out.masked, m)?;
            let grads = l.backward()?;
            let names: Vec<String> = store.names().into_iter().filter(|n| n.contains("decoder")).collect();
            let own: Vec<&String> = names.iter().filter(|n| n.contains(&format!("decoder{y}."))).collect();
            let other: Vec<&String> = names.iter().filter(|n| !n.contains(&format!("decoder{y}."))).collect();
            for pool in [&own, &other, &names.iter().collect::<Vec<_>>()] {
                let name = pool[rng.random_range(0..pool.len())];
                let var = store.get(name).unwrap();
                let n = var.as_tensor().elem_count();
                let i = rng.random_range(0..n);
                let g = grads.get(var.as_tensor()).map(|g| values(g)[i]).unwrap_or(0.0);
                let fd = central_diff(&var, i, GRAD_STEP, &mut loss);
                worst[regime] = worst[regime].max(rel_err(g, fd, GRAD_FLOOR));
            }
        }
    }
    ok &= worst.iter().all(|&w| w < GRAD_REL_TOL);
    Ok((
        ok,
        format!(
            "examples = {}, max rel. gradient error active {:.2e} / inactive {:.2e} (tol {GRAD_REL_TOL:e})",
            notes.join(", "),
            worst[0],
            worst[1]
        ),
    ))
}

// ---- criterion 2 -----------------------------------------------------------

fn criterion_2() -> Check {
    let t = |v: f64| Tensor::new(v, &Device::Cpu).unwrap();
    let v0 = scalar(&awl_combine(&t(0.0), &t(0.0), &t(1.0), &t(1.0))?);
    let value_ok = (v0 - 2.0 * 2f64.ln()).abs() < ORACLE_TOL;

    let w = Var::new(1.0f64, &Device::Cpu)?;
    let l = awl_combine(&t(1.0), &t(0.7), w.as_tensor(), &t(1.0))?;
    let d_w = scalar(l.backward()?.get(w.as_tensor()).expect("gradient"));
    let stationary = d_w.abs() < 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0f64;
    for _ in 0..20 {
        let vars: Vec<Var> = [
            rng.random_range(0.0..3.0),
            rng.random_range(0.0..3.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
        ]
        .iter()
        .map(|&v| Var::new(v, &Device::Cpu).unwrap())
        .collect();
        let f = |vs: &[Var]| awl_combine(vs[0].as_tensor(), vs[1].as_tensor(), vs[2].as_tensor(), vs[3].as_tensor()).unwrap();
        let grads = f(&vars).backward()?;
        for v in &vars {
            let g = scalar(grads.get(v.as_tensor()).expect("gradient"));
            let fd = central_diff(v, 0, AWL_STEP, &mut || scalar(&f(&vars)));
            worst = worst.max(rel_err(g, fd, GRAD_FLOOR));
        }
    }
    Ok((
        value_ok && stationary && worst < AWL_REL_TOL,
        format!("value {v0:.15}, d/dw_cls at stationarity {d_w:.1e}, max rel. gradient error {worst:.2e} (tol {AWL_REL_TOL:e})"),
    ))
}

// ---- small shared fixture --------------------------------------------------

struct Small {
    _dir: tempfile::TempDir,
    manifest: CorpusManifest,
    backbone: SemanticBackbone,
    splits: TaskSplits,
}

impl Small {
    fn new() -> Self {
        let dir = tmp();
        let manifest = corpus(dir.path(), Task::Aux, 8, 5, 3);
        let backbone = backbone(&manifest, 2);
        let splits = TaskSplits::load(&manifest, Task::Aux).unwrap();
        Self {
            _dir: dir,
            manifest,
            backbone,
            splits,
        }
    }

    fn waves(&self, n: usize) -> Vec<(u64, &Waveform)> {
        self.splits.train.waves.iter().take(n).enumerate().map(|(i, w)| (i as u64, w)).collect()
    }

    fn inputs(&self, variant: Variant, n: usize) -> codectrace::model::Inputs {
        let prep = Preparer::new(&Profile::desk(), variant).unwrap();
        prep.prepare(&self.waves(n), &PrepMode::Eval { trim: None }, Some(&self.backbone)).unwrap()
    }

    fn short_run(&self, variant: Variant, seed: u64) -> TrainOutcome {
        let mut c = config(Task::Aux, variant, 2, seed);
        c.batch_size = 8;
        train(&c, &self.splits.train, &self.splits.dev, Some(&self.backbone), None, None).unwrap()
    }
}

// ---- criterion 3 -----------------------------------------------------------

fn criterion_3(small: &Small) -> Check {
    let mut worst_total = 0f64;
    let mut worst_axis = 0f64;
    let mut cases = 0;
    for t in 4..=16usize {
        for f in 4..=16usize {
            for r in [0.2, 0.4, 0.6] {
                let p = plan_mask((t, f), r, (t * 100 + f) as u64)?;
                let n = (t * f) as f64;
                // Within one patch of the target count.
                worst_total = worst_total.max((p.masked().len() as f64 - r * n).abs());
                // Time and frequency line contributions differ by at most one line.
                let (a, b) = p.axis_contributions();
                worst_axis = worst_axis.max((a as f64 - b as f64).abs() / t.max(f) as f64);
                cases += 1;
            }
        }
    }
    let grid_ok = worst_total <= 1.0 && worst_axis <= 1.0;

    // Forcing a mask changes the logits; inference reproduces the unmasked pass.
    let run = small.short_run(Variant::Sastnet, 1);
    let model = &run.best.model;
    let inputs = small.inputs(Variant::Sastnet, 1);
    let plain = values(&model.forward(&inputs, None, None)?.logits);
    let plan = plan_mask(model.mask_grid().unwrap(), 0.4, 9)?;
    let masked = values(&model.forward(&inputs, Some(&plan), None)?.logits);
    let inf = infer(&run.best, Some(&small.backbone), &small.splits.train.waves[0], Task::Aux, false)?;
    let differs = plain != masked;
    let same = inf.logits == plain;
    Ok((
        grid_ok && differs && same,
        format!(
            "{cases} plans: max |masked - target| {worst_total} patches, max axis gap {worst_axis:.2} lines; forced mask changes logits: {differs}; inference equals unmasked pass: {same}"
        ),
    ))
}

// ---- criterion 5 -----------------------------------------------------------

fn criterion_5(small: &Small) -> Check {
    let desk = Profile::desk();
    let paper = Profile::paper();
    let mut notes = Vec::new();

    let inputs = small.inputs(Variant::Sastnet, 2);
    let model = Model::new(&desk, Variant::Sastnet, Task::Aux, 1)?;
    let sem = inputs.semantic.as_ref().unwrap().dims().to_vec();
    let coarse = model.encode_coarse(inputs.wave.as_ref().unwrap())?.dims().to_vec();
    let padded = small.backbone.encode_padded(&small.splits.train.waves[0])?.dims().to_vec();
    let desk_ok = padded == [300, 64] && sem == [2, 32, 64] && coarse == [2, 128, 64] && model.mask_grid() == Some((16, 8));
    notes.push(format!("desk semantic {}→{}→{} x{}, coarse {}x{}", padded[0], desk.semantic.truncate, sem[1], sem[2], coarse[1], coarse[2]));

    let sb = SemanticBackbone::new(&paper.semantic, paper.audio.sample_rate, 0)?;
    let x = Waveform::new(vec![0.01f32; paper.audio.sample_rate as usize], paper.audio.sample_rate)?;
    let full = sb.encode_padded(&x)?.dims().to_vec();
    let e = sb.encode(&x)?;
    let store = ParamStore::new(DType::F32, 0);
    let ce = CoarseEncoder::new(&store.root(), &paper.coarse, paper.audio.input_samples)?;
    let wave = Tensor::zeros((1, paper.audio.input_samples), DType::F32, &Device::Cpu)?;
    let pc = ce.forward(&wave)?.dims().to_vec();
    let paper_ok = full == [1500, 768] && paper.semantic.truncate == 256 && (e.frames, e.dim) == (128, 768) && pc == [1, 256, 1024];
    notes.push(format!("paper semantic {}→{}→{} x{}, coarse {}x{}", full[0], paper.semantic.truncate, e.frames, e.dim, pc[1], pc[2]));
    Ok((desk_ok && paper_ok, notes.join("; ")))
}

// ---- criterion 9 -----------------------------------------------------------

fn f1_oracle(preds: &[usize], truths: &[usize], n: usize) -> (Vec<f64>, f64) {
    let mut per = Vec::with_capacity(n);
    for c in 0..n {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (p, t) in preds.iter().zip(truths) {
            match (*p == c, *t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        per.push(if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 });
    }
    let mean = per.iter().sum::<f64>() / n as f64;
    (per, mean)
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

fn criterion_9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_f1 = 0f64;
    let mut worst_rho = 0f64;
    for _ in 0..100 {
        let n_classes = rng.random_range(2..6);
        let len = rng.random_range(1..=50);
        let truths: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_classes)).collect();
        let preds: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_classes)).collect();
        let (per, mean) = f1_oracle(&preds, &truths, n_classes);
        let got = per_class_f1(&preds, &truths, n_classes)?;
        for (a, b) in got.iter().zip(&per) {
            worst_f1 = worst_f1.max((a - b).abs());
        }
        worst_f1 = worst_f1.max((macro_f1(&preds, &truths, n_classes)? - mean).abs());

        let k = rng.random_range(3..20);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        worst_rho = worst_rho.max((pearson(&x, &y)? - pearson_oracle(&x, &y)).abs());
    }
    let truths: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let sixth = macro_f1(&[0; 30], &truths, 3)?;
    let ok = worst_f1 <= ORACLE_TOL && worst_rho <= ORACLE_TOL && sixth == 1.0 / 6.0;
    Ok((ok, format!("max |Δ| macro-F1 {worst_f1:.1e}, Pearson {worst_rho:.1e} (tol {ORACLE_TOL:e}); all-zero case = {sixth}")))
}

// ---- criterion 10 ----------------------------------------------------------

fn criterion_10(small: &Small) -> Check {
    let inputs = small.inputs(Variant::Sastnet, 3);
    let model = Model::new(&Profile::desk(), Variant::Sastnet, Task::Aux, 4)?;
    let plain = values(&model.forward(&inputs, None, None)?.logits);
    let mut cap = AttentionCapture::new();
    let seen = values(&model.forward(&inputs, None, Some(&mut cap))?.logits);
    let mut worst = 0f64;
    let mut rows = 0usize;
    for stage in Stage::ALL {
        for layer in 0..cap.layers(stage) {
            for item in 0..3 {
                let m = export_attention(Some(&cap), stage, layer, item)?;
                for h in 0..m.heads {
                    for q in 0..m.l_q {
                        let s: f64 = m.row(h, q).iter().map(|&w| f64::from(w)).sum();
                        worst = worst.max((s - 1.0).abs());
                        rows += 1;
                    }
                }
            }
        }
    }
    let transparent = plain == seen;
    Ok((
        worst < ROW_SUM_TOL && transparent && cap.len() == 6,
        format!("{rows} rows over {} maps, max |sum - 1| {worst:.1e} (tol {ROW_SUM_TOL:e}); capture bit-transparent: {transparent}", cap.len()),
    ))
}

// ---- criterion 11 ----------------------------------------------------------

fn criterion_11(small: &Small) -> Check {
    let mut notes = Vec::new();
    let (a, b) = (tmp(), tmp());
    let ma = corpus(a.path(), Task::Aux, 4, 2, 21);
    let mb = corpus(b.path(), Task::Aux, 4, 2, 21);
    let mut same_corpus = ma.to_jsonl()? == mb.to_jsonl()?;
    for r in &ma.records {
        same_corpus &= std::fs::read(ma.wav_path(r))? == std::fs::read(mb.wav_path(r))?;
    }
    notes.push(format!("corpus regeneration identical: {same_corpus}"));

    let r1 = small.short_run(Variant::Sastnet, 5);
    let r2 = small.short_run(Variant::Sastnet, 5);
    let same_log = serde_json::to_string(&r1.log)? == serde_json::to_string(&r2.log)?;
    notes.push(format!("training logs identical: {same_log}"));

    let dir = tmp();
    r1.best.save(dir.path())?;
    let loaded = Checkpoint::load(dir.path())?;
    let x = &small.splits.test_seen.waves[0];
    let before = infer(&r1.best, Some(&small.backbone), x, Task::Aux, false)?;
    let after = infer(&loaded, Some(&small.backbone), x, Task::Aux, false)?;
    let same_params = loaded.model.store().digest()? == r1.best.model.store().digest()?;
    let round = before == after && same_params;
    notes.push(format!("checkpoint save/load/infer identical: {round}"));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = true;
    for (frames, bins, ph, pw) in [(205, 64, 8, 8), (17, 13, 4, 5), (128, 64, 16, 16)] {
        let data: Vec<f32> = (0..frames * bins).map(|_| rng.random_range(-5.0..5.0)).collect();
        let s = Spectrogram { frames, bins, data };
        exact &= unpatchify(&patchify(&s, ph, pw)?)? == s;
    }
    let layout = PatchLayout {
        frames: 128,
        channels: 64,
        patch_h: 8,
        patch_w: 8,
    };
    let t = Tensor::randn(0f32, 1.0, (2, 128, 64), &Device::Cpu)?;
    exact &= values(&layout.unpatchify(&layout.patchify(&t)?)?) == values(&t);
    notes.push(format!("patchify round trip exact: {exact}"));
    let _ = &small.manifest;
    Ok((same_corpus && same_log && round && exact, notes.join("; ")))
}

// ---- criterion 7 (overfit) -------------------------------------------------

fn overfit(small: &Small) -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    let items: Vec<usize> = (0..small.splits.train.len().min(8)).collect();
    for v in Variant::ALL {
        let c = config(Task::Aux, v, 1, 0);
        let losses = overfit_one_batch(&c, &small.splits.train, &items, Some(&small.backbone), OVERFIT_STEPS).unwrap();
        let hit = losses.iter().position(|&l| l < OVERFIT_FRACTION * losses[0]);
        let best = losses.iter().cloned().fold(f64::INFINITY, f64::min) / losses[0];
        ok &= hit.is_some();
        notes.push(match hit {
            Some(s) => format!("{v} at step {s}"),
            None => format!("{v} never (best {best:.3})"),
        });
    }
    (ok, format!("one-batch loss below {OVERFIT_FRACTION} x initial within {OVERFIT_STEPS} steps: {}", notes.join(", ")))
}

// ---- heavy training criteria -----------------------------------------------

struct AuxRun {
    splits: TaskSplits,
    backbone: SemanticBackbone,
    digest_before: String,
    sastnet: TrainOutcome,
    _dir: tempfile::TempDir,
}

fn aux_run() -> AuxRun {
    let dir = tmp();
    let m = corpus(dir.path(), Task::Aux, FULL_UTTS, FULL_ID_THRESHOLD, CORPUS_SEED);
    let backbone = backbone(&m, PretrainConfig::default().epochs);
    let splits = TaskSplits::load(&m, Task::Aux).unwrap();
    let digest_before = backbone.digest().unwrap();
    let base = train(&config(Task::Aux, Variant::Baseline, AUX_EPOCHS, 0), &splits.train, &splits.dev, None, None, None).unwrap();
    let mut c = config(Task::Aux, Variant::Sastnet, AUX_EPOCHS, 0);
    c.coarse_init = CoarseInit::Tuned;
    let sastnet = train(&c, &splits.train, &splits.dev, Some(&backbone), Some(&base.best), None).unwrap();
    AuxRun {
        splits,
        backbone,
        digest_before,
        sastnet,
        _dir: dir,
    }
}

fn seen_f1(model: &Model, splits: &TaskSplits, backbone: &SemanticBackbone) -> f64 {
    let g = run_condition_grid(model, splits, Some(backbone), Default::default()).unwrap();
    g.f1(ContentCondition::Seen, SilenceCondition::With)
}

fn floor_for(task: Task) -> (f64, f64) {
    let dir = tmp();
    let m = corpus(dir.path(), task, FULL_UTTS, FULL_ID_THRESHOLD, CORPUS_SEED);
    let backbone = backbone(&m, PretrainConfig::default().epochs);
    let splits = TaskSplits::load(&m, task).unwrap();
    let run = train(&config(task, Variant::Sastnet, FLOOR_EPOCHS, 0), &splits.train, &splits.dev, Some(&backbone), None, None).unwrap();
    let f1 = seen_f1(&run.best.model, &splits, &backbone);
    (f1, 1.0 / task.n_classes() as f64 + FLOOR_MARGIN)
}

struct TrendSeed {
    baseline: ConditionGrid,
    s_mae: ConditionGrid,
    m_mae: ConditionGrid,
    sastnet: ConditionGrid,
}

fn trend_runs() -> Vec<TrendSeed> {
    let dir = tmp();
    let m = corpus(dir.path(), Task::Aux, TREND_UTTS, TREND_ID_THRESHOLD, CORPUS_SEED);
    let backbone = backbone(&m, PretrainConfig::default().epochs);
    let splits = TaskSplits::load(&m, Task::Aux).unwrap();
    TREND_SEEDS
        .iter()
        .map(|&seed| {
            let grid = |v: Variant| {
                let run = train(&config(Task::Aux, v, TREND_EPOCHS, seed), &splits.train, &splits.dev, Some(&backbone), None, None).unwrap();
                run_condition_grid(&run.best.model, &splits, Some(&backbone), Default::default()).unwrap()
            };
            TrendSeed {
                baseline: grid(Variant::Baseline),
                s_mae: grid(Variant::SMae),
                m_mae: grid(Variant::MMae),
                sastnet: grid(Variant::Sastnet),
            }
        })
        .collect()
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect::<BTreeSet<u32>>());
    let full = std::env::var("ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let mut suite = Suite {
        only,
        full,
        results: Vec::new(),
    };
    let t0 = Instant::now();

    suite.run(1, "reconstruction margin loss", criterion_1);
    suite.run(2, "automatic weighted loss", criterion_2);
    suite.run(9, "metric oracles", criterion_9);

    let small = OnceCell::new();
    let small = || small.get_or_init(Small::new);
    suite.run(3, "masking contract", || criterion_3(small()));
    suite.run(5, "shape chains", || criterion_5(small()));
    suite.run(10, "attention properties", || criterion_10(small()));
    suite.run(11, "determinism and round trips", || criterion_11(small()));

    let aux = OnceCell::new();
    let aux = || aux.get_or_init(aux_run);
    suite.run(4, "frozen semantic backbone", || {
        let aux = aux();
        let after = aux.backbone.digest()?;
        let same = after == aux.digest_before && aux.sastnet.best.meta.semantic_digest.as_deref() == Some(after.as_str());
        Ok((same, format!("digest {}… unchanged after {} epochs: {same}", &after[..12], aux.sastnet.history.len())))
    });
    suite.run(6, "multi-decoder specialization", || {
        let aux = aux();
        let s = decoder_specialization(&aux.sastnet.best.model, &aux.splits.test_seen, Some(&aux.backbone), 0.4, 1)?;
        Ok((
            s.accuracy >= SPECIALIZATION_FLOOR,
            format!("argmin decoder = class on {:.1}% of {} held-out seen items (floor {:.0}%)", 100.0 * s.accuracy, s.n_items, 100.0 * SPECIALIZATION_FLOOR),
        ))
    });
    suite.run(7, "learning floors and one-batch overfit", || {
        let aux = aux();
        let aux_f1 = seen_f1(&aux.sastnet.best.model, &aux.splits, &aux.backbone);
        let aux_floor = 1.0 / 3.0 + FLOOR_MARGIN;
        let (vq, vq_floor) = floor_for(Task::Vq);
        let (dec, dec_floor) = floor_for(Task::Dec);
        let floors = aux_f1 >= aux_floor && vq >= vq_floor && dec >= dec_floor;
        let (fit, fit_note) = overfit(small());
        Ok((
            floors && fit,
            format!(
                "seen macro-F1 VQ {vq:.3} (floor {vq_floor:.3}), AUX {aux_f1:.3} (floor {aux_floor:.3}), DEC {dec:.3} (floor {dec_floor:.3}); {fit_note}"
            ),
        ))
    });

    suite.run(8, "directional trends", || {
        let runs = trend_runs();
        let drop = |g: &ConditionGrid| g.f1(ContentCondition::Seen, SilenceCondition::With) - g.f1(ContentCondition::Seen, SilenceCondition::Without);
        let unseen = |g: &ConditionGrid| g.f1(ContentCondition::Unseen, SilenceCondition::With);
        let mut held = [0usize; 3];
        let mut notes = Vec::new();
        for (seed, r) in TREND_SEEDS.iter().zip(&runs) {
            let a = unseen(&r.m_mae) >= unseen(&r.s_mae);
            let b = drop(&r.sastnet) <= drop(&r.baseline);
            let c = drop(&r.baseline) > 0.0;
            for (h, ok) in held.iter_mut().zip([a, b, c]) {
                *h += usize::from(ok);
            }
            notes.push(format!(
                "seed {seed}: unseen M {:.3} vs S {:.3}, drop SASTNet {:.3} vs baseline {:.3}",
                unseen(&r.m_mae),
                unseen(&r.s_mae),
                drop(&r.sastnet),
                drop(&r.baseline)
            ));
        }
        let need = 2;
        Ok((
            held.iter().all(|&h| h >= need),
            format!("(a) {}/3, (b) {}/3, (c) {}/3 seeds; {}", held[0], held[1], held[2], notes.join("; ")),
        ))
    });

    let failed: Vec<u32> = suite.results.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s{}",
        suite.results.len() - failed.len(),
        suite.results.len(),
        t0.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
