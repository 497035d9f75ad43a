use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use codectrace::config::Profile;
use codectrace::corpus::{plan_corpus, render_record, CorpusConfig, Task};
use codectrace::exec;
use codectrace::features::AugmentConfig;
use codectrace::model::Variant;
use codectrace::training::{PrepMode, Preparer};

fn corpus_render(c: &mut Criterion) {
    let cfg = CorpusConfig {
        n_utts: 4,
        id_threshold: 2,
        balance_task: Task::Aux,
        ..CorpusConfig::default()
    };
    let records = plan_corpus(&cfg, 1).unwrap();
    let mut g = c.benchmark_group("corpus_render");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", records.len()), |b| {
        b.iter(|| exec::map(&records, |r| render_record(&cfg, 1, r).unwrap()))
    });
    g.bench_function(BenchmarkId::new("sequential", records.len()), |b| {
        b.iter(|| exec::map_sequential(&records, |r| render_record(&cfg, 1, r).unwrap()))
    });
    g.finish();
}

fn batch_prep(c: &mut Criterion) {
    let cfg = CorpusConfig {
        n_utts: 2,
        id_threshold: 1,
        ..CorpusConfig::default()
    };
    let records = plan_corpus(&cfg, 2).unwrap();
    let waves: Vec<_> = records.iter().take(16).map(|r| render_record(&cfg, 2, r).unwrap()).collect();
    let profile = Profile::desk();
    let prep = Preparer::new(&profile, Variant::MMae).unwrap();
    let mel = codectrace::features::LogMel::new(profile.audio.sample_rate, profile.mel.n_fft, profile.mel.hop, profile.mel.n_mels).unwrap();
    let mode = PrepMode::Train {
        seed: 3,
        epoch: 0,
        augment: AugmentConfig::default(),
    };
    let items: Vec<(u64, &codectrace::audio::Waveform)> = waves.iter().enumerate().map(|(i, w)| (i as u64, w)).collect();
    let one = |(k, x): &(u64, &codectrace::audio::Waveform)| {
        let crop = prep.crop(x, *k, &mode).unwrap();
        mel.compute(&crop).unwrap()
    };
    let mut g = c.benchmark_group("batch_prep");
    g.bench_function(BenchmarkId::new("parallel", items.len()), |b| b.iter(|| exec::map(&items, one)));
    g.bench_function(BenchmarkId::new("sequential", items.len()), |b| b.iter(|| exec::map_sequential(&items, one)));
    g.finish();
}

criterion_group!(benches, corpus_render, batch_prep);
criterion_main!(benches);
