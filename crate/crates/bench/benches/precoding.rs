use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use qprecode_core::channel::gen_channel;
use qprecode_core::harness::preset;
use qprecode_core::power::Allocator;
use qprecode_core::precoder::{build_cqa_precoder, complement_svds, PrecoderKind};
use qprecode_core::rate::{sum_rate_bussgang, RateVariant};
use qprecode_core::rng::trial_rng;

fn precoders(c: &mut Criterion) {
    let mut group = c.benchmark_group("precoder");
    for name in ["fig3-perfect", "fig2"] {
        let (scenario, _) = preset(name).unwrap();
        let ch = gen_channel(&scenario, &mut trial_rng(1, 0));
        let nu = scenario.n_rx_total();
        group.bench_with_input(BenchmarkId::new("complement-svd", nu), &ch, |b, ch| {
            b.iter(|| complement_svds(black_box(ch)).unwrap())
        });
        for kind in [PrecoderKind::Bd, PrecoderKind::Rbd] {
            let id = BenchmarkId::new(format!("{kind:?}").to_lowercase(), nu);
            group.bench_with_input(id, &ch, |b, ch| {
                b.iter(|| build_cqa_precoder(black_box(ch), kind, 10.0, &Allocator::Equal).unwrap())
            });
        }
        let (pre, _) = build_cqa_precoder(&ch, PrecoderKind::Bd, 10.0, &Allocator::Equal).unwrap();
        group.bench_with_input(BenchmarkId::new("sum-rate", nu), &(ch, pre), |b, (ch, pre)| {
            b.iter(|| sum_rate_bussgang(&ch.h, black_box(&pre.p), 0.98, 10.0, RateVariant::UnitSignal).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, precoders);
criterion_main!(benches);
