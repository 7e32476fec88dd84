use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use srm_core::agent::{evaluate_policy, Agent, AgentConfig, Algorithm};
use srm_core::env::{Environment, TradingConfig, TradingEnv};
use srm_core::exec::{map_indexed, Execution};
use srm_core::RiskSpectrum;

fn rollouts(c: &mut Criterion) {
    let env = TradingEnv::new(TradingConfig::default()).unwrap();
    let cfg = AgentConfig { algorithm: Algorithm::Td3Srm, hidden: vec![64, 64], ..AgentConfig::default() };
    let spectrum: RiskSpectrum = "cvar:0.2".parse().unwrap();
    let agent = Agent::new(cfg, spectrum, env.obs_dim(), env.action_space(), 0).unwrap();

    let mut group = c.benchmark_group("evaluate_policy");
    group.sample_size(10);
    for mode in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), 256), &mode, |b, &m| {
            b.iter(|| evaluate_policy(&agent, &env, 256, 7, m).unwrap())
        });
    }
    group.finish();
}

fn quantile_sums(c: &mut Criterion) {
    let spectrum: RiskSpectrum = "wang:0.5".parse().unwrap();
    let mut group = c.benchmark_group("spectrum_weights");
    for mode in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), 64), &mode, |b, &m| {
            b.iter(|| map_indexed(m, 64, |i| spectrum.interval_weights(200 + i).iter().sum::<f64>()))
        });
    }
    group.finish();
}

criterion_group!(benches, rollouts, quantile_sums);
criterion_main!(benches);
