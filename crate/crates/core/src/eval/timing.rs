use std::time::Instant;

use crate::data::ActionStats;
use crate::error::{Error, Result};
use crate::eval::report::LatencyStats;
use crate::eval::rollout::PolicyBundle;
use crate::numerics::SeededRng;
use crate::policy::{sample_action, PolicyConfig, PolicyNet};
use crate::rvq::{ResidualQuantizer, RvqConfig};

pub const MIN_REPEATS: usize = 30;
const WARMUP: usize = 5;

fn stats_ms(mut samples: Vec<f64>) -> LatencyStats {
    samples.sort_by(f64::total_cmp);
    let rank = |q: f64| samples[((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len()) - 1];
    LatencyStats { repeats: samples.len(), mean_ms: samples.iter().sum::<f64>() / samples.len() as f64, p50_ms: rank(0.5), p95_ms: rank(0.95) }
}

fn time_one(bundle: &PolicyBundle, obs: &[f64], goal: Option<&[f64]>, rng: &mut SeededRng) -> Result<f64> {
    let t = Instant::now();
    sample_action(&bundle.net, &bundle.tokenizer, obs, goal, 1.0, rng)?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Single-step inference latency over `repeats` timed calls after a short
/// warmup.
pub fn timing_probe(bundle: &PolicyBundle, obs: &[f64], goal: Option<&[f64]>, repeats: usize) -> Result<LatencyStats> {
    if repeats < MIN_REPEATS {
        return Err(Error::Invalid(format!("timing needs at least {MIN_REPEATS} repeats, got {repeats}")));
    }
    let mut rng = SeededRng::new(0);
    for _ in 0..WARMUP {
        time_one(bundle, obs, goal, &mut rng)?;
    }
    let samples = (0..repeats).map(|_| time_one(bundle, obs, goal, &mut rng)).collect::<Result<Vec<_>>>()?;
    Ok(stats_ms(samples))
}

/// Latency per chunk length for otherwise identical random policies. Calls
/// are interleaved across lengths so machine load affects all alike.
pub fn latency_by_chunk_len(
    base: &PolicyConfig,
    tokenizer: &RvqConfig,
    lens: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<(usize, LatencyStats)>> {
    if repeats < MIN_REPEATS {
        return Err(Error::Invalid(format!("timing needs at least {MIN_REPEATS} repeats, got {repeats}")));
    }
    let mut bundles = Vec::with_capacity(lens.len());
    for &n in lens {
        let mut rng = SeededRng::new(seed);
        let net = PolicyNet::new(PolicyConfig { chunk_len: n, ..base.clone() }, &mut rng)?;
        let mut q = ResidualQuantizer::new(RvqConfig { chunk_len: n, ..tokenizer.clone() }, &mut rng)?;
        q.set_stats(ActionStats { min: vec![-1.0; base.act_dim], max: vec![1.0; base.act_dim] })?;
        bundles.push(PolicyBundle::new(net, q)?);
    }
    let mut rng = SeededRng::new(seed);
    let obs: Vec<f64> = (0..base.obs_window * base.obs_dim).map(|_| rng.normal()).collect();
    let goal: Option<Vec<f64>> = (base.goal_window > 0).then(|| (0..base.goal_window * base.obs_dim).map(|_| rng.normal()).collect());
    let mut samples = vec![Vec::with_capacity(repeats); bundles.len()];
    for round in 0..WARMUP + repeats {
        for (b, out) in bundles.iter().zip(&mut samples) {
            let ms = time_one(b, &obs, goal.as_deref(), &mut rng)?;
            if round >= WARMUP {
                out.push(ms);
            }
        }
    }
    Ok(lens.iter().copied().zip(samples.into_iter().map(stats_ms)).collect())
}
