use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::info;
use serde_json::{json, Value};
use vqbet::data::{denormalize, read_dataset, write_dataset, TrajectoryDataset};
use vqbet::envs::{goal_frames, make_env, replay_dataset, scripted_demonstrator, scripted_goal_pair_demos, EnvKind, EpisodeResult};
use vqbet::eval::{evaluate, latency_by_chunk_len, read_traces_csv, rollout, timing_probe, write_traces_csv, EvalReport, PolicyBundle, RolloutInfo};
use vqbet::numerics::SeededRng;
use vqbet::pipeline::{fit_policy, fit_tokenizer};
use vqbet::policy::PolicyNet;
use vqbet::rvq::{action_chunks, codebook_utilization, reconstruction_error, CodeTuple, ResidualQuantizer};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::logs::{read_columns, CsvLog};
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainRvq,
    TrainPolicy,
    Rollout,
    Eval,
    InspectCodebook,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainRvq => "train-rvq",
            Command::TrainPolicy => "train-policy",
            Command::Rollout => "rollout",
            Command::Eval => "eval",
            Command::InspectCodebook => "inspect-codebook",
            Command::Plot => "plot",
        }
    }

    /// Whether a bare environment name may stand in for `env=...`.
    pub fn takes_env(self) -> bool {
        matches!(self, Command::GenData | Command::Rollout | Command::Eval | Command::Plot)
    }
}

/// Runs one command, writing the resolved config into the output directory
/// first. Returns a one-line JSON summary.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Value, CliError> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::data(format!("creating {}: {e}", out.display())))?;
    cfg.write(&out.join(format!("{}.config", cmd.name())))?;
    match cmd {
        Command::GenData => gen_data(cfg),
        Command::TrainRvq => train_rvq(cfg),
        Command::TrainPolicy => train_policy(cfg),
        Command::Rollout => cmd_rollout(cfg),
        Command::Eval => eval(cfg),
        Command::InspectCodebook => inspect_codebook(cfg),
        Command::Plot => plot(cfg),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn load_dataset(cfg: &RunConfig) -> Result<TrajectoryDataset, CliError> {
    let path = cfg.path("dataset_path", "data.vqbd");
    read_dataset(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_tokenizer(cfg: &RunConfig) -> Result<ResidualQuantizer, CliError> {
    let path = cfg.path("tokenizer_path", "tokenizer.rvqt");
    ResidualQuantizer::load(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_bundle(cfg: &RunConfig) -> Result<PolicyBundle, CliError> {
    let tokenizer = load_tokenizer(cfg)?;
    let path = cfg.path("policy_path", "policy.poli");
    let net = PolicyNet::load(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(PolicyBundle::new(net, tokenizer)?)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn gen_data(cfg: &RunConfig) -> Result<Value, CliError> {
    let kind = cfg.env();
    let mut rng = SeededRng::new(cfg.seed());
    let demos = if cfg.goal_pairs() {
        if kind != EnvKind::FourGoal {
            return Err(CliError::config("goal_pairs needs env=four_goal"));
        }
        scripted_goal_pair_demos(cfg.count(), &mut rng)?
    } else {
        scripted_demonstrator(kind, cfg.count(), &mut rng)?
    };
    let path = cfg.path("dataset_path", "data.vqbd");
    write_dataset(&demos.dataset, &path)?;
    info!("wrote {} trajectories to {}", demos.dataset.num_trajectories(), path.display());
    Ok(json!({
        "dataset": display(&path),
        "trajectories": demos.dataset.num_trajectories(),
        "steps": demos.dataset.total_steps(),
    }))
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn train_rvq(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_dataset(cfg)?;
    let rvq = cfg.rvq(ds.act_dim());
    let layers = rvq.codebook_sizes.len();
    let mut header: Vec<String> = ["step", "lr", "recon", "embed", "commit", "total", "resets"].map(String::from).to_vec();
    header.extend((0..layers).map(|i| format!("util_{i}")));
    let mut log = CsvLog::open(&cfg.out_dir().join("rvq_log.csv"), &header)?;
    let train = cfg.rvq_train();
    let every = cfg.log_every();
    let mut util = vec![String::new(); layers];
    let mut failure = None;
    let q = fit_tokenizer(&ds, &rvq, &train, &mut SeededRng::new(cfg.seed()), |l| {
        if let Some(u) = &l.epoch_utilization {
            util = u.iter().map(|&v| fmt(v)).collect();
        }
        if failure.is_none() && (l.step % every == 0 || l.step + 1 == train.steps) {
            let mut row = vec![l.step.to_string(), fmt(l.lr), fmt(l.recon), fmt(l.embed), fmt(l.commit), fmt(l.total), l.resets.to_string()];
            row.extend(util.iter().cloned());
            failure = log.row(&row).err();
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    log.finish()?;
    let path = cfg.path("tokenizer_path", "tokenizer.rvqt");
    q.save(&path)?;
    let (chunks, _) = action_chunks(&ds, rvq.chunk_len)?;
    let (recon, util) =
        if q.is_initialized() { (Some(reconstruction_error(&q, &chunks)?), Some(codebook_utilization(&q, &chunks)?)) } else { (None, None) };
    Ok(json!({ "tokenizer": display(&path), "steps": train.steps, "recon_l1": recon, "utilization": util }))
}

fn train_policy(cfg: &RunConfig) -> Result<Value, CliError> {
    let ds = load_dataset(cfg)?;
    let q = load_tokenizer(cfg)?;
    if q.config().act_dim != ds.act_dim() {
        return Err(CliError::data(format!("tokenizer act_dim {} does not match dataset act_dim {}", q.config().act_dim, ds.act_dim())));
    }
    let pc = cfg.policy(ds.obs_dim(), q.config());
    let layers = pc.codebook_sizes.len();
    let mut header: Vec<String> = ["step", "lr", "total", "code", "offset"].map(String::from).to_vec();
    header.extend((0..layers).map(|i| format!("focal_{i}")));
    header.extend((0..layers).map(|i| format!("acc_{i}")));
    let mut log = CsvLog::open(&cfg.out_dir().join("policy_log.csv"), &header)?;
    let train = cfg.policy_train();
    let every = cfg.log_every();
    let mut failure = None;
    let mut last = None;
    let net = fit_policy(&ds, &q, &pc, &train, cfg.goal_mode(), &mut SeededRng::new(cfg.seed()), |l| {
        if failure.is_none() && (l.step % every == 0 || l.step + 1 == train.steps) {
            let mut row = vec![l.step.to_string(), fmt(l.lr), fmt(l.total), fmt(l.code), fmt(l.offset)];
            row.extend(l.focal.iter().map(|&v| fmt(v)));
            row.extend(l.accuracy.iter().map(|&v| fmt(v)));
            failure = log.row(&row).err();
        }
        last = Some((l.total, l.accuracy.clone()));
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    log.finish()?;
    let path = cfg.path("policy_path", "policy.poli");
    net.save(&path)?;
    let (loss, acc) = last.map_or((None, None), |(l, a)| (Some(l), Some(a)));
    Ok(json!({ "policy": display(&path), "steps": train.steps, "final_loss": loss, "final_accuracy": acc }))
}

/// Demonstrator episodes for entropy ratios, when the dataset is at hand.
fn demo_episodes(cfg: &RunConfig, kind: EnvKind) -> Result<Option<Vec<EpisodeResult>>, CliError> {
    let path = cfg.path("dataset_path", "data.vqbd");
    if !path.exists() {
        return Ok(None);
    }
    let ds = load_dataset(cfg)?;
    Ok(Some(replay_dataset(kind, &ds)?))
}

fn latency(cfg: &RunConfig, bundle: &PolicyBundle, kind: EnvKind) -> Result<Option<vqbet::eval::LatencyStats>, CliError> {
    let repeats = cfg.timing_repeats();
    if repeats == 0 {
        return Ok(None);
    }
    let pc = bundle.net.config();
    let first = make_env(kind).observation();
    let obs: Vec<f64> = (0..pc.obs_window).flat_map(|_| first.iter().copied()).collect();
    let goal = if pc.goal_window > 0 { Some(goal_frames(&[0, 1], pc.goal_window, &mut SeededRng::new(cfg.seed()))?) } else { None };
    Ok(Some(timing_probe(bundle, &obs, goal.as_deref(), repeats)?))
}

fn report(
    cfg: &RunConfig,
    kind: EnvKind,
    episodes: &[EpisodeResult],
    info: RolloutInfo,
    bundle: Option<&PolicyBundle>,
) -> Result<EvalReport, CliError> {
    let demos = demo_episodes(cfg, kind)?;
    let mut rep = evaluate(episodes, kind, demos.as_deref())?;
    rep.rollout = Some(info);
    if let Some(b) = bundle {
        rep.latency = latency(cfg, b, kind)?;
    }
    Ok(rep)
}

fn cmd_rollout(cfg: &RunConfig) -> Result<Value, CliError> {
    let bundle = load_bundle(cfg)?;
    let kind = cfg.env();
    let rc = cfg.rollout(bundle.net.config());
    let out = rollout(&bundle, kind, &rc)?;
    let traces = cfg.path("traces_path", "traces.csv");
    if rc.record_traces {
        write_traces_csv(&out.episodes, BufWriter::new(File::create(&traces)?))?;
    }
    let info = evaluate(&out.episodes, kind, None)?.with_rollout(&out, &rc).rollout.expect("set by with_rollout");
    let episodes = cfg.path("episodes_path", "episodes.json");
    write_json(&episodes, &json!({ "env": kind, "rollout": info, "episodes": out.episodes }))?;
    let rep = report(cfg, kind, &out.episodes, info, Some(&bundle))?;
    let path = cfg.out_dir().join("report.json");
    write_json(&path, &rep)?;
    Ok(json!({
        "report": display(&path),
        "expected_successes": rep.metrics.expected_successes,
        "entropy_ratio": rep.entropy_ratio,
        "forwards_per_step": rep.rollout.as_ref().map(|r| r.forwards_per_step),
    }))
}

fn eval(cfg: &RunConfig) -> Result<Value, CliError> {
    let path = cfg.path("episodes_path", "episodes.json");
    let saved: Value = serde_json::from_reader(BufReader::new(File::open(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?))?;
    let kind: EnvKind = serde_json::from_value(saved["env"].clone())?;
    let info: RolloutInfo = serde_json::from_value(saved["rollout"].clone())?;
    let episodes: Vec<EpisodeResult> = serde_json::from_value(saved["episodes"].clone())?;
    let timing = cfg.timing_repeats() > 0;
    let bundle = if timing { Some(load_bundle(cfg)?) } else { None };
    let rep = report(cfg, kind, &episodes, info, bundle.as_ref())?;
    let out = cfg.out_dir().join("report.json");
    write_json(&out, &rep)?;
    let mut summary = json!({ "report": display(&out), "expected_successes": rep.metrics.expected_successes, "entropy_ratio": rep.entropy_ratio });
    let lens = cfg.timing_chunk_lens();
    if timing && !lens.is_empty() {
        let b = bundle.as_ref().expect("loaded for timing");
        let table = latency_by_chunk_len(b.net.config(), b.tokenizer.config(), &lens, cfg.timing_repeats(), cfg.seed())?;
        let by_len: BTreeMap<String, _> = table.into_iter().map(|(n, s)| (n.to_string(), s)).collect();
        let lpath = cfg.out_dir().join("latency.json");
        write_json(&lpath, &by_len)?;
        summary["latency"] = json!(display(&lpath));
    }
    Ok(summary)
}

/// Every code tuple in odometer order, last layer fastest.
fn all_tuples(sizes: &[usize]) -> Vec<CodeTuple> {
    let total: usize = sizes.iter().product();
    (0..total)
        .map(|mut i| {
            let mut codes = vec![0; sizes.len()];
            for (c, &k) in codes.iter_mut().zip(sizes).rev() {
                *c = i % k;
                i /= k;
            }
            CodeTuple(codes)
        })
        .collect()
}

fn inspect_codebook(cfg: &RunConfig) -> Result<Value, CliError> {
    let q = load_tokenizer(cfg)?;
    let sizes = q.codebook_sizes();
    let width = q.config().input_dim();
    let csv_path = cfg.out_dir().join("codebook.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    let mut header: Vec<String> = (0..sizes.len()).map(|i| format!("code_{i}")).collect();
    header.extend((0..width).map(|i| format!("a_{i}")));
    w.write_record(&header)?;
    let mut points = Vec::new();
    let tuples = all_tuples(&sizes);
    for t in &tuples {
        let chunk = q.decode_codes(t)?;
        let chunk = if q.stats().is_some() { denormalize(&chunk, q.stats())? } else { chunk };
        if chunk.iter().any(|v| !v.is_finite()) {
            return Err(vqbet::Error::NonFinite(format!("decoded centroid for codes {:?}", t.0)).into());
        }
        let mut row: Vec<String> = t.0.iter().map(|c| c.to_string()).collect();
        row.extend(chunk.iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
        points.push((chunk[0], chunk.get(1).copied().unwrap_or(0.0), t.primary()));
    }
    w.flush()?;
    let svg_path = cfg.out_dir().join("codebook.svg");
    fs::write(&svg_path, svg::scatter("decoded code centroids by primary code", &points))?;
    Ok(json!({ "csv": display(&csv_path), "svg": display(&svg_path), "rows": tuples.len(), "normalized": q.stats().is_none() }))
}

fn plot(cfg: &RunConfig) -> Result<Value, CliError> {
    let kind = cfg.env();
    let path = cfg.path("traces_path", "traces.csv");
    let rows = read_traces_csv(BufReader::new(File::open(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?))?;
    let mut paths: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        if r.obs.len() != kind.obs_dim() {
            return Err(CliError::data(format!("trace observations have {} dims, {} has {}", r.obs.len(), kind.name(), kind.obs_dim())));
        }
        paths.entry(r.episode).or_default().push((r.obs[0], r.obs[1]));
    }
    let paths: Vec<_> = paths.into_values().collect();
    let mut written = Vec::new();
    let traj = cfg.out_dir().join("traces.svg");
    fs::write(&traj, svg::trajectories(&format!("{} rollouts ({})", kind.name(), paths.len()), kind, &paths))?;
    written.push(display(&traj));
    for (log, cols, name) in
        [("rvq_log.csv", &["recon", "commit"][..], "rvq_loss.svg"), ("policy_log.csv", &["total", "code", "offset"][..], "policy_loss.svg")]
    {
        let lpath = cfg.out_dir().join(log);
        if !lpath.exists() {
            continue;
        }
        let mut names = vec!["step"];
        names.extend_from_slice(cols);
        let data = read_columns(&lpath, &names)?;
        let series: Vec<(String, Vec<(f64, f64)>)> =
            cols.iter().enumerate().map(|(i, c)| (c.to_string(), data[0].iter().copied().zip(data[i + 1].iter().copied()).collect())).collect();
        let out = cfg.out_dir().join(name);
        fs::write(&out, svg::curves(log, &series))?;
        written.push(display(&out));
    }
    Ok(json!({ "written": written, "episodes": paths.len() }))
}
