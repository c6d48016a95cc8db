use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, ScenarioSource};
use super::report::{MetricsReport, MetricsRow, Trace};
use super::HarnessError;
use crate::agents::{train, AgentCheckpoint, AgentKind, EpisodeMetrics, TrainError};
use crate::baselines::{dp_optimal, receding_horizon, Schedule};
use crate::battery::BatteryState;
use crate::dispatch::greedy_dispatch;
use crate::env::{ActionVec, BatteryEnv, EnvSpec, Observation};
use crate::neural::{grad_check, mse_loss, Mlp};
use crate::timeseries::{save_scenario, Scenario};

pub const TRAIN_LOG_HEADER: &str = "episode,cum_reward,energy_cost,violation_count";

pub fn checkpoint_path(cfg: &RunConfig, kind: AgentKind, seed: u64) -> PathBuf {
    cfg.out_dir.join("checkpoints").join(format!("{}_seed{seed}.json", kind.name()))
}

pub fn log_path(cfg: &RunConfig, kind: AgentKind, seed: u64) -> PathBuf {
    cfg.out_dir.join("logs").join(format!("{}_seed{seed}.csv", kind.name()))
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes the training and evaluation scenarios as CSV.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>, HarnessError> {
    if cfg.scenario.source != ScenarioSource::Synth {
        return Err(HarnessError::Config("synth needs scenario.source = \"synth\"".into()));
    }
    let (train, eval) = cfg.scenarios()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut out = Vec::new();
    for (name, sc) in [("scenario_train.csv", &train), ("scenario_eval.csv", &eval)] {
        let p = cfg.out_dir.join(name);
        save_scenario(sc, &p)?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub kind: AgentKind,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub curve: Vec<EpisodeMetrics>,
}

fn write_log(cfg: &RunConfig, kind: AgentKind, seed: u64, curve: &[EpisodeMetrics]) -> Result<PathBuf, HarnessError> {
    let path = log_path(cfg, kind, seed);
    let mut w = create(&path)?;
    writeln!(
        w,
        "# config_hash={} agent={} noisy_net={} seed={seed}",
        cfg.config_hash(),
        kind.name(),
        cfg.agent.noisy_net
    )?;
    writeln!(w, "{TRAIN_LOG_HEADER}")?;
    for m in curve {
        writeln!(w, "{},{},{},{}", m.episode, m.cum_reward, m.energy_cost, m.violation_count)?;
    }
    w.flush()?;
    Ok(path)
}

/// Trains every configured agent for every seed. A divergence stops the run
/// after writing the partial log.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainRun>, HarnessError> {
    let (train_sc, _) = cfg.scenarios()?;
    let spec = cfg.env_spec(Arc::new(train_sc));
    let hash = cfg.config_hash();
    let mut runs = Vec::new();
    for &kind in &cfg.training.agents {
        for &seed in &cfg.seeds {
            match train(&spec, &cfg.train_spec(kind), seed, &hash) {
                Ok(out) => {
                    let log = write_log(cfg, kind, seed, &out.curve)?;
                    let ck = checkpoint_path(cfg, kind, seed);
                    if let Some(dir) = ck.parent() {
                        fs::create_dir_all(dir)?;
                    }
                    out.checkpoint.save(&ck)?;
                    runs.push(TrainRun {
                        kind,
                        seed,
                        checkpoint: ck,
                        log,
                        curve: out.curve,
                    });
                }
                Err(TrainError::Divergence { episode, source, curve }) => {
                    let log = write_log(cfg, kind, seed, &curve)?;
                    return Err(HarnessError::Divergence {
                        agent: kind.name().into(),
                        seed,
                        episode,
                        log,
                        reason: source.to_string(),
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(runs)
}

/// A per-step decision: a normalized action or a direct power set-point.
enum Decision {
    Action(ActionVec),
    Power(f64, f64),
}

fn run_controller<F>(spec: &EnvSpec, start: usize, steps: usize, e0: f64, mut decide: F) -> Result<Trace, HarnessError>
where
    F: FnMut(&BatteryEnv, &Observation, usize) -> Result<Decision, HarnessError>,
{
    let mut env = spec.build();
    let mut obs = env.reset(start, e0)?;
    let mut infos = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    for k in 0..steps {
        let out = match decide(&env, &obs, k)? {
            Decision::Action(a) => env.step(a)?,
            Decision::Power(p, a) => env.step_power(p, a)?,
        };
        infos.push(out.info);
        rewards.push(out.reward);
        obs = out.observation;
        if out.done {
            break;
        }
    }
    Ok(Trace::from_steps(&spec.scenario, spec.battery.e_cap, &infos, &rewards))
}

pub fn eval_greedy(spec: &EnvSpec, start: usize, steps: usize, e0: f64) -> Result<Trace, HarnessError> {
    run_controller(spec, start, steps, e0, |env, _, _| {
        let state = BatteryState {
            energy: env.energy().expect("reset"),
        };
        let rec = env.scenario().record(env.cursor());
        let (p, a) = greedy_dispatch(state, rec, &spec.battery, env.scenario().dt_hours());
        Ok(Decision::Power(p, a))
    })
}

/// Replays a schedule computed for the window starting at `start`.
pub fn eval_schedule(spec: &EnvSpec, start: usize, e0: f64, schedule: &Schedule) -> Result<Trace, HarnessError> {
    run_controller(spec, start, schedule.len(), e0, |_, _, k| {
        let st = &schedule.steps[k];
        Ok(Decision::Power(st.p_net(), st.a_grid))
    })
}

pub fn eval_agent(
    spec: &EnvSpec,
    start: usize,
    steps: usize,
    e0: f64,
    ck: &AgentCheckpoint,
) -> Result<Trace, HarnessError> {
    run_controller(spec, start, steps, e0, |_, obs, _| Ok(Decision::Action(ck.act(obs)?)))
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_schedule(path: &Path, schedule: &Schedule) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    schedule.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn steps_per_day(sc: &Scenario) -> usize {
    sc.steps_per_day().unwrap_or(sc.len())
}

/// Evaluates greedy, DP, receding horizon and every trained agent on the
/// held-out scenario; writes `report.csv`, `report_seeds.csv`,
/// `report.json` and per-method traces.
pub fn cmd_compare(cfg: &RunConfig) -> Result<MetricsReport, HarnessError> {
    let mut checkpoints = Vec::new();
    for &kind in &cfg.training.agents {
        for &seed in &cfg.seeds {
            let p = checkpoint_path(cfg, kind, seed);
            if !p.exists() {
                return Err(HarnessError::MissingCheckpoint(p));
            }
            checkpoints.push((kind, seed, AgentCheckpoint::load(&p)?));
        }
    }

    let (_, eval_sc) = cfg.scenarios()?;
    let eval_sc = Arc::new(eval_sc);
    let spec = cfg.env_spec(eval_sc.clone());
    let e0 = cfg.eval_e0();
    let n = eval_sc.len();
    let per_day = steps_per_day(&eval_sc);
    let traces_dir = cfg.out_dir.join("traces");
    let mut rows = Vec::new();

    let t = Instant::now();
    let greedy = eval_greedy(&spec, 0, n, e0)?;
    rows.push(MetricsRow::from_trace("greedy", &greedy, per_day, t.elapsed().as_secs_f64()));
    write_trace(&traces_dir.join("greedy.csv"), &greedy)?;

    let t = Instant::now();
    let dp = dp_optimal(&eval_sc, &cfg.battery, &cfg.grid, &cfg.dp, e0)?;
    let dp_trace = eval_schedule(&spec, 0, e0, &dp)?;
    rows.push(MetricsRow::from_trace("dp", &dp_trace, per_day, t.elapsed().as_secs_f64()));
    write_trace(&traces_dir.join("dp.csv"), &dp_trace)?;
    write_schedule(&cfg.out_dir.join("schedules").join("dp.csv"), &dp)?;

    let t = Instant::now();
    let mpc = receding_horizon(
        &eval_sc,
        &cfg.battery,
        &cfg.grid,
        &cfg.dp,
        e0,
        cfg.mpc.horizon,
        cfg.mpc.forecast,
    )?;
    let mpc_trace = eval_schedule(&spec, 0, e0, &mpc)?;
    rows.push(MetricsRow::from_trace("mpc", &mpc_trace, per_day, t.elapsed().as_secs_f64()));
    write_trace(&traces_dir.join("mpc.csv"), &mpc_trace)?;
    write_schedule(&cfg.out_dir.join("schedules").join("mpc.csv"), &mpc)?;

    let mut per_seed = Vec::new();
    for &kind in &cfg.training.agents {
        let mut seed_rows = Vec::new();
        for (k, seed, ck) in checkpoints.iter().filter(|c| c.0 == kind) {
            let name = format!("{}_seed{seed}", k.name());
            let t = Instant::now();
            let tr = eval_agent(&spec, 0, n, e0, ck)?;
            let row = MetricsRow::from_trace(&name, &tr, per_day, t.elapsed().as_secs_f64());
            write_trace(&traces_dir.join(format!("{name}.csv")), &tr)?;
            seed_rows.push(row);
        }
        rows.push(MetricsRow::median(kind.name(), &seed_rows));
        per_seed.extend(seed_rows);
    }

    let report = MetricsReport {
        config_hash: cfg.config_hash(),
        seeds: cfg.seeds.clone(),
        rows,
        per_seed,
    };
    let mut w = create(&cfg.out_dir.join("report.csv"))?;
    MetricsReport::write_csv(&report.rows, &mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out_dir.join("report_seeds.csv"))?;
    MetricsReport::write_csv(&report.per_seed, &mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| HarnessError::Io(e.into()))?;
    w.flush()?;
    Ok(report)
}

/// What to trace.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    Greedy,
    Dp,
    Mpc,
    Checkpoint(PathBuf),
}

impl std::str::FromStr for TraceSource {
    type Err = std::convert::Infallible;

    /// `greedy`, `dp`, `mpc`, or a checkpoint path.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "greedy" => TraceSource::Greedy,
            "dp" => TraceSource::Dp,
            "mpc" => TraceSource::Mpc,
            path => TraceSource::Checkpoint(PathBuf::from(path)),
        })
    }
}

/// Dispatch trace for one day of the held-out scenario, started at the
/// configured initial energy.
pub fn cmd_trace(cfg: &RunConfig, source: &TraceSource, day: usize) -> Result<(PathBuf, Trace), HarnessError> {
    let (_, eval_sc) = cfg.scenarios()?;
    let per_day = steps_per_day(&eval_sc);
    let days = eval_sc.len() / per_day;
    if day >= days {
        return Err(HarnessError::DayOutOfRange { day, days });
    }
    let start = day * per_day;
    let e0 = cfg.eval_e0();
    let eval_sc = Arc::new(eval_sc);
    let spec = cfg.env_spec(eval_sc.clone());
    let (name, trace) = match source {
        TraceSource::Greedy => ("greedy".to_string(), eval_greedy(&spec, start, per_day, e0)?),
        TraceSource::Dp | TraceSource::Mpc => {
            let window = eval_sc.window(start, per_day)?;
            let schedule = if *source == TraceSource::Dp {
                dp_optimal(&window, &cfg.battery, &cfg.grid, &cfg.dp, e0)?
            } else {
                receding_horizon(&window, &cfg.battery, &cfg.grid, &cfg.dp, e0, cfg.mpc.horizon, cfg.mpc.forecast)?
            };
            let name = if *source == TraceSource::Dp { "dp" } else { "mpc" };
            (name.to_string(), eval_schedule(&spec, start, e0, &schedule)?)
        }
        TraceSource::Checkpoint(p) => {
            if !p.exists() {
                return Err(HarnessError::MissingCheckpoint(p.clone()));
            }
            let ck = AgentCheckpoint::load(p)?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("agent").to_string();
            (stem, eval_agent(&spec, start, per_day, e0, &ck)?)
        }
    };
    let path = cfg.out_dir.join("traces").join(format!("trace_{name}_day{day}.csv"));
    write_trace(&path, &trace)?;
    Ok((path, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub architectures: usize,
    pub parameters_checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Layer widths of each checked network, with a noisy flag.
    pub cases: Vec<(Vec<usize>, bool, f64)>,
}

/// Central-difference check of backpropagation on random architectures,
/// half of them noisy with frozen noise.
pub fn gradcheck_random(seed: u64, count: usize, tolerance: f64) -> Result<GradCheckSummary, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = GradCheckSummary {
        architectures: count,
        parameters_checked: 0,
        max_rel_error: 0.0,
        tolerance,
        passed: true,
        cases: Vec::with_capacity(count),
    };
    for i in 0..count {
        let depth = rng.gen_range(0..=3);
        let mut sizes = vec![rng.gen_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(2..=8));
        }
        sizes.push(rng.gen_range(1..=3));
        let noisy = i % 2 == 1;
        let mut net = Mlp::new(&sizes, noisy, 0.5, &mut rng);
        net.resample_noise(&mut rng);
        let batch = rng.gen_range(1..=4);
        let x = Array2::from_shape_simple_fn((batch, sizes[0]), || rng.gen_range(-1.0..1.0));
        let t = Array2::from_shape_simple_fn((batch, *sizes.last().expect("sizes")), || rng.gen_range(-1.0..1.0));
        let r = grad_check(&net, x.view(), mse_loss(t.view()), noisy, tolerance)?;
        s.parameters_checked += r.checked;
        s.max_rel_error = s.max_rel_error.max(r.max_rel_error);
        s.passed &= r.passed();
        s.cases.push((sizes, noisy, r.max_rel_error));
    }
    Ok(s)
}

pub fn cmd_gradcheck(cfg: &RunConfig, count: usize) -> Result<GradCheckSummary, HarnessError> {
    let seed = cfg.seeds.first().copied().unwrap_or(1);
    let summary = gradcheck_random(seed, count, 1e-4)?;
    let mut w = create(&cfg.out_dir.join("gradcheck.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| HarnessError::Io(e.into()))?;
    w.flush()?;
    Ok(summary)
}
