//! Experiment orchestration: corpus generation, training, comparison and
//! the oracle-gap study.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use expobracket_agent::checkpoint;
use expobracket_agent::error::AgentError;
use expobracket_agent::network::ActionMask;
use expobracket_agent::train::{random_episode, train, Agent, EpochStats, TrainedAgent};
use expobracket_baselines::fixed::fixed_bracket;
use expobracket_baselines::heuristic::{heuristic_bracket, HeuristicConfig};
use expobracket_baselines::oracle::exhaustive_oracle;
use expobracket_baselines::shutter_only::shutter_only_config;
use expobracket_baselines::snr::{snr_optimal_bracket, RadianceHistogram};
use expobracket_baselines::Schedule;
use expobracket_core::camera::CaptureSettings;
use expobracket_core::env::{EnvConfig, Environment, EpisodeTrace, STOP_STAGE};
use expobracket_core::scene::RadianceScene;

use crate::config::RunConfig;
use crate::corpus::{corpus_specs, generate_all, Corpus};
use crate::error::{HarnessError, Result};
use crate::plot::emit_plots;
use crate::report::{attainment, gap_table, write_csv, GapRow, Metadata, Report, SceneRow};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const AGENT_CHECKPOINT: &str = "agent.json";
pub const SHUTTER_ONLY_CHECKPOINT: &str = "shutter_only.json";
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheduler {
    Agent,
    Fixed,
    Heuristic,
    Snr,
    ShutterOnly,
    Random,
}

impl Scheduler {
    pub const ALL: [Scheduler; 6] =
        [Scheduler::Agent, Scheduler::Fixed, Scheduler::Heuristic, Scheduler::Snr, Scheduler::ShutterOnly, Scheduler::Random];

    pub fn name(self) -> &'static str {
        match self {
            Scheduler::Agent => "agent",
            Scheduler::Fixed => "fixed",
            Scheduler::Heuristic => "heuristic",
            Scheduler::Snr => "snr",
            Scheduler::ShutterOnly => "shutter_only",
            Scheduler::Random => "random",
        }
    }
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheduler {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Scheduler::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown scheduler {s:?}")))
    }
}

fn hash_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn checkpoint_hash(t: &TrainedAgent) -> Result<String> {
    Ok(hash_hex(checkpoint::to_json(t)?.as_bytes()))
}

fn write_config_echo(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let p = out.join(CONFIG_ECHO);
    fs::write(&p, cfg.to_toml()?)?;
    Ok(p)
}

/// Writes the corpus specs as `corpus.json` plus the config echo.
pub fn run_generate_corpus(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let corpus = corpus_specs(cfg);
    generate_all(&corpus.train)?;
    generate_all(&corpus.eval)?;
    let echo = write_config_echo(cfg, out)?;
    let p = out.join("corpus.json");
    fs::write(&p, serde_json::to_string_pretty(&corpus)? + "\n")?;
    Ok(vec![echo, p])
}

/// Agent errors that mean the optimization blew up, reported with the epoch
/// they happened in.
fn divergence(e: AgentError, cfg: &RunConfig) -> HarnessError {
    let per_epoch = cfg.train.episodes_per_epoch.div_ceil(cfg.train.episodes_per_update) as u64;
    match e {
        AgentError::Divergence { update, reason } => {
            HarnessError::Divergence { epoch: (update.saturating_sub(1) / per_epoch.max(1)) as usize + 1, reason }
        }
        AgentError::NonFiniteGradient => HarnessError::Divergence { epoch: 0, reason: "non-finite gradient".into() },
        e => e.into(),
    }
}

pub struct Trained {
    pub agent: TrainedAgent,
    pub shutter_only: Option<TrainedAgent>,
}

pub fn train_agents(cfg: &RunConfig, scenes: &[RadianceScene]) -> Result<Trained> {
    let agent = train(scenes, &cfg.env, &cfg.train).map_err(|e| divergence(e, cfg))?;
    let shutter_only = if cfg.eval.include_shutter_only {
        let (env, tc) = shutter_only_config(&cfg.env, &cfg.train);
        Some(train(scenes, &env, &tc).map_err(|e| divergence(e, cfg))?)
    } else {
        None
    };
    Ok(Trained { agent, shutter_only })
}

/// Train on the generated corpus and write checkpoints, curves and the
/// config echo into `out`.
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<(Trained, Vec<PathBuf>)> {
    let scenes = generate_all(&corpus_specs(cfg).train)?;
    let trained = train_agents(cfg, &scenes)?;
    let mut paths = vec![write_config_echo(cfg, out)?];
    paths.push(save(&trained.agent, &out.join(AGENT_CHECKPOINT))?);
    paths.push(write_csv(out, "curve.csv", &trained.agent.curve)?);
    if let Some(so) = &trained.shutter_only {
        paths.push(save(so, &out.join(SHUTTER_ONLY_CHECKPOINT))?);
        paths.push(write_csv(out, "curve_shutter_only.csv", &so.curve)?);
    }
    Ok((trained, paths))
}

fn save(t: &TrainedAgent, p: &Path) -> Result<PathBuf> {
    checkpoint::save(t, p)?;
    Ok(p.to_path_buf())
}

pub fn read_curve(path: &Path) -> Result<Vec<EpochStats>> {
    crate::report::read_csv(path)
}

/// Load the checkpoints written by [`run_train`].
pub fn load_trained(dir: &Path, cfg: &RunConfig) -> Result<Trained> {
    let agent = checkpoint::load(&dir.join(AGENT_CHECKPOINT))?;
    let so_path = dir.join(SHUTTER_ONLY_CHECKPOINT);
    let shutter_only = if cfg.eval.include_shutter_only { Some(checkpoint::load(&so_path)?) } else { None };
    Ok(Trained { agent, shutter_only })
}

/// A checkpoint must have been trained under the run's env and train
/// configs.
pub fn check_checkpoint(t: &TrainedAgent, env: &EnvConfig, cfg: &expobracket_agent::TrainConfig, what: &str) -> Result<()> {
    if &t.env != env {
        return Err(HarnessError::Mismatch(format!("{what}: environment config differs")));
    }
    if &t.config != cfg {
        return Err(HarnessError::Mismatch(format!("{what}: training config differs")));
    }
    Ok(())
}

fn check_all(cfg: &RunConfig, trained: &Trained) -> Result<()> {
    check_checkpoint(&trained.agent, &cfg.env, &cfg.train, "agent")?;
    if cfg.eval.include_shutter_only {
        let so = trained
            .shutter_only
            .as_ref()
            .ok_or_else(|| HarnessError::Mismatch("shutter-only checkpoint missing".into()))?;
        let (env, tc) = shutter_only_config(&cfg.env, &cfg.train);
        check_checkpoint(so, &env, &tc, "shutter_only")?;
    }
    Ok(())
}

pub fn settings_label(s: &[CaptureSettings]) -> String {
    s.iter().map(|x| format!("{}/{}", x.iso_idx, x.shutter_idx)).collect::<Vec<_>>().join(" ")
}

struct Outcome {
    psnr: f64,
    ssim: f64,
    score: f64,
    frames: f64,
    settings: String,
}

fn from_trace(t: &EpisodeTrace) -> Outcome {
    Outcome {
        psnr: t.psnr,
        ssim: t.ssim,
        score: t.final_score,
        frames: t.frame_count() as f64,
        settings: settings_label(&t.final_state.settings()),
    }
}

fn from_schedule(s: &Schedule, env: &Environment) -> Result<Outcome> {
    let e = s.evaluate(env)?;
    Ok(Outcome {
        psnr: e.psnr()?,
        ssim: e.ssim()?,
        score: e.score,
        frames: s.frames.len() as f64,
        settings: settings_label(&s.settings()),
    })
}

fn random_seed(root: u64, scene_seed: u64) -> u64 {
    root.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ scene_seed
}

fn evaluate_one(cfg: &RunConfig, trained: &Trained, which: Scheduler, scene: &RadianceScene) -> Result<Outcome> {
    let env = Environment::new(scene, cfg.env.clone())?;
    let consts = &cfg.env.camera;
    Ok(match which {
        Scheduler::Agent => from_trace(&trained.agent.agent.greedy_episode(scene, &cfg.env)?),
        Scheduler::ShutterOnly => {
            let so = trained
                .shutter_only
                .as_ref()
                .ok_or_else(|| HarnessError::Config("shutter_only requested without its checkpoint".into()))?;
            from_trace(&so.agent.greedy_episode(scene, &so.env)?)
        }
        Scheduler::Fixed => from_schedule(&fixed_bracket(scene, consts)?, &env)?,
        Scheduler::Heuristic => {
            let hc = HeuristicConfig { seed: cfg.seed, ..Default::default() };
            from_schedule(&heuristic_bracket(&env, cfg.eval.heuristic_previews, &hc)?, &env)?
        }
        Scheduler::Snr => {
            let hist = RadianceHistogram::from_image(&scene.ground_truth_hdr(0.0)?, cfg.eval.snr_bins)?;
            let sol = snr_optimal_bracket(&hist, cfg.snr_budget(scene.frame_interval()), consts)?;
            from_schedule(&sol.schedule, &env)?
        }
        Scheduler::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(random_seed(cfg.seed, scene.spec().seed));
            let n = cfg.eval.random_episodes.max(1);
            let mut acc = Outcome { psnr: 0.0, ssim: 0.0, score: 0.0, frames: 0.0, settings: String::new() };
            for _ in 0..n {
                let t = random_episode(&env, &ActionMask::full(), &mut rng)?;
                acc.psnr += t.psnr / n as f64;
                acc.ssim += t.ssim / n as f64;
                acc.score += t.final_score / n as f64;
                acc.frames += t.frame_count() as f64 / n as f64;
            }
            acc
        }
    })
}

fn row(which: &str, scene: &RadianceScene, o: Outcome) -> SceneRow {
    SceneRow {
        scheduler: which.into(),
        scene_seed: scene.spec().seed,
        dynamic: !scene.is_static(),
        motion: scene.spec().effective_motion(),
        psnr: o.psnr,
        ssim: o.ssim,
        score: o.score,
        frames: o.frames,
        settings: o.settings,
    }
}

fn metadata(cfg: &RunConfig, trained: &Trained) -> Result<Metadata> {
    Ok(Metadata {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        version: VERSION.into(),
        checkpoint_hash: checkpoint_hash(&trained.agent)?,
    })
}

/// Default scheduler list for a config.
pub fn default_schedulers(cfg: &RunConfig) -> Vec<Scheduler> {
    Scheduler::ALL
        .into_iter()
        .filter(|s| cfg.eval.include_shutter_only || *s != Scheduler::ShutterOnly)
        .collect()
}

/// Score every scheduler on every evaluation scene.
pub fn run_compare(cfg: &RunConfig, trained: &Trained, schedulers: &[Scheduler], eval: &[RadianceScene]) -> Result<Report> {
    check_all(cfg, trained)?;
    let mut rows = Vec::with_capacity(schedulers.len() * eval.len());
    for &which in schedulers {
        for scene in eval {
            rows.push(row(which.name(), scene, evaluate_one(cfg, trained, which, scene)?));
        }
    }
    let report = Report::new(metadata(cfg, trained)?, rows, &cfg.eval.motion_buckets, vec![]);
    report.check_consistency(&cfg.eval.motion_buckets)?;
    Ok(report)
}

/// Scenes of the gap study: the first dynamic evaluation scenes.
pub fn gap_scenes<'a>(cfg: &RunConfig, eval: &'a [RadianceScene]) -> Vec<&'a RadianceScene> {
    eval.iter().filter(|s| !s.is_static()).take(cfg.eval.oracle_scenes).collect()
}

/// The agent restricted to the oracle's grid, against every candidate the
/// oracle enumerates.
pub fn run_gap(cfg: &RunConfig, trained: &Trained, eval: &[RadianceScene]) -> Result<Report> {
    check_checkpoint(&trained.agent, &cfg.env, &cfg.train, "agent")?;
    let grid = &cfg.eval.oracle_grid;
    let stages = cfg.eval.oracle_stages;
    let env_cfg = EnvConfig { max_stage: stages.max(STOP_STAGE), ..cfg.env.clone() };
    let masked = Agent { mask: ActionMask::reduced(&grid.iso, &grid.shutter)?, ..trained.agent.agent.clone() };
    let mut rows = Vec::new();
    let mut gap = Vec::new();
    for scene in gap_scenes(cfg, eval) {
        let ours = masked.greedy_episode(scene, &env_cfg)?;
        let oracle = exhaustive_oracle(scene, &env_cfg, grid, stages, cfg.eval.oracle_threads)?;
        let env = Environment::new(scene, env_cfg.clone())?;
        let best = from_schedule(&oracle.schedule, &env)?;
        let (worst, best_score) = (oracle.worst_score(), oracle.best_score);
        gap.push(GapRow {
            scene: scene.spec().seed.to_string(),
            ours: ours.final_score,
            worst,
            average: oracle.mean_score(),
            best: best_score,
            attainment: attainment(ours.final_score, worst, best_score),
        });
        rows.push(row("agent", scene, from_trace(&ours)));
        rows.push(row("oracle", scene, best));
    }
    let report = Report::new(metadata(cfg, trained)?, rows, &cfg.eval.motion_buckets, gap_table(gap));
    report.check_consistency(&cfg.eval.motion_buckets)?;
    Ok(report)
}

pub fn eval_scenes(cfg: &RunConfig) -> Result<Vec<RadianceScene>> {
    generate_all(&corpus_specs(cfg).eval)
}

pub fn corpus(cfg: &RunConfig) -> Corpus {
    corpus_specs(cfg)
}

/// Report tables, JSON and plots under `out`.
pub fn write_report(report: &Report, out: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut paths = report.write(out, stem)?;
    paths.extend(emit_plots(report, out, stem)?);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CorpusSpec;

    pub(crate) fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.corpus = CorpusSpec {
            train_dynamic: 2,
            train_static: 1,
            eval_dynamic: 3,
            eval_static: 1,
            resolution: 32,
            ..Default::default()
        };
        cfg.train.workers = 1;
        cfg.train.epochs = 2;
        cfg.train.episodes_per_epoch = 4;
        cfg.train.episodes_per_update = 2;
        cfg.train.net.branch_hidden = vec![8];
        cfg.train.net.trunk_hidden = vec![8];
        cfg.train.features.bins = 16;
        cfg.eval.random_episodes = 2;
        cfg.eval.oracle_grid.iso = vec![6];
        cfg.eval.oracle_grid.shutter = vec![2, 10];
        cfg.eval.oracle_scenes = 2;
        cfg
    }

    #[test]
    fn scheduler_names_round_trip() {
        for s in Scheduler::ALL {
            assert_eq!(s.name().parse::<Scheduler>().unwrap(), s);
        }
        assert!("nope".parse::<Scheduler>().is_err());
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let cfg = tiny();
        let e = divergence(AgentError::Divergence { update: 3, reason: "nan".into() }, &cfg);
        assert!(matches!(e, HarnessError::Divergence { epoch: 2, .. }));
        assert_eq!(e.exit_code(), 2);
        assert_eq!(divergence(AgentError::Config("x".into()), &cfg).exit_code(), 1);
    }

    #[test]
    fn compare_and_gap_end_to_end() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let (trained, paths) = run_train(&cfg, dir.path()).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
        assert_eq!(read_curve(&dir.path().join("curve.csv")).unwrap(), trained.agent.curve);
        let loaded = load_trained(dir.path(), &cfg).unwrap();
        let eval = eval_scenes(&cfg).unwrap();
        let rep = run_compare(&cfg, &loaded, &default_schedulers(&cfg), &eval).unwrap();
        assert_eq!(rep.rows.len(), 6 * eval.len());
        let gap = run_gap(&cfg, &loaded, &eval).unwrap();
        assert_eq!(gap.gap.len(), 3);
        for g in &gap.gap[..2] {
            assert!(g.worst <= g.ours && g.ours <= g.best + 1e-12, "{g:?}");
            assert!(g.worst <= g.average && g.average <= g.best);
        }
        let other = cfg.clone().with_seed(9);
        assert!(matches!(run_compare(&other, &loaded, &[Scheduler::Fixed], &eval), Err(HarnessError::Mismatch(_))));
    }
}
