//! Episode play and asynchronous advantage actor-critic training.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use expobracket_core::camera::LdrImage;
use expobracket_core::env::{Action, BracketState, EnvConfig, Environment, EpisodeTrace, StepRecord, STOP_STAGE};
use expobracket_core::scene::RadianceScene;

use crate::error::{AgentError, Result};
use crate::features::{extract_features, FeatureConfig, FeatureVector, StageInfo};
use crate::loss::{compute_advantages, loss_and_grads, LossWeights, Transition};
use crate::network::{entropy, greedy_action, sample_action, ActionMask, NetConfig, Network, STOP};
use crate::store::{AdamConfig, AdamState, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub workers: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub gamma: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Episodes gathered by a worker before it pushes one update.
    pub episodes_per_update: usize,
    /// Rewards are multiplied by this before entering the loss.
    pub reward_scale: f64,
    pub seed: u64,
    pub net: NetConfig,
    pub features: FeatureConfig,
    /// Pin the ISO head to ISO 200.
    pub shutter_only: bool,
    /// Initial head weight scale; 0 starts from uniform policies.
    pub head_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            gamma: 1.0,
            epochs: 20,
            episodes_per_epoch: 256,
            episodes_per_update: 4,
            reward_scale: 100.0,
            seed: 0,
            net: NetConfig::default(),
            features: FeatureConfig::default(),
            shutter_only: false,
            head_init: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if self.epochs == 0 || self.episodes_per_epoch == 0 || self.episodes_per_update == 0 {
            return bad("epochs and episode counts must be >= 1");
        }
        if !(self.adam.lr > 0.0) || !(self.reward_scale > 0.0) {
            return bad("learning rate and reward scale must be > 0");
        }
        if self.loss.value_coef < 0.0 || self.loss.entropy_coef < 0.0 {
            return bad("loss weights must be >= 0");
        }
        if self.features.bins == 0 || self.features.grid == 0 {
            return bad("feature sizes must be >= 1");
        }
        Ok(())
    }

    pub fn action_mask(&self) -> ActionMask {
        if self.shutter_only {
            ActionMask::shutter_only()
        } else {
            ActionMask::full()
        }
    }
}

/// A policy: network, weights and the action mask it acts under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub net: Network,
    pub params: Vec<f64>,
    pub mask: ActionMask,
}

pub enum Mode<'r> {
    Greedy,
    Sample(&'r mut ChaCha8Rng),
}

/// One played episode with the data needed for a policy-gradient update.
pub struct Rollout {
    pub trace: EpisodeTrace,
    pub transitions: Vec<Transition>,
    /// Mean ISO + shutter entropy over the episode's decisions.
    pub mean_entropy: f64,
}

/// Features of the current bracket as the agent sees it.
pub fn observe(env: &Environment, state: &BracketState, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let frames = env.render(state)?;
    let scene = env.scene();
    let black = LdrImage::black(scene.width(), scene.height());
    let ldrs: Vec<&LdrImage> = frames.iter().map(|f| f.as_deref().unwrap_or(&black)).collect();
    let stage = StageInfo { stage: state.stage, max_stage: env.config().max_stage };
    extract_features(&ldrs, &state.settings(), stage, &env.config().camera, cfg)
}

impl Agent {
    pub fn new(net: Network, params: Vec<f64>, mask: ActionMask) -> Result<Self> {
        net.check_params(&params)?;
        mask.validate()?;
        Ok(Self { net, params, mask })
    }

    fn choose(&self, fv: &FeatureVector, stop_allowed: bool, mode: &mut Mode) -> Result<(Action, f64, f64)> {
        let out = self.net.policy(&self.params, fv, &self.mask)?;
        let mut pick = |p: &[f64]| match mode {
            Mode::Greedy => greedy_action(p),
            Mode::Sample(rng) => sample_action(p, &mut **rng),
        };
        let h = entropy(&out.iso) + entropy(&out.shutter);
        if stop_allowed && pick(&out.stop)? == STOP {
            return Ok((Action::stop(), out.value, h));
        }
        let iso_idx = pick(&out.iso)?;
        let shutter_idx = pick(&out.shutter)?;
        Ok((Action { iso_idx, shutter_idx, stop: false }, out.value, h))
    }

    /// Play one episode from reset.
    pub fn run_episode(&self, env: &Environment, mut mode: Mode, gamma: f64, reward_scale: f64) -> Result<Rollout> {
        let mut state = env.reset()?;
        let initial_score = env.evaluate(&state)?.score;
        let mut steps = Vec::new();
        let mut rows = Vec::new();
        let mut values = Vec::new();
        let mut rewards = Vec::new();
        let mut ent = 0.0;
        while !state.done {
            let fv = observe(env, &state, &self.net.features)?;
            let stop_allowed = state.stage >= STOP_STAGE;
            let (action, value, h) = self.choose(&fv, stop_allowed, &mut mode)?;
            ent += h;
            let out = env.step(&state, action)?;
            values.push(value);
            rewards.push(out.reward * reward_scale);
            rows.push(Transition { features: fv, action, stop_allowed, advantage: 0.0, ret: 0.0 });
            steps.push(StepRecord { state: state.clone(), action, reward: out.reward, score: out.score });
            state = out.state;
        }
        let (returns, adv) = compute_advantages(&rewards, &values, gamma)?;
        for ((row, g), a) in rows.iter_mut().zip(returns).zip(adv) {
            row.ret = g;
            row.advantage = a;
        }
        let n = steps.len().max(1) as f64;
        Ok(Rollout {
            trace: env.finish_trace(initial_score, steps, state)?,
            transitions: rows,
            mean_entropy: ent / n,
        })
    }

    pub fn greedy_episode(&self, scene: &RadianceScene, env_cfg: &EnvConfig) -> Result<EpisodeTrace> {
        let env = Environment::new(scene, env_cfg.clone())?;
        Ok(self.run_episode(&env, Mode::Greedy, 1.0, 1.0)?.trace)
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub episodes: usize,
    pub mean_score: f64,
    pub mean_psnr: f64,
    pub mean_return: f64,
    pub mean_entropy: f64,
    pub mean_frames: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct EpisodeStat {
    score: f64,
    psnr: f64,
    ret: f64,
    entropy: f64,
    frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAgent {
    pub agent: Agent,
    pub curve: Vec<EpochStats>,
    pub config: TrainConfig,
    pub env: EnvConfig,
    pub optimizer: AdamState,
    pub version: u64,
    pub episodes: usize,
}

/// Per-episode sampling stream, a function of the seed and episode index
/// only, so a single worker replays exactly.
fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64 + 1);
    rng
}

struct Shared<'a> {
    corpus: &'a [RadianceScene],
    env_cfg: &'a EnvConfig,
    cfg: &'a TrainConfig,
    net: &'a Network,
    mask: &'a ActionMask,
    store: &'a ParamStore,
    next: AtomicUsize,
    total: usize,
    stats: Mutex<Vec<Option<EpisodeStat>>>,
}

fn worker(sh: &Shared) -> Result<()> {
    let mut batch: Vec<Transition> = Vec::new();
    let mut batch_episodes = 0;
    let mut snap = sh.store.snapshot();
    loop {
        let idx = sh.next.fetch_add(1, Ordering::SeqCst);
        if idx >= sh.total {
            break;
        }
        let mut rng = episode_rng(sh.cfg.seed, idx);
        let scene = &sh.corpus[rng.gen_range(0..sh.corpus.len())];
        let env = Environment::new(scene, sh.env_cfg.clone())?;
        let agent = Agent { net: sh.net.clone(), params: snap.params.clone(), mask: sh.mask.clone() };
        let ro = agent.run_episode(&env, Mode::Sample(&mut rng), sh.cfg.gamma, sh.cfg.reward_scale)?;
        sh.stats.lock().expect("stats lock")[idx] = Some(EpisodeStat {
            score: ro.trace.final_score,
            psnr: ro.trace.psnr,
            ret: ro.trace.total_reward(),
            entropy: ro.mean_entropy,
            frames: ro.trace.frame_count(),
        });
        batch.extend(ro.transitions);
        batch_episodes += 1;
        if batch_episodes == sh.cfg.episodes_per_update || idx + 1 >= sh.total {
            let out = loss_and_grads(sh.net, &snap.params, &batch, sh.mask, &sh.cfg.loss).map_err(|e| match e {
                AgentError::Divergence { reason, .. } => AgentError::Divergence { update: snap.version + 1, reason },
                e => e,
            })?;
            sh.store.apply_update(&out.grads).map_err(|e| match e {
                AgentError::NonFiniteGradient => AgentError::Divergence {
                    update: snap.version + 1,
                    reason: "non-finite gradient".into(),
                },
                e => e,
            })?;
            batch.clear();
            batch_episodes = 0;
            snap = sh.store.snapshot();
        }
    }
    // A worker that stops mid-batch still contributes its episodes.
    if !batch.is_empty() {
        let out = loss_and_grads(sh.net, &snap.params, &batch, sh.mask, &sh.cfg.loss)?;
        sh.store.apply_update(&out.grads)?;
    }
    Ok(())
}

fn curve(stats: &[EpisodeStat], per_epoch: usize) -> Vec<EpochStats> {
    stats
        .chunks(per_epoch)
        .enumerate()
        .map(|(e, c)| {
            let n = c.len() as f64;
            let mean = |f: &dyn Fn(&EpisodeStat) -> f64| c.iter().map(f).sum::<f64>() / n;
            EpochStats {
                epoch: e + 1,
                episodes: c.len(),
                mean_score: mean(&|s| s.score),
                mean_psnr: mean(&|s| s.psnr),
                mean_return: mean(&|s| s.ret),
                mean_entropy: mean(&|s| s.entropy),
                mean_frames: mean(&|s| s.frames as f64),
            }
        })
        .collect()
}

/// Train from freshly initialized weights.
pub fn train(corpus: &[RadianceScene], env_cfg: &EnvConfig, cfg: &TrainConfig) -> Result<TrainedAgent> {
    cfg.validate()?;
    let net = Network::new(cfg.features.clone(), cfg.net.clone())?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = net.init_params(&mut init_rng, cfg.head_init);
    let store = ParamStore::new(params, cfg.adam.clone());
    train_from(corpus, env_cfg, cfg, net, &store)
}

/// Continue training the weights held in `store`.
pub fn train_from(
    corpus: &[RadianceScene],
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    net: Network,
    store: &ParamStore,
) -> Result<TrainedAgent> {
    cfg.validate()?;
    env_cfg.validate()?;
    if corpus.is_empty() {
        return Err(AgentError::Config("empty training corpus".into()));
    }
    let mask = cfg.action_mask();
    let total = cfg.epochs * cfg.episodes_per_epoch;
    let shared = Shared {
        corpus,
        env_cfg,
        cfg,
        net: &net,
        mask: &mask,
        store,
        next: AtomicUsize::new(0),
        total,
        stats: Mutex::new(vec![None; total]),
    };
    if cfg.workers == 1 {
        worker(&shared)?;
    } else {
        let results: Vec<Result<()>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.workers).map(|_| s.spawn(|| worker(&shared))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
    }
    let stats: Vec<EpisodeStat> = shared
        .stats
        .into_inner()
        .expect("stats lock")
        .into_iter()
        .map(|s| s.expect("every episode recorded"))
        .collect();
    let snap = store.snapshot();
    Ok(TrainedAgent {
        agent: Agent { net, params: snap.params.clone(), mask },
        curve: curve(&stats, cfg.episodes_per_epoch),
        config: cfg.clone(),
        env: env_cfg.clone(),
        optimizer: store.optimizer_state(),
        version: snap.version,
        episodes: total,
    })
}

/// Uniformly random choices over the agent's mask, stopping with
/// probability one half once allowed.
pub fn random_episode(env: &Environment, mask: &ActionMask, rng: &mut ChaCha8Rng) -> Result<EpisodeTrace> {
    let pick = |m: &[bool], rng: &mut ChaCha8Rng| {
        let allowed: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
        allowed[rng.gen_range(0..allowed.len())]
    };
    let mut actions = Vec::new();
    for stage in 0..env.config().max_stage {
        if stage >= STOP_STAGE && rng.gen_bool(0.5) {
            actions.push(Action::stop());
            break;
        }
        actions.push(Action { iso_idx: pick(&mask.iso, rng), shutter_idx: pick(&mask.shutter, rng), stop: false });
    }
    Ok(env.rollout(&actions)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use expobracket_core::scene::{generate_scene, SceneSpec};

    fn corpus() -> Vec<RadianceScene> {
        (0..3)
            .map(|s| {
                generate_scene(&SceneSpec { width: 32, height: 32, motion_magnitude: 6.0, ..SceneSpec::new(50 + s) })
                    .unwrap()
            })
            .collect()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            workers: 1,
            epochs: 2,
            episodes_per_epoch: 6,
            episodes_per_update: 2,
            net: NetConfig { branch_hidden: vec![8], trunk_hidden: vec![8] },
            features: FeatureConfig { bins: 16, grid: 4 },
            ..Default::default()
        }
    }

    #[test]
    fn single_worker_training_is_reproducible() {
        let c = corpus();
        let env = EnvConfig::default();
        let a = train(&c, &env, &tiny_cfg()).unwrap();
        let b = train(&c, &env, &tiny_cfg()).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.agent.params, b.agent.params);
        assert_eq!(a.curve.len(), 2);
        assert_eq!(a.version, 6);
    }

    #[test]
    fn multi_worker_counts_updates() {
        let c = corpus();
        let cfg = TrainConfig { workers: 3, episodes_per_update: 1, ..tiny_cfg() };
        let t = train(&c, &EnvConfig::default(), &cfg).unwrap();
        assert_eq!(t.version, 12);
        assert!(t.agent.params.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn shutter_only_agent_keeps_iso_200() {
        let c = corpus();
        let cfg = TrainConfig { shutter_only: true, ..tiny_cfg() };
        let t = train(&c, &EnvConfig::default(), &cfg).unwrap();
        for s in &c {
            let tr = t.agent.greedy_episode(s, &EnvConfig::default()).unwrap();
            for st in tr.steps.iter().map(|r| &r.action).filter(|a| !a.stop) {
                assert_eq!(st.iso_idx, expobracket_core::camera::ISO_200);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let c = corpus();
        let cfg = TrainConfig { gamma: 0.0, ..tiny_cfg() };
        assert!(train(&c, &EnvConfig::default(), &cfg).is_err());
        assert!(train(&[], &EnvConfig::default(), &tiny_cfg()).is_err());
    }
}
