//! Exhaustive search over stage-action trajectories on a reduced grid.

use std::thread;

use serde::{Deserialize, Serialize};

use expobracket_core::camera::{CaptureSettings, NUM_ISO, NUM_SHUTTER};
use expobracket_core::env::{Action, BracketState, EnvConfig, Environment, STOP_STAGE};
use expobracket_core::scene::RadianceScene;

use crate::error::{BaselineError, Result};
use crate::schedule::Schedule;

/// Largest number of grid actions per stage.
pub const MAX_ACTIONS: usize = 16;
/// Deepest trajectory searched; the fourth stage adds an optional extra frame.
pub const MAX_ORACLE_STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReducedGrid {
    pub iso: Vec<usize>,
    pub shutter: Vec<usize>,
}

impl Default for ReducedGrid {
    /// ISO 100–800 in stops, shutters 1/50 to 1/800.
    fn default() -> Self {
        Self { iso: vec![3, 6, 9, 12], shutter: vec![2, 6, 10, 14] }
    }
}

impl ReducedGrid {
    pub fn validate(&self) -> Result<()> {
        if self.iso.is_empty() || self.shutter.is_empty() {
            return Err(BaselineError::Config("empty reduced grid".into()));
        }
        if self.iso.iter().any(|&i| i >= NUM_ISO) || self.shutter.iter().any(|&i| i >= NUM_SHUTTER) {
            return Err(BaselineError::Config(format!("reduced grid {self:?} leaves the camera grid")));
        }
        let n = self.iso.len() * self.shutter.len();
        if n > MAX_ACTIONS {
            return Err(BaselineError::GridTooLarge(format!("{n} actions per stage, limit {MAX_ACTIONS}")));
        }
        Ok(())
    }

    /// ISO-major order.
    pub fn actions(&self) -> Vec<Action> {
        self.iso
            .iter()
            .flat_map(|&i| self.shutter.iter().map(move |&s| Action::capture(CaptureSettings { iso_idx: i, shutter_idx: s })))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub actions: Vec<Action>,
    pub settings: Vec<CaptureSettings>,
    /// Quality score of the final bracket.
    pub score: f64,
    /// Sum of step rewards, penalties included.
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best: usize,
    pub schedule: Schedule,
    pub best_score: f64,
    pub best_return: f64,
    pub candidates: Vec<Candidate>,
}

impl OracleResult {
    pub fn worst_score(&self) -> f64 {
        self.candidates.iter().map(|c| c.score).fold(f64::INFINITY, f64::min)
    }

    pub fn mean_score(&self) -> f64 {
        self.candidates.iter().map(|c| c.score).sum::<f64>() / self.candidates.len() as f64
    }
}

fn explore(
    env: &Environment,
    grid: &[Action],
    stages: usize,
    state: &BracketState,
    path: &mut Vec<Action>,
    ret: f64,
    out: &mut Vec<Candidate>,
) -> Result<()> {
    if state.done || state.stage >= stages {
        return Ok(());
    }
    if state.stage >= STOP_STAGE {
        let step = env.step(state, Action::stop())?;
        path.push(Action::stop());
        out.push(Candidate { actions: path.clone(), settings: state.settings(), score: step.score, ret: ret + step.reward });
        path.pop();
    }
    for &a in grid {
        let step = env.step(state, a)?;
        path.push(a);
        let r = ret + step.reward;
        if step.state.done || step.state.stage >= stages {
            out.push(Candidate { actions: path.clone(), settings: step.state.settings(), score: step.score, ret: r });
        } else {
            explore(env, grid, stages, &step.state, path, r, out)?;
        }
        path.pop();
    }
    Ok(())
}

/// Every trajectory of `stages` grid actions from the initial bracket
/// (at stage 4 the last action may also be a stop). The best candidate
/// maximizes the return, which equals the final score whenever no frame
/// beyond the penalty-free count is taken; ties go to the earlier
/// candidate. Work is split over `threads` by first action; noise is keyed on
/// each capture, so the result does not depend on the split.
pub fn exhaustive_oracle(
    scene: &RadianceScene,
    env_cfg: &EnvConfig,
    grid: &ReducedGrid,
    stages: usize,
    threads: usize,
) -> Result<OracleResult> {
    grid.validate()?;
    if !(1..=MAX_ORACLE_STAGES).contains(&stages) {
        return Err(BaselineError::GridTooLarge(format!("{stages} stages, limit {MAX_ORACLE_STAGES}")));
    }
    let cfg = EnvConfig { max_stage: stages.max(STOP_STAGE), ..env_cfg.clone() };
    let actions = grid.actions();
    let threads = threads.clamp(1, actions.len());
    let chunk = actions.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Candidate>>> = thread::scope(|s| {
        let handles: Vec<_> = actions
            .chunks(chunk)
            .map(|firsts| {
                let (cfg, actions) = (&cfg, &actions);
                s.spawn(move || -> Result<Vec<Candidate>> {
                    let env = Environment::new(scene, cfg.clone())?;
                    let root = env.reset()?;
                    let mut out = Vec::new();
                    for &a in firsts {
                        let step = env.step(&root, a)?;
                        let mut path = vec![a];
                        if step.state.stage >= stages {
                            out.push(Candidate {
                                actions: path,
                                settings: step.state.settings(),
                                score: step.score,
                                ret: step.reward,
                            });
                        } else {
                            explore(&env, actions, stages, &step.state, &mut path, step.reward, &mut out)?;
                        }
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("oracle worker panicked")).collect()
    });
    let mut candidates = Vec::new();
    for p in parts {
        candidates.extend(p?);
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.ret > candidates[best].ret {
            best = i;
        }
    }
    let b = &candidates[best];
    Ok(OracleResult {
        best,
        schedule: Schedule::from_settings(&b.settings),
        best_score: b.score,
        best_return: b.ret,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::fixed_bracket;
    use expobracket_core::scene::{generate_scene, SceneSpec};

    fn scene(seed: u64) -> RadianceScene {
        generate_scene(&SceneSpec { width: 32, height: 32, ..SceneSpec::new(seed) }).unwrap()
    }

    #[test]
    fn one_stage_matches_direct_evaluation() {
        let sc = scene(3);
        let cfg = EnvConfig::default();
        let grid = ReducedGrid { iso: vec![4, 8], shutter: vec![5, 11] };
        let res = exhaustive_oracle(&sc, &cfg, &grid, 1, 2).unwrap();
        assert_eq!(res.candidates.len(), 4);
        let mut best = f64::NEG_INFINITY;
        for (c, a) in res.candidates.iter().zip(grid.actions()) {
            let env = Environment::new(&sc, cfg.clone()).unwrap();
            let s1 = env.step(&env.reset().unwrap(), a).unwrap().state;
            let score = env.evaluate(&s1).unwrap().score;
            assert_eq!(c.score, score);
            best = best.max(score);
        }
        assert_eq!(res.best_score, best);
    }

    #[test]
    fn dominates_fixed_bracket() {
        let cfg = EnvConfig::default();
        for seed in 0..3 {
            let sc = scene(seed);
            let fixed = fixed_bracket(&sc, &cfg.camera).unwrap();
            let fs = fixed.settings();
            let mut shutter: Vec<usize> = fs.iter().map(|s| s.shutter_idx).collect();
            shutter.dedup();
            let grid = ReducedGrid { iso: vec![fs[1].iso_idx], shutter };
            let res = exhaustive_oracle(&sc, &cfg, &grid, 3, 3).unwrap();
            let env = Environment::new(&sc, cfg.clone()).unwrap();
            let fixed_score = fixed.evaluate(&env).unwrap().score;
            assert!(res.candidates.iter().any(|c| c.settings == fs));
            assert!(res.best_score >= fixed_score);
            assert!(res.candidates.iter().all(|c| c.score <= res.best_score));
            res.schedule.check(&cfg.camera, sc.frame_interval()).unwrap();
        }
    }

    #[test]
    fn split_does_not_change_the_result() {
        let sc = scene(8);
        let grid = ReducedGrid { iso: vec![6], shutter: vec![3, 7, 11] };
        let a = exhaustive_oracle(&sc, &EnvConfig::default(), &grid, 3, 1).unwrap();
        let b = exhaustive_oracle(&sc, &EnvConfig::default(), &grid, 3, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.candidates.len(), 27);
    }

    #[test]
    fn fourth_stage_includes_stopping() {
        let sc = scene(2);
        let grid = ReducedGrid { iso: vec![6], shutter: vec![4, 10] };
        let res = exhaustive_oracle(&sc, &EnvConfig::default(), &grid, 4, 2).unwrap();
        // Per three-stage prefix: one stop plus one extra frame per action.
        assert_eq!(res.candidates.len(), 8 * 3);
        assert!(res.candidates.iter().any(|c| c.settings.len() == 4));
        assert!(res.candidates.iter().any(|c| c.actions.last().unwrap().stop));
    }

    #[test]
    fn guards() {
        let sc = scene(1);
        let big = ReducedGrid { iso: (0..5).collect(), shutter: (0..4).collect() };
        assert!(matches!(exhaustive_oracle(&sc, &EnvConfig::default(), &big, 1, 1), Err(BaselineError::GridTooLarge(_))));
        let g = ReducedGrid::default();
        assert!(exhaustive_oracle(&sc, &EnvConfig::default(), &g, 5, 1).is_err());
        assert!(ReducedGrid { iso: vec![], shutter: vec![1] }.validate().is_err());
    }
}
