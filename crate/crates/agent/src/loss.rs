//! Actor-critic loss, its exact gradient, returns/advantages and a
//! finite-difference gradient check.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use expobracket_core::env::Action;

use crate::error::{AgentError, Result};
use crate::features::FeatureVector;
use crate::network::{entropy, masked_softmax, ActionMask, Network, STOP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { value_coef: 0.5, entropy_coef: 0.01 }
    }
}

/// One decision with its training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub features: FeatureVector,
    pub action: Action,
    /// Whether the stop head took part in the decision.
    pub stop_allowed: bool,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grads: Vec<f64>,
}

/// Discounted returns-to-go (bootstrap 0 after the last step) and
/// advantages `G_t − V(s_t)`.
pub fn compute_advantages(rewards: &[f64], values: &[f64], gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(AgentError::Misaligned(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    let mut returns = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        returns[t] = g;
    }
    let adv = returns.iter().zip(values).map(|(g, v)| g - v).collect();
    Ok((returns, adv))
}

/// Adds the head's policy and entropy derivatives to `d` and returns
/// `(log p(a), H)`.
fn head_terms(probs: &[f64], chosen: usize, adv: f64, c_e: f64, d: &mut [f64]) -> Result<(f64, f64)> {
    let pa = probs.get(chosen).copied().unwrap_or(0.0);
    if !(pa > 0.0) {
        return Err(AgentError::Config(format!("action {chosen} has zero probability")));
    }
    let h = entropy(probs);
    for (i, &p) in probs.iter().enumerate() {
        let onehot = if i == chosen { 1.0 } else { 0.0 };
        d[i] -= adv * (onehot - p);
        if p > 0.0 {
            d[i] += c_e * p * (p.ln() + h);
        }
    }
    Ok((pa.ln(), h))
}

/// Summed loss `−Σ log π(a|s)·A + c_v·Σ(V − G)² − c_e·Σ H` over the rows,
/// with its gradient.
///
/// Entropy covers the ISO and shutter heads on every row, plus the stop head
/// where it was consulted. A row that stopped contributes only the stop
/// head's log-probability.
pub fn loss_and_grads(
    net: &Network,
    params: &[f64],
    rows: &[Transition],
    mask: &ActionMask,
    w: &LossWeights,
) -> Result<LossOutput> {
    net.check_params(params)?;
    let mut grads = vec![0.0; params.len()];
    let (mut pl, mut vl, mut ent) = (0.0, 0.0, 0.0);
    for row in rows {
        let f = net.forward(params, &row.features)?;
        let p_iso = masked_softmax(&f.iso_logits, Some(&mask.iso));
        let p_sh = masked_softmax(&f.shutter_logits, Some(&mask.shutter));
        let p_stop = masked_softmax(&f.stop_logits, None);
        let mut d_iso = vec![0.0; p_iso.len()];
        let mut d_sh = vec![0.0; p_sh.len()];
        let mut d_stop = vec![0.0; p_stop.len()];
        let adv = row.advantage;
        let stopped = row.stop_allowed && row.action.stop;
        if row.action.stop && !row.stop_allowed {
            return Err(AgentError::Config("stop action where stop is not allowed".into()));
        }
        let mut logp = 0.0;
        if row.stop_allowed {
            let k = if stopped { STOP } else { 1 - STOP };
            let (lp, h) = head_terms(&p_stop, k, adv, w.entropy_coef, &mut d_stop)?;
            logp += lp;
            ent += h;
        }
        // Grid heads: policy term only when a capture was chosen, entropy always.
        let (a_iso, a_sh, adv_grid) = if stopped {
            (greedy_index(&p_iso), greedy_index(&p_sh), 0.0)
        } else {
            (row.action.iso_idx, row.action.shutter_idx, adv)
        };
        let (lp_i, h_i) = head_terms(&p_iso, a_iso, adv_grid, w.entropy_coef, &mut d_iso)?;
        let (lp_s, h_s) = head_terms(&p_sh, a_sh, adv_grid, w.entropy_coef, &mut d_sh)?;
        if !stopped {
            logp += lp_i + lp_s;
        }
        ent += h_i + h_s;
        pl -= logp * adv;
        let dv = f.value - row.ret;
        vl += dv * dv;
        net.backward(params, &f.acts, &d_iso, &d_sh, &d_stop, 2.0 * w.value_coef * dv, &mut grads);
    }
    let loss = pl + w.value_coef * vl - w.entropy_coef * ent;
    if !loss.is_finite() {
        return Err(AgentError::Divergence { update: 0, reason: format!("loss {loss}") });
    }
    Ok(LossOutput { loss, policy_loss: pl, value_loss: vl, entropy: ent, grads })
}

fn greedy_index(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Maximum relative error between `analytic` and central differences of
/// the loss (step `h`) over at most `max_params` randomly chosen
/// parameters. Parameters whose gradients are both below 1e-8 are skipped.
#[allow(clippy::too_many_arguments)]
pub fn compare_gradients<R: Rng + ?Sized>(
    net: &Network,
    params: &[f64],
    rows: &[Transition],
    mask: &ActionMask,
    w: &LossWeights,
    analytic: &[f64],
    max_params: usize,
    rng: &mut R,
) -> Result<f64> {
    const H: f64 = 1e-5;
    let n = params.len();
    let picks = sample(rng, n, max_params.min(n));
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in picks.iter() {
        let orig = p[i];
        // Differencing row by row keeps cancellation at the scale of one row.
        let mut numeric = 0.0;
        for row in rows.chunks(1) {
            p[i] = orig + H;
            let up = loss_and_grads(net, &p, row, mask, w)?.loss;
            p[i] = orig - H;
            let down = loss_and_grads(net, &p, row, mask, w)?.loss;
            numeric += (up - down) / (2.0 * H);
        }
        p[i] = orig;
        let scale = analytic[i].abs().max(numeric.abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Backprop vs central finite differences at step 1e-5.
pub fn gradient_check<R: Rng + ?Sized>(
    net: &Network,
    params: &[f64],
    rows: &[Transition],
    mask: &ActionMask,
    w: &LossWeights,
    max_params: usize,
    rng: &mut R,
) -> Result<f64> {
    let analytic = loss_and_grads(net, params, rows, mask, w)?.grads;
    compare_gradients(net, params, rows, mask, w, &analytic, max_params, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use crate::network::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_features() -> FeatureConfig {
        FeatureConfig { bins: 8, grid: 2 }
    }

    pub(crate) fn random_rows(rng: &mut ChaCha8Rng, cfg: &FeatureConfig, n: usize) -> Vec<Transition> {
        let d = cfg.dims();
        (0..n)
            .map(|k| {
                let stop_allowed = k % 3 == 2;
                let stop = stop_allowed && rng.gen_bool(0.5);
                Transition {
                    features: FeatureVector {
                        histogram: (0..d[0]).map(|_| rng.gen::<f64>()).collect(),
                        semantic: (0..d[1]).map(|_| rng.gen::<f64>()).collect(),
                        stage: (0..d[2]).map(|_| rng.gen::<f64>()).collect(),
                    },
                    action: Action { iso_idx: rng.gen_range(0..24), shutter_idx: rng.gen_range(0..19), stop },
                    stop_allowed,
                    advantage: rng.gen_range(-1.0..1.0),
                    ret: rng.gen_range(-1.0..1.0),
                }
            })
            .collect()
    }

    #[test]
    fn advantage_examples() {
        let (g, a) = compute_advantages(&[0.7], &[0.2], 1.0).unwrap();
        assert_eq!(g, vec![0.7]);
        assert!((a[0] - 0.5).abs() < 1e-15);
        let (_, a) = compute_advantages(&[0.0; 4], &[0.0; 4], 1.0).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        let (g, _) = compute_advantages(&[1.0, 1.0, 1.0], &[0.0; 3], 0.9).unwrap();
        for (x, y) in g.iter().zip([2.71, 1.9, 1.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(compute_advantages(&[1.0], &[], 1.0).is_err());
    }

    #[test]
    fn zero_advantage_leaves_only_entropy() {
        let fc = small_features();
        let net = Network::new(fc.clone(), NetConfig { branch_hidden: vec![4], trunk_hidden: vec![6] }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = net.init_params(&mut rng, 1.0);
        let mut rows = random_rows(&mut rng, &fc, 5);
        for r in &mut rows {
            r.advantage = 0.0;
            r.ret = net.forward(&params, &r.features).unwrap().value;
        }
        let w = LossWeights::default();
        let out = loss_and_grads(&net, &params, &rows, &ActionMask::full(), &w).unwrap();
        assert_eq!(out.policy_loss, 0.0);
        assert_eq!(out.value_loss, 0.0);
        assert!((out.loss + w.entropy_coef * out.entropy).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_double_loss() {
        let fc = small_features();
        let net = Network::new(fc.clone(), NetConfig { branch_hidden: vec![4], trunk_hidden: vec![6] }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = net.init_params(&mut rng, 1.0);
        let rows = random_rows(&mut rng, &fc, 4);
        let twice: Vec<Transition> = rows.iter().chain(&rows).cloned().collect();
        let w = LossWeights::default();
        let a = loss_and_grads(&net, &params, &rows, &ActionMask::full(), &w).unwrap();
        let b = loss_and_grads(&net, &params, &twice, &ActionMask::full(), &w).unwrap();
        assert!((2.0 * a.loss - b.loss).abs() < 1e-10 * b.loss.abs().max(1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fc = small_features();
        let w = LossWeights::default();
        for seed in 0..3 {
            let net = Network::new(fc.clone(), NetConfig { branch_hidden: vec![5, 4], trunk_hidden: vec![7] }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = net.init_params(&mut rng, 1.0);
            let rows = random_rows(&mut rng, &fc, 6);
            let err = gradient_check(&net, &params, &rows, &ActionMask::full(), &w, 300, &mut rng).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn default_net_gradients_match() {
        let fc = FeatureConfig::default();
        let net = Network::new(fc.clone(), NetConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = net.init_params(&mut rng, 1.0);
        let rows = random_rows(&mut rng, &fc, 3);
        let err = gradient_check(&net, &params, &rows, &ActionMask::full(), &LossWeights::default(), 2000, &mut rng).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn linear_net_is_near_exact() {
        let fc = small_features();
        let net = Network::new(fc.clone(), NetConfig::linear()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = net.init_params(&mut rng, 1.0);
        // Well-scaled inputs keep every gradient far above the rounding floor.
        let mut rows = random_rows(&mut rng, &fc, 4);
        for r in &mut rows {
            for v in r.features.histogram.iter_mut().chain(&mut r.features.semantic).chain(&mut r.features.stage) {
                *v = 0.5 + 0.5 * *v;
            }
            r.advantage = if r.advantage < 0.0 { -1.0 } else { 1.0 };
            r.ret = net.forward(&params, &r.features).unwrap().value + 1.0;
        }
        let err = gradient_check(&net, &params, &rows, &ActionMask::full(), &LossWeights::default(), 400, &mut rng).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let fc = small_features();
        let net = Network::new(fc.clone(), NetConfig { branch_hidden: vec![4], trunk_hidden: vec![6] }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = net.init_params(&mut rng, 1.0);
        let rows = random_rows(&mut rng, &fc, 4);
        let w = LossWeights::default();
        let mut g = loss_and_grads(&net, &params, &rows, &ActionMask::full(), &w).unwrap().grads;
        g.iter_mut().for_each(|v| *v *= 1.1);
        let err = compare_gradients(&net, &params, &rows, &ActionMask::full(), &w, &g, 200, &mut rng).unwrap();
        assert!(err > 1e-2, "{err}");
    }
}
