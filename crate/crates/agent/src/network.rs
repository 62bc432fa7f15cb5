//! Three-branch feed-forward policy/value network with exact backprop.
//!
//! Parameters live in one flat `Vec<f64>`; each dense layer owns a weight
//! block (row-major, `output x input`) followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use expobracket_core::camera::{ISO_200, NUM_ISO, NUM_SHUTTER};

use crate::error::{AgentError, Result};
use crate::features::{FeatureConfig, FeatureVector};

pub const NUM_STOP: usize = 2;
/// Index of "stop" in the stop head; 0 means continue.
pub const STOP: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Hidden widths of each branch encoder; empty passes features through.
    pub branch_hidden: Vec<usize>,
    /// Hidden widths of the trunk after concatenation.
    pub trunk_hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { branch_hidden: vec![64, 32], trunk_hidden: vec![128, 64] }
    }
}

impl NetConfig {
    /// No hidden layers: every head is affine in the features.
    pub fn linear() -> Self {
        Self { branch_hidden: vec![], trunk_hidden: vec![] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl LayerShape {
    fn weights(&self) -> usize {
        self.offset
    }

    fn bias(&self) -> usize {
        self.offset + self.input * self.output
    }

    fn size(&self) -> usize {
        self.input * self.output + self.output
    }

    fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.weights()..self.bias()];
        let b = &params[self.bias()..self.bias() + self.output];
        (0..self.output)
            .map(|o| {
                let row = &w[o * self.input..(o + 1) * self.input];
                b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulate parameter gradients for pre-activation gradient `dy` and
    /// return the gradient with respect to the input.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let (wo, bo) = (self.weights(), self.bias());
        let mut dx = vec![0.0; self.input];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads[bo + o] += g;
            let row = wo + o * self.input;
            for i in 0..self.input {
                grads[row + i] += g * x[i];
                dx[i] += params[row + i] * g;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub features: FeatureConfig,
    pub config: NetConfig,
    branches: [Vec<LayerShape>; 3],
    trunk: Vec<LayerShape>,
    /// ISO, shutter, stop and value heads.
    heads: [LayerShape; 4],
    n_params: usize,
}

/// Activations kept from the forward pass for backprop. Each list starts
/// with the layer stack's input.
#[derive(Debug, Clone)]
pub struct Activations {
    branches: [Vec<Vec<f64>>; 3],
    trunk: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub iso_logits: Vec<f64>,
    pub shutter_logits: Vec<f64>,
    pub stop_logits: Vec<f64>,
    pub value: f64,
    pub acts: Activations,
}

impl Network {
    pub fn new(features: FeatureConfig, config: NetConfig) -> Result<Self> {
        if config.branch_hidden.iter().chain(&config.trunk_hidden).any(|&w| w == 0) {
            return Err(AgentError::Config("zero-width layer".into()));
        }
        let mut offset = 0;
        let mut stack = |input: usize, widths: &[usize]| {
            let mut layers = Vec::new();
            let mut prev = input;
            for &w in widths {
                let l = LayerShape { input: prev, output: w, offset };
                offset += l.size();
                layers.push(l);
                prev = w;
            }
            (layers, prev)
        };
        let dims = features.dims();
        let (b0, o0) = stack(dims[0], &config.branch_hidden);
        let (b1, o1) = stack(dims[1], &config.branch_hidden);
        let (b2, o2) = stack(dims[2], &config.branch_hidden);
        let (trunk, top) = stack(o0 + o1 + o2, &config.trunk_hidden);
        let mut head = |n: usize| {
            let l = LayerShape { input: top, output: n, offset };
            offset += l.size();
            l
        };
        let heads = [head(NUM_ISO), head(NUM_SHUTTER), head(NUM_STOP), head(1)];
        Ok(Self { features, config, branches: [b0, b1, b2], trunk, heads, n_params: offset })
    }

    pub fn num_params(&self) -> usize {
        self.n_params
    }

    /// Every dense layer in parameter order.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut v: Vec<LayerShape> = self.branches.iter().flatten().copied().collect();
        v.extend(&self.trunk);
        v.extend(self.heads);
        v
    }

    /// He-uniform hidden layers with biases of 0.01; head weights uniform in
    /// `±head_scale / sqrt(fan_in)`, so `head_scale = 0` gives uniform
    /// policies and a zero value.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, head_scale: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let hidden = self.branches.iter().flatten().chain(&self.trunk);
        for l in hidden {
            let a = (6.0 / l.input as f64).sqrt();
            for v in &mut p[l.weights()..l.bias()] {
                *v = rng.gen_range(-a..a);
            }
            p[l.bias()..l.bias() + l.output].fill(0.01);
        }
        if head_scale > 0.0 {
            for l in &self.heads {
                let a = head_scale / (l.input as f64).sqrt();
                for v in &mut p[l.weights()..l.bias()] {
                    *v = rng.gen_range(-a..a);
                }
            }
        }
        p
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(AgentError::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        Ok(())
    }

    fn check_features(&self, fv: &FeatureVector) -> Result<()> {
        let dims = self.features.dims();
        let got = [fv.histogram.len(), fv.semantic.len(), fv.stage.len()];
        if dims != got {
            return Err(AgentError::Shape(format!("feature dims {got:?}, expected {dims:?}")));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], fv: &FeatureVector) -> Result<ForwardOutput> {
        self.check_params(params)?;
        self.check_features(fv)?;
        let run = |layers: &[LayerShape], input: &[f64]| {
            let mut acts = vec![input.to_vec()];
            for l in layers {
                let mut y = l.forward(params, acts.last().unwrap());
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                acts.push(y);
            }
            acts
        };
        let inputs = fv.branches();
        let branches = [
            run(&self.branches[0], inputs[0]),
            run(&self.branches[1], inputs[1]),
            run(&self.branches[2], inputs[2]),
        ];
        let concat: Vec<f64> = branches.iter().flat_map(|b| b.last().unwrap().iter().copied()).collect();
        let trunk = run(&self.trunk, &concat);
        let top = trunk.last().unwrap();
        let [iso, sh, stop, val] = &self.heads;
        Ok(ForwardOutput {
            iso_logits: iso.forward(params, top),
            shutter_logits: sh.forward(params, top),
            stop_logits: stop.forward(params, top),
            value: val.forward(params, top)[0],
            acts: Activations { branches, trunk },
        })
    }

    /// Accumulate into `grads` the gradient of a scalar whose derivatives with
    /// respect to the head outputs are given.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &Activations,
        d_iso: &[f64],
        d_shutter: &[f64],
        d_stop: &[f64],
        d_value: f64,
        grads: &mut [f64],
    ) {
        let top = acts.trunk.last().unwrap();
        let mut d_top = vec![0.0; top.len()];
        for (l, dy) in self.heads.iter().zip([d_iso, d_shutter, d_stop, &[d_value][..]]) {
            let dx = l.backward(params, top, dy, grads);
            d_top.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
        }
        let d_concat = backprop_stack(&self.trunk, params, &acts.trunk, d_top, grads);
        let mut start = 0;
        for (layers, a) in self.branches.iter().zip(&acts.branches) {
            let n = a.last().unwrap().len();
            backprop_stack(layers, params, a, d_concat[start..start + n].to_vec(), grads);
            start += n;
        }
    }
}

/// Backprop through ReLU layers given the gradient at the stack's output.
fn backprop_stack(layers: &[LayerShape], params: &[f64], acts: &[Vec<f64>], mut d: Vec<f64>, grads: &mut [f64]) -> Vec<f64> {
    for (k, l) in layers.iter().enumerate().rev() {
        let out = &acts[k + 1];
        d.iter_mut().zip(out).for_each(|(g, &a)| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        d = l.backward(params, &acts[k], &d, grads);
    }
    d
}

/// Which grid indices the policy may choose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask {
    pub iso: Vec<bool>,
    pub shutter: Vec<bool>,
}

impl Default for ActionMask {
    fn default() -> Self {
        Self::full()
    }
}

impl ActionMask {
    pub fn full() -> Self {
        Self { iso: vec![true; NUM_ISO], shutter: vec![true; NUM_SHUTTER] }
    }

    /// ISO pinned to 200.
    pub fn shutter_only() -> Self {
        let mut iso = vec![false; NUM_ISO];
        iso[ISO_200] = true;
        Self { iso, shutter: vec![true; NUM_SHUTTER] }
    }

    pub fn reduced(isos: &[usize], shutters: &[usize]) -> Result<Self> {
        let mut m = Self { iso: vec![false; NUM_ISO], shutter: vec![false; NUM_SHUTTER] };
        for &i in isos {
            *m.iso.get_mut(i).ok_or_else(|| AgentError::Config(format!("ISO index {i}")))? = true;
        }
        for &s in shutters {
            *m.shutter.get_mut(s).ok_or_else(|| AgentError::Config(format!("shutter index {s}")))? = true;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iso.len() != NUM_ISO || self.shutter.len() != NUM_SHUTTER {
            return Err(AgentError::Shape("action mask size".into()));
        }
        if !self.iso.iter().any(|&b| b) || !self.shutter.iter().any(|&b| b) {
            return Err(AgentError::Config("action mask leaves no choice".into()));
        }
        Ok(())
    }
}

/// Softmax over allowed entries; disallowed entries get probability 0.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |i: usize| mask.map_or(true, |m| m[i]);
    let max = (0..logits.len()).filter(|&i| allowed(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = (0..logits.len())
        .map(|i| if allowed(i) { (logits[i] - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub iso: Vec<f64>,
    pub shutter: Vec<f64>,
    pub stop: Vec<f64>,
    pub value: f64,
}

impl Network {
    pub fn policy(&self, params: &[f64], fv: &FeatureVector, mask: &ActionMask) -> Result<PolicyOutput> {
        let f = self.forward(params, fv)?;
        Ok(PolicyOutput {
            iso: masked_softmax(&f.iso_logits, Some(&mask.iso)),
            shutter: masked_softmax(&f.shutter_logits, Some(&mask.shutter)),
            stop: masked_softmax(&f.stop_logits, None),
            value: f.value,
        })
    }
}

fn check_distribution(probs: &[f64]) -> Result<()> {
    let s: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
        return Err(AgentError::Distribution(format!("sum {s}")));
    }
    Ok(())
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    check_distribution(probs)?;
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

/// Argmax with ties to the lowest index.
pub fn greedy_action(probs: &[f64]) -> Result<usize> {
    check_distribution(probs)?;
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, cfg: &FeatureConfig) -> FeatureVector {
        let d = cfg.dims();
        FeatureVector {
            histogram: (0..d[0]).map(|_| rng.gen::<f64>()).collect(),
            semantic: (0..d[1]).map(|_| rng.gen::<f64>()).collect(),
            stage: (0..d[2]).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    #[test]
    fn zero_heads_are_uniform() {
        let net = Network::new(FeatureConfig::default(), NetConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = net.init_params(&mut rng, 0.0);
        let fv = random_features(&mut rng, &net.features);
        let out = net.policy(&p, &fv, &ActionMask::full()).unwrap();
        assert!(out.iso.iter().all(|&v| (v - 1.0 / 24.0).abs() < 1e-15));
        assert!(out.shutter.iter().all(|&v| (v - 1.0 / 19.0).abs() < 1e-15));
        assert_eq!(out.stop, vec![0.5, 0.5]);
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn layer_count_and_shape_errors() {
        let net = Network::new(FeatureConfig::default(), NetConfig::default()).unwrap();
        assert_eq!(net.layer_shapes().len(), 3 * 2 + 2 + 4);
        assert!(net.forward(&[0.0; 3], &random_features(&mut ChaCha8Rng::seed_from_u64(1), &net.features)).is_err());
        let lin = Network::new(FeatureConfig::default(), NetConfig::linear()).unwrap();
        let in_dim: usize = FeatureConfig::default().dims().iter().sum();
        assert_eq!(lin.num_params(), (in_dim + 1) * (24 + 19 + 2 + 1));
    }

    #[test]
    fn masked_softmax_respects_mask() {
        let p = masked_softmax(&[1.0, 2.0, 3.0], Some(&[true, false, true]));
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let shifted = masked_softmax(&[11.0, 12.0, 13.0], Some(&[true, false, true]));
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ActionMask::reduced(&[], &[1]).is_err());
        let m = ActionMask::shutter_only();
        assert_eq!(m.iso.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn greedy_and_sampling() {
        let mut p = vec![0.0; 10];
        p[3] = 0.5;
        p[7] = 0.5;
        assert_eq!(greedy_action(&p).unwrap(), 3);
        let mut one = vec![0.0; 5];
        one[2] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_action(&one, &mut rng).unwrap(), 2);
        }
        assert!(greedy_action(&[0.5, 0.2]).is_err());
        assert!(sample_action(&[], &mut rng).is_err());
    }

    #[test]
    fn empirical_frequencies_match() {
        let probs = [0.1, 0.25, 0.05, 0.4, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[sample_action(&probs, &mut rng).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_a_distribution(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..30),
            shift in -100.0f64..100.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mask: Vec<bool> = (0..logits.len()).map(|_| rng.gen_bool(0.7)).collect();
            mask[0] = true;
            let p = masked_softmax(&logits, Some(&mask));
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (v, m) in p.iter().zip(&mask) {
                proptest::prop_assert!(*v >= 0.0 && (*m || *v == 0.0));
            }
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = masked_softmax(&shifted, Some(&mask));
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
            let h = entropy(&p);
            let n = mask.iter().filter(|&&m| m).count() as f64;
            proptest::prop_assert!(h >= -1e-12 && h <= n.ln() + 1e-12);
        }
    }
}
