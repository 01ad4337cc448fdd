use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::noise::NoiseSource;
use super::{GtnConfig, ModelError};
use crate::nn::{self, LstmIds, LstmState, NodeId, ParamId, ParameterSet, Tape, Tensor};

#[derive(Debug, Clone)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct LevelIds {
    convs: Vec<ConvIds>,
    lstm: LstmIds,
    merge: ParamId,
}

#[derive(Debug, Clone)]
struct HeadIds {
    size: usize,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    levels: Vec<LevelIds>,
    merge_bias: ParamId,
    policy_heads: Vec<HeadIds>,
    value_weight: ParamId,
    value_bias: ParamId,
}

/// Name, shape and fan-in of every parameter implied by a config, in build order.
///
/// This is the reference enumeration the structural audit checks against.
pub fn parameter_layout(config: &GtnConfig) -> Result<Vec<(String, Vec<usize>)>, ModelError> {
    let geometry = config.level_geometry()?;
    let (c, k, s, a) = (config.channels, config.kernel, config.lstm_size, config.concat_size);
    let mut out = Vec::new();
    for (m, geo) in geometry.iter().enumerate() {
        let level = m + 1;
        for n in 1..=config.layers {
            let c_in = if n == 1 { geo.input_channels } else { c };
            out.push((format!("level{level}.conv{n}.weight"), vec![c, c_in, k, k]));
            out.push((format!("level{level}.conv{n}.bias"), vec![c]));
        }
        out.push((format!("level{level}.lstm.input_weights"), vec![geo.flatten_width, 4 * s]));
        out.push((format!("level{level}.lstm.hidden_weights"), vec![s, 4 * s]));
        out.push((format!("level{level}.lstm.bias"), vec![4 * s]));
    }
    for level in 1..=config.levels {
        out.push((format!("merge.t{level}"), vec![s, a]));
    }
    out.push(("merge.bias".into(), vec![a]));
    for size in config.head_sizes() {
        out.push((format!("head.policy{size}.weight"), vec![a, size]));
        out.push((format!("head.policy{size}.bias"), vec![size]));
    }
    out.push(("head.value.weight".into(), vec![a, 1]));
    out.push(("head.value.bias".into(), vec![1]));
    Ok(out)
}

fn resolve_layout(config: &GtnConfig, params: &ParameterSet) -> Result<Layout, ModelError> {
    let id = |name: String| {
        params
            .id(&name)
            .ok_or_else(|| ModelError::Audit(format!("missing parameter `{name}`")))
    };
    let mut levels = Vec::with_capacity(config.levels);
    for level in 1..=config.levels {
        let convs = (1..=config.layers)
            .map(|n| {
                Ok(ConvIds {
                    weight: id(format!("level{level}.conv{n}.weight"))?,
                    bias: id(format!("level{level}.conv{n}.bias"))?,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        levels.push(LevelIds {
            convs,
            lstm: LstmIds {
                input_weights: id(format!("level{level}.lstm.input_weights"))?,
                hidden_weights: id(format!("level{level}.lstm.hidden_weights"))?,
                bias: id(format!("level{level}.lstm.bias"))?,
            },
            merge: id(format!("merge.t{level}"))?,
        });
    }
    let policy_heads = config
        .head_sizes()
        .into_iter()
        .map(|size| {
            Ok(HeadIds {
                size,
                weight: id(format!("head.policy{size}.weight"))?,
                bias: id(format!("head.policy{size}.bias"))?,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(Layout {
        levels,
        merge_bias: id("merge.bias".into())?,
        policy_heads,
        value_weight: id("head.value.weight".into())?,
        value_bias: id("head.value.bias".into())?,
    })
}

/// Checks that `params` holds exactly the parameters `config` implies, in order, with the right shapes.
pub fn audit_parameters(config: &GtnConfig, params: &ParameterSet) -> Result<(), ModelError> {
    let expected = parameter_layout(config)?;
    if expected.len() != params.len() {
        return Err(ModelError::Audit(format!(
            "expected {} parameters, found {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, shape), (found, value, _)) in expected.iter().zip(params.iter()) {
        if name != found {
            return Err(ModelError::Audit(format!("expected `{name}`, found `{found}`")));
        }
        if shape.as_slice() != value.shape() {
            return Err(ModelError::Audit(format!(
                "`{name}` should have shape {shape:?}, found {:?}",
                value.shape()
            )));
        }
    }
    Ok(())
}

/// Output of one forward step.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Action distribution per head size.
    pub policies: BTreeMap<usize, Tensor>,
    /// Pre-softmax scores per head size.
    pub logits: BTreeMap<usize, Tensor>,
    pub value: f64,
    pub new_recurrent: Vec<LstmState>,
    /// Clean LSTM output of every level, before any injected noise.
    pub level_activations: Vec<Tensor>,
    /// Merged pre-activation `sum_m a_m T_m + b`.
    pub pre_activation: Tensor,
    /// `ReLU(pre_activation)`
    pub merged: Tensor,
}

/// Tape node ids produced by [`GtnNetwork::forward_on_tape`].
#[derive(Debug, Clone)]
pub struct TapeStep {
    pub logits: BTreeMap<usize, NodeId>,
    pub value: NodeId,
    /// `(hidden, cell)` per level.
    pub recurrent: Vec<(NodeId, NodeId)>,
    pub level_outputs: Vec<NodeId>,
    pub pre_activation: NodeId,
    pub merged: NodeId,
}

/// A tower network: M conv+LSTM streams linked by vertical taps, merged into one
/// layer that feeds the policy heads and the value head.
pub struct GtnNetwork {
    config: GtnConfig,
    params: ParameterSet,
    layout: Layout,
    recurrent: Vec<LstmState>,
    noise: Vec<Option<Box<dyn NoiseSource>>>,
}

impl fmt::Debug for GtnNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let noisy: Vec<usize> = self
            .noise
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|_| i + 1))
            .collect();
        f.debug_struct("GtnNetwork")
            .field("config", &self.config)
            .field("parameters", &self.params.scalar_count())
            .field("noisy_levels", &noisy)
            .finish()
    }
}

impl GtnNetwork {
    /// Builds a network with deterministic initialization from `seed`.
    ///
    /// Weights are uniform in `±1/sqrt(fan_in)`, biases zero except the LSTM
    /// forget gate, which starts at 1.
    pub fn build(config: GtnConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let s = config.lstm_size;
        for (name, shape) in parameter_layout(&config)? {
            let is_bias = name.ends_with("bias");
            let value = if is_bias {
                let mut b = Tensor::zeros(&shape);
                if name.ends_with("lstm.bias") {
                    b.data_mut()[s..2 * s].iter_mut().for_each(|v| *v = 1.0);
                }
                b
            } else {
                let fan_in: usize = if shape.len() == 4 { shape[1..].iter().product() } else { shape[0] };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
                Tensor::new(shape, data)?
            };
            params.insert(name, value)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters after auditing them against `config`.
    pub fn from_params(config: GtnConfig, params: ParameterSet) -> Result<Self, ModelError> {
        config.validate()?;
        audit_parameters(&config, &params)?;
        let layout = resolve_layout(&config, &params)?;
        let recurrent = (0..config.levels).map(|_| LstmState::zeros(config.lstm_size)).collect();
        let noise = (0..config.levels).map(|_| None).collect();
        Ok(Self { config, params, layout, recurrent, noise })
    }

    pub fn config(&self) -> &GtnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    /// Re-runs the structural audit on the current parameters.
    pub fn audit(&self) -> Result<(), ModelError> {
        audit_parameters(&self.config, &self.params)
    }

    pub fn recurrent(&self) -> &[LstmState] {
        &self.recurrent
    }

    /// Zero recurrent state for every level.
    pub fn initial_recurrent(&self) -> Vec<LstmState> {
        (0..self.config.levels).map(|_| LstmState::zeros(self.config.lstm_size)).collect()
    }

    pub fn reset_recurrent(&mut self) {
        self.recurrent = self.initial_recurrent();
    }

    /// Copies `src`'s parameter values into this network. Recurrent state and
    /// noise settings of `self` are untouched.
    pub fn copy_parameters_from(&mut self, src: &GtnNetwork) -> Result<(), ModelError> {
        if src.config != self.config {
            return Err(ModelError::Usage("cannot copy parameters between different configs".into()));
        }
        self.load_values(&src.params)
    }

    /// Copies raw parameter values with the same layout.
    pub fn load_values(&mut self, values: &ParameterSet) -> Result<(), ModelError> {
        self.params
            .copy_values_from(values)
            .map_err(|e| ModelError::Usage(e.to_string()))
    }

    /// Enables noise on level `level` (1-based) when `source` is `Some`, disables it on `None`.
    ///
    /// While enabled, every forward adds one sample per element to the level's LSTM
    /// output before it enters the merge.
    pub fn set_level_noise(&mut self, level: usize, source: Option<Box<dyn NoiseSource>>) -> Result<(), ModelError> {
        if level == 0 || level > self.config.levels {
            return Err(ModelError::Usage(format!(
                "level {level} out of range 1..={}",
                self.config.levels
            )));
        }
        self.noise[level - 1] = source;
        Ok(())
    }

    pub fn clear_noise(&mut self) {
        self.noise.iter_mut().for_each(|n| *n = None);
    }

    pub fn noise_enabled(&self, level: usize) -> bool {
        level >= 1 && level <= self.noise.len() && self.noise[level - 1].is_some()
    }

    /// Records one forward step on `tape`.
    pub fn forward_on_tape(
        &mut self,
        tape: &mut Tape,
        obs: NodeId,
        recurrent: &[(NodeId, NodeId)],
    ) -> Result<TapeStep, ModelError> {
        let cfg = &self.config;
        if recurrent.len() != cfg.levels {
            return Err(ModelError::Usage(format!(
                "expected {} recurrent states, got {}",
                cfg.levels,
                recurrent.len()
            )));
        }
        let expected = [1, cfg.input_side, cfg.input_side];
        if tape.value(obs).shape() != expected {
            return Err(ModelError::Usage(format!(
                "observation shape {:?}, expected {expected:?}",
                tape.value(obs).shape()
            )));
        }
        let params = &self.params;
        let mut level_outputs = Vec::with_capacity(cfg.levels);
        let mut new_recurrent = Vec::with_capacity(cfg.levels);
        let mut merge_terms = Vec::with_capacity(cfg.levels);
        let mut tap = obs;
        for (m, level) in self.layout.levels.iter().enumerate() {
            let mut x = tap;
            for (n, conv) in level.convs.iter().enumerate() {
                let y = tape.conv2d(params, x, conv.weight, conv.bias, cfg.stride)?;
                x = tape.relu(y);
                if n == 0 {
                    tap = x;
                }
            }
            let flat = tape.flatten(x);
            let (h, c) = tape.lstm(params, flat, recurrent[m].0, recurrent[m].1, level.lstm)?;
            level_outputs.push(h);
            new_recurrent.push((h, c));
            let a = match self.noise[m].as_mut() {
                Some(source) => {
                    let noise: Vec<f64> = (0..cfg.lstm_size).map(|_| source.sample()).collect();
                    let n = tape.leaf(Tensor::vector(noise));
                    tape.add(h, n)?
                }
                None => h,
            };
            merge_terms.push((a, level.merge));
        }
        let pre_activation = tape.merge(params, &merge_terms, Some(self.layout.merge_bias))?;
        let merged = tape.relu(pre_activation);
        let mut logits = BTreeMap::new();
        for head in &self.layout.policy_heads {
            let node = tape.linear(params, merged, head.weight, Some(head.bias))?;
            logits.insert(head.size, node);
        }
        let value = tape.linear(params, merged, self.layout.value_weight, Some(self.layout.value_bias))?;
        Ok(TapeStep {
            logits,
            value,
            recurrent: new_recurrent,
            level_outputs,
            pre_activation,
            merged,
        })
    }

    /// One forward step from `obs` (`[1, side, side]`) and explicit recurrent input.
    pub fn forward(&mut self, obs: &Tensor, recurrent_in: &[LstmState]) -> Result<ForwardResult, ModelError> {
        if recurrent_in.len() != self.config.levels {
            return Err(ModelError::Usage(format!(
                "expected {} recurrent states, got {}",
                self.config.levels,
                recurrent_in.len()
            )));
        }
        let mut tape = Tape::new();
        let obs_node = tape.leaf(obs.clone());
        let rec: Vec<(NodeId, NodeId)> = recurrent_in
            .iter()
            .map(|st| (tape.leaf(st.hidden.clone()), tape.leaf(st.cell.clone())))
            .collect();
        let step = self.forward_on_tape(&mut tape, obs_node, &rec)?;
        let mut policies = BTreeMap::new();
        let mut logits = BTreeMap::new();
        for (&size, &node) in &step.logits {
            let z = tape.value(node).clone();
            policies.insert(size, nn::softmax(&z));
            logits.insert(size, z);
        }
        Ok(ForwardResult {
            policies,
            logits,
            value: tape.value(step.value).data()[0],
            new_recurrent: step
                .recurrent
                .iter()
                .map(|&(h, c)| LstmState {
                    hidden: tape.value(h).clone(),
                    cell: tape.value(c).clone(),
                })
                .collect(),
            level_activations: step.level_outputs.iter().map(|&a| tape.value(a).clone()).collect(),
            pre_activation: tape.value(step.pre_activation).clone(),
            merged: tape.value(step.merged).clone(),
        })
    }

    /// Forward from the network's own recurrent slots, advancing them.
    pub fn step(&mut self, obs: &Tensor) -> Result<ForwardResult, ModelError> {
        let recurrent = std::mem::take(&mut self.recurrent);
        let result = self.forward(obs, &recurrent);
        match &result {
            Ok(r) => self.recurrent = r.new_recurrent.clone(),
            Err(_) => self.recurrent = recurrent,
        }
        result
    }
}

/// Copies `src`'s parameters into `dst`.
pub fn copy_parameters(src: &GtnNetwork, dst: &mut GtnNetwork) -> Result<(), ModelError> {
    dst.copy_parameters_from(src)
}
