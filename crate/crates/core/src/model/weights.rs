use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, Strategy, CHANNELS, DDM_TYPES};
use crate::autodiff::{ParamSink, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Normal(f64),
    Ones,
    Zeros,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn slot(name: impl Into<String>, shape: &[usize], init: Init) -> Slot {
    Slot {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn dense(name: &str, fan_in: usize, fan_out: usize) -> [Slot; 2] {
    [
        slot(format!("{name}.w"), &[fan_in, fan_out], Init::Xavier { fan_in, fan_out }),
        slot(format!("{name}.b"), &[fan_out], Init::Zeros),
    ]
}

/// Every learnable tensor of the network, in initialization order.
fn layout(cfg: &ModelConfig) -> Vec<Slot> {
    let c = CHANNELS;
    let (p, e) = (cfg.patch_size, cfg.embed_dim);
    let mut s = Vec::new();
    for t in 0..DDM_TYPES {
        s.push(slot(
            format!("ddm.embed.kernel{t}"),
            &[e, 1, p, p],
            Init::Xavier { fan_in: p * p, fan_out: e * p * p },
        ));
        s.push(slot(format!("ddm.embed.bias{t}"), &[e], Init::Zeros));
    }
    s.push(slot("ddm.embed.global", &[e], Init::Normal(0.02)));

    for l in 0..cfg.n_layers {
        let pre = format!("ddm.layer{l}");
        for proj in ["q_scale", "k_scale", "v_scale"] {
            s.push(slot(format!("{pre}.attn.{proj}"), &[c], Init::Ones));
        }
        match cfg.strategy {
            Strategy::CD => s.push(slot(format!("{pre}.attn.w_o"), &[c, c], Init::Xavier { fan_in: c, fan_out: c })),
            Strategy::CI => s.push(slot(format!("{pre}.attn.w_o"), &[c], Init::Ones)),
        }
        for norm in ["norm1", "norm2"] {
            s.push(slot(format!("{pre}.{norm}.gamma"), &[c], Init::Ones));
            s.push(slot(format!("{pre}.{norm}.beta"), &[c], Init::Zeros));
        }
        match cfg.strategy {
            Strategy::CD => {
                s.extend(dense(&format!("{pre}.ffn.l1"), c, cfg.d_ff));
                s.extend(dense(&format!("{pre}.ffn.l2"), cfg.d_ff, c));
            }
            Strategy::CI => {
                let q = cfg.d_ff / c;
                for ch in 0..c {
                    s.extend(dense(&format!("{pre}.ffn.ch{ch}.l1"), 1, q));
                    s.extend(dense(&format!("{pre}.ffn.ch{ch}.l2"), q, 1));
                }
            }
        }
    }

    let k = cfg.ap_count();
    match cfg.strategy {
        Strategy::CD => {
            s.push(slot("ap.embed.kernel", &[2 * c, c], Init::Xavier { fan_in: c, fan_out: 2 * c }));
            s.push(slot("ap.embed.bias", &[2 * c], Init::Zeros));
        }
        Strategy::CI => {
            s.push(slot("ap.embed.scale", &[2 * c, 1], Init::Ones));
            s.push(slot("ap.embed.bias", &[2 * c, 1], Init::Zeros));
        }
    }
    s.extend(dense("ap.spatial.p1", k, cfg.spatial_expansion * k));
    s.extend(dense("ap.spatial.p2", cfg.spatial_expansion * k, k));
    match cfg.strategy {
        Strategy::CD => {
            s.extend(dense("ap.channel.p3", c, cfg.channel_hidden));
            s.extend(dense("ap.channel.p4", cfg.channel_hidden, c));
        }
        Strategy::CI => {
            let q = cfg.channel_hidden / c;
            for ch in 0..c {
                s.extend(dense(&format!("ap.channel.ch{ch}.p3"), 1, q));
                s.extend(dense(&format!("ap.channel.ch{ch}.p4"), q, 1));
            }
        }
    }

    let mut width = cfg.fused_width();
    for (i, w) in cfg.head_widths().into_iter().enumerate() {
        s.extend(dense(&format!("head.hidden{i}"), width, w));
        width = w;
    }
    s.extend(dense("head.out", width, cfg.head_outputs()));
    s
}

fn draw(init: Init, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match init {
        Init::Xavier { fan_in, fan_out } => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        }
        Init::Normal(sd) => {
            let normal = Normal::new(0.0, sd).expect("positive sd");
            (0..n).map(|_| normal.sample(rng)).collect()
        }
        Init::Ones => vec![1.0; n],
        Init::Zeros => vec![0.0; n],
    }
}

/// All learnable parameters of the network keyed by name, with the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    params: BTreeMap<String, Parameter>,
}

impl ModelWeights {
    /// Seeded initialization: Xavier-uniform for dense maps and conv kernels,
    /// ones/zeros for norms, diagonal projections and biases, `N(0, 0.02²)` for the global token.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = BTreeMap::new();
        for s in layout(config) {
            let n = s.shape.iter().product();
            let t = Tensor::new(s.shape, draw(s.init, n, &mut rng))?;
            params.insert(s.name.clone(), Parameter::new(s.name, t));
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Rebuilds weights from stored tensors, checking names and shapes against the config.
    pub fn from_tensors(config: &ModelConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for s in layout(config) {
            let t = tensors
                .remove(&s.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, config expects {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            params.insert(s.name.clone(), Parameter::new(s.name, t));
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Config(format!("checkpoint has unexpected parameter {extra}")));
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    /// Total element count over all parameters.
    pub fn count_params(&self) -> usize {
        self.params.values().map(Parameter::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Binds every parameter onto `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self
            .params
            .values()
            .map(|p| Ok((p.name.clone(), tape.param(p)?)))
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }
}

impl ParamSink for ModelWeights {
    fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }
}

/// Parameter handles on one tape.
#[derive(Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_deterministic() {
        let cfg = ModelConfig::toy(Strategy::CD);
        let a = ModelWeights::init(&cfg).unwrap();
        let b = ModelWeights::init(&cfg).unwrap();
        assert_eq!(a, b);
        let c = ModelWeights::init(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn names_unique_and_shapes_round_trip() {
        let cfg = ModelConfig::toy(Strategy::CI);
        let names: Vec<String> = layout(&cfg).into_iter().map(|s| s.name).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());

        let w = ModelWeights::init(&cfg).unwrap();
        let tensors = w.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
        let back = ModelWeights::from_tensors(&cfg, tensors).unwrap();
        assert_eq!(back.count_params(), w.count_params());
    }

    #[test]
    fn cd_has_more_parameters_than_ci() {
        let ci = ModelWeights::init(&ModelConfig::toy(Strategy::CI)).unwrap();
        let cd = ModelWeights::init(&ModelConfig::toy(Strategy::CD)).unwrap();
        assert!(cd.count_params() > ci.count_params());
    }

    #[test]
    fn dense_layer_parameter_count() {
        assert_eq!(dense("x", 4, 4).iter().map(|s| s.shape.iter().product::<usize>()).sum::<usize>(), 20);
    }
}
