//! The four-channel SWH network: DDM branch, AP branch, fusion head.

pub mod ap;
pub mod checkpoint;
pub mod config;
pub mod ddm;
pub mod head;
pub mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use ap::ApMatrix;
pub use config::{HeadInput, ModelConfig, Strategy, CHANNELS, DDM_TYPES};
pub use ddm::DdmStack;
pub use weights::{Bound, ModelWeights};

/// Forward-pass mode. Dropout draws from the context's own seeded stream.
#[derive(Debug)]
pub struct Ctx {
    pub train: bool,
    rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var> {
        tape.dropout(x, p, self.train, &mut self.rng)
    }
}

/// One model-ready sample: standardized DDMs and APs for the four channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub ddm: DdmStack,
    pub ap: ApMatrix,
}

/// All parameter handles for one tape.
#[derive(Clone, Debug)]
pub struct NetVars {
    pub encoder: ddm::EncoderVars,
    pub ap: ap::ApVars,
    pub head: head::HeadVars,
}

impl NetVars {
    pub fn bind(weights: &ModelWeights, tape: &mut Tape) -> Result<Self> {
        let b = weights.bind(tape)?;
        let cfg = weights.config();
        Ok(Self {
            encoder: ddm::EncoderVars::bind(&b, cfg)?,
            ap: ap::ApVars::bind(&b, cfg)?,
            head: head::HeadVars::bind(&b, cfg)?,
        })
    }
}

fn check_input(input: &ModelInput, cfg: &ModelConfig) -> Result<()> {
    if input.ddm.width() != cfg.ddm_width || input.ddm.height() != cfg.ddm_height {
        return Err(Error::Config(format!(
            "DDM geometry {}×{} does not match model {}×{}",
            input.ddm.width(),
            input.ddm.height(),
            cfg.ddm_width,
            cfg.ddm_height
        )));
    }
    if input.ap.columns() != cfg.ap_count() {
        return Err(Error::Config(format!(
            "sample has {} AP columns, model expects {} (use_wind = {})",
            input.ap.columns(),
            cfg.ap_count(),
            cfg.use_wind
        )));
    }
    Ok(())
}

/// Forward pass for one sample; returns the length-4 prediction vector.
pub fn forward(tape: &mut Tape, ctx: &mut Ctx, vars: &NetVars, cfg: &ModelConfig, input: &ModelInput) -> Result<Var> {
    check_input(input, cfg)?;
    let stack = tape.constant(input.ddm.tensor().clone())?;
    let a = tape.constant(input.ap.tensor().clone())?;
    let d_prime = ddm::encoder_forward(tape, ctx, stack, &vars.encoder, cfg)?;
    let ap_out = ap::ap_forward(tape, a, &vars.ap)?;
    let fused = head::fuse(tape, d_prime, ap_out.gated, cfg)?;
    head::head_forward(tape, fused, &vars.head)
}

/// Mean Huber loss over a batch, recorded on `tape`.
pub fn batch_loss(
    tape: &mut Tape,
    ctx: &mut Ctx,
    vars: &NetVars,
    cfg: &ModelConfig,
    inputs: &[&ModelInput],
    targets: &[[f64; CHANNELS]],
    delta: f64,
) -> Result<Var> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Contract(format!(
            "batch of {} inputs and {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let preds = inputs
        .iter()
        .map(|x| forward(tape, ctx, vars, cfg, x))
        .collect::<Result<Vec<_>>>()?;
    let all = tape.concat(&preds, 0)?;
    let flat: Vec<f64> = targets.iter().flatten().copied().collect();
    let h = tape.huber(all, &flat, delta)?;
    tape.mean(h)
}

/// Eval-mode prediction for one sample.
pub fn predict(weights: &ModelWeights, input: &ModelInput) -> Result<[f64; CHANNELS]> {
    let mut tape = Tape::new();
    let vars = NetVars::bind(weights, &mut tape)?;
    let y = forward(&mut tape, &mut Ctx::eval(), &vars, weights.config(), input)?;
    let d = tape.value(y).data();
    Ok([d[0], d[1], d[2], d[3]])
}

impl ModelInput {
    pub fn from_tensors(ddm: Tensor, ap: Tensor) -> Result<Self> {
        Ok(Self {
            ddm: DdmStack::new(ddm)?,
            ap: ApMatrix::new(ap)?,
        })
    }
}
