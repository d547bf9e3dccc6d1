//! Feature fusion, the task MLP, and the Huber objective.

use super::config::{HeadInput, ModelConfig, Strategy, CHANNELS};
use super::ddm::DenseVars;
use super::weights::Bound;
use crate::autodiff::{huber_scalar, Tape, Var};
use crate::error::{Error, Result};

/// Concatenates encoder and AP features per channel.
///
/// CI yields a `4 × (M' + K)` matrix (one row per channel); CD yields the
/// four rows laid end to end as a `1 × 4(M' + K)` row vector.
pub fn fuse(tape: &mut Tape, d_prime: Var, a_prime: Var, cfg: &ModelConfig) -> Result<Var> {
    let (ds, aps) = (tape.shape(d_prime).to_vec(), tape.shape(a_prime).to_vec());
    if ds.len() != 2 || ds[1] != CHANNELS || aps.len() != 2 || aps[0] != CHANNELS {
        return Err(Error::dim("fuse", format!("D' {ds:?} and A' {aps:?} are not M×4 and 4×K")));
    }
    let tokens = match cfg.head_input {
        HeadInput::Full => d_prime,
        HeadInput::GlobalOnly => tape.slice(d_prime, 0, 0, cfg.embed_dim)?,
    };
    let dt = tape.transpose(tokens)?;
    let rows = tape.concat(&[dt, a_prime], 1)?;
    match cfg.strategy {
        Strategy::CI => Ok(rows),
        Strategy::CD => {
            let n = tape.value(rows).numel();
            tape.reshape(rows, &[1, n])
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub hidden: Vec<DenseVars>,
    pub out: DenseVars,
}

impl HeadVars {
    pub fn bind(b: &Bound, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            hidden: (0..cfg.head_layers)
                .map(|i| DenseVars::bind(b, &format!("head.hidden{i}")))
                .collect::<Result<_>>()?,
            out: DenseVars::bind(b, "head.out")?,
        })
    }
}

/// MLP with ReLU hidden layers. Under CI the same network runs on each
/// channel's row; under CD one network emits all four predictions.
/// Returns a length-4 vector of SWH predictions in meters.
pub fn head_forward(tape: &mut Tape, fused: Var, vars: &HeadVars) -> Result<Var> {
    let mut x = fused;
    for layer in &vars.hidden {
        let h = layer.apply(tape, x)?;
        x = tape.relu(h)?;
    }
    let y = vars.out.apply(tape, x)?;
    if tape.value(y).numel() != CHANNELS {
        return Err(Error::dim("head_forward", format!("head produced shape {:?}", tape.shape(y))));
    }
    tape.reshape(y, &[CHANNELS])
}

/// `½e²` for `|e| ≤ δ`, else `δ|e| − ½δ²`, with `e = y − ŷ`.
pub fn huber(y_hat: f64, y: f64, delta: f64) -> Result<f64> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Config(format!("huber delta must be positive, got {delta}")));
    }
    Ok(huber_scalar(y - y_hat, delta))
}

/// Mean Huber loss over every (sample, channel) pair.
pub fn batch_loss(pred: &[[f64; CHANNELS]], refs: &[[f64; CHANNELS]], delta: f64) -> Result<f64> {
    if pred.len() != refs.len() {
        return Err(Error::Contract(format!("{} predictions vs {} references", pred.len(), refs.len())));
    }
    if pred.is_empty() {
        return Err(Error::Contract("batch_loss of an empty batch".into()));
    }
    let mut total = 0.0;
    for (p, r) in pred.iter().zip(refs) {
        for c in 0..CHANNELS {
            total += huber(p[c], r[c], delta)?;
        }
    }
    Ok(total / (pred.len() * CHANNELS) as f64)
}
