//! Auxiliary-parameter branch: pointwise embedding, spatial and channel
//! sigmoid gates, and elementwise gating of the raw AP matrix.

use super::config::{ModelConfig, Strategy, BASE_AP_COUNT, CHANNELS};
use super::ddm::DenseVars;
use super::weights::Bound;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Column order of the AP matrix. `wind_speed` is appended only when enabled.
pub const AP_COLUMNS: [&str; BASE_AP_COUNT + 1] = [
    "ddm_nbrcs",
    "ddm_les",
    "ddm_snr",
    "gps_eirp",
    "sp_rx_gain",
    "sp_inc_angle",
    "sp_lat",
    "sp_lon",
    "rcg",
    "wind_speed",
];

/// Standardized `4 × K_ap` auxiliary parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ApMatrix(Tensor);

impl ApMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        match values.shape() {
            [CHANNELS, k] if *k == BASE_AP_COUNT || *k == BASE_AP_COUNT + 1 => {}
            s => {
                return Err(Error::dim(
                    "ap_matrix",
                    format!("expected {CHANNELS}×{BASE_AP_COUNT} or {CHANNELS}×{}, got {s:?}", BASE_AP_COUNT + 1),
                ))
            }
        }
        if !values.is_finite() {
            return Err(Error::Contract("AP matrix contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn columns(&self) -> usize {
        self.0.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub enum EmbedVars {
    /// Full `8 × 4` pointwise kernel.
    Dense { kernel: Var, bias: Var },
    /// Out-channels `c` and `c + 4` read only input channel `c`.
    Diagonal { scale: Var, bias: Var },
}

/// Up-projection then down-projection, as in `P2(P1(x))`.
#[derive(Clone, Debug)]
pub struct GateVars {
    pub up: DenseVars,
    pub down: DenseVars,
}

#[derive(Clone, Debug)]
pub enum ChannelGateVars {
    Dense(GateVars),
    PerChannel(Vec<GateVars>),
}

#[derive(Clone, Debug)]
pub struct ApVars {
    pub embed: EmbedVars,
    pub spatial: GateVars,
    pub channel: ChannelGateVars,
}

impl ApVars {
    pub fn bind(b: &Bound, cfg: &ModelConfig) -> Result<Self> {
        let gate = |up: &str, down: &str| -> Result<GateVars> {
            Ok(GateVars {
                up: DenseVars::bind(b, up)?,
                down: DenseVars::bind(b, down)?,
            })
        };
        let (embed, channel) = match cfg.strategy {
            Strategy::CD => (
                EmbedVars::Dense {
                    kernel: b.get("ap.embed.kernel")?,
                    bias: b.get("ap.embed.bias")?,
                },
                ChannelGateVars::Dense(gate("ap.channel.p3", "ap.channel.p4")?),
            ),
            Strategy::CI => (
                EmbedVars::Diagonal {
                    scale: b.get("ap.embed.scale")?,
                    bias: b.get("ap.embed.bias")?,
                },
                ChannelGateVars::PerChannel(
                    (0..CHANNELS)
                        .map(|c| gate(&format!("ap.channel.ch{c}.p3"), &format!("ap.channel.ch{c}.p4")))
                        .collect::<Result<_>>()?,
                ),
            ),
        };
        Ok(Self {
            embed,
            spatial: gate("ap.spatial.p1", "ap.spatial.p2")?,
            channel,
        })
    }
}

/// Pointwise embedding of `A` to eight channels, split into `(A1, A2)`.
pub fn ap_embed(tape: &mut Tape, a: Var, vars: &EmbedVars) -> Result<(Var, Var)> {
    let embedded = match vars {
        EmbedVars::Dense { kernel, bias } => tape.conv1d_embed(a, *kernel, *bias)?,
        EmbedVars::Diagonal { scale, bias } => {
            let doubled = tape.concat(&[a, a], 0)?;
            let scaled = tape.mul(doubled, *scale)?;
            tape.add(scaled, *bias)?
        }
    };
    let halves = tape.split(embedded, 0, 2)?;
    Ok((halves[0], halves[1]))
}

/// `sigmoid(P2(P1(x)))` applied to each row of `x`.
pub fn gate_rows(tape: &mut Tape, x: Var, gate: &GateVars) -> Result<Var> {
    let up = gate.up.apply(tape, x)?;
    let down = gate.down.apply(tape, up)?;
    tape.sigmoid(down)
}

/// Spatial attention weights `W_A1` from `A1` (projections along the AP axis).
pub fn spatial_gate(tape: &mut Tape, a1: Var, gate: &GateVars) -> Result<Var> {
    gate_rows(tape, a1, gate)
}

/// Channel attention weights `W_A2`: transpose, project along the channel axis, transpose back.
pub fn channel_gate(tape: &mut Tape, a2: Var, vars: &ChannelGateVars) -> Result<Var> {
    let t = tape.transpose(a2)?;
    let gated = match vars {
        ChannelGateVars::Dense(g) => gate_rows(tape, t, g)?,
        ChannelGateVars::PerChannel(gates) => {
            let cols = tape.split(t, 1, CHANNELS)?;
            let outs = cols
                .into_iter()
                .zip(gates)
                .map(|(c, g)| gate_rows(tape, c, g))
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&outs, 1)?
        }
    };
    tape.transpose(gated)
}

/// `A' = A ⊗ W_A1 ⊗ W_A2`.
pub fn apply_gates(tape: &mut Tape, a: Var, w_spatial: Var, w_channel: Var) -> Result<Var> {
    let once = tape.mul(a, w_spatial)?;
    tape.mul(once, w_channel)
}

#[derive(Clone, Debug)]
pub struct ApOutput {
    pub gated: Var,
    pub w_spatial: Var,
    pub w_channel: Var,
}

pub fn ap_forward(tape: &mut Tape, a: Var, vars: &ApVars) -> Result<ApOutput> {
    let (a1, a2) = ap_embed(tape, a, &vars.embed)?;
    let w_spatial = spatial_gate(tape, a1, &vars.spatial)?;
    let w_channel = channel_gate(tape, a2, &vars.channel)?;
    let gated = apply_gates(tape, a, w_spatial, w_channel)?;
    Ok(ApOutput {
        gated,
        w_spatial,
        w_channel,
    })
}
