use super::tape::{Tape, Var};
use crate::error::{Error, Result};

impl Tape {
    /// `x · w + b` for `x: [m×k]`, `w: [k×n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Patch embedding by a stride-`P` convolution with zero auto-padding.
    ///
    /// `x` is `1×W×H` (or `W×H`), `kernel` is `D_e×1×P×P`, `bias` is `[D_e]`.
    /// Returns `D_e × N` with `N = ceil(W/P)·ceil(H/P)`.
    pub fn conv_patchify(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let ks = self.shape(kernel).to_vec();
        let (embed, patch) = match ks.as_slice() {
            [d, 1, p, q] if p == q => (*d, *p),
            _ => {
                return Err(Error::dim(
                    "conv_patchify",
                    format!("kernel must be D_e×1×P×P, got {ks:?}"),
                ))
            }
        };
        if self.shape(bias) != [embed] {
            return Err(Error::dim("conv_patchify", format!("bias must have shape [{embed}]")));
        }
        let patches = self.unfold_patches(x, patch)?;
        let k2 = self.reshape(kernel, &[embed, patch * patch])?;
        let kt = self.transpose(k2)?;
        let tokens = self.linear(patches, kt, bias)?;
        self.transpose(tokens)
    }

    /// Pointwise 1D convolution: `a: [C_in×L]`, `kernel: [C_out×C_in]` (or `C_out×C_in×1`),
    /// `bias: [C_out]`. Returns `C_out × L`.
    pub fn conv1d_embed(&mut self, a: Var, kernel: Var, bias: Var) -> Result<Var> {
        let ks = self.shape(kernel).to_vec();
        let (c_out, c_in) = match ks.as_slice() {
            [o, i] | [o, i, 1] => (*o, *i),
            _ => {
                return Err(Error::dim(
                    "conv1d_embed",
                    format!("kernel must be C_out×C_in with width 1, got {ks:?}"),
                ))
            }
        };
        let asz = self.shape(a).to_vec();
        if asz.len() != 2 || asz[0] != c_in {
            return Err(Error::dim("conv1d_embed", format!("input {asz:?} does not have {c_in} channels")));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::dim("conv1d_embed", format!("bias must have shape [{c_out}]")));
        }
        let k = self.reshape(kernel, &[c_out, c_in])?;
        let y = self.matmul(k, a)?;
        let b = self.reshape(bias, &[c_out, 1])?;
        self.add(y, b)
    }
}
