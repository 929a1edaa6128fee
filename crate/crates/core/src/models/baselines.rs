//! Montage-fixed baselines: channels are input features, so the channel
//! count is frozen at initialisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

fn check_channels(x: &Tensor, expected: usize, arch: &str) -> Result<usize> {
    if x.shape().len() != 2 || x.dim(1) == 0 {
        return Err(Error::shape(format!("{arch}: expected a C×L window, got {:?}", x.shape())));
    }
    if x.dim(0) != expected {
        return Err(Error::shape(format!(
            "{arch} was built for {expected} channels, got {}",
            x.dim(0)
        )));
    }
    Ok(x.dim(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GruConfig {
    /// Input channel count; fixed once parameters exist.
    pub channels: usize,
    pub hidden_dim: usize,
    pub input_scale: f64,
}

impl Default for GruConfig {
    fn default() -> Self {
        Self {
            channels: 18,
            hidden_dim: 16,
            input_scale: 0.02,
        }
    }
}

impl GruConfig {
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        let (c, h) = (self.channels, self.hidden_dim);
        if c == 0 || h == 0 {
            return Err(Error::invalid("gru: channels and hidden_dim must be positive"));
        }
        let mut ps = ParamSet::new();
        ps.insert("gru.w_x", ParamSet::glorot(rng, &[3 * h, c], c, h))?;
        ps.insert("gru.w_h", ParamSet::glorot(rng, &[3 * h, h], h, h))?;
        ps.insert("gru.bias", Tensor::zeros(&[3 * h]))?;
        ps.insert("readout.weight", ParamSet::glorot(rng, &[1, h], h, 1))?;
        ps.insert("readout.bias", Tensor::zeros(&[1]))?;
        Ok(ps)
    }

    pub fn forward_graph(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        check_channels(x, self.channels, "gru")?;
        let mut xs = x.clone();
        xs.scale(self.input_scale);
        let xv = g.input(xs);
        let (wx, wh, b) = (g.param_named("gru.w_x")?, g.param_named("gru.w_h")?, g.param_named("gru.bias")?);
        let h = g.gru(xv, wx, wh, b)?;
        let h = g.reshape(h, &[1, self.hidden_dim])?;
        let (w, b) = (g.param_named("readout.weight")?, g.param_named("readout.bias")?);
        let z = g.linear(h, w, Some(b))?;
        Ok(g.sigmoid(z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcnConfig {
    pub channels: usize,
    pub layers: usize,
    pub kernel_size: usize,
    pub hidden_dim: usize,
    pub residual: bool,
    pub input_scale: f64,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            channels: 18,
            layers: 5,
            kernel_size: 3,
            hidden_dim: 32,
            residual: false,
            input_scale: 0.1,
        }
    }
}

impl TcnConfig {
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        let (c, d, k) = (self.channels, self.hidden_dim, self.kernel_size);
        if c == 0 || d == 0 || k == 0 || self.layers == 0 {
            return Err(Error::invalid("tcn: dimensions must be positive"));
        }
        let mut ps = ParamSet::new();
        for l in 1..=self.layers {
            let cin = if l == 1 { c } else { d };
            ps.insert(format!("temporal.conv{l}.weight"), ParamSet::glorot(rng, &[d, cin, k], cin * k, d * k))?;
            ps.insert(format!("temporal.conv{l}.bias"), Tensor::zeros(&[d]))?;
        }
        ps.insert("readout.weight", ParamSet::glorot(rng, &[1, d], d, 1))?;
        ps.insert("readout.bias", Tensor::zeros(&[1]))?;
        Ok(ps)
    }

    pub fn forward_graph(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        let l = check_channels(x, self.channels, "tcn")?;
        let mut xs = x.clone().reshape(&[1, self.channels, l])?;
        xs.scale(self.input_scale);
        let xv = g.input(xs);
        let layers = super::statenet::conv_layers(g, self.layers)?;
        let pooled = g.tcn_mean(xv, &layers, self.residual)?;
        let (w, b) = (g.param_named("readout.weight")?, g.param_named("readout.bias")?);
        let z = g.linear(pooled, w, Some(b))?;
        Ok(g.sigmoid(z))
    }
}
