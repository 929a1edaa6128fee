//! Classifier zoo: STATENet and the GRU / TCN baselines behind one
//! [`Model`] wrapper with checkpoint I/O.

pub mod baselines;
pub mod statenet;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{GruConfig, TcnConfig};
pub use statenet::{gat_layer, spatial_fuse, statenet_forward, temporal_encode, StateNetConfig};

use crate::data::{EegWindow, Montage};
use crate::diff::checkpoint::{self, Dtype};
use crate::diff::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Statenet,
    Gru,
    Tcn,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Statenet => "statenet",
            Arch::Gru => "gru",
            Arch::Tcn => "tcn",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "statenet" => Ok(Arch::Statenet),
            "gru" => Ok(Arch::Gru),
            "tcn" => Ok(Arch::Tcn),
            _ => Err(Error::invalid(format!("unknown architecture `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    Statenet(StateNetConfig),
    Gru(GruConfig),
    Tcn(TcnConfig),
}

impl ModelConfig {
    pub fn default_for(arch: Arch) -> Self {
        match arch {
            Arch::Statenet => ModelConfig::Statenet(StateNetConfig::default()),
            Arch::Gru => ModelConfig::Gru(GruConfig::default()),
            Arch::Tcn => ModelConfig::Tcn(TcnConfig::default()),
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Statenet(_) => Arch::Statenet,
            ModelConfig::Gru(_) => Arch::Gru,
            ModelConfig::Tcn(_) => Arch::Tcn,
        }
    }

    /// Whether one parameter set accepts any channel count.
    pub fn montage_agnostic(&self) -> bool {
        matches!(self, ModelConfig::Statenet(_))
    }

    /// Fixes the input channel count of montage-bound architectures.
    pub fn with_channels(mut self, c: usize) -> Self {
        match &mut self {
            ModelConfig::Statenet(_) => {}
            ModelConfig::Gru(g) => g.channels = c,
            ModelConfig::Tcn(t) => t.channels = c,
        }
        self
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            ModelConfig::Statenet(c) => c.init_params(&mut rng),
            ModelConfig::Gru(c) => c.init_params(&mut rng),
            ModelConfig::Tcn(c) => c.init_params(&mut rng),
        }
    }

    /// Records the forward pass for one `C×L` window; returns the `1×1`
    /// probability node.
    pub fn forward_graph(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        match self {
            ModelConfig::Statenet(c) => statenet::forward_graph(g, c, x),
            ModelConfig::Gru(c) => c.forward_graph(g, x),
            ModelConfig::Tcn(c) => c.forward_graph(g, x),
        }
    }

    pub fn predict_with(&self, params: &ParamSet, x: &Tensor) -> Result<f64> {
        let mut g = Graph::new(params);
        let p = self.forward_graph(&mut g, x)?;
        Ok(g.value(p).data()[0])
    }
}

/// Anything that maps a `C×L` window to a seizure probability.
pub trait Predictor {
    fn predict(&self, x: &Tensor) -> Result<f64>;
}

/// `C×L` float64 copy of a window's samples.
pub fn window_tensor(w: &EegWindow) -> Tensor {
    let data = w.x.iter().map(|&v| f64::from(v)).collect();
    Tensor::new(vec![w.channels, w.len], data).expect("window shape is consistent")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    model: ModelConfig,
    #[serde(default)]
    montage: Option<Montage>,
    #[serde(default)]
    train_neonates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Montage the model was trained on, if known.
    pub montage: Option<Montage>,
    pub train_neonates: Vec<String>,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = config.init_params(seed)?;
        Ok(Self {
            config,
            params,
            montage: None,
            train_neonates: Vec::new(),
        })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch()
    }

    pub fn predict_window(&self, w: &EegWindow) -> Result<f64> {
        self.predict(&window_tensor(w))
    }

    pub fn predict_windows(&self, ws: &[EegWindow]) -> Result<Vec<f64>> {
        ws.iter().map(|w| self.predict_window(w)).collect()
    }

    /// Fails with [`Error::NotTransferable`] unless the architecture accepts
    /// any channel count.
    pub fn ensure_transferable(&self) -> Result<()> {
        if self.config.montage_agnostic() {
            Ok(())
        } else {
            Err(Error::NotTransferable(self.arch().to_string()))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = ModelMeta {
            model: self.config.clone(),
            montage: self.montage.clone(),
            train_neonates: self.train_neonates.clone(),
        };
        let meta = serde_json::to_value(meta).expect("model meta serializes");
        checkpoint::encode(&self.params, &meta, Dtype::F64)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, meta) = checkpoint::decode(bytes)?;
        let meta: ModelMeta =
            serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("bad model meta: {e}")))?;
        let model = Self {
            config: meta.model,
            params,
            montage: meta.montage,
            train_neonates: meta.train_neonates,
        };
        model.check_params()?;
        Ok(model)
    }

    /// Parameter names and shapes must match a fresh initialisation.
    fn check_params(&self) -> Result<()> {
        let fresh = self.config.init_params(0)?;
        if fresh.len() != self.params.len() {
            return Err(Error::Checkpoint("parameter count does not match the architecture".into()));
        }
        for p in fresh.iter() {
            match self.params.by_name(&p.name) {
                Some(q) if q.value.shape() == p.value.shape() => {}
                _ => return Err(Error::Checkpoint(format!("parameter `{}` missing or misshaped", p.name))),
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl Predictor for Model {
    fn predict(&self, x: &Tensor) -> Result<f64> {
        self.config.predict_with(&self.params, x)
    }
}
