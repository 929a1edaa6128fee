//! Channel-shared dilated temporal encoder, fully connected graph attention
//! over channels, mean readout and a three-layer MLP head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::kernels::{matmul, matmul_nt, softmax_in_place};
use crate::diff::{Graph, ParamSet, TcnLayer, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateNetConfig {
    pub tcn_layers: usize,
    pub kernel_size: usize,
    /// Feature width `d` of the temporal encoder and attention layers.
    pub hidden_dim: usize,
    pub gat_layers: usize,
    pub mlp_hidden: usize,
    /// Adds an identity skip around temporal layers 2.. when set.
    pub residual: bool,
    /// Multiplies raw samples (µV) before the first layer.
    pub input_scale: f64,
}

impl Default for StateNetConfig {
    fn default() -> Self {
        Self {
            tcn_layers: 5,
            kernel_size: 3,
            hidden_dim: 32,
            gat_layers: 2,
            mlp_hidden: 16,
            residual: false,
            input_scale: 0.1,
        }
    }
}

impl StateNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tcn_layers == 0 || self.kernel_size == 0 || self.hidden_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("statenet: layer counts and widths must be positive"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::invalid("statenet: input_scale must be positive"));
        }
        Ok(())
    }

    /// `1 + (k−1)·Σ_l 2^(l−1)` samples.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * ((1usize << self.tcn_layers) - 1)
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        self.validate()?;
        let (d, k, h) = (self.hidden_dim, self.kernel_size, self.mlp_hidden);
        let mut ps = ParamSet::new();
        for l in 1..=self.tcn_layers {
            let cin = if l == 1 { 1 } else { d };
            ps.insert(format!("temporal.conv{l}.weight"), ParamSet::glorot(rng, &[d, cin, k], cin * k, d * k))?;
            ps.insert(format!("temporal.conv{l}.bias"), Tensor::zeros(&[d]))?;
        }
        for l in 1..=self.gat_layers {
            ps.insert(format!("gat{l}.weight"), ParamSet::glorot(rng, &[d, d], d, d))?;
        }
        for (i, (o, inp)) in [(h, d), (h, h), (1, h)].into_iter().enumerate() {
            ps.insert(format!("head.fc{}.weight", i + 1), ParamSet::glorot(rng, &[o, inp], inp, o))?;
            ps.insert(format!("head.fc{}.bias", i + 1), Tensor::zeros(&[o]))?;
        }
        Ok(ps)
    }
}

fn check_input(x: &Tensor) -> Result<(usize, usize)> {
    if x.shape().len() != 2 {
        return Err(Error::shape(format!("expected a C×L window, got {:?}", x.shape())));
    }
    let (c, l) = (x.dim(0), x.dim(1));
    if c == 0 || l == 0 {
        return Err(Error::shape("window has no channels or no samples"));
    }
    Ok((c, l))
}

/// Parameters `temporal.conv{l}.{weight,bias}` with dilation `2^(l−1)`.
pub(crate) fn conv_layers(g: &mut Graph<'_>, n: usize) -> Result<Vec<TcnLayer>> {
    (1..=n)
        .map(|l| {
            Ok(TcnLayer {
                w: g.param_named(&format!("temporal.conv{l}.weight"))?,
                b: g.param_named(&format!("temporal.conv{l}.bias"))?,
                dilation: 1 << (l - 1),
            })
        })
        .collect()
}

/// Records the temporal encoder on `g`; returns the `C×d` channel embeddings.
pub fn encode_graph(g: &mut Graph<'_>, cfg: &StateNetConfig, x: &Tensor) -> Result<Var> {
    let (c, l) = check_input(x)?;
    let mut scaled = x.clone().reshape(&[c, 1, l])?;
    scaled.scale(cfg.input_scale);
    let xv = g.input(scaled);
    let layers = conv_layers(g, cfg.tcn_layers)?;
    g.tcn_mean(xv, &layers, cfg.residual)
}

/// Records attention fusion and the head; returns the `1×1` probability.
pub fn fuse_graph(g: &mut Graph<'_>, cfg: &StateNetConfig, h: Var) -> Result<Var> {
    let mut m = h;
    for layer in 1..=cfg.gat_layers {
        let w = g.param_named(&format!("gat{layer}.weight"))?;
        let z = g.linear(m, w, None)?;
        let scores = g.matmul_nt(z, z)?;
        let alpha = g.softmax_rows(scores)?;
        m = g.matmul(alpha, z)?;
    }
    let pooled = g.mean_rows(m)?;
    let d = g.value(pooled).len();
    let mut a = g.reshape(pooled, &[1, d])?;
    for i in 1..=3 {
        let w = g.param_named(&format!("head.fc{i}.weight"))?;
        let b = g.param_named(&format!("head.fc{i}.bias"))?;
        a = g.linear(a, w, Some(b))?;
        if i < 3 {
            a = g.relu(a);
        }
    }
    Ok(g.sigmoid(a))
}

pub fn forward_graph(g: &mut Graph<'_>, cfg: &StateNetConfig, x: &Tensor) -> Result<Var> {
    let h = encode_graph(g, cfg, x)?;
    fuse_graph(g, cfg, h)
}

/// Per-channel embeddings `C×d`; row `c` depends only on channel `c`.
pub fn temporal_encode(x: &Tensor, params: &ParamSet, cfg: &StateNetConfig) -> Result<Tensor> {
    let mut g = Graph::new(params);
    let h = encode_graph(&mut g, cfg, x)?;
    Ok(g.value(h).clone())
}

/// Probability from channel embeddings `C×d`.
pub fn spatial_fuse(h: &Tensor, params: &ParamSet, cfg: &StateNetConfig) -> Result<f64> {
    if h.shape().len() != 2 || h.dim(0) == 0 || h.dim(1) != cfg.hidden_dim {
        return Err(Error::shape(format!("spatial_fuse: embeddings {:?}", h.shape())));
    }
    let mut g = Graph::new(params);
    let hv = g.input(h.clone());
    let p = fuse_graph(&mut g, cfg, hv)?;
    Ok(g.value(p).data()[0])
}

pub fn statenet_forward(x: &Tensor, params: &ParamSet, cfg: &StateNetConfig) -> Result<f64> {
    let mut g = Graph::new(params);
    let p = forward_graph(&mut g, cfg, x)?;
    Ok(g.value(p).data()[0])
}

/// One attention layer on `m: C×d` with `w: d×d`. Returns `(m', α)` where
/// `α[i][j] ∝ exp(⟨W m_i, W m_j⟩)` and `m'_i = Σ_j α[i][j] · W m_j`.
pub fn gat_layer(m: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor)> {
    if m.shape().len() != 2 || w.shape().len() != 2 || w.dim(1) != m.dim(1) || m.dim(0) == 0 {
        return Err(Error::shape(format!("gat_layer: m {:?}, W {:?}", m.shape(), w.shape())));
    }
    let (c, d, out) = (m.dim(0), m.dim(1), w.dim(0));
    let z = matmul_nt(m.data(), w.data(), c, d, out);
    let mut alpha = matmul_nt(&z, &z, c, out, c);
    for row in alpha.chunks_exact_mut(c) {
        softmax_in_place(row);
    }
    let next = matmul(&alpha, &z, c, c, out);
    Ok((Tensor::new(vec![c, out], next)?, Tensor::new(vec![c, c], alpha)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> StateNetConfig {
        StateNetConfig {
            tcn_layers: 3,
            hidden_dim: 4,
            mlp_hidden: 5,
            ..Default::default()
        }
    }

    fn random_x(rng: &mut ChaCha8Rng, c: usize, l: usize) -> Tensor {
        Tensor::new(vec![c, l], (0..c * l).map(|_| rng.random_range(-40.0..40.0)).collect()).unwrap()
    }

    #[test]
    fn receptive_field_formula() {
        assert_eq!(StateNetConfig::default().receptive_field(), 63);
        assert_eq!(small().receptive_field(), 15);
    }

    #[test]
    fn equal_channels_equal_rows_and_channel_independence() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = cfg.init_params(&mut rng).unwrap();
        let x = random_x(&mut rng, 5, 50);
        let mut dup = x.data().to_vec();
        dup[50..100].copy_from_slice(&x.data()[..50]);
        let h = temporal_encode(&Tensor::new(vec![5, 50], dup).unwrap(), &ps, &cfg).unwrap();
        assert_eq!(h.row(0), h.row(1));
        let full = temporal_encode(&x, &ps, &cfg).unwrap();
        let one = temporal_encode(&Tensor::new(vec![1, 50], x.row(3).to_vec()).unwrap(), &ps, &cfg).unwrap();
        assert_eq!(full.row(3), one.row(0));
    }

    #[test]
    fn zero_input_and_biases_encode_to_zero() {
        let cfg = small();
        let ps = cfg.init_params(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let h = temporal_encode(&Tensor::zeros(&[3, 40]), &ps, &cfg).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gat_single_node_and_uniform() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, -0.5, 0.25]).unwrap();
        let m = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let (next, a) = gat_layer(&m, &w).unwrap();
        assert_eq!(a.data(), &[1.0]);
        let wm = [1.0 * 0.3 + 2.0 * -0.7, -0.5 * 0.3 + 0.25 * -0.7];
        assert!((next.data()[0] - wm[0]).abs() < 1e-15 && (next.data()[1] - wm[1]).abs() < 1e-15);

        let m = Tensor::new(vec![3, 2], vec![0.3, -0.7, 0.3, -0.7, 0.3, -0.7]).unwrap();
        let (next, a) = gat_layer(&m, &w).unwrap();
        assert!(a.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        for r in 0..3 {
            assert!((next.row(r)[0] - wm[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn gat_rows_sum_to_one_and_permute() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Tensor::new(vec![3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = ParamSet::glorot(&mut rng, &[4, 4], 4, 4);
        let (next, a) = gat_layer(&m, &w).unwrap();
        for r in 0..3 {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let perm = [2, 0, 1];
        let pm: Vec<f64> = perm.iter().flat_map(|&r| m.row(r).to_vec()).collect();
        let (pnext, _) = gat_layer(&Tensor::new(vec![3, 4], pm).unwrap(), &w).unwrap();
        for (i, &r) in perm.iter().enumerate() {
            for (a, b) in pnext.row(i).iter().zip(next.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_head_gives_one_half() {
        let cfg = small();
        let mut ps = cfg.init_params(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for p in ps.iter_mut().filter(|p| p.name.starts_with("head.")) {
            p.value.scale(0.0);
        }
        let p = spatial_fuse(&Tensor::zeros(&[3, 4]), &ps, &cfg).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn any_channel_count_and_duplicate_channel() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ps = cfg.init_params(&mut rng).unwrap();
        for c in [1, 3, 18] {
            let p = statenet_forward(&random_x(&mut rng, c, 64), &ps, &cfg).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
        let x = random_x(&mut rng, 3, 64);
        let mut more = x.data().to_vec();
        more.extend_from_slice(x.row(0));
        let p1 = statenet_forward(&x, &ps, &cfg).unwrap();
        let p2 = statenet_forward(&Tensor::new(vec![4, 64], more).unwrap(), &ps, &cfg).unwrap();
        assert!(p2 > 0.0 && p2 < 1.0);
        assert_ne!(p1, p2);
        assert!(statenet_forward(&Tensor::zeros(&[0, 64]), &ps, &cfg).is_err());
    }
}
