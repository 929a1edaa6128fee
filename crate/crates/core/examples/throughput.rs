//! Times one forward+backward pass per architecture on a 30 s window.

use std::time::Instant;

use statenet::diff::Tensor;
use statenet::models::{GruConfig, ModelConfig, StateNetConfig, TcnConfig};
use statenet::training::batch_objective;

fn main() -> statenet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (c, d, layers) = (args.first().copied().unwrap_or(18), args.get(1).copied().unwrap_or(8), args.get(2).copied().unwrap_or(5));
    let l = 6000;
    let x = Tensor::new(vec![c, l], (0..c * l).map(|i| ((i * 7919) % 200) as f64 - 100.0).collect())?;
    let configs = [
        ModelConfig::Statenet(StateNetConfig { hidden_dim: d, tcn_layers: layers, mlp_hidden: 16, ..Default::default() }),
        ModelConfig::Tcn(TcnConfig { channels: c, hidden_dim: d, layers, ..Default::default() }),
        ModelConfig::Gru(GruConfig { channels: c, hidden_dim: 16, ..Default::default() }),
    ];
    for cfg in configs {
        let params = cfg.init_params(1)?;
        let batch = vec![(x.clone(), 1u8); 8];
        let t = Instant::now();
        batch_objective(&cfg, &params, &batch, 1.0, 1e-4)?;
        let train = t.elapsed().as_secs_f64() / 8.0;
        let t = Instant::now();
        for _ in 0..8 {
            cfg.predict_with(&params, &x)?;
        }
        let infer = t.elapsed().as_secs_f64() / 8.0;
        println!("{:>8}: train {:.1} ms/window, predict {:.1} ms/window", cfg.arch(), train * 1e3, infer * 1e3);
    }
    Ok(())
}
