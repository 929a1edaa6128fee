//! Gated recurrent unit over a whole sequence, with backpropagation through time.
//!
//! Gate layout in the packed weights is `[update; reset; candidate]`:
//!
//! ```text
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//! n_t = tanh(W_n x_t + U_n (r_t ⊙ h_{t-1}) + b_n)
//! h_t = z_t ⊙ h_{t-1} + (1 − z_t) ⊙ n_t
//! ```
//!
//! `h_0 = 0`. The input is channel-major (`in × len`), as stored in windows.

use super::kernels::{matmul, sigmoid};

/// Borrowed GRU weights: `w_x: 3H × in`, `w_h: 3H × H`, `b: 3H`.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights<'a> {
    pub w_x: &'a [f64],
    pub w_h: &'a [f64],
    pub b: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

/// Per-timestep activations kept for the backward pass (each `len × H`).
#[derive(Debug, Clone)]
pub struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h_prev: Vec<f64>,
    len: usize,
}

/// Gradients of a GRU sequence pass.
#[derive(Debug, Clone)]
pub struct GruGrads {
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
    /// `in × len`, present when requested.
    pub x: Option<Vec<f64>>,
}

/// Runs the GRU over `x` (`in × len`) and returns the last hidden state.
pub fn gru_forward(x: &[f64], len: usize, w: GruWeights<'_>) -> (Vec<f64>, GruCache) {
    let h = w.hidden;
    let g3 = 3 * h;
    // Input projections for every timestep at once: (3H × len).
    let mut ax = matmul(w.w_x, x, g3, w.input, len);
    for g in 0..g3 {
        for v in &mut ax[g * len..(g + 1) * len] {
            *v += w.b[g];
        }
    }
    let mut cache = GruCache {
        z: vec![0.0; len * h],
        r: vec![0.0; len * h],
        n: vec![0.0; len * h],
        h_prev: vec![0.0; len * h],
        len,
    };
    let mut state = vec![0.0; h];
    let mut rh = vec![0.0; h];
    let (wz, rest) = w.w_h.split_at(h * h);
    let (wr, wn) = rest.split_at(h * h);
    for t in 0..len {
        let base = t * h;
        cache.h_prev[base..base + h].copy_from_slice(&state);
        for u in 0..h {
            let mut az = ax[u * len + t];
            let mut ar = ax[(h + u) * len + t];
            let zrow = &wz[u * h..(u + 1) * h];
            let rrow = &wr[u * h..(u + 1) * h];
            for v in 0..h {
                az += zrow[v] * state[v];
                ar += rrow[v] * state[v];
            }
            cache.z[base + u] = sigmoid(az);
            cache.r[base + u] = sigmoid(ar);
        }
        for v in 0..h {
            rh[v] = cache.r[base + v] * state[v];
        }
        for u in 0..h {
            let mut an = ax[(2 * h + u) * len + t];
            let nrow = &wn[u * h..(u + 1) * h];
            for v in 0..h {
                an += nrow[v] * rh[v];
            }
            cache.n[base + u] = an.tanh();
        }
        for u in 0..h {
            let z = cache.z[base + u];
            state[u] = z * state[u] + (1.0 - z) * cache.n[base + u];
        }
    }
    (state, cache)
}

/// Backpropagates `dh_last` (gradient w.r.t. the final hidden state).
pub fn gru_backward(
    x: &[f64],
    w: GruWeights<'_>,
    cache: &GruCache,
    dh_last: &[f64],
    want_input_grad: bool,
) -> GruGrads {
    let h = w.hidden;
    let len = cache.len;
    let g3 = 3 * h;
    let (wz, rest) = w.w_h.split_at(h * h);
    let (wr, wn) = rest.split_at(h * h);
    let mut gwh = vec![0.0; g3 * h];
    // Pre-activation gradients per gate, gate-major (3H × len).
    let mut dax = vec![0.0; g3 * len];
    let mut dh = dh_last.to_vec();
    let mut dhp = vec![0.0; h];
    let mut daz = vec![0.0; h];
    let mut dar = vec![0.0; h];
    let mut dan = vec![0.0; h];
    let mut drh = vec![0.0; h];
    for t in (0..len).rev() {
        let base = t * h;
        let z = &cache.z[base..base + h];
        let r = &cache.r[base..base + h];
        let n = &cache.n[base..base + h];
        let hp = &cache.h_prev[base..base + h];
        for u in 0..h {
            let dn = dh[u] * (1.0 - z[u]);
            let dz = dh[u] * (hp[u] - n[u]);
            dhp[u] = dh[u] * z[u];
            dan[u] = dn * (1.0 - n[u] * n[u]);
            daz[u] = dz * z[u] * (1.0 - z[u]);
        }
        drh.fill(0.0);
        for u in 0..h {
            let d = dan[u];
            let nrow = &wn[u * h..(u + 1) * h];
            let grow = &mut gwh[(2 * h + u) * h..(2 * h + u + 1) * h];
            for v in 0..h {
                drh[v] += nrow[v] * d;
                grow[v] += d * r[v] * hp[v];
            }
        }
        for v in 0..h {
            dhp[v] += drh[v] * r[v];
            let dr = drh[v] * hp[v];
            dar[v] = dr * r[v] * (1.0 - r[v]);
        }
        for u in 0..h {
            let (dz, dr) = (daz[u], dar[u]);
            let zrow = &wz[u * h..(u + 1) * h];
            let rrow = &wr[u * h..(u + 1) * h];
            for v in 0..h {
                dhp[v] += zrow[v] * dz + rrow[v] * dr;
            }
            let gz = &mut gwh[u * h..(u + 1) * h];
            for v in 0..h {
                gz[v] += dz * hp[v];
            }
            let gr = &mut gwh[(h + u) * h..(h + u + 1) * h];
            for v in 0..h {
                gr[v] += dr * hp[v];
            }
        }
        for u in 0..h {
            dax[u * len + t] = daz[u];
            dax[(h + u) * len + t] = dar[u];
            dax[(2 * h + u) * len + t] = dan[u];
        }
        std::mem::swap(&mut dh, &mut dhp);
    }
    let gb: Vec<f64> = (0..g3)
        .map(|g| super::kernels::sum(&dax[g * len..(g + 1) * len]))
        .collect();
    // dW_x[g][i] = Σ_t dax[g][t]·x[i][t]
    let gwx = super::kernels::matmul_nt(&dax, x, g3, len, w.input);
    let gx = want_input_grad.then(|| super::kernels::matmul_tn(w.w_x, &dax, g3, w.input, len));
    GruGrads {
        w_x: gwx,
        w_h: gwh,
        b: gb,
        x: gx,
    }
}
