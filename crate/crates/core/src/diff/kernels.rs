//! Slice-level numeric kernels shared by the graph ops.
//!
//! Convolutions are causal and dilated: tap `j` of a size-`k` kernel reads
//! `x[t - (k-1-j)·dilation]`, out-of-range samples read as zero, so the
//! output length equals the input length.

const TILE: usize = 16;

/// Shift (in samples) applied by tap `j` of a causal kernel.
#[inline]
pub fn tap_shift(j: usize, k: usize, dilation: usize) -> usize {
    (k - 1 - j) * dilation
}

/// `out[q][t] += Σ_i Σ_j w[q][i][j] · src[i][t + offsets[j]]` for one sample.
///
/// `src` is `cin × len`, `w` is `cout × cin × k`, `out` is `cout × len`.
/// Reads outside `[0, len)` contribute zero.
fn correlate_accumulate(
    src: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    offsets: &[isize],
    len: usize,
    out: &mut [f64],
) {
    let k = offsets.len();
    let mut q = 0;
    while q + 8 <= cout {
        block::<8>(src, cin, w, q, k, offsets, len, out);
        q += 8;
    }
    if q + 6 <= cout {
        block::<6>(src, cin, w, q, k, offsets, len, out);
        q += 6;
    }
    if q + 4 <= cout {
        block::<4>(src, cin, w, q, k, offsets, len, out);
        q += 4;
    }
    if q + 2 <= cout {
        block::<2>(src, cin, w, q, k, offsets, len, out);
        q += 2;
    }
    while q < cout {
        block::<1>(src, cin, w, q, k, offsets, len, out);
        q += 1;
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn block<const OB: usize>(
    src: &[f64],
    cin: usize,
    w: &[f64],
    q0: usize,
    k: usize,
    offsets: &[isize],
    len: usize,
    out: &mut [f64],
) {
    // weights for this output block, packed tap-major: packed[i·k + j][b]
    let packed: Vec<[f64; OB]> = (0..cin * k)
        .map(|ij| {
            let (i, j) = (ij / k, ij % k);
            std::array::from_fn(|b| w[((q0 + b) * cin + i) * k + j])
        })
        .collect();
    let mut t0 = 0;
    while t0 < len {
        let tw = TILE.min(len - t0);
        let mut acc = [[0.0f64; TILE]; OB];
        for i in 0..cin {
            let row = &src[i * len..(i + 1) * len];
            for (j, &off) in offsets.iter().enumerate() {
                let start = t0 as isize + off;
                let mut xv = [0.0f64; TILE];
                if tw == TILE && start >= 0 && start as usize + TILE <= len {
                    let s = start as usize;
                    xv.copy_from_slice(&row[s..s + TILE]);
                } else {
                    for (u, slot) in xv.iter_mut().enumerate().take(tw) {
                        let t = start + u as isize;
                        if t >= 0 && (t as usize) < len {
                            *slot = row[t as usize];
                        }
                    }
                }
                let wv = &packed[i * k + j];
                for b in 0..OB {
                    for u in 0..TILE {
                        acc[b][u] += wv[b] * xv[u];
                    }
                }
            }
        }
        for (b, accq) in acc.iter().enumerate() {
            let dst = &mut out[(q0 + b) * len + t0..(q0 + b) * len + t0 + tw];
            for (d, a) in dst.iter_mut().zip(accq) {
                *d += a;
            }
        }
        t0 += TILE;
    }
}

/// Causal dilated convolution for one sample: `x` is `cin × len`,
/// `w` is `cout × cin × k`, result is `cout × len`.
pub fn conv_forward(
    x: &[f64],
    cin: usize,
    w: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    dilation: usize,
    len: usize,
    out: &mut [f64],
) {
    for (o, b) in bias.iter().enumerate().take(cout) {
        out[o * len..(o + 1) * len].fill(*b);
    }
    let offsets: Vec<isize> = (0..k)
        .map(|j| -(tap_shift(j, k, dilation) as isize))
        .collect();
    correlate_accumulate(x, cin, w, cout, &offsets, len, out);
}

/// Gradient w.r.t. the input of [`conv_forward`], accumulated into `gx`.
pub fn conv_backward_input(
    g: &[f64],
    cout: usize,
    w: &[f64],
    cin: usize,
    k: usize,
    dilation: usize,
    len: usize,
    gx: &mut [f64],
) {
    // Transposed kernel: wt[i][o][j] = w[o][i][j].
    let mut wt = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for j in 0..k {
                wt[(i * cout + o) * k + j] = w[(o * cin + i) * k + j];
            }
        }
    }
    let offsets: Vec<isize> = (0..k).map(|j| tap_shift(j, k, dilation) as isize).collect();
    correlate_accumulate(g, cout, &wt, cin, &offsets, len, gx);
}

/// Gradients w.r.t. the kernel and bias of [`conv_forward`], accumulated.
///
/// `gw[o][i][j] += Σ_t g[o][t] · x[i][t − shift_j]`, walked in time chunks
/// so each chunk of `g` and `x` stays in L1.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward_params(
    g: &[f64],
    x: &[f64],
    cin: usize,
    cout: usize,
    k: usize,
    dilation: usize,
    len: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    const CHUNK: usize = 256;
    for o in 0..cout {
        gb[o] += sum(&g[o * len..(o + 1) * len]);
    }
    let mut t0 = 0;
    while t0 < len {
        let t1 = (t0 + CHUNK).min(len);
        for i in 0..cin {
            let xrow = &x[i * len..(i + 1) * len];
            for j in 0..k {
                let s = tap_shift(j, k, dilation);
                let a = t0.max(s);
                if a >= t1 {
                    continue;
                }
                let xs = &xrow[a - s..t1 - s];
                let mut o = 0;
                while o + 4 <= cout {
                    let d = dot4(
                        [
                            &g[o * len + a..o * len + t1],
                            &g[(o + 1) * len + a..(o + 1) * len + t1],
                            &g[(o + 2) * len + a..(o + 2) * len + t1],
                            &g[(o + 3) * len + a..(o + 3) * len + t1],
                        ],
                        xs,
                    );
                    for (b, v) in d.iter().enumerate() {
                        gw[((o + b) * cin + i) * k + j] += v;
                    }
                    o += 4;
                }
                while o < cout {
                    gw[(o * cin + i) * k + j] += dot(&g[o * len + a..o * len + t1], xs);
                    o += 1;
                }
            }
        }
        t0 = t1;
    }
}

/// Dot product with a fixed 8-lane accumulation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = reduce8(&acc);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn dot4(a: [&[f64]; 4], b: &[f64]) -> [f64; 4] {
    let n = b.len();
    let full = n - n % 8;
    let mut acc = [[0.0f64; 8]; 4];
    let mut t = 0;
    while t < full {
        let bv = &b[t..t + 8];
        for q in 0..4 {
            let av = &a[q][t..t + 8];
            for l in 0..8 {
                acc[q][l] += av[l] * bv[l];
            }
        }
        t += 8;
    }
    let mut out = [0.0; 4];
    for q in 0..4 {
        let mut s = reduce8(&acc[q]);
        for u in full..n {
            s += a[q][u] * b[u];
        }
        out[q] = s;
    }
    out
}

#[inline]
fn reduce8(acc: &[f64; 8]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

pub fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let r = ca.remainder();
    for x in ca {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    let mut s = reduce8(&acc);
    for x in r {
        s += x;
    }
    s
}

/// `c = a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (cv, bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c = a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = dot(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// `c = aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            for (cv, bv) in c[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], cin: usize, w: &[f64], b: &[f64], cout: usize, k: usize, d: usize, l: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * l];
        for o in 0..cout {
            for t in 0..l {
                let mut s = b[o];
                for i in 0..cin {
                    for j in 0..k {
                        let sh = (k - 1 - j) * d;
                        if t >= sh {
                            s += w[(o * cin + i) * k + j] * x[i * l + t - sh];
                        }
                    }
                }
                out[o * l + t] = s;
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_naive_on_odd_shapes() {
        for &(cin, cout, k, d, l) in &[(1, 1, 1, 1, 4), (3, 5, 3, 2, 37), (2, 8, 2, 7, 9), (4, 6, 5, 3, 3)] {
            let x = pseudo(cin * l, 1);
            let w = pseudo(cout * cin * k, 2);
            let b = pseudo(cout, 3);
            let mut out = vec![0.0; cout * l];
            conv_forward(&x, cin, &w, &b, cout, k, d, l, &mut out);
            let want = naive_conv(&x, cin, &w, &b, cout, k, d, l);
            for (a, e) in out.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn backward_input_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv_backward_input(g)> with zero bias
        let (cin, cout, k, d, l) = (3, 5, 3, 4, 29);
        let x = pseudo(cin * l, 5);
        let w = pseudo(cout * cin * k, 6);
        let g = pseudo(cout * l, 7);
        let mut y = vec![0.0; cout * l];
        conv_forward(&x, cin, &w, &vec![0.0; cout], cout, k, d, l, &mut y);
        let mut gx = vec![0.0; cin * l];
        conv_backward_input(&g, cout, &w, cin, k, d, l, &mut gx);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = pseudo(6, 1); // 2x3
        let b = pseudo(12, 2); // 3x4
        let c = matmul(&a, &b, 2, 3, 4);
        // bᵀ as 4x3
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let c2 = matmul_nt(&a, &bt, 2, 3, 4);
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        let c3 = matmul_tn(&at, &b, 3, 2, 4);
        for ((x, y), z) in c.iter().zip(&c2).zip(&c3) {
            assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(-800.0).is_finite());
    }
}
