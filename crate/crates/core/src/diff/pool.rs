//! Process-wide recycling of large `f64` buffers.
//!
//! Activations of a 30 s window run to megabytes; returning them to the
//! allocator after every pass means the next pass page-faults them back in.
//! Buffers above [`MIN_POOLED`] elements are parked here instead.

use std::sync::Mutex;

pub const MIN_POOLED: usize = 1 << 15;
const MAX_POOLED_ELEMS: usize = 96 << 20;

static POOL: Mutex<Vec<Vec<f64>>> = Mutex::new(Vec::new());

/// A zero-filled buffer of length `len`.
pub fn take(len: usize) -> Vec<f64> {
    if len >= MIN_POOLED {
        let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
        let best = pool
            .iter()
            .enumerate()
            .filter(|(_, b)| b.capacity() >= len)
            .min_by_key(|(_, b)| b.capacity())
            .map(|(i, _)| i);
        if let Some(i) = best {
            let mut v = pool.swap_remove(i);
            drop(pool);
            v.clear();
            v.resize(len, 0.0);
            return v;
        }
    }
    vec![0.0; len]
}

/// Hands a buffer back for reuse; small buffers are simply dropped.
pub fn give(v: Vec<f64>) {
    if v.capacity() < MIN_POOLED {
        return;
    }
    let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
    let held: usize = pool.iter().map(Vec::capacity).sum();
    if held + v.capacity() <= MAX_POOLED_ELEMS {
        pool.push(v);
    }
}
