//! Sequential or data-parallel mapping, selected at run time.
//!
//! Without the `parallel` feature both modes run sequentially. Results are
//! always returned in input order, so the choice never changes outputs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Applies `f` to `0..n`.
pub fn map_indices<R, F>(execution: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Applies `f` to every item.
pub fn map_slice<T, R, F>(execution: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_indices(execution, items.len(), |i| f(&items[i]))
}

/// Deterministic generator for one task, derived from a run seed and a
/// sequence of tags such as step, sensor and purpose.
pub fn task_rng(seed: u64, tags: &[u64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut h = splitmix(seed ^ 0x5851_f42d_4c95_7f2d);
    for &t in tags {
        h = splitmix(h ^ splitmix(t));
    }
    rand_chacha::ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
