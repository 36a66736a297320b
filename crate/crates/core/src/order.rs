//! Deterministic per-participant presentation order.
//!
//! The seed for a task is the 64-bit FNV-1a hash of `"protocol_id|task_id|login"`.
//! That seed drives a SplitMix64 stream, and the permutation is a
//! Durstenfeld Fisher–Yates shuffle walking `j` from `n - 1` down to `1`
//! and swapping `j` with `next() % (j + 1)`.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish index in `[0, bound)` by modulo reduction. `bound` must be non-zero.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }
}

pub fn order_seed(protocol_id: &str, task_id: &str, login: &str) -> u64 {
    fnv1a64(format!("{protocol_id}|{task_id}|{login}").as_bytes())
}

/// Shuffles `items` in place with the Durstenfeld walk described above.
pub fn fisher_yates<T>(items: &mut [T], rng: &mut SplitMix64) {
    for j in (1..items.len()).rev() {
        let k = rng.below(j as u64 + 1) as usize;
        items.swap(j, k);
    }
}

/// Presentation order for the `n` instances of a task, as indices into the
/// declared instance list. Returns the identity without touching the stream
/// when `randomize` is false.
pub fn derive_instance_order(
    protocol_id: &str,
    task_id: &str,
    login: &str,
    n: usize,
    randomize: bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if randomize {
        let mut rng = SplitMix64::new(order_seed(protocol_id, task_id, login));
        fisher_yates(&mut order, &mut rng);
    }
    order
}
