//! Outlier-trimmed averages shared by dataset generation and the benchmark.

/// Number of items dropped from each end: `floor(trim * n)`.
pub fn trim_count(n: usize, trim: f64) -> usize {
    let k = (trim * n as f64).floor() as usize;
    // always keep at least one item
    k.min(n.saturating_sub(1) / 2)
}

/// Indices of `keys` sorted ascending (stable on ties) with `trim_count`
/// removed from each end.
pub fn trimmed_indices(keys: &[f64], trim: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let k = trim_count(keys.len(), trim);
    idx[k..keys.len() - k].to_vec()
}

/// Mean after discarding the lowest and highest `trim` fraction.
/// `None` for an empty input.
pub fn trimmed_mean(values: &[f64], trim: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let kept = trimmed_indices(values, trim);
    Some(kept.iter().map(|&i| values[i]).sum::<f64>() / kept.len() as f64)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Independent stream seed for `(base, stream)`; SplitMix64 finalizer.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
