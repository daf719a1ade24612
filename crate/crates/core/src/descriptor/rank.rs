/// Rank of each value among `values` (0 = smallest); equal values are
/// ordered by index.
pub fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

/// True if `ranks` is a permutation of `0..ranks.len()`.
pub fn is_rank_vector<T: Copy + Into<usize>>(ranks: &[T]) -> bool {
    let mut seen = vec![false; ranks.len()];
    for &r in ranks {
        let r: usize = r.into();
        if r >= seen.len() || seen[r] {
            return false;
        }
        seen[r] = true;
    }
    true
}
