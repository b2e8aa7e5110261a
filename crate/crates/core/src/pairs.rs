//! Candidate-connection indexing.
//!
//! Pair `k` enumerates the upper triangle `(i, j)`, `i < j`, lexicographically:
//! `(0,1), (0,2), …, (0,L-1), (1,2), …`. Every module uses this order.

/// Number of candidate connections among `n` nodes.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Index of the unordered pair `{i, j}`; `None` on the diagonal or out of range.
pub fn pair_index(i: usize, j: usize, n: usize) -> Option<usize> {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    if i == j || j >= n {
        return None;
    }
    Some(i * n - i * (i + 1) / 2 + (j - i - 1))
}

/// Inverse of [`pair_index`].
pub fn pair_at(k: usize, n: usize) -> Option<(usize, usize)> {
    let mut rem = k;
    for i in 0..n.saturating_sub(1) {
        let row = n - i - 1;
        if rem < row {
            return Some((i, i + 1 + rem));
        }
        rem -= row;
    }
    None
}

/// All pairs in index order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}
