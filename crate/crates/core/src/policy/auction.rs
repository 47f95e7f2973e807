//! Minimum-cost assignment by the forward auction algorithm with ε-scaling.
//!
//! Integer costs are multiplied by `n + 1` so that the final phase at ε = 1 is below one
//! original cost unit divided by `n`, which makes the resulting assignment optimal.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Column assigned to each row, `None` for rows matched to padding.
    pub row_to_col: Vec<Option<usize>>,
    pub cost: i64,
}

const SCALING_FACTOR: i64 = 5;

/// Solves a square problem. Returns the column of each row.
pub fn auction_square(cost: &[Vec<i64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: row.len() });
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let scale = n as i64 + 1;
    let benefit: Vec<Vec<i64>> = cost
        .iter()
        .map(|r| r.iter().map(|&c| -c * scale).collect())
        .collect();
    let spread = {
        let max = benefit.iter().flatten().max().copied().unwrap_or(0);
        let min = benefit.iter().flatten().min().copied().unwrap_or(0);
        max - min
    };
    let mut eps = (spread / 2).max(1);
    let mut price = vec![0i64; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    // Generous bound on bids per phase; the auction terminates well inside it for finite costs.
    let bid_cap = (n as u64).pow(2) * (spread as u64 + 2).min(1 << 20) * 4 + 1000;
    loop {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut queue: VecDeque<usize> = (0..n).collect();
        let mut bids = 0u64;
        while let Some(i) = queue.pop_front() {
            let (mut best, mut v1, mut v2) = (0usize, i64::MIN, i64::MIN);
            for (j, &b) in benefit[i].iter().enumerate() {
                let v = b - price[j];
                if v > v1 {
                    v2 = v1;
                    v1 = v;
                    best = j;
                } else if v > v2 {
                    v2 = v;
                }
            }
            price[best] += v1 - v2 + eps;
            if let Some(prev) = owner[best].replace(i) {
                assigned[prev] = None;
                queue.push_back(prev);
            }
            assigned[i] = Some(best);
            bids += 1;
            if bids > bid_cap {
                return Err(Error::AuctionDiverged(n));
            }
        }
        if eps == 1 {
            break;
        }
        eps = (eps / SCALING_FACTOR).max(1);
    }
    Ok(assigned.into_iter().map(|a| a.expect("every row assigned")).collect())
}

/// Exhaustive search over permutations; only for small square problems.
pub fn exhaustive_assignment(cost: &[Vec<i64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n > 8 {
        return Err(Error::domain(format!("exhaustive assignment limited to 8x8, got {n}x{n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (i64::MAX, perm.clone());
    permute(&mut perm, 0, cost, &mut best);
    Ok(best.1)
}

fn permute(perm: &mut Vec<usize>, k: usize, cost: &[Vec<i64>], best: &mut (i64, Vec<usize>)) {
    if k == perm.len() {
        let c: i64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.0 {
            *best = (c, perm.clone());
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best);
        perm.swap(k, i);
    }
}

/// Rectangular problem: pads with zero-cost dummy rows or columns, solves by auction and
/// falls back to exhaustive search for padded sizes up to 8 if the auction fails.
pub fn solve_assignment(cost: &[Vec<i64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if let Some(r) = cost.iter().find(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch { expected: cols, actual: r.len() });
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment { row_to_col: vec![None; rows], cost: 0 });
    }
    let n = rows.max(cols);
    let padded: Vec<Vec<i64>> = (0..n)
        .map(|i| (0..n).map(|j| if i < rows && j < cols { cost[i][j] } else { 0 }).collect())
        .collect();
    let perm = match auction_square(&padded) {
        Ok(p) => p,
        Err(Error::AuctionDiverged(_)) if n <= 8 => exhaustive_assignment(&padded)?,
        Err(e) => return Err(e),
    };
    let row_to_col: Vec<Option<usize>> = perm[..rows].iter().map(|&j| (j < cols).then_some(j)).collect();
    let total = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost[i][j]))
        .sum();
    Ok(Assignment { row_to_col, cost: total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[Vec<i64>], perm: &[usize]) -> i64 {
        perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
    }

    #[test]
    fn two_by_two_picks_cheaper_cross() {
        // Identity: 1 + 5 = 6; cross: 3 + 2 = 5.
        let c = vec![vec![1, 3], vec![2, 5]];
        assert_eq!(auction_square(&c).unwrap(), vec![1, 0]);
        assert_eq!(exhaustive_assignment(&c).unwrap(), vec![1, 0]);
    }

    #[test]
    fn single_and_empty() {
        assert_eq!(auction_square(&[vec![7]]).unwrap(), vec![0]);
        assert!(auction_square(&[]).unwrap().is_empty());
        assert!(auction_square(&[vec![1, 2]]).is_err());
    }

    #[test]
    fn rectangular_padding() {
        let wide = vec![vec![4, 1, 9]];
        let a = solve_assignment(&wide).unwrap();
        assert_eq!(a.row_to_col, vec![Some(1)]);
        assert_eq!(a.cost, 1);
        let tall = vec![vec![4], vec![1], vec![9]];
        let a = solve_assignment(&tall).unwrap();
        assert_eq!(a.row_to_col, vec![None, Some(0), None]);
    }

    #[test]
    fn ties_and_constant_matrix() {
        let c = vec![vec![3; 5]; 5];
        let p = auction_square(&c).unwrap();
        let mut seen = p.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(total(&c, &p), 15);
    }

    #[test]
    fn large_costs() {
        let c = vec![vec![1_000_000, 0, 5], vec![0, 1_000_000, 7], vec![3, 2, 1_000_000]];
        let p = auction_square(&c).unwrap();
        assert_eq!(total(&c, &p), total(&c, &exhaustive_assignment(&c).unwrap()));
    }
}
