//! OSPA and OSPA(2) distances with an exact assignment solver.

use std::collections::BTreeMap;

use crate::geometry::Point;

/// Minimum-cost assignment of every row to a distinct column. Requires
/// `rows <= cols`. Returns the column of each row and the total cost.
pub fn assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= cols");
    // shortest augmenting paths with potentials, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_to[j] {
                    min_to[j] = cur;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            cols[owner[j] - 1] = j - 1;
        }
    }
    let total = cols.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (cols, total)
}

/// OSPA over a precomputed base distance matrix (`rows` x `cols`), with the
/// base distances already cut off at `c`.
fn ospa_from_distances(dist: &[Vec<f64>], rows: usize, cols: usize, c: f64, p: f64) -> f64 {
    if rows == 0 && cols == 0 {
        return 0.0;
    }
    let (small, big) = (rows.min(cols), rows.max(cols));
    let powered: Vec<Vec<f64>> = if rows <= cols {
        dist.iter().map(|r| r.iter().map(|d| d.powf(p)).collect()).collect()
    } else {
        (0..cols)
            .map(|j| (0..rows).map(|i| dist[i][j].powf(p)).collect())
            .collect()
    };
    let (_, matched) = assignment(&powered);
    let total = matched + c.powf(p) * (big - small) as f64;
    (total / big as f64).powf(1.0 / p)
}

/// OSPA distance between two finite point sets.
pub fn ospa(truth: &[Point], estimate: &[Point], c: f64, p: f64) -> f64 {
    let dist: Vec<Vec<f64>> = truth
        .iter()
        .map(|x| estimate.iter().map(|y| x.distance(*y).min(c)).collect())
        .collect();
    ospa_from_distances(&dist, truth.len(), estimate.len(), c, p)
}

/// A labeled trajectory: position per time step.
pub type Track = BTreeMap<u32, Point>;

/// OSPA(2) over the window `from..=to`: tracks absent from the window are
/// ignored; the base distance between two tracks averages the cut-off
/// distance over the steps where at least one of them exists, a step with
/// only one of them costing `c`.
pub fn ospa2(truth: &[Track], estimate: &[Track], c: f64, p: f64, from: u32, to: u32) -> f64 {
    let in_window = |tracks: &[Track]| -> Vec<Track> {
        tracks
            .iter()
            .map(|t| t.range(from..=to).map(|(k, v)| (*k, *v)).collect::<Track>())
            .filter(|t| !t.is_empty())
            .collect()
    };
    let x = in_window(truth);
    let y = in_window(estimate);
    let dist: Vec<Vec<f64>> = x
        .iter()
        .map(|a| {
            y.iter()
                .map(|b| {
                    let mut sum = 0.0;
                    let mut steps = 0usize;
                    for k in from..=to {
                        let d = match (a.get(&k), b.get(&k)) {
                            (Some(pa), Some(pb)) => pa.distance(*pb).min(c),
                            (None, None) => continue,
                            _ => c,
                        };
                        sum += d;
                        steps += 1;
                    }
                    sum / steps as f64
                })
                .collect()
        })
        .collect();
    ospa_from_distances(&dist, x.len(), y.len(), c, p)
}
