//! Initial allocations from Ward hierarchical clustering.

use crate::model::SeriesData;

/// Ward clustering of `(y_t, y_{t-1}, ..., y_{t-L})` rows, cut at `h` clusters.
/// Labels are ordered by decreasing cluster size so the largest cluster gets
/// the first stick.
pub fn init_allocations(series: &SeriesData, h: usize) -> Vec<usize> {
    let rows: Vec<Vec<f64>> = (0..series.n_obs())
        .map(|i| {
            let mut r = vec![series.response(i)];
            r.extend_from_slice(series.design_row(i));
            r
        })
        .collect();
    ward_clusters(&rows, h)
}

/// Agglomerative clustering with Ward linkage (nearest-neighbor chain,
/// Lance–Williams updates on squared Euclidean distances). Identical rows are
/// never split, so fewer than `k` clusters may come back.
pub fn ward_clusters(rows: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.max(1);
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::new();
    while merges.len() < n - 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|a| *a).expect("an active cluster"));
        }
        let (a, b) = loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 {
                Some(chain[chain.len() - 2])
            } else {
                None
            };
            let mut best = prev.unwrap_or(usize::MAX);
            let mut best_d = prev.map_or(f64::INFINITY, |p| dist[a * n + p]);
            for c in 0..n {
                if active[c] && c != a && dist[a * n + c] < best_d {
                    best = c;
                    best_d = dist[a * n + c];
                }
            }
            if Some(best) == prev {
                break (a, best);
            }
            chain.push(best);
        };
        chain.pop();
        chain.pop();
        let height = dist[a * n + b];
        merges.push((a, b, height));
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for c in 0..n {
            if active[c] && c != a && c != b {
                let nc = size[c] as f64;
                let d = ((na + nc) * dist[a * n + c] + (nb + nc) * dist[b * n + c] - nc * height) / (na + nb + nc);
                dist[a * n + c] = d;
                dist[c * n + a] = d;
            }
        }
        active[b] = false;
        size[a] += size[b];
    }
    merges.sort_by(|x, y| x.2.total_cmp(&y.2));

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let needed = n.saturating_sub(k);
    for (m, (a, b, height)) in merges.iter().enumerate() {
        if m >= needed && *height > 0.0 {
            break;
        }
        let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
        parent[rb] = ra;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    for (i, r) in roots.iter().enumerate() {
        if *r == i {
            clusters.push((roots.iter().filter(|x| *x == r).count(), i));
        }
    }
    clusters.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut label = vec![0; n];
    for (lab, (_, root)) in clusters.iter().enumerate() {
        label[*root] = lab;
    }
    roots.iter().map(|r| label[*r]).collect()
}
