//! Hierarchical density-based clustering over cosine distance.
//!
//! Core distances use `min_samples = min_cluster_size`. The minimum spanning
//! tree of the mutual-reachability graph is built with dense Prim, condensed
//! at `min_cluster_size`, and flat clusters are picked by excess of mass.
//! The root is only selected when it never splits into two clusters.

use super::{rows_for, Partition, PartitionError};
use crate::index::{dot, EmbedIndex};
use crate::store::InstanceId;

const MIN_DISTANCE: f64 = 1e-12;

/// `max(15, 0.5% of the population)`.
pub fn default_min_cluster_size(population: usize) -> usize {
    15usize.max((population as f64 * 0.005).ceil() as usize)
}

pub fn density_partition(
    index: &EmbedIndex,
    ids: &[InstanceId],
    min_cluster_size: usize,
) -> Result<Vec<Partition>, PartitionError> {
    if min_cluster_size < 2 {
        return Err(PartitionError::MinClusterSize(min_cluster_size));
    }
    let rows = rows_for(index, ids)?;
    let n = rows.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n < min_cluster_size {
        return Ok(vec![Partition::from_rows(0, &rows, index, true)]);
    }
    let points: Vec<&[f32]> = rows.iter().map(|&r| index.vector(r)).collect();
    let labels = cluster_labels(&points, min_cluster_size);

    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => groups[*c].push(rows[i]),
            None => noise.push(rows[i]),
        }
    }
    // rows are in id order, so the first member is the smallest id
    groups.sort_by_key(|g| index.ids()[g[0]].clone());
    let mut out: Vec<Partition> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| Partition::from_rows(i, g, index, false))
        .collect();
    if !noise.is_empty() {
        out.push(Partition::from_rows(out.len(), &noise, index, true));
    }
    Ok(out)
}

fn distance(a: &[f32], b: &[f32]) -> f64 {
    (1.0 - dot(a, b)).max(0.0)
}

/// Flat cluster label per point, `None` for noise. Labels are dense from 0.
fn cluster_labels(points: &[&[f32]], min_cluster_size: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let core = core_distances(points, min_cluster_size);
    let edges = mst(points, &core);
    let tree = single_linkage(n, edges);
    let condensed = condense(&tree, n, min_cluster_size);
    let selected = select_clusters(&condensed);

    let mut dense = vec![usize::MAX; condensed.n_clusters];
    let mut next = 0;
    for (c, &sel) in selected.iter().enumerate() {
        if sel {
            dense[c] = next;
            next += 1;
        }
    }
    (0..n)
        .map(|p| {
            let mut c = Some(condensed.point_parent[p]);
            while let Some(cl) = c {
                if selected[cl] {
                    return Some(dense[cl]);
                }
                c = condensed.cluster_parent[cl];
            }
            None
        })
        .collect()
}

fn core_distances(points: &[&[f32]], min_samples: usize) -> Vec<f64> {
    let n = points.len();
    let kth = min_samples.min(n) - 1;
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| if i == j { 0.0 } else { distance(points[i], points[j]) }).collect();
            let (_, v, _) = d.select_nth_unstable_by(kth, f64::total_cmp);
            *v
        })
        .collect()
}

/// Prim's algorithm over mutual-reachability distances.
fn mst(points: &[&[f32]], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let mr = distance(points[current], points[j]).max(core[current]).max(core[j]);
            if mr < best[j] {
                best[j] = mr;
                from[j] = current;
            }
        }
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < next_w) {
                next = j;
                next_w = best[j];
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_w));
        current = next;
    }
    edges
}

struct Linkage {
    /// `(left, right, distance, size)` for internal node `n + i`.
    merges: Vec<(usize, usize, f64, usize)>,
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Linkage {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (a, b, w) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let node = n + merges.len();
        let s = size[ra] + size[rb];
        parent[ra] = node;
        parent[rb] = node;
        size[node] = s;
        merges.push((ra, rb, w, s));
    }
    Linkage { merges }
}

struct Condensed {
    n_clusters: usize,
    cluster_parent: Vec<Option<usize>>,
    /// Lambda at which the cluster was born (0 for the root).
    birth: Vec<f64>,
    stability: Vec<f64>,
    children: Vec<Vec<usize>>,
    point_parent: Vec<usize>,
}

fn condense(tree: &Linkage, n: usize, min_cluster_size: usize) -> Condensed {
    let node_size = |node: usize| if node < n { 1 } else { tree.merges[node - n].3 };
    let mut out = Condensed {
        n_clusters: 1,
        cluster_parent: vec![None],
        birth: vec![0.0],
        stability: vec![0.0],
        children: vec![Vec::new()],
        point_parent: vec![0; n],
    };
    if n == 1 {
        return out;
    }
    let leaves_under = |node: usize| -> Vec<usize> {
        let mut stack = vec![node];
        let mut leaves = Vec::new();
        while let Some(x) = stack.pop() {
            if x < n {
                leaves.push(x);
            } else {
                let (l, r, _, _) = tree.merges[x - n];
                stack.push(l);
                stack.push(r);
            }
        }
        leaves
    };
    let root = 2 * n - 2;
    // (hierarchy node, condensed cluster it belongs to)
    let mut stack = vec![(root, 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        if node < n {
            // a lone point that reached here without falling out
            out.point_parent[node] = cluster;
            continue;
        }
        let (left, right, dist, _) = tree.merges[node - n];
        let lambda = 1.0 / dist.max(MIN_DISTANCE);
        let (ls, rs) = (node_size(left), node_size(right));
        let birth = out.birth[cluster];
        let fall_out = |child: usize, out: &mut Condensed| {
            for p in leaves_under(child) {
                out.point_parent[p] = cluster;
                out.stability[cluster] += lambda - birth;
            }
        };
        match (ls >= min_cluster_size, rs >= min_cluster_size) {
            (true, true) => {
                for (child, size) in [(left, ls), (right, rs)] {
                    let id = out.n_clusters;
                    out.n_clusters += 1;
                    out.cluster_parent.push(Some(cluster));
                    out.birth.push(lambda);
                    out.stability.push(0.0);
                    out.children.push(Vec::new());
                    out.children[cluster].push(id);
                    out.stability[cluster] += (lambda - birth) * size as f64;
                    stack.push((child, id));
                }
            }
            (false, false) => {
                fall_out(left, &mut out);
                fall_out(right, &mut out);
            }
            (true, false) => {
                fall_out(right, &mut out);
                stack.push((left, cluster));
            }
            (false, true) => {
                fall_out(left, &mut out);
                stack.push((right, cluster));
            }
        }
    }
    out
}

/// Excess-of-mass selection, bottom-up.
fn select_clusters(c: &Condensed) -> Vec<bool> {
    let mut selected = vec![false; c.n_clusters];
    if c.children[0].is_empty() {
        selected[0] = true;
        return selected;
    }
    let mut propagated = c.stability.clone();
    // children always have larger ids than their parent
    for cl in (1..c.n_clusters).rev() {
        let child_sum: f64 = c.children[cl].iter().map(|&ch| propagated[ch]).sum();
        if !c.children[cl].is_empty() && child_sum > c.stability[cl] {
            propagated[cl] = child_sum;
        } else {
            selected[cl] = true;
            let mut stack = c.children[cl].clone();
            while let Some(d) = stack.pop() {
                selected[d] = false;
                stack.extend(c.children[d].iter().copied());
            }
        }
    }
    selected
}
