//! Splitting a training set across clients.
//!
//! Both partitioners read only the true labels, so the assignment of samples
//! to clients does not depend on the injected noise.

use rand::seq::SliceRandom;
use rand::Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream};

/// One client's slice of the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    /// Sample count `n_k`.
    pub fn n_k(&self) -> usize {
        self.indices.len()
    }
}

/// Seeded global shuffle cut into `num_clients` equal contiguous slices.
pub fn partition_iid(
    ds: &LabeledDataset,
    num_clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    if ds.len() % num_clients != 0 {
        return Err(Error::Partition(format!(
            "{} samples cannot be split evenly across {num_clients} clients",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = RngStream::new(seed, &[Purpose::Partition.into(), 0]);
    order.shuffle(&mut rng);
    let size = ds.len() / num_clients;
    Ok(order
        .chunks(size)
        .enumerate()
        .map(|(client_id, chunk)| ClientShard {
            client_id,
            indices: chunk.to_vec(),
        })
        .collect())
}

/// Gives each client `classes_per_client` distinct true classes and an equal
/// share of samples drawn only from those classes.
///
/// Classes are chosen greedily by lowest committed load relative to class
/// size (ties broken by a seeded key). Per-client, per-class quotas are then
/// found by max-flow, starting from an even split and relaxing the per-class
/// cap only as far as needed. With `classes_per_client = M` on balanced data
/// this is a stratified IID split. Samples left over after equal-size shards
/// are filled are dropped with a warning.
pub fn partition_noniid(
    ds: &LabeledDataset,
    num_clients: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    let m = ds.num_classes();
    if num_clients == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    if classes_per_client == 0 || classes_per_client > m {
        return Err(Error::Partition(format!(
            "classes_per_client must lie in [1, {m}], got {classes_per_client}"
        )));
    }
    let shard_size = ds.len() / num_clients;
    if shard_size < classes_per_client {
        return Err(Error::Partition(format!(
            "shard size {shard_size} cannot hold {classes_per_client} classes"
        )));
    }
    let counts = ds.class_counts();

    // Class assignment.
    let mut usage = vec![0usize; m];
    let mut pick_rng = RngStream::new(seed, &[Purpose::Partition.into(), 1]);
    let mut assignment: Vec<Vec<usize>> = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        let keys: Vec<u64> = (0..m).map(|_| pick_rng.random()).collect();
        let mut classes: Vec<usize> = (0..m).filter(|&c| counts[c] > 0).collect();
        // load_c = (usage_c + 1) / count_c, compared by cross-multiplying
        classes.sort_by(|&a, &b| {
            ((usage[a] + 1) * counts[b])
                .cmp(&((usage[b] + 1) * counts[a]))
                .then(keys[a].cmp(&keys[b]))
        });
        if classes.len() < classes_per_client {
            return Err(Error::Partition(format!(
                "only {} classes have samples, {classes_per_client} needed per client",
                classes.len()
            )));
        }
        classes.truncate(classes_per_client);
        classes.sort_unstable();
        for &c in &classes {
            usage[c] += 1;
        }
        assignment.push(classes);
    }

    let quotas = solve_quotas(&assignment, &counts, shard_size).ok_or_else(|| {
        Error::Partition(format!(
            "cannot give {num_clients} clients {shard_size} samples each from \
             {classes_per_client} classes apiece; class counts {counts:?}, \
             clients per class {usage:?}"
        ))
    })?;

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &y) in ds.true_labels().iter().enumerate() {
        pools[y].push(i);
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        let mut rng = RngStream::new(seed, &[Purpose::Partition.into(), 2, c as u64]);
        pool.shuffle(&mut rng);
    }

    let mut shards = Vec::with_capacity(num_clients);
    for (client_id, (classes, take)) in assignment.iter().zip(quotas).enumerate() {
        let mut indices = Vec::with_capacity(shard_size);
        for (&c, need) in classes.iter().zip(take) {
            let at = pools[c].len() - need;
            indices.extend(pools[c].drain(at..));
        }
        indices.sort_unstable();
        shards.push(ClientShard { client_id, indices });
    }
    let dropped: usize = pools.iter().map(Vec::len).sum();
    if dropped > 0 {
        log::warn!("non-IID partition dropped {dropped} samples to keep shard sizes equal");
    }
    Ok(shards)
}

/// Per-client quotas (aligned with `assignment`) so that each client gets
/// exactly `shard_size` samples, at least one from every assigned class, and
/// no class is oversubscribed. Tries the tightest per-edge cap first so that
/// splits stay as even as the class counts allow.
fn solve_quotas(
    assignment: &[Vec<usize>],
    counts: &[usize],
    shard_size: usize,
) -> Option<Vec<Vec<usize>>> {
    let cpc = assignment.first().map_or(1, Vec::len);
    let mut cap = shard_size.div_ceil(cpc);
    loop {
        if let Some(q) = quotas_with_cap(assignment, counts, shard_size, cap) {
            return Some(q);
        }
        if cap >= shard_size {
            return None;
        }
        cap = (cap + cap.div_ceil(8)).min(shard_size);
    }
}

fn quotas_with_cap(
    assignment: &[Vec<usize>],
    counts: &[usize],
    shard_size: usize,
    cap: usize,
) -> Option<Vec<Vec<usize>>> {
    // One sample per (client, class) edge is reserved up front; the flow
    // distributes the rest.
    let mut supply = counts.to_vec();
    for classes in assignment {
        for &c in classes {
            supply[c] = supply[c].checked_sub(1)?;
        }
    }
    let n = assignment.len();
    let m = counts.len();
    let (source, sink) = (0, n + m + 1);
    let mut g = FlowGraph::new(n + m + 2);
    let mut edges = Vec::with_capacity(n);
    for (k, classes) in assignment.iter().enumerate() {
        g.add_edge(source, 1 + k, shard_size - classes.len());
        edges.push(
            classes
                .iter()
                .map(|&c| g.add_edge(1 + k, 1 + n + c, cap - 1))
                .collect::<Vec<_>>(),
        );
    }
    for (c, &s) in supply.iter().enumerate() {
        g.add_edge(1 + n + c, sink, s);
    }
    let wanted: usize = assignment.iter().map(|cl| shard_size - cl.len()).sum();
    if g.max_flow(source, sink) < wanted {
        return None;
    }
    Some(
        edges
            .iter()
            .map(|row| row.iter().map(|&e| 1 + g.flow(e)).collect())
            .collect(),
    )
}

/// Edmonds-Karp over an edge list.
struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<usize>,
    initial: Vec<usize>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
            initial: Vec::new(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: usize) -> usize {
        let id = self.to.len();
        self.adj[from].push(id);
        self.to.push(to);
        self.cap.push(cap);
        self.initial.push(cap);
        self.adj[to].push(id + 1);
        self.to.push(from);
        self.cap.push(0);
        self.initial.push(0);
        id
    }

    fn flow(&self, edge: usize) -> usize {
        self.initial[edge] - self.cap[edge]
    }

    fn max_flow(&mut self, source: usize, sink: usize) -> usize {
        let mut total = 0;
        loop {
            let mut via = vec![usize::MAX; self.adj.len()];
            let mut queue = std::collections::VecDeque::from([source]);
            let mut seen = vec![false; self.adj.len()];
            seen[source] = true;
            while let Some(u) = queue.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if !seen[v] && self.cap[e] > 0 {
                        seen[v] = true;
                        via[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[sink] {
                return total;
            }
            let mut push = usize::MAX;
            let mut v = sink;
            while v != source {
                let e = via[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = sink;
            while v != source {
                let e = via[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                v = self.to[e ^ 1];
            }
            total += push;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn balanced(per_class: usize, m: usize) -> LabeledDataset {
        let n = per_class * m;
        let labels: Vec<usize> = (0..n).map(|i| i % m).collect();
        LabeledDataset::new(vec![0.0; n], 1, labels, m).unwrap()
    }

    fn assert_disjoint_cover(shards: &[ClientShard], n: usize) {
        let mut seen = BTreeSet::new();
        for s in shards {
            for &i in &s.indices {
                assert!(i < n);
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
        assert_eq!(seen.len(), n);
    }

    #[test]
    fn iid_singletons() {
        let ds = balanced(10, 10);
        let shards = partition_iid(&ds, 100, 0).unwrap();
        assert_eq!(shards.len(), 100);
        assert!(shards.iter().all(|s| s.n_k() == 1));
        assert_disjoint_cover(&shards, 100);
    }

    #[test]
    fn iid_deterministic_and_covering() {
        let ds = balanced(30, 10);
        let a = partition_iid(&ds, 10, 4).unwrap();
        assert_eq!(a, partition_iid(&ds, 10, 4).unwrap());
        assert_ne!(a, partition_iid(&ds, 10, 5).unwrap());
        assert_disjoint_cover(&a, 300);
        assert!(a.iter().enumerate().all(|(k, s)| s.client_id == k && s.n_k() == 30));
    }

    #[test]
    fn iid_rejects_uneven_split() {
        let ds = balanced(10, 10);
        assert!(matches!(partition_iid(&ds, 7, 0), Err(Error::Partition(_))));
        assert!(partition_iid(&ds, 0, 0).is_err());
    }

    #[test]
    fn noniid_five_of_ten_classes() {
        let ds = balanced(1000, 10);
        let shards = partition_noniid(&ds, 100, 5, 9).unwrap();
        assert_disjoint_cover(&shards, 10_000);
        for s in &shards {
            assert_eq!(s.n_k(), 100);
            let support: BTreeSet<usize> =
                s.indices.iter().map(|&i| ds.true_labels()[i]).collect();
            assert_eq!(support.len(), 5);
        }
        assert_eq!(shards, partition_noniid(&ds, 100, 5, 9).unwrap());
    }

    #[test]
    fn noniid_all_classes_is_stratified() {
        let ds = balanced(100, 10);
        let shards = partition_noniid(&ds, 10, 10, 1).unwrap();
        assert_disjoint_cover(&shards, 1000);
        for s in &shards {
            let mut hist = [0usize; 10];
            for &i in &s.indices {
                hist[ds.true_labels()[i]] += 1;
            }
            assert_eq!(hist, [10; 10]);
        }
    }

    #[test]
    fn noniid_infeasible_reports_diagnostic() {
        // class 0 has 2 samples, everyone else many: 4 clients x 2 classes can
        // still be balanced, but a single class per client with size 9 cannot.
        let mut labels = vec![0, 0];
        labels.extend((0..30).map(|i| 1 + i % 2));
        let ds = LabeledDataset::new(vec![0.0; 32], 1, labels, 3).unwrap();
        let err = partition_noniid(&ds, 2, 1, 0).unwrap_err();
        assert!(err.to_string().contains("cannot give"), "{err}");
        assert!(partition_noniid(&ds, 2, 4, 0).is_err());
        assert!(partition_noniid(&ds, 40, 1, 0).is_err());
    }

    #[test]
    fn noniid_drops_surplus() {
        let ds = balanced(13, 4);
        let shards = partition_noniid(&ds, 5, 2, 3).unwrap();
        assert!(shards.iter().all(|s| s.n_k() == 10));
        let used: usize = shards.iter().map(ClientShard::n_k).sum();
        assert_eq!(used, 50);
    }

    #[test]
    fn noniid_tight_counts_still_solved() {
        // 44 samples, 4 clients of 11 from 2 classes each: a greedy even
        // split paints itself into a corner here.
        let ds = balanced(11, 4);
        let shards = partition_noniid(&ds, 4, 2, 3).unwrap();
        assert_disjoint_cover(&shards, 44);
        for s in &shards {
            let support: BTreeSet<usize> =
                s.indices.iter().map(|&i| ds.true_labels()[i]).collect();
            assert_eq!(support.len(), 2);
        }
    }

    #[test]
    fn noniid_handles_unequal_classes() {
        let mut labels = Vec::new();
        for (c, n) in [60, 45, 52, 70, 48].into_iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, n));
        }
        let n = labels.len();
        let ds = LabeledDataset::new(vec![0.0; n], 1, labels, 5).unwrap();
        let shards = partition_noniid(&ds, 10, 3, 8).unwrap();
        for s in &shards {
            assert_eq!(s.n_k(), n / 10);
        }
    }
}
