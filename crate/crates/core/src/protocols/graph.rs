//! Rank adjacency and per-owner relay trees for neighbor-only exchange.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Box3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub owner: usize,
    /// Sorted, without the owner.
    pub neighbors: Vec<usize>,
    pub epsilon: f64,
}

impl NeighborSet {
    pub fn contains(&self, rank: usize) -> bool {
        self.neighbors.binary_search(&rank).is_ok()
    }
}

/// Ranks whose domain boxes, each inflated by `epsilon`, intersect.
pub fn build_neighbors(domains: &[Box3], epsilon: f64) -> Result<Vec<NeighborSet>> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!("adjacency tolerance must be nonnegative, got {epsilon}")));
    }
    let inflated: Vec<Box3> = domains.iter().map(|b| b.inflate(epsilon)).collect();
    let sets: Vec<NeighborSet> = (0..domains.len())
        .map(|i| NeighborSet {
            owner: i,
            neighbors: (0..domains.len()).filter(|&j| j != i && inflated[i].intersects(&inflated[j])).collect(),
            epsilon,
        })
        .collect();
    if domains.len() > 1 {
        if let Some(s) = sets.iter().find(|s| s.neighbors.is_empty()) {
            return Err(Error::Disconnected {
                owner: s.owner,
                unreachable: (0..domains.len()).filter(|&j| j != s.owner).collect(),
            });
        }
    }
    Ok(sets)
}

/// `ceil((tau - zeta) / (zeta - 1))`: average second-shell load per direct
/// neighbor, with `tau` the two-hop neighborhood and `zeta` the direct
/// neighborhood, both counting the owner.
pub fn nb_bound(two_hop: usize, neighborhood: usize) -> Result<usize> {
    if neighborhood < 2 {
        return Err(Error::invalid(format!(
            "neighborhood count including self must be at least 2, got {neighborhood}"
        )));
    }
    if two_hop < neighborhood {
        return Err(Error::invalid(format!("two-hop count {two_hop} is smaller than the neighborhood {neighborhood}")));
    }
    Ok((two_hop - neighborhood).div_ceil(neighborhood - 1))
}

/// Size of the two-hop neighborhood of `owner`, including itself.
pub fn two_hop_count(neighbors: &[NeighborSet], owner: usize) -> usize {
    let mut seen = vec![false; neighbors.len()];
    seen[owner] = true;
    for &n in &neighbors[owner].neighbors {
        seen[n] = true;
        for &m in &neighbors[n].neighbors {
            seen[m] = true;
        }
    }
    seen.iter().filter(|&&s| s).count()
}

/// Breadth-first relay tree rooted at `owner`: data for the owner flows
/// from each rank through its relay, one level per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    pub owner: usize,
    /// `levels[l - 1]` holds `(node, relay)` pairs at distance `l`; level-1
    /// relays are the owner itself.
    pub levels: Vec<Vec<(usize, usize)>>,
    /// Distance from the owner, `None` for the owner.
    pub level_of: Vec<Option<usize>>,
    /// Next hop toward the owner.
    pub relay_of: Vec<Option<usize>>,
    /// Number of nodes each rank relays for directly.
    pub load: BTreeMap<usize, usize>,
}

impl CommGraph {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Ranks from `node` to the owner, both included.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut p = vec![node];
        let mut x = node;
        while let Some(r) = self.relay_of[x] {
            p.push(r);
            x = r;
        }
        p
    }

    /// The direct neighbor of the owner that `node`'s data enters through.
    pub fn entry_neighbor(&self, node: usize) -> Option<usize> {
        let p = self.path(node);
        (p.len() >= 2).then(|| p[p.len() - 2])
    }

    /// For stage `stage`, how many origins each direct neighbor forwards
    /// into the owner.
    pub fn relay_counts(&self, stage: usize) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        if let Some(level) = self.levels.get(stage.wrapping_sub(1)) {
            for &(node, _) in level {
                if let Some(w) = self.entry_neighbor(node) {
                    *out.entry(w).or_insert(0) += 1;
                }
            }
        }
        out
    }
}

/// BFS from `owner`. Ranks with fewer candidate relays are placed first;
/// each picks the candidate whose entry neighbor carries the fewest flows of
/// the current level, then the least loaded candidate, then the lowest id.
pub fn build_comm_graph(neighbors: &[NeighborSet], owner: usize) -> Result<CommGraph> {
    let p = neighbors.len();
    if owner >= p {
        return Err(Error::invalid(format!("owner {owner} out of range for {p} ranks")));
    }
    let mut level_of = vec![None; p];
    let mut relay_of = vec![None; p];
    let mut load = BTreeMap::new();
    let mut levels = Vec::new();
    let mut entry: Vec<Option<usize>> = vec![None; p];
    let mut found = vec![false; p];
    found[owner] = true;
    let mut frontier = vec![owner];
    let mut depth = 0;
    while !frontier.is_empty() {
        depth += 1;
        // candidates: frontier ranks adjacent to each undiscovered rank
        let mut cand: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &f in &frontier {
            for &n in &neighbors[f].neighbors {
                if !found[n] {
                    cand.entry(n).or_default().push(f);
                }
            }
        }
        let mut order: Vec<(usize, Vec<usize>)> = cand.into_iter().collect();
        order.sort_by_key(|(n, c)| (c.len(), *n));
        let mut level = Vec::with_capacity(order.len());
        // flows of this level entering the owner through each direct neighbor
        let mut stage_load: BTreeMap<usize, usize> = BTreeMap::new();
        for (n, mut c) in order {
            c.sort_unstable();
            let relay = *c
                .iter()
                .min_by_key(|&&r| {
                    let via = entry[r].unwrap_or(n);
                    (stage_load.get(&via).copied().unwrap_or(0), load.get(&r).copied().unwrap_or(0), r)
                })
                .expect("candidate list is non-empty");
            *load.entry(relay).or_insert(0) += 1;
            let via = entry[relay].unwrap_or(n);
            *stage_load.entry(via).or_insert(0) += 1;
            entry[n] = Some(via);
            found[n] = true;
            level_of[n] = Some(depth);
            relay_of[n] = Some(relay);
            level.push((n, relay));
        }
        level.sort_unstable();
        frontier = level.iter().map(|&(n, _)| n).collect();
        if !level.is_empty() {
            levels.push(level);
        }
    }
    let unreachable: Vec<usize> = (0..p).filter(|&r| !found[r]).collect();
    if !unreachable.is_empty() {
        return Err(Error::Disconnected { owner, unreachable });
    }
    Ok(CommGraph { owner, levels, level_of, relay_of, load })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_boxes(k: usize, dims: usize) -> Vec<Box3> {
        let kz = if dims == 3 { k } else { 1 };
        let mut out = Vec::new();
        for l in 0..kz {
            for j in 0..k {
                for i in 0..k {
                    let lo = [i as f64, j as f64, l as f64];
                    out.push(Box3::new(lo, [lo[0] + 1.0, lo[1] + 1.0, lo[2] + 1.0]).unwrap());
                }
            }
        }
        out
    }

    fn chain(n: usize) -> Vec<Box3> {
        (0..n).map(|i| Box3::new([i as f64, 0.0, 0.0], [i as f64 + 1.0, 1.0, 1.0]).unwrap()).collect()
    }

    #[test]
    fn grid_neighbor_counts() {
        let n = build_neighbors(&grid_boxes(3, 3), 1e-9).unwrap();
        assert_eq!(n[13].neighbors.len(), 26);
        assert_eq!(n[0].neighbors.len(), 7);
        let c = build_neighbors(&chain(5), 1e-9).unwrap();
        assert_eq!(c.iter().map(|s| s.neighbors.len()).collect::<Vec<_>>(), vec![1, 2, 2, 2, 1]);
    }

    #[test]
    fn neighbors_are_symmetric() {
        let n = build_neighbors(&grid_boxes(4, 3), 1e-9).unwrap();
        for s in &n {
            assert!(!s.contains(s.owner));
            for &j in &s.neighbors {
                assert!(n[j].contains(s.owner));
            }
        }
    }

    #[test]
    fn gap_larger_than_epsilon_disconnects() {
        let boxes = vec![Box3::new([0.0; 3], [1.0; 3]).unwrap(), Box3::new([1.1, 0.0, 0.0], [2.0, 1.0, 1.0]).unwrap()];
        assert!(matches!(build_neighbors(&boxes, 1e-3), Err(Error::Disconnected { .. })));
        assert_eq!(build_neighbors(&boxes, 0.06).unwrap()[0].neighbors, vec![1]);
    }

    #[test]
    fn nb_bound_values() {
        assert_eq!(nb_bound(125, 27).unwrap(), 4);
        assert_eq!(nb_bound(25, 9).unwrap(), 2);
        assert_eq!(nb_bound(27, 27).unwrap(), 0);
        assert!(nb_bound(5, 1).is_err());
    }

    #[test]
    fn chain_comm_graph() {
        let n = build_neighbors(&chain(5), 1e-9).unwrap();
        let g = build_comm_graph(&n, 2).unwrap();
        assert_eq!(g.levels, vec![vec![(1, 2), (3, 2)], vec![(0, 1), (4, 3)]]);
        assert_eq!(g.path(0), vec![0, 1, 2]);
        assert_eq!(g.depth(), 2);
    }

    #[test]
    fn single_rank_graph_is_empty() {
        let n = build_neighbors(&chain(1), 1e-9).unwrap();
        let g = build_comm_graph(&n, 0).unwrap();
        assert_eq!(g.depth(), 0);
    }

    #[test]
    fn square_grid_relays_at_most_two() {
        let n = build_neighbors(&grid_boxes(3, 2), 1e-9).unwrap();
        let g = build_comm_graph(&n, 4).unwrap();
        assert_eq!(g.depth(), 1);
        let n = build_neighbors(&grid_boxes(5, 2), 1e-9).unwrap();
        let g = build_comm_graph(&n, 12).unwrap();
        let tau = two_hop_count(&n, 12);
        assert_eq!(tau, 25);
        assert!(g.relay_counts(2).values().all(|&c| c <= nb_bound(25, 9).unwrap()));
    }

    #[test]
    fn cube_grid_center_meets_the_bound() {
        let n = build_neighbors(&grid_boxes(5, 3), 1e-9).unwrap();
        let center = 62;
        assert_eq!(n[center].neighbors.len(), 26);
        let g = build_comm_graph(&n, center).unwrap();
        assert_eq!(g.depth(), 2);
        let counts = g.relay_counts(2);
        assert_eq!(counts.values().sum::<usize>(), 98);
        assert!(counts.values().all(|&c| c <= 4), "{counts:?}");
    }

    #[test]
    fn disconnected_graph_lists_unreachable() {
        let sets = vec![
            NeighborSet { owner: 0, neighbors: vec![1], epsilon: 0.0 },
            NeighborSet { owner: 1, neighbors: vec![0], epsilon: 0.0 },
            NeighborSet { owner: 2, neighbors: vec![], epsilon: 0.0 },
        ];
        assert_eq!(build_comm_graph(&sets, 0), Err(Error::Disconnected { owner: 0, unreachable: vec![2] }));
    }
}
