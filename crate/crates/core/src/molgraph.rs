//! Ring perception, all-pairs shortest paths, and pairwise path features.
//!
//! The path features for an ordered pair `(i, j)` concatenate three blocks:
//! the bond features of the reconstructed shortest path (one 6-wide slot per
//! bond, zero-padded to `d` slots, zeroed entirely when the path is longer
//! than `d`), a distance one-hot over `{1..d, >d-or-unreachable}`, and three
//! shared-ring flags (same ring, same aromatic 5-ring, same aromatic 6-ring).

use crate::autodiff::Tensor;
use crate::smiles::{node_features, parse_smiles, BondOrder, MolGraph, ParseError};

/// Perceived rings: for every bond that lies on a cycle, the smallest simple
/// cycle through it, deduplicated.
#[derive(Debug, Clone)]
pub struct RingSet {
    /// Each ring is a simple cycle listed as an atom sequence.
    pub rings: Vec<Vec<usize>>,
    /// Parallel to the graph's bond list.
    pub per_bond_ring: Vec<bool>,
    /// Per-ring flag: five-membered, all atoms aromatic.
    pub aromatic5: Vec<bool>,
    /// Per-ring flag: six-membered, all atoms aromatic.
    pub aromatic6: Vec<bool>,
}

impl RingSet {
    pub fn n_rings(&self) -> usize {
        self.rings.len()
    }

    /// True when some perceived ring contains both atoms.
    pub fn same_ring(&self, i: usize, j: usize) -> bool {
        self.rings.iter().any(|r| r.contains(&i) && r.contains(&j))
    }
}

/// BFS distances from `start`; `-1` marks unreachable. `skip_bond` removes
/// one bond (by endpoints) from the graph for smallest-cycle searches.
fn bfs_dist(g: &MolGraph, start: usize, skip_bond: Option<(usize, usize)>) -> Vec<i32> {
    let n = g.n_atoms();
    let mut dist = vec![-1i32; n];
    dist[start] = 0;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &v in &g.adjacency[u] {
            if let Some((a, b)) = skip_bond {
                if (u, v) == (a, b) || (u, v) == (b, a) {
                    continue;
                }
            }
            if dist[v] < 0 {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Walk back from `to` toward `start` picking the lowest-index predecessor
/// at each step; returns the path `start..=to`. Caller guarantees
/// reachability.
fn reconstruct(g: &MolGraph, dist: &[i32], start: usize, to: usize) -> Vec<usize> {
    let mut path = vec![to];
    let mut cur = to;
    while cur != start {
        let want = dist[cur] - 1;
        // adjacency is ascending, so the first hit is the lowest index
        let pred = *g.adjacency[cur]
            .iter()
            .find(|&&u| dist[u] == want)
            .expect("predecessor must exist on a reachable path");
        path.push(pred);
        cur = pred;
    }
    path.reverse();
    path
}

/// Canonical form for cycle deduplication: rotate so the minimum atom leads,
/// then pick the direction with the smaller second element.
fn canonical_cycle(cycle: &[usize]) -> Vec<usize> {
    let k = cycle.len();
    let min_pos = (0..k).min_by_key(|&i| cycle[i]).unwrap();
    let fwd: Vec<usize> = (0..k).map(|i| cycle[(min_pos + i) % k]).collect();
    let rev: Vec<usize> = (0..k).map(|i| cycle[(min_pos + k - i) % k]).collect();
    if fwd[1..] <= rev[1..] {
        fwd
    } else {
        rev
    }
}

/// For each bond on a cycle, find the smallest simple cycle containing it
/// (shortest path between the endpoints with the bond removed), then return
/// the deduplicated union of these cycles.
pub fn perceive_rings(g: &MolGraph) -> RingSet {
    let mut seen = std::collections::HashSet::new();
    let mut rings: Vec<Vec<usize>> = Vec::new();
    for bond in &g.bonds {
        let dist = bfs_dist(g, bond.a, Some((bond.a, bond.b)));
        if dist[bond.b] < 0 {
            continue; // bridge bond, no cycle
        }
        let cycle = reconstruct(g, &dist, bond.a, bond.b);
        let canon = canonical_cycle(&cycle);
        if seen.insert(canon.clone()) {
            rings.push(canon);
        }
    }

    let mut per_bond_ring = vec![false; g.bonds.len()];
    for ring in &rings {
        let k = ring.len();
        for idx in 0..k {
            let (u, v) = (ring[idx], ring[(idx + 1) % k]);
            for (bi, bond) in g.bonds.iter().enumerate() {
                if (bond.a == u && bond.b == v) || (bond.a == v && bond.b == u) {
                    per_bond_ring[bi] = true;
                }
            }
        }
    }

    let aromatic5 = rings
        .iter()
        .map(|r| r.len() == 5 && r.iter().all(|&i| g.atoms[i].is_aromatic))
        .collect();
    let aromatic6 = rings
        .iter()
        .map(|r| r.len() == 6 && r.iter().all(|&i| g.atoms[i].is_aromatic))
        .collect();

    RingSet {
        rings,
        per_bond_ring,
        aromatic5,
        aromatic6,
    }
}

/// Stamp perceived ring membership onto the graph's bonds.
pub fn apply_ring_flags(g: &mut MolGraph, rings: &RingSet) {
    for (bond, &in_ring) in g.bonds.iter_mut().zip(&rings.per_bond_ring) {
        bond.in_ring = in_ring;
    }
}

/// All-pairs shortest paths by BFS from every node. Unreachable pairs carry
/// distance `-1`. Ties between equal-length paths resolve toward the
/// lowest-index predecessor, so reconstruction is deterministic.
#[derive(Debug, Clone)]
pub struct Apsp {
    pub n: usize,
    dist: Vec<i32>,
    pred: Vec<i32>,
}

impl Apsp {
    pub fn dist(&self, i: usize, j: usize) -> i32 {
        self.dist[i * self.n + j]
    }

    /// Atom sequence of the chosen geodesic `i..=j`; `None` when unreachable.
    pub fn path(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        if self.dist(i, j) < 0 {
            return None;
        }
        let mut path = vec![j];
        let mut cur = j;
        while cur != i {
            let p = self.pred[i * self.n + cur];
            debug_assert!(p >= 0);
            cur = p as usize;
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}

pub fn all_pairs_shortest(g: &MolGraph) -> Apsp {
    let n = g.n_atoms();
    let mut dist = vec![-1i32; n * n];
    let mut pred = vec![-1i32; n * n];
    for i in 0..n {
        let d = bfs_dist(g, i, None);
        for j in 0..n {
            dist[i * n + j] = d[j];
            if j != i && d[j] > 0 {
                let want = d[j] - 1;
                let p = g.adjacency[j]
                    .iter()
                    .find(|&&u| d[u] == want)
                    .copied()
                    .expect("reachable node has a predecessor");
                pred[i * n + j] = p as i32;
            }
        }
    }
    Apsp { n, dist, pred }
}

/// Bond-feature width: bond-type one-hot (4) + conjugated + in-ring.
pub const BOND_FEATURES: usize = 6;

pub fn bond_feature_vec(order: BondOrder, conjugated: bool, in_ring: bool) -> [f64; BOND_FEATURES] {
    let mut f = [0.0; BOND_FEATURES];
    f[order.feature_bin()] = 1.0;
    f[4] = if conjugated { 1.0 } else { 0.0 };
    f[5] = if in_ring { 1.0 } else { 0.0 };
    f
}

/// Width of the per-pair feature vector for truncation distance `d`.
pub fn path_feature_width(d: usize) -> usize {
    d * BOND_FEATURES + (d + 1) + 3
}

/// Dense `n x n x F_p` pairwise features, row-major over (i, j, feature).
#[derive(Debug, Clone)]
pub struct PathFeatureTensor {
    pub n: usize,
    pub d: usize,
    pub f_p: usize,
    pub data: Vec<f64>,
}

impl PathFeatureTensor {
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.n + j) * self.f_p;
        &self.data[o..o + self.f_p]
    }

    /// View as a `(n*n, F_p)` matrix, pair-major, for the models.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::from_vec(self.n * self.n, self.f_p, self.data.clone())
    }

    pub fn distance_bin(&self, i: usize, j: usize) -> &[f64] {
        &self.pair(i, j)[self.d * BOND_FEATURES..self.d * BOND_FEATURES + self.d + 1]
    }

    pub fn ring_flags(&self, i: usize, j: usize) -> &[f64] {
        &self.pair(i, j)[self.d * BOND_FEATURES + self.d + 1..]
    }
}

/// Build the pairwise path-feature tensor. `d >= 1`.
pub fn path_features(g: &MolGraph, rings: &RingSet, apsp: &Apsp, d: usize) -> PathFeatureTensor {
    assert!(d >= 1, "truncation distance must be at least 1");
    let n = g.n_atoms();
    let f_p = path_feature_width(d);
    let mut data = vec![0.0; n * n * f_p];

    // ring ids per atom, for the shared-ring flags
    let mut atom_rings: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (ri, ring) in rings.rings.iter().enumerate() {
        for &a in ring {
            atom_rings[a].push(ri);
        }
    }

    for (i, rings_of_i) in atom_rings.iter().enumerate() {
        for j in 0..n {
            if i == j {
                continue;
            }
            let off = (i * n + j) * f_p;
            let slot = &mut data[off..off + f_p];
            let dist = apsp.dist(i, j);
            let within = dist >= 1 && dist as usize <= d;
            if within {
                let path = apsp.path(i, j).expect("finite distance has a path");
                for (k, win) in path.windows(2).enumerate() {
                    let bond = g
                        .bond_between(win[0], win[1])
                        .expect("path steps along bonds");
                    let f = bond_feature_vec(bond.order, bond.is_conjugated, bond.in_ring);
                    slot[k * BOND_FEATURES..(k + 1) * BOND_FEATURES].copy_from_slice(&f);
                }
                slot[d * BOND_FEATURES + (dist as usize - 1)] = 1.0;
            } else {
                // beyond d or unreachable: edge block stays zero, far bin set
                slot[d * BOND_FEATURES + d] = 1.0;
            }
            let ring_off = d * BOND_FEATURES + d + 1;
            let mut same = false;
            let mut arom5 = false;
            let mut arom6 = false;
            for &ri in rings_of_i {
                if rings.rings[ri].contains(&j) {
                    same = true;
                    arom5 |= rings.aromatic5[ri];
                    arom6 |= rings.aromatic6[ri];
                }
            }
            if same {
                slot[ring_off] = 1.0;
            }
            if arom5 {
                slot[ring_off + 1] = 1.0;
            }
            if arom6 {
                slot[ring_off + 2] = 1.0;
            }
        }
    }

    PathFeatureTensor { n, d, f_p, data }
}

/// A molecule ready for the models: parsed graph with ring flags applied,
/// node features, pairwise path features, and the distance table.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: MolGraph,
    pub rings: RingSet,
    pub apsp: Apsp,
    pub node_feats: Tensor,
    pub path: PathFeatureTensor,
}

/// Full featurization pipeline for one SMILES string.
pub fn prepare(smiles: &str, d: usize) -> Result<Prepared, ParseError> {
    let mut graph = parse_smiles(smiles)?;
    let rings = perceive_rings(&graph);
    apply_ring_flags(&mut graph, &rings);
    let apsp = all_pairs_shortest(&graph);
    let node_feats = node_features(&graph);
    let path = path_features(&graph, &rings, &apsp, d);
    Ok(Prepared {
        graph,
        rings,
        apsp,
        node_feats,
        path,
    })
}
