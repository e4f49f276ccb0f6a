use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{seeded_rng, OverlayConfig, SimError};
use crate::stream::PeerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Holds the whole stream and never plays.
    Source,
    /// Holds a preloaded set of chunks and never plays.
    Seed,
    Receiver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerSpec {
    pub id: PeerId,
    pub role: Role,
    /// Bandwidth class index, `None` for the source and seeds.
    pub class: Option<usize>,
    pub download_kbps: f64,
    pub upload_kbps: f64,
}

/// Peers and an undirected neighbor graph. Peer `i` has id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    peers: Vec<PeerSpec>,
    adjacency: Vec<Vec<usize>>,
}

impl Overlay {
    /// Overlay from explicit peers and edges between peer indices.
    pub fn from_edges(peers: Vec<PeerSpec>, edges: &[(usize, usize)]) -> Result<Self, SimError> {
        let mut adjacency = vec![Vec::new(); peers.len()];
        for &(a, b) in edges {
            if a >= peers.len() || b >= peers.len() || a == b {
                return Err(SimError::Overlay(format!("bad edge {a}-{b}")));
            }
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        adjacency.iter_mut().for_each(|n| n.sort_unstable());
        Ok(Self { peers, adjacency })
    }

    pub fn peers(&self) -> &[PeerSpec] {
        &self.peers
    }

    pub fn peers_mut(&mut self) -> &mut [PeerSpec] {
        &mut self.peers
    }

    pub fn neighbors(&self, peer: usize) -> &[usize] {
        &self.adjacency[peer]
    }

    pub fn degree(&self, peer: usize) -> usize {
        self.adjacency[peer].len()
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Peers reachable from `start` by breadth-first search.
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.peers.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// `a b` per line with `a < b`, sorted.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (a, ns) in self.adjacency.iter().enumerate() {
            for &b in ns.iter().filter(|&&b| b > a) {
                let _ = writeln!(out, "{a} {b}");
            }
        }
        out
    }
}

/// Split `total` items over `fractions` by largest remainder; ties go to the
/// earlier class.
pub fn class_counts(fractions: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = fractions.iter().sum();
    let exact: Vec<f64> = fractions.iter().map(|f| f / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// One source (id 0) plus `peer_count` receivers on a connected random graph.
///
/// A random spanning tree guarantees connectivity; extra random edges then
/// raise every peer towards the target degree without exceeding the cap.
pub fn build_overlay(cfg: &OverlayConfig, seed: u64) -> Result<Overlay, SimError> {
    cfg.validate()?;
    let n = cfg.peer_count + 1;
    let mut rng: ChaCha8Rng = seeded_rng(seed, "overlay");

    let fractions: Vec<f64> = cfg.classes.iter().map(|c| c.fraction).collect();
    let counts = class_counts(&fractions, cfg.peer_count);
    let mut classes: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    classes.shuffle(&mut rng);

    let mut peers = vec![PeerSpec {
        id: PeerId(0),
        role: Role::Source,
        class: None,
        download_kbps: 0.0,
        upload_kbps: cfg.source_upload_kbps,
    }];
    for (i, &class) in classes.iter().enumerate() {
        let down = cfg.classes[class].download_kbps;
        peers.push(PeerSpec {
            id: PeerId(i as u32 + 1),
            role: Role::Receiver,
            class: Some(class),
            download_kbps: down,
            upload_kbps: down * cfg.upload_ratio,
        });
    }

    let target = cfg.neighbors.min(n - 1);
    let cap = cfg.max_degree;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let connect = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        adj[a].push(b);
        adj[b].push(a);
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for i in 1..n {
        let open: Vec<usize> = order[..i].iter().copied().filter(|&v| adj[v].len() < cap).collect();
        let &parent = open.choose(&mut rng).ok_or_else(|| SimError::Overlay("degree cap too small for a tree".into()))?;
        connect(&mut adj, order[i], parent);
    }

    let mut fill: Vec<usize> = (0..n).collect();
    fill.shuffle(&mut rng);
    for &u in &fill {
        if adj[u].len() >= target {
            continue;
        }
        let mut under: Vec<usize> =
            (0..n).filter(|&v| v != u && !adj[u].contains(&v) && adj[v].len() < target).collect();
        under.shuffle(&mut rng);
        let mut spare: Vec<usize> = (0..n)
            .filter(|&v| v != u && !adj[u].contains(&v) && adj[v].len() >= target && adj[v].len() < cap)
            .collect();
        spare.shuffle(&mut rng);
        for v in under.into_iter().chain(spare) {
            if adj[u].len() >= target {
                break;
            }
            connect(&mut adj, u, v);
        }
    }
    adj.iter_mut().for_each(|ns| ns.sort_unstable());
    let overlay = Overlay { peers, adjacency: adj };
    debug_assert!(overlay.reachable_from(0).iter().all(|&r| r));
    Ok(overlay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::BandwidthClass;

    fn cfg(peers: usize, neighbors: usize) -> OverlayConfig {
        OverlayConfig { peer_count: peers, neighbors, ..OverlayConfig::default() }
    }

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(class_counts(&[0.4, 0.3, 0.3], 50), vec![20, 15, 15]);
        assert_eq!(class_counts(&[0.4, 0.3, 0.3], 7), vec![3, 2, 2]);
        assert_eq!(class_counts(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(class_counts(&[0.5, 0.5], 0), vec![0, 0]);
    }

    #[test]
    fn one_receiver_single_edge() {
        let o = build_overlay(&cfg(1, 8), 3).unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o.edge_count(), 1);
        assert_eq!(o.edge_list(), "0 1\n");
    }

    #[test]
    fn fifty_peers_connected_with_bounded_degree() {
        for seed in 0..10 {
            let o = build_overlay(&cfg(50, 8), seed).unwrap();
            assert!(o.reachable_from(0).iter().all(|&r| r));
            for p in 0..o.len() {
                assert!((1..=30).contains(&o.degree(p)), "degree {}", o.degree(p));
                assert!(o.degree(p) >= 8);
            }
            let counts: Vec<usize> = (0..3)
                .map(|c| o.peers().iter().filter(|p| p.class == Some(c)).count())
                .collect();
            assert_eq!(counts, vec![20, 15, 15]);
        }
    }

    #[test]
    fn class_bandwidths_and_upload_ratio() {
        let o = build_overlay(&cfg(50, 8), 1).unwrap();
        for p in &o.peers()[1..] {
            let class: &BandwidthClass = &OverlayConfig::default().classes[p.class.unwrap()];
            assert_eq!(p.download_kbps, class.download_kbps);
            assert_eq!(p.upload_kbps, p.download_kbps / 2.0);
        }
    }

    #[test]
    fn same_seed_same_graph() {
        assert_eq!(build_overlay(&cfg(50, 12), 4).unwrap(), build_overlay(&cfg(50, 12), 4).unwrap());
        assert_ne!(build_overlay(&cfg(50, 12), 4).unwrap(), build_overlay(&cfg(50, 12), 5).unwrap());
    }

    #[test]
    fn rejects_impossible_degrees() {
        assert!(build_overlay(&OverlayConfig { max_degree: 0, ..cfg(5, 2) }, 0).is_err());
        assert!(build_overlay(&OverlayConfig { neighbors: 31, ..cfg(50, 2) }, 0).is_err());
        assert!(build_overlay(&cfg(5, 0), 0).is_err());
    }
}
