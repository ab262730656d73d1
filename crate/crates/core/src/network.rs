//! Range-based topology and synchronous-round flooding.
//!
//! Nodes hand outgoing messages to a [`FloodNetwork`]; delivery floods every
//! queued message in `(origin, sequence)` order and logs its cost. Per-hop
//! relaying uses duplicate suppression: a node forwards a message to all its
//! neighbors once, in the round after it first receives it.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub positions: Vec<Point>,
    pub comm_range: f64,
    adjacency: Vec<BTreeSet<usize>>,
}

impl Topology {
    /// Links every pair of nodes within `comm_range` of each other.
    pub fn build(positions: &[Point], comm_range: f64) -> Self {
        let n = positions.len();
        let mut adjacency = vec![BTreeSet::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                if positions[i].distance(positions[j]) <= comm_range {
                    adjacency[i].insert(j);
                    adjacency[j].insert(i);
                }
            }
        }
        Self {
            positions: positions.to_vec(),
            comm_range,
            adjacency,
        }
    }

    /// Topology from an explicit edge list, positions left at the origin.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![BTreeSet::new(); nodes];
        for &(a, b) in edges {
            if a >= nodes || b >= nodes || a == b {
                return Err(Error::InvalidArgument(format!("bad edge ({a}, {b})")));
            }
            adjacency[a].insert(b);
            adjacency[b].insert(a);
        }
        Ok(Self {
            positions: vec![Point::default(); nodes],
            comm_range: 0.0,
            adjacency,
        })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &BTreeSet<usize> {
        &self.adjacency[node]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Hop count from `origin` to every node, `None` when unreachable.
    pub fn hop_distances(&self, origin: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        let mut queue = VecDeque::from([origin]);
        dist[origin] = Some(0);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            let members: Vec<usize> = self
                .hop_distances(start)
                .iter()
                .enumerate()
                .filter_map(|(i, d)| d.map(|_| i))
                .collect();
            for &m in &members {
                seen[m] = true;
            }
            out.push(members);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloodMessage<P> {
    pub origin: usize,
    pub sequence: u64,
    pub payload: P,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReport {
    pub origin: usize,
    pub sequence: u64,
    /// Round in which each node first holds the message; the origin holds it
    /// at round 0.
    pub receipt_round: Vec<Option<usize>>,
    /// Rounds until every reachable node holds the message.
    pub rounds: usize,
    /// Point-to-point transmissions, counting suppressed duplicates.
    pub copies: usize,
}

impl DeliveryReport {
    pub fn unreachable(&self) -> Vec<usize> {
        (0..self.receipt_round.len())
            .filter(|&i| self.receipt_round[i].is_none())
            .collect()
    }
}

/// Floods one message through `topology` in synchronous rounds.
pub fn flood_broadcast<P>(
    topology: &Topology,
    message: &FloodMessage<P>,
    max_rounds: usize,
) -> Result<DeliveryReport> {
    let n = topology.len();
    if message.origin >= n {
        return Err(Error::InvalidArgument(format!("unknown origin {}", message.origin)));
    }
    let mut receipt = vec![None; n];
    receipt[message.origin] = Some(0);
    let mut frontier = vec![message.origin];
    let mut rounds = 0;
    let mut copies = 0;
    while !frontier.is_empty() && rounds < max_rounds {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in topology.neighbors(u) {
                copies += 1;
                if receipt[v].is_none() {
                    receipt[v] = Some(rounds + 1);
                    next.push(v);
                }
            }
        }
        if !next.is_empty() {
            rounds += 1;
        }
        frontier = next;
    }
    if !frontier.is_empty() {
        // nodes reached in the last allowed round still have to relay
        let reachable = topology.hop_distances(message.origin);
        let undelivered = reachable
            .iter()
            .zip(&receipt)
            .filter(|(d, r)| d.is_some() && r.is_none())
            .count();
        if undelivered > 0 {
            return Err(Error::FloodIncomplete {
                undelivered,
                max_rounds,
            });
        }
    }
    Ok(DeliveryReport {
        origin: message.origin,
        sequence: message.sequence,
        receipt_round: receipt,
        rounds,
        copies,
    })
}

/// Bytes needed to send one action index plus an LMB density with
/// `label_count` labels.
pub fn message_cost(label_count: usize) -> usize {
    4 * (1 + (4 + 10 * label_count)) + 1
}

/// One flooded message in the communication log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommRecord {
    pub step: u32,
    pub phase: String,
    pub origin: usize,
    pub sequence: u64,
    pub bytes: usize,
    pub rounds: usize,
    pub copies: usize,
}

struct Outbox<P> {
    next_sequence: Vec<u64>,
    queue: Vec<FloodMessage<P>>,
}

/// Message hub shared by the nodes of one run.
pub struct FloodNetwork<P> {
    topology: Topology,
    outbox: Mutex<Outbox<P>>,
    log: Vec<CommRecord>,
}

impl<P> FloodNetwork<P> {
    pub fn new(topology: Topology) -> Self {
        let n = topology.len();
        Self {
            topology,
            outbox: Mutex::new(Outbox {
                next_sequence: vec![0; n],
                queue: Vec::new(),
            }),
            log: Vec::new(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Replaces the topology after sensors move. Sequence numbers carry over.
    pub fn set_topology(&mut self, topology: Topology) {
        let outbox = self.outbox.get_mut().expect("outbox lock poisoned");
        outbox.next_sequence.resize(topology.len(), 0);
        self.topology = topology;
    }

    /// Queues a message from `origin` and returns its sequence number.
    pub fn submit(&self, origin: usize, payload: P) -> u64 {
        let mut outbox = self.outbox.lock().expect("outbox lock poisoned");
        let sequence = outbox.next_sequence[origin];
        outbox.next_sequence[origin] += 1;
        outbox.queue.push(FloodMessage {
            origin,
            sequence,
            payload,
        });
        sequence
    }

    /// Floods every queued message, logging `cost(payload)` bytes for each.
    pub fn deliver(
        &mut self,
        step: u32,
        phase: &str,
        cost: impl Fn(&P) -> usize,
    ) -> Result<Vec<(FloodMessage<P>, DeliveryReport)>> {
        let mut queue = std::mem::take(&mut self.outbox.get_mut().expect("outbox lock poisoned").queue);
        queue.sort_by_key(|m| (m.origin, m.sequence));
        let max_rounds = self.topology.len().max(1);
        let mut out = Vec::with_capacity(queue.len());
        for message in queue {
            let report = flood_broadcast(&self.topology, &message, max_rounds)?;
            self.log.push(CommRecord {
                step,
                phase: phase.to_string(),
                origin: message.origin,
                sequence: message.sequence,
                bytes: cost(&message.payload),
                rounds: report.rounds,
                copies: report.copies,
            });
            out.push((message, report));
        }
        Ok(out)
    }

    pub fn log(&self) -> &[CommRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<CommRecord> {
        self.log
    }
}
