//! Database-granularity read/write locks.
//!
//! Every request gets the next lockid of its database and joins a queue
//! ordered by lockid. A read is granted once no earlier write is pending or
//! held; a write once nothing earlier is pending or held, except a read of the
//! same owner (the upgrade case). A blocked request watches the latest earlier
//! node that blocks it and is re-evaluated when that node goes away.
//!
//! The service has a non-blocking core ([`LockService::enqueue`] and
//! [`LockService::poll`]) used by deterministic simulations, and a blocking
//! [`LockService::request_lock`] for threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Condvar, Mutex, MutexGuard};

use serde::Serialize;
use thiserror::Error;

pub type OwnerId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LockType {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeState {
    Waiting,
    Granted,
    Released,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LockNode {
    pub db_name: String,
    pub lockid: u64,
    pub lock_type: LockType,
    pub owner: OwnerId,
    pub state: NodeState,
    /// Lockid this node is watching while it waits.
    pub watching: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LockError {
    #[error("lock service is shut down")]
    ServiceShutdown,
    #[error("no lock {lockid} on {db_name}")]
    UnknownLock { db_name: String, lockid: u64 },
    #[error("lock {lockid} on {db_name} is not granted")]
    NotGranted { db_name: String, lockid: u64 },
    #[error("write request {lockid} on {db_name} would deadlock with another upgrader")]
    UpgradeConflict { db_name: String, lockid: u64 },
    #[error("owner {owner} would wait on its own lock {blocker} on {db_name}")]
    WouldSelfDeadlock {
        db_name: String,
        owner: OwnerId,
        blocker: u64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    lock_type: LockType,
    owner: OwnerId,
    granted: bool,
    watching: Option<u64>,
}

#[derive(Debug, Default)]
struct Queue {
    next_lockid: u64,
    nodes: BTreeMap<u64, Node>,
}

impl Queue {
    fn blocks(requester: &Node, earlier: &Node) -> bool {
        match requester.lock_type {
            LockType::Read => earlier.lock_type == LockType::Write,
            LockType::Write => !(earlier.lock_type == LockType::Read && earlier.owner == requester.owner),
        }
    }

    /// Earlier nodes blocking `lockid`, ascending.
    fn blockers(&self, lockid: u64) -> Vec<u64> {
        let node = &self.nodes[&lockid];
        self.nodes
            .range(..lockid)
            .filter(|(_, earlier)| Self::blocks(node, earlier))
            .map(|(&id, _)| id)
            .collect()
    }

    /// Grants `lockid` or points its watch at the latest blocker.
    fn evaluate(&mut self, lockid: u64) {
        let last = self.blockers(lockid).last().copied();
        let node = self.nodes.get_mut(&lockid).unwrap();
        match last {
            None => {
                node.granted = true;
                node.watching = None;
            }
            Some(blocker) => node.watching = Some(blocker),
        }
    }

    /// Removes a node and re-evaluates everything that watched it.
    fn remove(&mut self, lockid: u64) {
        self.nodes.remove(&lockid);
        let woken: Vec<u64> = self
            .nodes
            .iter()
            .filter(|(_, n)| !n.granted && n.watching == Some(lockid))
            .map(|(&id, _)| id)
            .collect();
        for id in woken {
            self.evaluate(id);
        }
    }

    /// Whether waiting node `lockid` closes a cycle in the owner wait-for
    /// graph.
    fn closes_cycle(&self, lockid: u64) -> bool {
        let mut waits_for: HashMap<OwnerId, HashSet<OwnerId>> = HashMap::new();
        for (&id, node) in &self.nodes {
            if node.granted {
                continue;
            }
            let edges = waits_for.entry(node.owner).or_default();
            for b in self.blockers(id) {
                edges.insert(self.nodes[&b].owner);
            }
        }
        let start = self.nodes[&lockid].owner;
        let mut stack: Vec<OwnerId> = waits_for.get(&start).into_iter().flatten().copied().collect();
        let mut seen = HashSet::new();
        while let Some(owner) = stack.pop() {
            if owner == start {
                return true;
            }
            if seen.insert(owner) {
                stack.extend(waits_for.get(&owner).into_iter().flatten().copied());
            }
        }
        false
    }
}

#[derive(Debug, Default)]
struct State {
    shutdown: bool,
    queues: HashMap<String, Queue>,
}

/// In-process lock coordinator shared by all sessions.
#[derive(Debug, Default)]
pub struct LockService {
    state: Mutex<State>,
    changed: Condvar,
}

impl LockService {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap()
    }

    /// Adds a request to the queue and returns its lockid; the request may
    /// already be granted. A request that could only be satisfied by the owner
    /// releasing one of its own locks is refused, as is one that would
    /// deadlock with another owner's upgrade.
    pub fn enqueue(&self, db_name: &str, lock_type: LockType, owner: OwnerId) -> Result<u64, LockError> {
        let mut state = self.lock();
        if state.shutdown {
            return Err(LockError::ServiceShutdown);
        }
        let queue = state.queues.entry(db_name.to_owned()).or_default();
        queue.next_lockid += 1;
        let lockid = queue.next_lockid;
        queue.nodes.insert(
            lockid,
            Node {
                lock_type,
                owner,
                granted: false,
                watching: None,
            },
        );
        if let Some(&own) = queue.blockers(lockid).iter().find(|b| queue.nodes[b].owner == owner) {
            queue.nodes.remove(&lockid);
            return Err(LockError::WouldSelfDeadlock {
                db_name: db_name.to_owned(),
                owner,
                blocker: own,
            });
        }
        queue.evaluate(lockid);
        if !queue.nodes[&lockid].granted && queue.closes_cycle(lockid) {
            // The new request is the youngest waiter in the cycle.
            queue.remove(lockid);
            self.changed.notify_all();
            return Err(LockError::UpgradeConflict {
                db_name: db_name.to_owned(),
                lockid,
            });
        }
        Ok(lockid)
    }

    /// Current state of a request.
    pub fn poll(&self, db_name: &str, lockid: u64) -> Result<NodeState, LockError> {
        let state = self.lock();
        let shutdown = state.shutdown;
        let unknown = || LockError::UnknownLock {
            db_name: db_name.to_owned(),
            lockid,
        };
        let queue = state.queues.get(db_name).ok_or_else(unknown)?;
        match queue.nodes.get(&lockid) {
            Some(node) if node.granted => Ok(NodeState::Granted),
            Some(_) if shutdown => Err(LockError::ServiceShutdown),
            Some(_) => Ok(NodeState::Waiting),
            None if lockid <= queue.next_lockid => Ok(NodeState::Released),
            None => Err(unknown()),
        }
    }

    /// Enqueues and blocks until granted.
    pub fn request_lock(&self, db_name: &str, lock_type: LockType, owner: OwnerId) -> Result<u64, LockError> {
        let lockid = self.enqueue(db_name, lock_type, owner)?;
        let mut state = self.lock();
        loop {
            if state.shutdown {
                if let Some(queue) = state.queues.get_mut(db_name) {
                    queue.nodes.remove(&lockid);
                }
                return Err(LockError::ServiceShutdown);
            }
            let queue = &state.queues[db_name];
            if queue.nodes[&lockid].granted {
                return Ok(lockid);
            }
            state = self.changed.wait(state).unwrap();
        }
    }

    pub fn release_lock(&self, db_name: &str, lockid: u64) -> Result<(), LockError> {
        let mut state = self.lock();
        let queue = state.queues.get_mut(db_name).ok_or_else(|| LockError::UnknownLock {
            db_name: db_name.to_owned(),
            lockid,
        })?;
        match queue.nodes.get(&lockid) {
            None => Err(LockError::UnknownLock {
                db_name: db_name.to_owned(),
                lockid,
            }),
            Some(node) if !node.granted => Err(LockError::NotGranted {
                db_name: db_name.to_owned(),
                lockid,
            }),
            Some(_) => {
                queue.remove(lockid);
                self.changed.notify_all();
                Ok(())
            }
        }
    }

    /// Withdraws a request whether waiting or granted.
    pub fn cancel(&self, db_name: &str, lockid: u64) {
        let mut state = self.lock();
        if let Some(queue) = state.queues.get_mut(db_name) {
            if queue.nodes.contains_key(&lockid) {
                queue.remove(lockid);
                self.changed.notify_all();
            }
        }
    }

    /// Point-in-time copy of a queue, ascending lockid.
    pub fn snapshot(&self, db_name: &str) -> Vec<LockNode> {
        let state = self.lock();
        let Some(queue) = state.queues.get(db_name) else {
            return Vec::new();
        };
        queue
            .nodes
            .iter()
            .map(|(&lockid, n)| LockNode {
                db_name: db_name.to_owned(),
                lockid,
                lock_type: n.lock_type,
                owner: n.owner,
                state: if n.granted {
                    NodeState::Granted
                } else {
                    NodeState::Waiting
                },
                watching: n.watching,
            })
            .collect()
    }

    /// Fails every waiter with `ServiceShutdown` and refuses new requests.
    pub fn shutdown(&self) {
        self.lock().shutdown = true;
        self.changed.notify_all();
    }
}

/// Counts rule violations in a queue snapshot: two granted writes, a granted
/// read and write of different owners, or a granted node with an earlier node
/// that should still block it.
pub fn audit(snapshot: &[LockNode]) -> usize {
    let granted: Vec<&LockNode> = snapshot.iter().filter(|n| n.state == NodeState::Granted).collect();
    let mut violations = 0;
    let writes = granted.iter().filter(|n| n.lock_type == LockType::Write).count();
    if writes > 1 {
        violations += 1;
    }
    for w in granted.iter().filter(|n| n.lock_type == LockType::Write) {
        violations += granted
            .iter()
            .filter(|r| r.lock_type == LockType::Read && r.owner != w.owner)
            .count();
    }
    for node in &granted {
        for earlier in snapshot.iter().filter(|e| e.lockid < node.lockid) {
            let blocks = match node.lock_type {
                LockType::Read => earlier.lock_type == LockType::Write,
                LockType::Write => !(earlier.lock_type == LockType::Read && earlier.owner == node.owner),
            };
            if blocks {
                violations += 1;
            }
        }
    }
    violations
}
