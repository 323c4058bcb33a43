//! A transactional page store on a simulated write-once distributed file
//! system.
//!
//! The layers, bottom up:
//!
//! - [`dfs`]: NameNode and DataNodes with seeded replica placement. Files are
//!   written once and read by range.
//! - [`meta`]: mutable meta files built from one-block DFS files. Changing a
//!   block means deleting and recreating it.
//! - [`spdu`]: deferred-update recovery. [`spdu::SpduCore`] is the in-place
//!   baseline; [`spdu::SpduDfs`] logs whole blocks and folds them into the
//!   data file in batches.
//! - [`lock`]: FIFO database read/write locks.
//! - [`engine`]: the UserVisits table with slotted heap pages, a sorted
//!   segment index and per-session buffer pools.
//! - [`bench`](mod@bench): data generation, workloads, metrics and a concurrent soak.
//!
//! [`fault`] threads named crash points through every layer.
//!
//! Runnable examples live in `examples/`: `page_mapping`, `dfs_replication`,
//! `spdu_baseline`, `deferred_post_commit`, `log_index_visibility`,
//! `lock_queue`, `crash_recovery` and `uservisits_workloads`.

pub mod bench;
pub mod dfs;
pub mod engine;
pub mod fault;
pub mod lock;
pub mod meta;
pub mod spdu;
