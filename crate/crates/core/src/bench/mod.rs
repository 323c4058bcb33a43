//! Benchmark harness: seeded data generation, the four UserVisits workloads,
//! crash-point control and metric reports. The `metadfs-bench` binary is a
//! thin command-line wrapper over [`Bench`].

pub mod generator;
pub mod soak;

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfs::{Dfs, DfsConfig, DfsError, DfsStats};
use crate::engine::{index, Database, EngineConfig, EngineError, UserVisitsRecord};
use crate::fault::{self, FaultInjector};
use crate::lock::{LockService, LockType};
use crate::meta::{MetaDfs, MetaError, MetaFileStats};
use crate::spdu::{SpduDfs, SpduDfsConfig, SpduError};

use self::generator::{base_date, RowGenerator, DATE_SPAN_DAYS};

/// Name of the benchmark database inside the DFS.
pub const DB_NAME: &str = "uservisits";

/// Rows per transaction while generating.
const GEN_BATCH: usize = 10_000;

/// Exit status of a command stopped at a crash point.
pub const CRASH_EXIT_CODE: i32 = 42;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Precondition(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Dfs(#[from] DfsError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<SpduError> for BenchError {
    fn from(e: SpduError) -> Self {
        BenchError::Engine(e.into())
    }
}

impl BenchError {
    /// 2 for precondition and configuration errors, 42 for crash points, 1
    /// otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Precondition(_) | BenchError::Config(_) => 2,
            BenchError::Engine(e) if e.is_crash() => CRASH_EXIT_CODE,
            _ => 1,
        }
    }
}

/// Settings read from the `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub page_size: usize,
    pub block_size: usize,
    pub replication: usize,
    pub datanodes: usize,
    pub post_commit_threshold: u64,
    pub deferred: bool,
    /// Simulated DataNode read latency in milliseconds.
    pub latency: u64,
    pub buffer_frames: usize,
    pub placement_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            page_size: 4096,
            block_size: 64 * 1024,
            replication: 3,
            datanodes: 5,
            post_commit_threshold: SpduDfsConfig::default().post_commit_threshold,
            deferred: true,
            latency: 0,
            buffer_frames: 256,
            placement_seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn dfs_config(&self) -> DfsConfig {
        DfsConfig {
            block_size: self.block_size,
            replication: self.replication,
            datanodes: self.datanodes,
            placement_seed: self.placement_seed,
            latency: Duration::from_millis(self.latency),
        }
    }

    pub fn engine_config(&self, faults: FaultInjector) -> EngineConfig {
        EngineConfig {
            spdu: SpduDfsConfig {
                post_commit_threshold: self.post_commit_threshold,
                deferred: self.deferred,
            },
            buffer_frames: self.buffer_frames,
            faults,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Scan,
    Insert,
    Select,
    Update,
}

impl FromStr for WorkloadKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scan" => Ok(Self::Scan),
            "insert" => Ok(Self::Insert),
            "select" => Ok(Self::Select),
            "update" => Ok(Self::Update),
            other => Err(BenchError::Precondition(format!("unknown workload `{other}`"))),
        }
    }
}

impl WorkloadKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Scan => "scan",
            Self::Insert => "insert",
            Self::Select => "select",
            Self::Update => "update",
        }
    }
}

/// Country code written by the update workload.
pub const UPDATE_COUNTRY_CODE: &str = "ABC";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Row limit of a scan.
    pub limit: u64,
    /// Rows inserted by an insert run.
    pub repeat: u64,
    pub probe_key: String,
    pub use_index: bool,
    /// Fault point at which the run stops, and on which hit.
    pub crash_point: Option<(String, u64)>,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind) -> Self {
        Self {
            kind,
            limit: 100_000,
            repeat: 10_000,
            probe_key: generator::DEFAULT_PROBE_KEY.to_owned(),
            use_index: true,
            crash_point: None,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.kind == WorkloadKind::Scan && self.limit == 0 {
            return Err(BenchError::Precondition("--limit must be positive".into()));
        }
        if self.kind == WorkloadKind::Insert && self.repeat == 0 {
            return Err(BenchError::Precondition("--repeat must be positive".into()));
        }
        if self.probe_key.len() > crate::engine::record::SOURCE_IP_MAX {
            return Err(BenchError::Precondition(format!(
                "key `{}` is too long",
                self.probe_key
            )));
        }
        if let Some((point, nth)) = &self.crash_point {
            check_crash_point(point, *nth)?;
        }
        Ok(())
    }
}

pub fn check_crash_point(point: &str, nth: u64) -> Result<(), BenchError> {
    if !fault::is_registered(point) {
        return Err(BenchError::Precondition(format!(
            "`{point}` is not a registered fault point"
        )));
    }
    if nth == 0 {
        return Err(BenchError::Precondition("crash point hits count from 1".into()));
    }
    Ok(())
}

/// Parses `name` or `name:nth`.
pub fn parse_crash_point(s: &str) -> Result<(String, u64), BenchError> {
    let (name, nth) = match s.rsplit_once(':') {
        Some((name, nth)) => (
            name,
            nth.parse()
                .map_err(|_| BenchError::Precondition(format!("bad hit count in `{s}`")))?,
        ),
        None => (s, 1),
    };
    check_crash_point(name, nth)?;
    Ok((name.to_owned(), nth))
}

/// Counters of one command. All fields except `elapsed_ms` are
/// deterministic for a fixed seed and configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub command: String,
    pub workload: Option<String>,
    pub elapsed_ms: f64,
    pub page_reads: u64,
    pub page_writes: u64,
    pub dfs_remakes: u64,
    pub network_bytes: u64,
    pub records_returned: u64,
    /// `redo`, `rollback` or `clean`, for `recover`.
    pub recovery: Option<String>,
    pub log_blocks_rolled_back: Option<u64>,
    pub log_blocks_retained: Option<u64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header line and one data line.
    pub fn to_csv(reports: &[MetricsReport]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in reports {
            w.serialize(r).expect("report serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).unwrap()
    }
}

/// Storage counters at one instant, for before/after deltas.
struct Probe {
    start: Instant,
    dfs: DfsStats,
    data: MetaFileStats,
    log: MetaFileStats,
}

/// A benchmark environment: one DFS, its meta layer and a lock service.
#[derive(Debug)]
pub struct Bench {
    dfs: Arc<Dfs>,
    meta: Arc<MetaDfs>,
    locks: Arc<LockService>,
    config: BenchConfig,
    faults: FaultInjector,
}

impl Bench {
    fn from_dfs(dfs: Dfs, config: BenchConfig) -> Result<Self, BenchError> {
        let dfs = Arc::new(dfs);
        let meta = Arc::new(MetaDfs::new(Arc::clone(&dfs), config.page_size)?);
        SpduDfs::validate_geometry(meta.pages()).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(Self {
            dfs,
            meta,
            locks: Arc::new(LockService::new()),
            config,
            faults: FaultInjector::default(),
        })
    }

    pub fn in_memory(config: BenchConfig) -> Result<Self, BenchError> {
        let dfs = Dfs::in_memory(config.dfs_config()).map_err(|e| BenchError::Config(e.to_string()))?;
        Self::from_dfs(dfs, config)
    }

    /// A DFS persisted under `root`.
    pub fn open_dir(root: &Path, config: BenchConfig) -> Result<Self, BenchError> {
        let dfs = Dfs::open_dir(root, config.dfs_config())?;
        Self::from_dfs(dfs, config)
    }

    /// Uses `faults` for every database opened from now on.
    pub fn with_faults(mut self, faults: FaultInjector) -> Self {
        self.faults = faults;
        self
    }

    pub fn faults(&self) -> &FaultInjector {
        &self.faults
    }

    pub fn dfs(&self) -> &Arc<Dfs> {
        &self.dfs
    }

    pub fn meta(&self) -> &Arc<MetaDfs> {
        &self.meta
    }

    pub fn config(&self) -> &BenchConfig {
        &self.config
    }

    pub fn exists(&self) -> bool {
        self.meta.exists(&format!("{DB_NAME}/data"))
    }

    fn open_db(&self, total_pages: u64) -> Result<Database, BenchError> {
        let (db, _) = Database::open(
            Arc::clone(&self.meta),
            Arc::clone(&self.locks),
            DB_NAME,
            total_pages,
            self.config.engine_config(self.faults.clone()),
        )?;
        Ok(db)
    }

    fn require_db(&self) -> Result<(), BenchError> {
        if !self.exists() {
            return Err(BenchError::Precondition("no database; run `gen` first".into()));
        }
        Ok(())
    }

    /// Whether the last command did not finish. Every command that completes
    /// folds the log into the data file, so any log block beyond the master
    /// block, or a set `commit_flag`, means a crash.
    pub fn needs_recovery(&self) -> Result<bool, BenchError> {
        self.require_db()?;
        let mut spdu = SpduDfs::open(
            Arc::clone(&self.meta),
            &format!("{DB_NAME}/data"),
            &format!("{DB_NAME}/log"),
            SpduDfsConfig::default(),
            FaultInjector::default(),
        )?;
        Ok(spdu.log_block_count() > 1 || spdu.needs_recovery()?)
    }

    fn probe(&self) -> Result<Probe, BenchError> {
        let data = self.meta.open_meta(&format!("{DB_NAME}/data"))?;
        let log = self.meta.open_meta(&format!("{DB_NAME}/log"))?;
        Ok(Probe {
            start: Instant::now(),
            dfs: self.dfs.stats(),
            data: self.meta.stats(&data),
            log: self.meta.stats(&log),
        })
    }

    fn measured(&self, command: &str, probe: Probe) -> Result<MetricsReport, BenchError> {
        let now = self.probe()?;
        let dfs = now.dfs.since(&probe.dfs);
        Ok(MetricsReport {
            command: command.to_owned(),
            elapsed_ms: probe.start.elapsed().as_secs_f64() * 1000.0,
            dfs_remakes: now.data.since(&probe.data).remakes + now.log.since(&probe.log).remakes,
            network_bytes: dfs.bytes_read + dfs.bytes_written,
            ..MetricsReport::default()
        })
    }

    /// Creates and fills the database with `num_tuples` generated rows.
    pub fn generate(
        &self,
        num_tuples: u64,
        seed: u64,
        probe_key: &str,
        probe_count: u64,
    ) -> Result<MetricsReport, BenchError> {
        if self.exists() {
            return Err(BenchError::Precondition("database already exists".into()));
        }
        if probe_count > num_tuples {
            return Err(BenchError::Precondition(format!(
                "{probe_count} probe rows requested for {num_tuples} tuples"
            )));
        }
        if probe_key.len() > crate::engine::record::SOURCE_IP_MAX {
            return Err(BenchError::Precondition(format!("key `{probe_key}` is too long")));
        }
        let rows = generator::generate_rows(num_tuples, seed, probe_key, probe_count);
        let total_pages = plan_pages(&rows, self.config.page_size, headroom(num_tuples));
        let db = self.open_db(total_pages)?;
        let probe = self.probe()?;
        let mut s = db.session()?;
        for batch in rows.chunks(GEN_BATCH) {
            s.begin(LockType::Write)?;
            for row in batch {
                s.insert_record(row)?;
            }
            s.commit()?;
        }
        let mut report = self.measured("gen", probe)?;
        report.page_reads = s.stats().page_reads;
        report.page_writes = s.stats().page_writes;
        drop(s);
        db.checkpoint()?;
        Ok(report)
    }

    /// Runs one workload in a fresh session with cold caches, then folds the
    /// log into the data file.
    pub fn run(&self, spec: &WorkloadSpec) -> Result<MetricsReport, BenchError> {
        spec.validate()?;
        if self.needs_recovery()? {
            return Err(BenchError::Precondition(
                "database needs recovery; run `recover`".into(),
            ));
        }
        let db = self.open_db(0)?;
        if let Some((point, nth)) = &spec.crash_point {
            self.faults.arm(point, *nth);
        }
        self.dfs.drop_caches();
        let probe = self.probe()?;
        let mut s = db.session()?;
        let records = match spec.kind {
            WorkloadKind::Scan => {
                s.begin(LockType::Read)?;
                let n = s.scan(spec.limit)?.len() as u64;
                s.commit()?;
                n
            }
            WorkloadKind::Insert => {
                let mut g = RowGenerator::new(spec.seed, &spec.probe_key);
                let from = base_date() + chrono::Days::new(DATE_SPAN_DAYS);
                let rows = g.rows(spec.repeat, from, 365);
                s.begin(LockType::Write)?;
                for row in &rows {
                    s.insert_record(row)?;
                }
                s.commit()?;
                0
            }
            WorkloadKind::Select => {
                s.begin(LockType::Read)?;
                let n = s.select_by_key(&spec.probe_key, spec.use_index)?.len() as u64;
                s.commit()?;
                n
            }
            WorkloadKind::Update => {
                s.begin(LockType::Write)?;
                let n = s.update_by_key(&spec.probe_key, UPDATE_COUNTRY_CODE, spec.use_index)?;
                s.commit()?;
                n
            }
        };
        let mut report = self.measured("run", probe)?;
        report.workload = Some(spec.kind.name().to_owned());
        report.page_reads = s.stats().page_reads;
        report.page_writes = s.stats().page_writes;
        report.records_returned = records;
        drop(s);
        db.checkpoint()?;
        Ok(report)
    }

    /// Brings a possibly crashed database back to a committed state and folds
    /// retained committed log blocks into the data file.
    pub fn recover(&self) -> Result<MetricsReport, BenchError> {
        self.require_db()?;
        let probe = self.probe()?;
        let (db, restart) = Database::open(
            Arc::clone(&self.meta),
            Arc::clone(&self.locks),
            DB_NAME,
            0,
            self.config.engine_config(self.faults.clone()),
        )?;
        if restart.retained > 0 {
            db.checkpoint()?;
        }
        let mut report = self.measured("recover", probe)?;
        report.recovery = Some(restart.path().to_owned());
        report.log_blocks_rolled_back = Some(restart.rolled_back);
        report.log_blocks_retained = Some(restart.retained);
        Ok(report)
    }

    /// Opens the database for direct use, recovering it first if needed.
    pub fn database(&self) -> Result<Database, BenchError> {
        self.require_db()?;
        self.open_db(0)
    }
}

/// Extra rows a generated database leaves room for.
fn headroom(num_tuples: u64) -> u64 {
    (num_tuples / 5).max(20_000)
}

/// Data file size for `rows` plus `extra` more rows of similar size: heap
/// pages with 10% slack, and three times the index so a full merge fits
/// beside the segments it replaces.
pub fn plan_pages(rows: &[UserVisitsRecord], page_size: usize, extra: u64) -> u64 {
    let per_row = if rows.is_empty() {
        256
    } else {
        rows.iter()
            .map(|r| r.encode().len() + 5)
            .sum::<usize>()
            .div_ceil(rows.len()) as u64
    };
    let n = rows.len() as u64 + extra;
    let heap = (n * per_row).div_ceil(page_size as u64 - 4) * 11 / 10 + 2;
    let index = index::pages_for(n as usize, page_size);
    1 + heap + 3 * index + 8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_toml() {
        let c = BenchConfig::from_toml("page_size = 8192\ndeferred = false\nlatency = 2\n").unwrap();
        assert_eq!(c.page_size, 8192);
        assert!(!c.deferred);
        assert_eq!(c.dfs_config().latency, Duration::from_millis(2));
        assert_eq!(c.block_size, 64 * 1024);
        assert!(matches!(
            BenchConfig::from_toml("pagesize = 1"),
            Err(BenchError::Config(_))
        ));
    }

    #[test]
    fn crash_point_syntax() {
        assert_eq!(
            parse_crash_point("bpc_before_remake:3").unwrap(),
            ("bpc_before_remake".into(), 3)
        );
        assert_eq!(parse_crash_point("after_commit_marker").unwrap().1, 1);
        assert_eq!(parse_crash_point("nowhere").unwrap_err().exit_code(), 2);
        assert!(parse_crash_point("after_commit_marker:0").is_err());
    }

    #[test]
    fn small_end_to_end() {
        let bench = Bench::in_memory(BenchConfig::default()).unwrap();
        let gen = bench.generate(3000, 5, "1.1.1.1", 70).unwrap();
        assert!(gen.page_writes > 0);
        assert!(matches!(
            bench.generate(10, 5, "1.1.1.1", 1),
            Err(BenchError::Precondition(_))
        ));
        let mut spec = WorkloadSpec::new(WorkloadKind::Scan);
        spec.limit = 1000;
        assert_eq!(bench.run(&spec).unwrap().records_returned, 1000);
        spec.kind = WorkloadKind::Select;
        spec.probe_key = "1.1.1.1".into();
        assert_eq!(bench.run(&spec).unwrap().records_returned, 70);
        spec.kind = WorkloadKind::Update;
        bench.run(&spec).unwrap();
        let report = bench.recover().unwrap();
        assert_eq!(report.recovery.as_deref(), Some("clean"));
        let csv = MetricsReport::to_csv(&[report]);
        assert!(csv.starts_with("command,workload,elapsed_ms,page_reads"));
    }
}
