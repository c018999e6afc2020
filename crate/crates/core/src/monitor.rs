//! Session telemetry: per-site windowed KPIs, an EWMA anomaly detector,
//! global aggregation, and the login risk score.
//!
//! Windows are aligned to multiples of the window length since the epoch.
//! A site's window closes when an event from a later window arrives or on
//! an explicit flush; time only ever comes from events.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Duration, TimeZone, Timelike, Utc};
use crossbeam_channel::{bounded, Sender};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audit::AuditLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    LoginSuccess,
    LoginFailure,
    AccessDenied,
    AccessPermitted,
    LatencySample,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub time: DateTime<Utc>,
    pub site: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, Value>,
}

impl TelemetryEvent {
    pub fn new(time: DateTime<Utc>, site: impl Into<String>, kind: EventKind) -> Self {
        Self {
            time,
            site: site.into(),
            kind,
            subject: None,
            attributes: BTreeMap::new(),
        }
    }

    pub fn subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    pub fn attr(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attributes.insert(key.to_string(), value.into());
        self
    }

    fn latency_ms(&self) -> Option<f64> {
        self.attributes.get("latency_ms").and_then(Value::as_f64)
    }

    fn attr_str(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MonitorError {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("snapshots cover different windows")]
    WindowMismatch,
    #[error("no snapshots to aggregate")]
    Empty,
}

pub const HISTOGRAM_MIN_MS: f64 = 1.0;
pub const HISTOGRAM_MAX_MS: f64 = 10_000.0;
/// Finite buckets between the bounds; each spans a ratio of about 1.1.
pub const HISTOGRAM_STEPS: usize = 96;

/// Latency histogram with fixed exponential boundaries, so histograms from
/// different sites merge by adding counts. Slot 0 is underflow (< 1 ms) and
/// the last slot is overflow (>= 10 s).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            counts: vec![0; HISTOGRAM_STEPS + 2],
        }
    }
}

impl Histogram {
    pub fn ratio() -> f64 {
        (HISTOGRAM_MAX_MS / HISTOGRAM_MIN_MS).powf(1.0 / HISTOGRAM_STEPS as f64)
    }

    /// Upper boundary of slot `i`.
    fn upper(i: usize) -> f64 {
        if i > HISTOGRAM_STEPS {
            return HISTOGRAM_MAX_MS;
        }
        HISTOGRAM_MIN_MS * Self::ratio().powi(i as i32)
    }

    fn slot(ms: f64) -> usize {
        if ms.is_nan() || ms < HISTOGRAM_MIN_MS {
            return 0;
        }
        if ms >= HISTOGRAM_MAX_MS {
            return HISTOGRAM_STEPS + 1;
        }
        let mut i = ((ms / HISTOGRAM_MIN_MS).ln() / Self::ratio().ln()).floor() as usize + 1;
        // Float rounding can land one slot off at a boundary.
        while i > 1 && ms < Self::upper(i - 1) {
            i -= 1;
        }
        while i <= HISTOGRAM_STEPS && ms >= Self::upper(i) {
            i += 1;
        }
        i
    }

    pub fn record(&mut self, ms: f64) {
        let i = Self::slot(ms);
        self.counts[i] += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Nearest-rank percentile, reported as the upper boundary of the slot
    /// holding that rank.
    pub fn percentile(&self, p: f64) -> Option<f64> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as u64;
        let mut seen = 0;
        for (i, c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Some(Self::upper(i));
            }
        }
        Some(HISTOGRAM_MAX_MS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSnapshot {
    pub site: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub counters: BTreeMap<EventKind, u64>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub histogram: Histogram,
}

impl KpiSnapshot {
    pub fn counter(&self, kind: EventKind) -> u64 {
        self.counters.get(&kind).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalKpi {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub sites: Vec<String>,
    pub counters: BTreeMap<EventKind, u64>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
}

pub fn aggregate_global(snapshots: &[KpiSnapshot]) -> Result<GlobalKpi, MonitorError> {
    let first = snapshots.first().ok_or(MonitorError::Empty)?;
    let mut counters = BTreeMap::new();
    let mut hist = Histogram::default();
    let mut sites = Vec::new();
    for s in snapshots {
        if s.window_start != first.window_start || s.window_end != first.window_end {
            return Err(MonitorError::WindowMismatch);
        }
        for (k, v) in &s.counters {
            *counters.entry(*k).or_insert(0) += v;
        }
        hist.merge(&s.histogram);
        sites.push(s.site.clone());
    }
    Ok(GlobalKpi {
        window_start: first.window_start,
        window_end: first.window_end,
        sites,
        counters,
        p50_ms: hist.percentile(50.0),
        p95_ms: hist.percentile(95.0),
    })
}

/// Exponentially weighted mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ewma {
    pub alpha: f64,
    pub mean: f64,
    pub var: f64,
    pub samples: u32,
}

impl Ewma {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            mean: 0.0,
            var: 0.0,
            samples: 0,
        }
    }

    pub fn update(&mut self, x: f64) {
        if self.samples == 0 {
            self.mean = x;
            self.var = 0.0;
        } else {
            let diff = x - self.mean;
            let incr = self.alpha * diff;
            self.mean += incr;
            self.var = (1.0 - self.alpha) * (self.var + diff * incr);
        }
        self.samples += 1;
    }

    pub fn threshold(&self, k: f64) -> f64 {
        self.mean + k * self.var.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub k: f64,
    pub warmup: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            k: 3.0,
            warmup: 10,
        }
    }
}

/// Scores each window against the baseline built from the windows before
/// it, then folds the window into the baseline.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    baseline: Ewma,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Self {
        Self {
            cfg,
            baseline: Ewma::new(cfg.alpha),
        }
    }

    /// Returns the exceeded threshold, if any.
    pub fn observe(&mut self, x: f64) -> Option<f64> {
        let flagged = (self.baseline.samples >= self.cfg.warmup)
            .then(|| self.baseline.threshold(self.cfg.k))
            .filter(|t| x > *t);
        self.baseline.update(x);
        flagged
    }

    pub fn baseline(&self) -> Ewma {
        self.baseline
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlagKind {
    FailedLoginSpike,
    LatencySpike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub time: DateTime<Utc>,
    pub kind: FlagKind,
    pub site: String,
    pub metric: String,
    pub observed: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskWeights {
    pub failures: f64,
    pub new_device: f64,
    pub new_location: f64,
    pub off_hours: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        Self {
            failures: 0.4,
            new_device: 0.3,
            new_location: 0.2,
            off_hours: 0.1,
        }
    }
}

pub const FAILURES_FOR_FULL_WEIGHT: f64 = 5.0;
pub const HIGH_RISK_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RiskContext {
    pub subject: String,
    pub recent_failures: u32,
    pub new_device: bool,
    pub new_location: bool,
    pub off_hours: bool,
}

pub fn risk_score(ctx: &RiskContext, w: &RiskWeights) -> f64 {
    let f = (ctx.recent_failures as f64 / FAILURES_FOR_FULL_WEIGHT).min(1.0);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let s = w.failures * f
        + w.new_device * flag(ctx.new_device)
        + w.new_location * flag(ctx.new_location)
        + w.off_hours * flag(ctx.off_hours);
    s.clamp(0.0, 1.0)
}

/// Outside 06:00-22:00 UTC.
pub fn is_off_hours(at: DateTime<Utc>) -> bool {
    let h = at.hour();
    !(6..22).contains(&h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MfaRequirement {
    NotRequired,
    /// The user enabled MFA; their own setting applies.
    UserSetting,
    /// Risk alone demands a second factor.
    Forced,
}

/// Risk can only add a factor; it never removes one the user enabled.
pub fn mfa_requirement(user_enabled: bool, score: f64, high_threshold: f64) -> MfaRequirement {
    if user_enabled {
        MfaRequirement::UserSetting
    } else if score >= high_threshold {
        MfaRequirement::Forced
    } else {
        MfaRequirement::NotRequired
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub window_secs: i64,
    pub detector: DetectorConfig,
    pub weights: RiskWeights,
    pub high_risk_threshold: f64,
    /// Trailing span for counting recent login failures.
    pub failure_window_secs: i64,
    /// Events retained per site for search.
    pub retain_events: usize,
    /// Longest run of empty windows filled in when a site goes quiet.
    pub max_gap_windows: i64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window_secs: 10,
            detector: DetectorConfig::default(),
            weights: RiskWeights::default(),
            high_risk_threshold: HIGH_RISK_THRESHOLD,
            failure_window_secs: 15 * 60,
            retain_events: 100_000,
            max_gap_windows: 360,
        }
    }
}

struct OpenWindow {
    start: DateTime<Utc>,
    counters: BTreeMap<EventKind, u64>,
    histogram: Histogram,
}

impl OpenWindow {
    fn new(start: DateTime<Utc>) -> Self {
        Self {
            start,
            counters: BTreeMap::new(),
            histogram: Histogram::default(),
        }
    }
}

struct SiteState {
    watermark: DateTime<Utc>,
    open: Option<OpenWindow>,
    closed: Vec<KpiSnapshot>,
    failures: Detector,
    latency: Detector,
    events: VecDeque<TelemetryEvent>,
}

#[derive(Default)]
struct SubjectBaseline {
    devices: BTreeSet<String>,
    locations: BTreeSet<String>,
    failures: VecDeque<DateTime<Utc>>,
}

pub struct Monitor {
    cfg: MonitorConfig,
    sites: Mutex<BTreeMap<String, SiteState>>,
    subjects: Mutex<HashMap<String, SubjectBaseline>>,
    flags: Mutex<Vec<AnomalyFlag>>,
    audit: AuditLog,
}

impl Monitor {
    pub fn new(cfg: MonitorConfig, audit: AuditLog) -> Self {
        Self {
            cfg,
            sites: Mutex::new(BTreeMap::new()),
            subjects: Mutex::new(HashMap::new()),
            flags: Mutex::new(Vec::new()),
            audit,
        }
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    fn window(&self) -> Duration {
        Duration::seconds(self.cfg.window_secs)
    }

    fn window_start(&self, t: DateTime<Utc>) -> DateTime<Utc> {
        let len = self.cfg.window_secs * 1000;
        let ms = t.timestamp_millis().div_euclid(len) * len;
        Utc.timestamp_millis_opt(ms).single().unwrap_or(t)
    }

    /// Accepts an event into its site's current window. Events older than
    /// the site's watermark are rejected.
    pub fn ingest(&self, event: TelemetryEvent) -> Result<(), MonitorError> {
        if event.site.trim().is_empty() {
            return Err(MonitorError::Malformed("empty site".into()));
        }
        if event.kind == EventKind::LatencySample && event.latency_ms().is_none() {
            return Err(MonitorError::Malformed(
                "latency sample without latency_ms".into(),
            ));
        }
        let flags = {
            let mut sites = self.sites.lock();
            let site = sites
                .entry(event.site.clone())
                .or_insert_with(|| SiteState {
                    watermark: event.time,
                    open: None,
                    closed: Vec::new(),
                    failures: Detector::new(self.cfg.detector),
                    latency: Detector::new(self.cfg.detector),
                    events: VecDeque::new(),
                });
            if event.time < site.watermark {
                return Err(MonitorError::Malformed(format!(
                    "out of order: {} before watermark {}",
                    event.time, site.watermark
                )));
            }
            site.watermark = event.time;
            let start = self.window_start(event.time);
            let flags = self.close_before(&event.site, site, start);
            let open = site.open.get_or_insert_with(|| OpenWindow::new(start));
            *open.counters.entry(event.kind).or_insert(0) += 1;
            if let Some(ms) = event.latency_ms() {
                open.histogram.record(ms);
            }
            if site.events.len() >= self.cfg.retain_events {
                site.events.pop_front();
            }
            site.events.push_back(event.clone());
            flags
        };
        self.learn(&event);
        self.emit(flags);
        Ok(())
    }

    /// Closes the open window if it starts before `start`, filling any gap
    /// with empty windows so the baseline sees quiet periods.
    fn close_before(
        &self,
        name: &str,
        site: &mut SiteState,
        start: DateTime<Utc>,
    ) -> Vec<AnomalyFlag> {
        let mut flags = Vec::new();
        let Some(open) = site.open.take_if(|w| w.start < start) else {
            return flags;
        };
        let mut next = open.start + self.window();
        self.close(name, site, open, &mut flags);
        let mut filled = 0;
        while next < start && filled < self.cfg.max_gap_windows {
            self.close(name, site, OpenWindow::new(next), &mut flags);
            next += self.window();
            filled += 1;
        }
        flags
    }

    fn close(&self, name: &str, site: &mut SiteState, w: OpenWindow, flags: &mut Vec<AnomalyFlag>) {
        let end = w.start + self.window();
        let snapshot = KpiSnapshot {
            site: name.to_string(),
            window_start: w.start,
            window_end: end,
            p50_ms: w.histogram.percentile(50.0),
            p95_ms: w.histogram.percentile(95.0),
            counters: w.counters,
            histogram: w.histogram,
        };
        let failures = snapshot.counter(EventKind::LoginFailure) as f64;
        if let Some(threshold) = site.failures.observe(failures) {
            flags.push(AnomalyFlag {
                time: end,
                kind: FlagKind::FailedLoginSpike,
                site: name.to_string(),
                metric: "login_failures".into(),
                observed: failures,
                threshold,
            });
        }
        if let Some(p95) = snapshot.p95_ms {
            if let Some(threshold) = site.latency.observe(p95) {
                flags.push(AnomalyFlag {
                    time: end,
                    kind: FlagKind::LatencySpike,
                    site: name.to_string(),
                    metric: "latency_p95_ms".into(),
                    observed: p95,
                    threshold,
                });
            }
        }
        site.closed.push(snapshot);
    }

    fn emit(&self, flags: Vec<AnomalyFlag>) {
        if flags.is_empty() {
            return;
        }
        for f in &flags {
            self.audit.record(f);
        }
        self.flags.lock().extend(flags);
    }

    /// Closes every open window.
    pub fn flush(&self) {
        let flags = {
            let mut sites = self.sites.lock();
            let mut flags = Vec::new();
            for (name, site) in sites.iter_mut() {
                if let Some(open) = site.open.take() {
                    let end = open.start + self.window();
                    self.close(name, site, open, &mut flags);
                    site.watermark = site.watermark.max(end);
                }
            }
            flags
        };
        self.emit(flags);
    }

    fn learn(&self, event: &TelemetryEvent) {
        let Some(subject) = &event.subject else {
            return;
        };
        let mut subjects = self.subjects.lock();
        let b = subjects.entry(subject.clone()).or_default();
        match event.kind {
            EventKind::LoginSuccess => {
                if let Some(d) = event.attr_str("device_id") {
                    b.devices.insert(d.to_string());
                }
                if let Some(l) = event.attr_str("location") {
                    b.locations.insert(l.to_string());
                }
            }
            EventKind::LoginFailure => {
                b.failures.push_back(event.time);
                let horizon = event.time - Duration::seconds(self.cfg.failure_window_secs);
                while b.failures.front().is_some_and(|t| *t < horizon) {
                    b.failures.pop_front();
                }
            }
            _ => {}
        }
    }

    /// Builds the risk context for a login attempt. A device or location
    /// that is absent from the request counts as not new.
    pub fn risk_context(
        &self,
        subject: &str,
        device_id: Option<&str>,
        location: Option<&str>,
        at: DateTime<Utc>,
    ) -> RiskContext {
        let subjects = self.subjects.lock();
        let b = subjects.get(subject);
        let horizon = at - Duration::seconds(self.cfg.failure_window_secs);
        RiskContext {
            subject: subject.to_string(),
            recent_failures: b
                .map(|b| {
                    b.failures
                        .iter()
                        .filter(|t| **t >= horizon && **t <= at)
                        .count() as u32
                })
                .unwrap_or(0),
            new_device: device_id.is_some_and(|d| !b.is_some_and(|b| b.devices.contains(d))),
            new_location: location.is_some_and(|l| !b.is_some_and(|b| b.locations.contains(l))),
            off_hours: is_off_hours(at),
        }
    }

    pub fn score(&self, ctx: &RiskContext) -> f64 {
        risk_score(ctx, &self.cfg.weights)
    }

    pub fn snapshots(&self, site: &str) -> Vec<KpiSnapshot> {
        self.sites
            .lock()
            .get(site)
            .map(|s| s.closed.clone())
            .unwrap_or_default()
    }

    pub fn snapshots_at(&self, window_start: DateTime<Utc>) -> Vec<KpiSnapshot> {
        self.sites
            .lock()
            .values()
            .flat_map(|s| {
                s.closed
                    .iter()
                    .filter(|k| k.window_start == window_start)
                    .cloned()
            })
            .collect()
    }

    pub fn sites(&self) -> Vec<String> {
        self.sites.lock().keys().cloned().collect()
    }

    pub fn flags(&self) -> Vec<AnomalyFlag> {
        self.flags.lock().clone()
    }

    /// Events for `subject` across all sites, ordered by time.
    pub fn search(&self, subject: &str) -> Vec<TelemetryEvent> {
        let mut out: Vec<_> = self
            .sites
            .lock()
            .values()
            .flat_map(|s| {
                s.events
                    .iter()
                    .filter(|e| e.subject.as_deref() == Some(subject))
                    .cloned()
            })
            .collect();
        out.sort_by_key(|e| e.time);
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectorStats {
    pub accepted: u64,
    pub rejected: u64,
}

/// Bounded hand-off between receivers and the monitor. `send` blocks when
/// the buffer is full, so bursts slow producers rather than drop events.
pub struct Collector {
    tx: Option<Sender<TelemetryEvent>>,
    worker: Option<JoinHandle<CollectorStats>>,
}

impl Collector {
    pub fn spawn(monitor: Arc<Monitor>, capacity: usize) -> Self {
        let (tx, rx) = bounded::<TelemetryEvent>(capacity);
        let worker = std::thread::spawn(move || {
            let mut stats = CollectorStats::default();
            for event in rx {
                match monitor.ingest(event) {
                    Ok(()) => stats.accepted += 1,
                    Err(e) => {
                        tracing::debug!(error = %e, "telemetry rejected");
                        stats.rejected += 1;
                    }
                }
            }
            stats
        });
        Self {
            tx: Some(tx),
            worker: Some(worker),
        }
    }

    pub fn sender(&self) -> Sender<TelemetryEvent> {
        self.tx.clone().expect("collector running")
    }

    pub fn send(&self, event: TelemetryEvent) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(event);
        }
    }

    /// Drains the buffer and stops the worker.
    pub fn shutdown(mut self) -> CollectorStats {
        self.tx.take();
        self.worker
            .take()
            .and_then(|w| w.join().ok())
            .unwrap_or_default()
    }
}

impl Drop for Collector {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Parses JSON-lines telemetry; blank lines are skipped.
pub fn parse_json_lines(body: &str) -> Result<Vec<TelemetryEvent>, MonitorError> {
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| MonitorError::Malformed(format!("line {}: {e}", i + 1)))
        })
        .collect()
}
