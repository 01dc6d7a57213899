//! Webhook push of flood summary reports.
//!
//! Every delivery attempt is appended to `deliveries.log` (JSON lines) before
//! the notifier moves on, and a `(round, recipient)` pair that appears there is
//! never attempted again, including across restarts.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::mapper::{summary_report, MapState, SummaryReport};

pub const ROUND_HEADER: &str = "X-Floodwatch-Round";
pub const DELIVERY_LOG: &str = "deliveries.log";
const SEND_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum NotifierError {
    #[error("invalid notification policy: {0}")]
    Config(String),
    #[error("refusing to send an empty report")]
    EmptyReport,
    #[error("delivery log {path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotifyMode {
    EveryRound,
    #[default]
    OnChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct NotificationPolicy {
    mode: NotifyMode,
    min_gap: Duration,
    recipients: Vec<Url>,
}

#[derive(Serialize, Deserialize)]
struct RawPolicy {
    #[serde(default)]
    mode: NotifyMode,
    #[serde(default = "default_gap")]
    min_gap: f64,
    #[serde(default)]
    recipients: Vec<String>,
}

fn default_gap() -> f64 {
    300.0
}

impl TryFrom<RawPolicy> for NotificationPolicy {
    type Error = NotifierError;

    fn try_from(raw: RawPolicy) -> Result<Self, Self::Error> {
        if !(raw.min_gap >= 0.0 && raw.min_gap.is_finite()) {
            return Err(NotifierError::Config(format!("min_gap {} is not a non-negative number", raw.min_gap)));
        }
        NotificationPolicy::new(raw.mode, Duration::from_secs_f64(raw.min_gap), &raw.recipients)
    }
}

impl From<NotificationPolicy> for RawPolicy {
    fn from(p: NotificationPolicy) -> Self {
        RawPolicy {
            mode: p.mode,
            min_gap: p.min_gap.as_secs_f64(),
            recipients: p.recipients.iter().map(|u| u.to_string()).collect(),
        }
    }
}

impl Default for NotificationPolicy {
    /// On-change, five-minute gap, no recipients (notifications disabled).
    fn default() -> Self {
        Self {
            mode: NotifyMode::OnChange,
            min_gap: Duration::from_secs(300),
            recipients: vec![],
        }
    }
}

impl NotificationPolicy {
    /// Validates recipients up front so a bad URI fails at startup.
    pub fn new<S: AsRef<str>>(mode: NotifyMode, min_gap: Duration, recipients: &[S]) -> Result<Self, NotifierError> {
        let recipients = recipients
            .iter()
            .map(|r| {
                let r = r.as_ref();
                let url = Url::parse(r).map_err(|e| NotifierError::Config(format!("recipient `{r}`: {e}")))?;
                if !matches!(url.scheme(), "http" | "https") {
                    return Err(NotifierError::Config(format!("recipient `{r}` is not an http(s) URL")));
                }
                Ok(url)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            mode,
            min_gap,
            recipients,
        })
    }

    pub fn mode(&self) -> NotifyMode {
        self.mode
    }

    pub fn min_gap(&self) -> Duration {
        self.min_gap
    }

    pub fn recipients(&self) -> &[Url] {
        &self.recipients
    }

    pub fn enabled(&self) -> bool {
        !self.recipients.is_empty()
    }
}

fn flood_set(state: &MapState) -> BTreeSet<&str> {
    state.flood_ids().into_iter().collect()
}

/// Whether `current` warrants a notification.
///
/// `previous` is the map at the last notification (or `None` if there was
/// none) and `last_sent_at` its time; `min_gap` is measured between map
/// generation times. A map without floods never triggers one.
pub fn should_notify(
    previous: Option<&MapState>,
    current: &MapState,
    policy: &NotificationPolicy,
    last_sent_at: Option<DateTime<Utc>>,
) -> bool {
    let floods = flood_set(current);
    let prev = previous.map(flood_set).unwrap_or_default();
    decide(&prev, &floods, current.generated_at, policy, last_sent_at)
}

fn decide(
    prev: &BTreeSet<&str>,
    current: &BTreeSet<&str>,
    now: DateTime<Utc>,
    policy: &NotificationPolicy,
    last_sent_at: Option<DateTime<Utc>>,
) -> bool {
    if current.is_empty() {
        return false;
    }
    let gap_ok = match last_sent_at {
        None => true,
        Some(t) => (now - t).to_std().is_ok_and(|d| d >= policy.min_gap),
    };
    gap_ok
        && match policy.mode {
            NotifyMode::EveryRound => true,
            NotifyMode::OnChange => prev != current,
        }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum DeliveryOutcome {
    Delivered,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub recipient: String,
    pub round_id: u64,
    #[serde(flatten)]
    pub outcome: DeliveryOutcome,
    pub attempted_at: DateTime<Utc>,
}

impl Delivery {
    pub fn delivered(&self) -> bool {
        self.outcome == DeliveryOutcome::Delivered
    }
}

/// One POST per recipient, concurrently. Transport and HTTP failures are
/// returned as failed deliveries.
pub async fn notify(
    client: &reqwest::Client,
    report: &SummaryReport,
    recipients: &[Url],
) -> Result<Vec<Delivery>, NotifierError> {
    if report.is_empty() {
        return Err(NotifierError::EmptyReport);
    }
    let body = report.to_json();
    let sends = recipients.iter().map(|url| {
        let body = body.clone();
        async move {
            let attempted_at = Utc::now();
            let res = client
                .post(url.clone())
                .header(ROUND_HEADER, report.round_id.to_string())
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body)
                .send()
                .await;
            let outcome = match res {
                Ok(r) if r.status().is_success() => DeliveryOutcome::Delivered,
                Ok(r) => DeliveryOutcome::Failed(format!("http {}", r.status().as_u16())),
                Err(e) => DeliveryOutcome::Failed(transport_reason(&e)),
            };
            Delivery {
                recipient: url.to_string(),
                round_id: report.round_id,
                outcome,
                attempted_at,
            }
        }
    });
    Ok(futures::future::join_all(sends).await)
}

fn transport_reason(e: &reqwest::Error) -> String {
    let mut s = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(inner) = src {
        s.push_str(": ");
        s.push_str(&inner.to_string());
        src = inner.source();
    }
    s
}

/// A log line: the delivery plus the flood set and map time it reported.
#[derive(Serialize, Deserialize)]
struct LogEntry {
    #[serde(flatten)]
    delivery: Delivery,
    floods: Vec<String>,
    map_generated_at: DateTime<Utc>,
}

#[derive(Default)]
struct Ledger {
    attempted: HashSet<(u64, String)>,
    /// Flood set and map time of the most recent notification decision that sent.
    last: Option<(BTreeSet<String>, DateTime<Utc>)>,
}

/// Policy-gated notifier with a persistent delivery log.
pub struct Notifier {
    policy: NotificationPolicy,
    client: reqwest::Client,
    log_path: PathBuf,
    ledger: Mutex<Ledger>,
}

impl Notifier {
    /// Opens (or creates) `deliveries.log` under `data_dir` and replays it.
    pub fn open(policy: NotificationPolicy, data_dir: &Path) -> Result<Self, NotifierError> {
        let log_path = data_dir.join(DELIVERY_LOG);
        let log_err = |source| NotifierError::Log {
            path: log_path.clone(),
            source,
        };
        std::fs::create_dir_all(data_dir).map_err(log_err)?;
        let mut ledger = Ledger::default();
        if log_path.exists() {
            let file = std::fs::File::open(&log_path).map_err(log_err)?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(log_err)?;
                // A torn final line from a crash is skipped.
                let Ok(entry) = serde_json::from_str::<LogEntry>(&line) else {
                    continue;
                };
                ledger
                    .attempted
                    .insert((entry.delivery.round_id, entry.delivery.recipient.clone()));
                if ledger.last.as_ref().is_none_or(|(_, t)| entry.map_generated_at >= *t) {
                    ledger.last = Some((entry.floods.into_iter().collect(), entry.map_generated_at));
                }
            }
        }
        let client = reqwest::Client::builder()
            .no_proxy()
            .timeout(SEND_TIMEOUT)
            .build()
            .expect("http client builds");
        Ok(Self {
            policy,
            client,
            log_path,
            ledger: Mutex::new(ledger),
        })
    }

    pub fn policy(&self) -> &NotificationPolicy {
        &self.policy
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Decision alone, against the notifier's own history.
    pub fn would_notify(&self, state: &MapState) -> bool {
        let ledger = self.ledger.lock().expect("ledger lock");
        self.decide_locked(&ledger, state)
    }

    fn decide_locked(&self, ledger: &Ledger, state: &MapState) -> bool {
        if !self.policy.enabled() {
            return false;
        }
        let prev: BTreeSet<&str> = ledger
            .last
            .as_ref()
            .map(|(s, _)| s.iter().map(String::as_str).collect())
            .unwrap_or_default();
        decide(
            &prev,
            &flood_set(state),
            state.generated_at,
            &self.policy,
            ledger.last.as_ref().map(|(_, t)| *t),
        )
    }

    /// Applies the policy to a new map and sends to every recipient not yet
    /// attempted for this round. Returns the deliveries made now.
    pub async fn process(&self, state: &MapState, map_url: &str) -> Result<Vec<Delivery>, NotifierError> {
        let pending: Vec<Url> = {
            let mut ledger = self.ledger.lock().expect("ledger lock");
            if !self.decide_locked(&ledger, state) {
                return Ok(vec![]);
            }
            let pending: Vec<Url> = self
                .policy
                .recipients
                .iter()
                .filter(|u| ledger.attempted.insert((state.round_id, u.to_string())))
                .cloned()
                .collect();
            if pending.is_empty() {
                return Ok(vec![]);
            }
            ledger.last = Some((
                state.flood_ids().into_iter().map(String::from).collect(),
                state.generated_at,
            ));
            pending
        };
        let report = summary_report(state, map_url);
        let deliveries = notify(&self.client, &report, &pending).await?;
        self.append(state, &deliveries)?;
        for d in &deliveries {
            match &d.outcome {
                DeliveryOutcome::Delivered => tracing::info!(round = d.round_id, recipient = %d.recipient, "report delivered"),
                DeliveryOutcome::Failed(why) => {
                    tracing::warn!(round = d.round_id, recipient = %d.recipient, reason = %why, "delivery failed")
                }
            }
        }
        Ok(deliveries)
    }

    fn append(&self, state: &MapState, deliveries: &[Delivery]) -> Result<(), NotifierError> {
        let log_err = |source| NotifierError::Log {
            path: self.log_path.clone(),
            source,
        };
        let floods: Vec<String> = state.flood_ids().into_iter().map(String::from).collect();
        let mut text = String::new();
        for d in deliveries {
            let entry = LogEntry {
                delivery: d.clone(),
                floods: floods.clone(),
                map_generated_at: state.generated_at,
            };
            text.push_str(&serde_json::to_string(&entry).expect("log entry serializes"));
            text.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.log_path)
            .map_err(log_err)?;
        f.write_all(text.as_bytes()).map_err(log_err)?;
        f.sync_data().map_err(log_err)
    }

    /// Every delivery recorded in the log, oldest first.
    pub fn history(&self) -> Result<Vec<Delivery>, NotifierError> {
        read_log(&self.log_path)
    }
}

pub fn read_log(path: &Path) -> Result<Vec<Delivery>, NotifierError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
        Err(source) => {
            return Err(NotifierError::Log {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str::<LogEntry>(l).ok())
        .map(|e| e.delivery)
        .collect())
}

/// Deliveries per recipient, for reporting.
pub fn delivered_counts(deliveries: &[Delivery]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for d in deliveries.iter().filter(|d| d.delivered()) {
        *m.entry(d.recipient.clone()).or_default() += 1;
    }
    m
}
