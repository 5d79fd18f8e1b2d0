//! Client for an external captioning service that fills scene sidecars.
//!
//! The service receives `{"instruction", "image_b64"}` and answers with
//! `{"caption"}`. Offline mode reuses an existing sidecar and sends nothing.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use base64::Engine as _;

use crate::audit;
use crate::datamodel::{load_sidecar, Manifest};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CaptionStyle {
    Short,
    #[default]
    Medium,
    Long,
}

impl CaptionStyle {
    pub const ALL: [CaptionStyle; 3] = [CaptionStyle::Short, CaptionStyle::Medium, CaptionStyle::Long];

    /// Instruction sent with each image. These are stand-ins; the original
    /// captioner prompts are unknown.
    pub fn instruction(self) -> &'static str {
        match self {
            CaptionStyle::Short => "one brief sentence",
            CaptionStyle::Medium => "one detailed sentence covering objects and their relations",
            CaptionStyle::Long => "a detailed paragraph",
        }
    }
}

impl fmt::Display for CaptionStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaptionStyle::Short => "short",
            CaptionStyle::Medium => "medium",
            CaptionStyle::Long => "long",
        })
    }
}

impl FromStr for CaptionStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "short" => Ok(CaptionStyle::Short),
            "medium" => Ok(CaptionStyle::Medium),
            "long" => Ok(CaptionStyle::Long),
            other => Err(Error::Invalid(format!("unknown caption style {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRequest {
    pub image_path: PathBuf,
    pub style: CaptionStyle,
    pub endpoint: String,
}

/// One request/response exchange with the captioner.
pub trait CaptionTransport {
    fn send(&self, endpoint: &str, body: &serde_json::Value) -> Result<serde_json::Value>;
}

/// JSON over HTTP POST.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        HttpTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl CaptionTransport for HttpTransport {
    fn send(&self, endpoint: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let resp = self
            .agent
            .post(endpoint)
            .send_json(body.clone())
            .map_err(|e| Error::Caption(format!("{endpoint}: {e}")))?;
        resp.into_json()
            .map_err(|e| Error::Caption(format!("{endpoint}: bad response body: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total tries, including the first.
    pub attempts: u32,
    /// Delay before the first retry; doubles each time.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 4,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// A caption and how many retries it took.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Captioned {
    pub caption: String,
    pub retries: u32,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn caption_client(
    transport: &dyn CaptionTransport,
    request: &CaptionRequest,
    policy: RetryPolicy,
) -> Result<Captioned> {
    let bytes = audit::read(&request.image_path)?;
    let body = serde_json::json!({
        "instruction": request.style.instruction(),
        "image_b64": base64::engine::general_purpose::STANDARD.encode(bytes),
    });
    let mut delay = policy.base_delay;
    let mut last_err = None;
    for attempt in 0..policy.attempts.max(1) {
        if attempt > 0 {
            thread::sleep(delay);
            delay *= 2;
        }
        audit::record_request(&request.endpoint);
        let caption = transport.send(&request.endpoint, &body).and_then(|v| {
            v.get("caption")
                .and_then(|c| c.as_str())
                .map(one_line)
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::Caption("response has no `caption` string".into()))
        });
        match caption {
            Ok(caption) => {
                if attempt > 0 {
                    log::info!("{}: captioned after {attempt} retries", request.image_path.display());
                }
                return Ok(Captioned {
                    caption,
                    retries: attempt,
                });
            }
            Err(e) => {
                log::warn!("{}: attempt {} failed: {e}", request.image_path.display(), attempt + 1);
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Caption("no attempts made".into())))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CaptionReport {
    pub written: Vec<String>,
    /// Ids whose captioning failed after all retries; no sidecar entry.
    pub flagged: Vec<String>,
    /// Ids already present in the sidecar.
    pub kept: usize,
    pub total_retries: u32,
}

pub enum CaptionMode<'a> {
    /// Use the existing sidecar as is.
    Offline,
    Online {
        transport: &'a dyn CaptionTransport,
        endpoint: String,
        policy: RetryPolicy,
    },
}

/// Fills `sidecar` with captions for every manifest record that lacks one.
/// Entries already present are kept; new ones are appended.
pub fn caption_manifest(
    mode: CaptionMode<'_>,
    manifest: &Manifest,
    style: CaptionStyle,
    source_tag: &str,
    sidecar: &Path,
) -> Result<CaptionReport> {
    let existing = if sidecar.exists() {
        load_sidecar(sidecar)?
    } else {
        Vec::new()
    };
    let mut report = CaptionReport {
        kept: existing.len(),
        ..CaptionReport::default()
    };
    let CaptionMode::Online {
        transport,
        endpoint,
        policy,
    } = mode
    else {
        if !sidecar.exists() {
            return Err(Error::Caption(format!(
                "offline mode needs an existing sidecar at {}",
                sidecar.display()
            )));
        }
        return Ok(report);
    };

    let have: std::collections::HashSet<&str> = existing.iter().map(|(id, _)| id.as_str()).collect();
    let fresh = !sidecar.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(sidecar)
        .map_err(|e| Error::io(sidecar, e))?;
    if fresh {
        writeln!(
            file,
            "# caption_source = {source_tag}\n# style = {style}\n# instruction = {} (stand-in prompt)",
            style.instruction()
        )
        .map_err(|e| Error::io(sidecar, e))?;
    }
    for r in &manifest.records {
        if have.contains(r.image_id.as_str()) {
            continue;
        }
        let request = CaptionRequest {
            image_path: manifest.resolve(r),
            style,
            endpoint: endpoint.clone(),
        };
        match caption_client(transport, &request, policy) {
            Ok(c) => {
                writeln!(file, "{}\t{}", r.image_id, c.caption).map_err(|e| Error::io(sidecar, e))?;
                report.total_retries += c.retries;
                report.written.push(r.image_id.clone());
            }
            Err(e) => {
                log::warn!("{}: flagged, no caption: {e}", r.image_id);
                report.flagged.push(r.image_id.clone());
            }
        }
    }
    Ok(report)
}
