//! User profiles, document rendering and delivery.
//!
//! Transports are simulated: email, fax and postal deliveries are written to
//! `<outbox>/<channel>/<receipt_id>.<channel>`, and every receipt is appended
//! to `<outbox>/receipts.log`. Voice delivery is read out by the session.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Document;

/// Column limit of the ASCII rendering.
pub const ASCII_WIDTH: usize = 72;

const PROFILE_HEADER: &str = "ivirs-profiles 1";

#[derive(Debug, Error)]
pub enum DdsError {
    #[error("PIN must be a non-empty string of digits")]
    PinFormat,
    #[error("no renderer registered for format {0}")]
    UnsupportedFormat(Format),
    #[error("profile {user_id:?} has no {channel} address")]
    MissingAddress { user_id: String, channel: Channel },
    #[error("delivery {} failed: {source}", receipt.receipt_id)]
    Io {
        receipt: Box<Receipt>,
        #[source]
        source: std::io::Error,
    },
    #[error("profile store {path}: {reason}")]
    Store { path: PathBuf, reason: String },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Voice,
    Email,
    Fax,
    Postal,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Voice,
        Channel::Email,
        Channel::Fax,
        Channel::Postal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Voice => "voice",
            Channel::Email => "email",
            Channel::Fax => "fax",
            Channel::Postal => "postal",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown channel {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Ascii,
    Pdf,
    Postscript,
    Rdf,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::Ascii, Format::Pdf, Format::Postscript, Format::Rdf];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Ascii => "ascii",
            Format::Pdf => "pdf",
            Format::Postscript => "postscript",
            Format::Rdf => "rdf",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Format::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown format {s:?}"))
    }
}

fn check_pin(pin: &str) -> Result<(), DdsError> {
    if pin.is_empty() || !pin.chars().all(|c| c.is_ascii_digit()) {
        return Err(DdsError::PinFormat);
    }
    Ok(())
}

fn pin_digest(salt: &str, pin: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(b":");
    h.update(pin.as_bytes());
    hex::encode(h.finalize())
}

/// A registered user. The PIN is held only as a salted SHA-256 digest.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    salt: String,
    pin_digest: String,
    pub addresses: BTreeMap<Channel, String>,
    pub preferred_format: Format,
    pub preferred_threshold: Option<f64>,
}

impl fmt::Debug for UserProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserProfile")
            .field("user_id", &self.user_id)
            .field("addresses", &self.addresses)
            .field("preferred_format", &self.preferred_format)
            .field("preferred_threshold", &self.preferred_threshold)
            .finish_non_exhaustive()
    }
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, pin: &str) -> Result<Self, DdsError> {
        Self::with_salt(user_id, pin, &uuid::Uuid::new_v4().simple().to_string())
    }

    pub fn with_salt(user_id: impl Into<String>, pin: &str, salt: &str) -> Result<Self, DdsError> {
        check_pin(pin)?;
        Ok(Self {
            user_id: user_id.into(),
            salt: salt.to_string(),
            pin_digest: pin_digest(salt, pin),
            addresses: BTreeMap::new(),
            preferred_format: Format::Ascii,
            preferred_threshold: None,
        })
    }

    pub fn with_address(mut self, channel: Channel, address: impl Into<String>) -> Self {
        self.addresses.insert(channel, address.into());
        self
    }

    pub fn verify_pin(&self, pin: &str) -> Result<bool, DdsError> {
        check_pin(pin)?;
        Ok(pin_digest(&self.salt, pin) == self.pin_digest)
    }
}

/// All known users, persisted as one tab-separated `key=value` record per line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileStore {
    profiles: BTreeMap<String, UserProfile>,
}

impl ProfileStore {
    pub fn insert(&mut self, profile: UserProfile) {
        self.profiles.insert(profile.user_id.clone(), profile);
    }

    pub fn get(&self, user_id: &str) -> Option<&UserProfile> {
        self.profiles.get(user_id)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// The user whose PIN matches, if any.
    pub fn authenticate(&self, pin: &str) -> Result<Option<&UserProfile>, DdsError> {
        check_pin(pin)?;
        Ok(self
            .profiles
            .values()
            .find(|p| pin_digest(&p.salt, pin) == p.pin_digest))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{PROFILE_HEADER}\n");
        for p in self.profiles.values() {
            let mut fields = vec![
                format!("user={}", p.user_id),
                format!("salt={}", p.salt),
                format!("pin_sha256={}", p.pin_digest),
                format!("format={}", p.preferred_format),
            ];
            if let Some(t) = p.preferred_threshold {
                fields.push(format!("threshold={t}"));
            }
            for (ch, addr) in &p.addresses {
                fields.push(format!("{ch}={addr}"));
            }
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == PROFILE_HEADER => {}
            _ => return Err(format!("missing header {PROFILE_HEADER:?}")),
        }
        let mut store = Self::default();
        for (i, line) in lines.enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| format!("line {}: {m}", i + 2);
            let mut kv: HashMap<&str, &str> = HashMap::new();
            for field in line.split('\t') {
                let (k, v) = field
                    .split_once('=')
                    .ok_or_else(|| err(format!("field {field:?} is not key=value")))?;
                kv.insert(k, v);
            }
            let take = |k: &str| {
                kv.get(k)
                    .map(|s| s.to_string())
                    .ok_or_else(|| err(format!("missing {k}")))
            };
            let mut addresses = BTreeMap::new();
            for ch in Channel::ALL {
                if let Some(a) = kv.get(ch.as_str()) {
                    addresses.insert(ch, a.to_string());
                }
            }
            let preferred_format = match kv.get("format") {
                Some(f) => f.parse().map_err(err)?,
                None => Format::Ascii,
            };
            let preferred_threshold = kv
                .get("threshold")
                .map(|t| t.parse::<f64>().map_err(|e| err(e.to_string())))
                .transpose()?;
            store.insert(UserProfile {
                user_id: take("user")?,
                salt: take("salt")?,
                pin_digest: take("pin_sha256")?,
                addresses,
                preferred_format,
                preferred_threshold,
            });
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, DdsError> {
        let text = fs::read_to_string(path).map_err(|e| DdsError::Store {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|reason| DdsError::Store {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DdsError> {
        fs::write(path, self.to_text()).map_err(|e| DdsError::Store {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Greedy word wrap; words longer than `width` get a line of their own.
fn wrap(text: &str, width: usize) -> Vec<String> {
    let mut lines = Vec::new();
    let mut line = String::new();
    let mut len = 0;
    for word in text.split_whitespace() {
        let wlen = word.chars().count();
        if len > 0 && len + 1 + wlen > width {
            lines.push(std::mem::take(&mut line));
            len = 0;
        }
        if len > 0 {
            line.push(' ');
            len += 1;
        }
        line.push_str(word);
        len += wlen;
    }
    if len > 0 {
        lines.push(line);
    }
    lines
}

/// Title line, blank line, then the body wrapped at 72 columns.
pub fn render_ascii(doc: &Document) -> String {
    let mut out = format!("{}\n\n", doc.title);
    for line in wrap(&doc.body(), ASCII_WIDTH) {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// A document encoder for one delivery format.
pub trait Renderer: Send + Sync {
    fn render(&self, doc: &Document) -> Vec<u8>;
}

struct AsciiRenderer;

impl Renderer for AsciiRenderer {
    fn render(&self, doc: &Document) -> Vec<u8> {
        render_ascii(doc).into_bytes()
    }
}

/// Renderers by format. Only ASCII is built in.
pub struct RendererRegistry {
    renderers: HashMap<Format, Box<dyn Renderer>>,
}

impl Default for RendererRegistry {
    fn default() -> Self {
        let mut renderers: HashMap<Format, Box<dyn Renderer>> = HashMap::new();
        renderers.insert(Format::Ascii, Box::new(AsciiRenderer));
        Self { renderers }
    }
}

impl RendererRegistry {
    pub fn register(&mut self, format: Format, renderer: Box<dyn Renderer>) {
        self.renderers.insert(format, renderer);
    }

    pub fn render(&self, doc: &Document, format: Format) -> Result<Vec<u8>, DdsError> {
        self.renderers
            .get(&format)
            .map(|r| r.render(doc))
            .ok_or(DdsError::UnsupportedFormat(format))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRequest {
    pub doc_ids: Vec<String>,
    pub channel: Channel,
    /// Ignored for voice, which always reads the plain text.
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiptStatus {
    Delivered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub receipt_id: String,
    pub channel: Channel,
    pub target: String,
    pub byte_count: usize,
    pub timestamp_ms: u128,
    pub status: ReceiptStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Simulated transports writing into an outbox directory.
#[derive(Debug)]
pub struct Outbox {
    root: PathBuf,
    receipts: Mutex<Vec<Receipt>>,
}

impl Outbox {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            receipts: Mutex::new(Vec::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Every receipt issued so far, oldest first.
    pub fn receipts(&self) -> Vec<Receipt> {
        self.receipts.lock().expect("receipt lock").clone()
    }

    fn record(&self, receipt: &Receipt) {
        self.receipts
            .lock()
            .expect("receipt lock")
            .push(receipt.clone());
        let line = serde_json::to_string(receipt).expect("receipt serializes");
        let log = self.root.join("receipts.log");
        if fs::create_dir_all(&self.root).is_ok() {
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(log) {
                let _ = writeln!(f, "{line}");
            }
        }
    }

    /// Delivers already rendered bytes. Voice deliveries write nothing: the
    /// caller reads the text out.
    pub fn deliver(
        &self,
        request: &DeliveryRequest,
        rendered: &[u8],
        profile: &UserProfile,
    ) -> Result<Receipt, DdsError> {
        let receipt_id = uuid::Uuid::new_v4().simple().to_string();
        let channel = request.channel;
        let mut receipt = Receipt {
            receipt_id,
            channel,
            target: String::new(),
            byte_count: rendered.len(),
            timestamp_ms: now_ms(),
            status: ReceiptStatus::Delivered,
            path: None,
        };
        if channel == Channel::Voice {
            receipt.target = format!("session:{}", profile.user_id);
            self.record(&receipt);
            return Ok(receipt);
        }
        let address = profile
            .addresses
            .get(&channel)
            .ok_or_else(|| DdsError::MissingAddress {
                user_id: profile.user_id.clone(),
                channel,
            })?;
        receipt.target = address.clone();
        let dir = self.root.join(channel.as_str());
        let path = dir.join(format!("{}.{}", receipt.receipt_id, channel));
        let written = fs::create_dir_all(&dir).and_then(|_| fs::write(&path, rendered));
        match written {
            Ok(()) => {
                receipt.path = Some(path);
                self.record(&receipt);
                Ok(receipt)
            }
            Err(source) => {
                receipt.status = ReceiptStatus::Failed;
                self.record(&receipt);
                Err(DdsError::Io {
                    receipt: Box::new(receipt),
                    source,
                })
            }
        }
    }
}
