//! Outbound mail: verification links and one-time codes.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub const TEMPLATE_VERIFY_EMAIL: &str = "verify_email";
pub const TEMPLATE_RESET_PASSWORD: &str = "reset_password";
pub const TEMPLATE_MFA_OTP: &str = "mfa_otp";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MailMessage {
    pub to: String,
    pub template_id: String,
    /// Link carrying exactly one typed token, for verification mails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    /// One-time code, for MFA mails.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

#[derive(Debug, thiserror::Error)]
#[error("mail dispatch failed: {0}")]
pub struct MailError(pub String);

pub trait MailClient: Send + Sync {
    fn send(&self, message: &MailMessage) -> Result<(), MailError>;
}

/// Captures messages in memory. Can be told to fail the next send.
#[derive(Debug, Default)]
pub struct MemoryMailSink {
    sent: Mutex<Vec<MailMessage>>,
    fail_next: AtomicBool,
}

impl MemoryMailSink {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn sent(&self) -> Vec<MailMessage> {
        self.sent.lock().clone()
    }

    pub fn count(&self) -> usize {
        self.sent.lock().len()
    }

    pub fn last_to(&self, to: &str) -> Option<MailMessage> {
        self.sent.lock().iter().rev().find(|m| m.to == to).cloned()
    }

    pub fn inject_fault(&self) {
        self.fail_next.store(true, Ordering::SeqCst);
    }
}

impl MailClient for MemoryMailSink {
    fn send(&self, message: &MailMessage) -> Result<(), MailError> {
        if self.fail_next.swap(false, Ordering::SeqCst) {
            return Err(MailError("injected fault".into()));
        }
        self.sent.lock().push(message.clone());
        Ok(())
    }
}

/// Appends each message as a JSON line to an outbox file.
#[derive(Debug)]
pub struct OutboxMailer {
    path: PathBuf,
    lock: Mutex<()>,
}

impl OutboxMailer {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl MailClient for OutboxMailer {
    fn send(&self, message: &MailMessage) -> Result<(), MailError> {
        let line = serde_json::to_string(message).map_err(|e| MailError(e.to_string()))?;
        let _guard = self.lock.lock();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| MailError(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| MailError(e.to_string()))
    }
}

/// POSTs each message as JSON to a mail relay.
#[derive(Debug)]
pub struct HttpRelayMailer {
    url: String,
}

impl HttpRelayMailer {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into() }
    }
}

impl MailClient for HttpRelayMailer {
    fn send(&self, message: &MailMessage) -> Result<(), MailError> {
        let resp = ureq::post(&self.url)
            .send_json(message)
            .map_err(|e| MailError(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(MailError(format!("relay answered {}", resp.status())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;

    fn message() -> MailMessage {
        MailMessage {
            to: "a@example.com".into(),
            template_id: TEMPLATE_VERIFY_EMAIL.into(),
            link: Some("http://x/verify-email?token=t".into()),
            code: None,
        }
    }

    #[test]
    fn memory_sink_fault_is_one_shot() {
        let sink = MemoryMailSink::new();
        sink.inject_fault();
        assert!(sink.send(&message()).is_err());
        sink.send(&message()).unwrap();
        assert_eq!(sink.count(), 1);
    }

    #[test]
    fn outbox_writes_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("outbox.jsonl");
        let mailer = OutboxMailer::new(&path);
        mailer.send(&message()).unwrap();
        mailer.send(&message()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first: MailMessage = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, message());
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn relay_posts_message_body() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            stream
                .write_all(b"HTTP/1.1 202 Accepted\r\ncontent-length: 0\r\n\r\n")
                .unwrap();
            serde_json::from_slice::<MailMessage>(&body).unwrap()
        });
        HttpRelayMailer::new(format!("http://{addr}/send"))
            .send(&message())
            .unwrap();
        assert_eq!(server.join().unwrap(), message());
    }
}
