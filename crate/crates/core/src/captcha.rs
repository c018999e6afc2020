//! CAPTCHA verification. Whether it runs at all is decided by the caller
//! from configuration.

use serde::Deserialize;

pub trait CaptchaVerifier: Send + Sync {
    fn verify(&self, response: Option<&str>) -> bool;
}

/// Accepts exactly one fixed response string.
#[derive(Debug, Clone)]
pub struct StaticCaptcha {
    expected: String,
}

impl StaticCaptcha {
    pub fn new(expected: impl Into<String>) -> Self {
        Self {
            expected: expected.into(),
        }
    }
}

impl CaptchaVerifier for StaticCaptcha {
    fn verify(&self, response: Option<&str>) -> bool {
        response == Some(self.expected.as_str())
    }
}

/// siteverify-style remote check: POST `secret` and `response` as a form,
/// expect `{"success": bool}` back.
#[derive(Debug, Clone)]
pub struct RemoteCaptcha {
    url: String,
    secret: String,
}

impl RemoteCaptcha {
    pub fn new(url: impl Into<String>, secret: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            secret: secret.into(),
        }
    }
}

#[derive(Deserialize)]
struct SiteVerify {
    success: bool,
}

impl CaptchaVerifier for RemoteCaptcha {
    fn verify(&self, response: Option<&str>) -> bool {
        let Some(response) = response else {
            return false;
        };
        let result = ureq::post(&self.url)
            .send_form([("secret", self.secret.as_str()), ("response", response)])
            .and_then(|mut r| r.body_mut().read_json::<SiteVerify>());
        match result {
            Ok(v) => v.success,
            Err(e) => {
                tracing::warn!(error = %e, "captcha verification request failed");
                false
            }
        }
    }
}
