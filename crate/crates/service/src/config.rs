use std::env;

pub const BIND_VAR: &str = "SPLATLOOP_BIND";
pub const MAX_SESSIONS_VAR: &str = "SPLATLOOP_MAX_SESSIONS";
pub const MAX_IMAGE_PIXELS_VAR: &str = "SPLATLOOP_MAX_IMAGE_PIXELS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub bind: String,
    /// Live sessions allowed at once; creates beyond this get 503.
    pub max_sessions: usize,
    /// Largest accepted `width * height`; larger images get 413.
    pub max_image_pixels: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), max_sessions: 16, max_image_pixels: 1024 * 1024 }
    }
}

impl ServiceConfig {
    /// Defaults overridden by the `SPLATLOOP_*` environment variables.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut cfg = Self::default();
        if let Some(bind) = get(BIND_VAR) {
            cfg.bind = bind;
        }
        if let Some(v) = get(MAX_SESSIONS_VAR) {
            cfg.max_sessions = v.trim().parse().map_err(|e| format!("{MAX_SESSIONS_VAR}={v}: {e}"))?;
        }
        if let Some(v) = get(MAX_IMAGE_PIXELS_VAR) {
            cfg.max_image_pixels = v.trim().parse().map_err(|e| format!("{MAX_IMAGE_PIXELS_VAR}={v}: {e}"))?;
        }
        if cfg.max_sessions == 0 || cfg.max_image_pixels == 0 {
            return Err("session cap and image size limit must be positive".into());
        }
        Ok(cfg)
    }

    /// Request body cap for session creation: base64 PNG plus base64 PFM
    /// at the pixel limit, with room for the JSON envelope.
    pub fn body_limit(&self) -> usize {
        let per_pixel = 4 * (3 + 4) / 3 + 2;
        (self.max_image_pixels as usize).saturating_mul(per_pixel).saturating_add(1 << 20)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides() {
        let cfg = ServiceConfig::from_lookup(|k| match k {
            BIND_VAR => Some("0.0.0.0:9000".into()),
            MAX_SESSIONS_VAR => Some("3".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.bind, "0.0.0.0:9000");
        assert_eq!(cfg.max_sessions, 3);
        assert_eq!(cfg.max_image_pixels, ServiceConfig::default().max_image_pixels);
    }

    #[test]
    fn rejects_garbage_and_zero() {
        assert!(ServiceConfig::from_lookup(|k| (k == MAX_SESSIONS_VAR).then(|| "many".into())).is_err());
        assert!(ServiceConfig::from_lookup(|k| (k == MAX_IMAGE_PIXELS_VAR).then(|| "0".into())).is_err());
    }
}
