//! Byte accounting for data retained across streaming passes.
//!
//! The engine never asks the OS for limits. Components that keep per-record
//! state (id sets, buffered lines, vectors) charge a [`MemoryGauge`] and get a
//! [`ResourceError`] once the configured ceiling would be exceeded.

use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, thiserror::Error)]
#[error("memory ceiling of {cap} bytes exceeded while retaining {what} ({requested} more bytes requested, {used} in use)")]
pub struct ResourceError {
    pub what: String,
    pub cap: usize,
    pub used: usize,
    pub requested: usize,
}

#[derive(Debug, Default)]
pub struct MemoryGauge {
    cap: Option<usize>,
    used: AtomicUsize,
}

impl MemoryGauge {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: usize) -> Self {
        Self {
            cap: Some(cap),
            used: AtomicUsize::new(0),
        }
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::Relaxed)
    }

    pub fn charge(&self, bytes: usize, what: &str) -> Result<(), ResourceError> {
        let prev = self.used.fetch_add(bytes, Ordering::Relaxed);
        if let Some(cap) = self.cap {
            if prev.saturating_add(bytes) > cap {
                self.used.fetch_sub(bytes, Ordering::Relaxed);
                return Err(ResourceError {
                    what: what.to_string(),
                    cap,
                    used: prev,
                    requested: bytes,
                });
            }
        }
        Ok(())
    }

    pub fn release(&self, bytes: usize) {
        let _ = self
            .used
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |u| {
                Some(u.saturating_sub(bytes))
            });
    }
}

/// Parses sizes such as `2G`, `512M`, `64k` or a plain byte count.
pub fn parse_size(s: &str) -> Option<usize> {
    let s = s.trim();
    let (num, mult) = match s.char_indices().last()? {
        (i, 'k' | 'K') => (&s[..i], 1usize << 10),
        (i, 'm' | 'M') => (&s[..i], 1 << 20),
        (i, 'g' | 'G') => (&s[..i], 1 << 30),
        (i, 't' | 'T') => (&s[..i], 1 << 40),
        _ => (s, 1),
    };
    let n: f64 = num.trim().parse().ok()?;
    if !n.is_finite() || n < 0.0 {
        return None;
    }
    Some((n * mult as f64) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_rejects_over_cap() {
        let g = MemoryGauge::with_cap(100);
        g.charge(60, "a").unwrap();
        let err = g.charge(50, "b").unwrap_err();
        assert_eq!(err.used, 60);
        assert_eq!(g.used(), 60);
        g.release(60);
        g.charge(100, "c").unwrap();
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("2G"), Some(2 << 30));
        assert_eq!(parse_size("512m"), Some(512 << 20));
        assert_eq!(parse_size("1000"), Some(1000));
        assert_eq!(parse_size("1.5k"), Some(1536));
        assert_eq!(parse_size("x"), None);
    }
}
