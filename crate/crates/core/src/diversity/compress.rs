use std::io::{self, Write};

use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::DiversityError;

/// DEFLATE level used for every ratio.
pub const DEFAULT_LEVEL: u32 = 6;

/// Deterministic raw-DEFLATE compressor (32 KiB window, fixed level) used
/// to measure redundancy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Compressor {
    level: u32,
}

impl Default for Compressor {
    fn default() -> Self {
        Compressor {
            level: DEFAULT_LEVEL,
        }
    }
}

struct Counter(usize);

impl Write for Counter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len();
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Compressor {
    pub fn new(level: u32) -> Self {
        Compressor { level }
    }

    pub fn name(&self) -> &'static str {
        "deflate-raw"
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Compressed size of `data` in bytes.
    pub fn compressed_len(&self, data: &[u8]) -> usize {
        let mut enc = DeflateEncoder::new(Counter(0), Compression::new(self.level));
        enc.write_all(data).expect("counting sink never fails");
        enc.finish().expect("counting sink never fails").0
    }

    /// Raw bits over compressed bits.
    pub fn ratio(&self, data: &[u8]) -> Result<f64, DiversityError> {
        if data.is_empty() {
            return Err(DiversityError::EmptyInput);
        }
        Ok(data.len() as f64 / self.compressed_len(data) as f64)
    }

    /// Ratio of the concatenation of `parts`. The parts are joined before
    /// compressing so the result never depends on how input is split.
    pub fn ratio_of(&self, parts: &[&[u8]]) -> Result<f64, DiversityError> {
        let joined = parts.concat();
        self.ratio(&joined)
    }
}

/// Compression ratio of `data` under the default compressor.
pub fn compression_ratio(data: &[u8]) -> Result<f64, DiversityError> {
    Compressor::default().ratio(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn repeated_byte_compresses_well() {
        let r = compression_ratio(&[b'a'; 10_000]).unwrap();
        assert!(r > 50.0, "{r}");
        // 27 deflate bytes with the pinned backend and level
        assert_eq!(r, 10_000.0 / 27.0);
    }

    #[test]
    fn random_bytes_do_not_compress() {
        let mut g = rng::seeded(99);
        let data: Vec<u8> = (0..10_000).map(|_| rng::below(&mut g, 256) as u8).collect();
        let r = compression_ratio(&data).unwrap();
        assert!(r < 1.05, "{r}");
    }

    #[test]
    fn doubling_never_lowers_ratio() {
        let mut g = rng::seeded(5);
        for _ in 0..100 {
            let len = 1 + rng::below(&mut g, 400) as usize;
            let s: Vec<u8> = (0..len).map(|_| b'a' + rng::below(&mut g, 26) as u8).collect();
            let once = compression_ratio(&s).unwrap();
            let twice = compression_ratio(&[s.as_slice(), s.as_slice()].concat()).unwrap();
            assert!(twice >= once, "{once} {twice}");
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(compression_ratio(b""), Err(DiversityError::EmptyInput)));
    }

    #[test]
    fn split_parts_equal_joined() {
        let c = Compressor::default();
        let a = b"hello hello hello ";
        let b = b"world world";
        assert_eq!(c.ratio_of(&[a, b]).unwrap(), c.ratio(&[&a[..], &b[..]].concat()).unwrap());
    }
}
