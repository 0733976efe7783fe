//! Binary PGM (`P5`) rasters with a `.meta` sidecar.
//!
//! A map `foo.pgm` is accompanied by `foo.meta`, a text file of `key=value`
//! lines. `resolution_m_per_px` is always present; arrival-count rasters also
//! carry `n_max`. When `foo.meta` is missing, the sidecar of the enclosing
//! prefix is tried (`a.obstacle.pgm` falls back to `a.meta`), which is how the
//! three channels of a local map share one meta file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::GridImage;

pub const RESOLUTION_KEY: &str = "resolution_m_per_px";

/// Decoded PGM payload. Samples are widened to `u16` so 16-bit files load too.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

/// Sidecar metadata in insertion-independent (sorted) key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    entries: BTreeMap<String, String>,
}

impl Meta {
    pub fn with_resolution(resolution: f64) -> Self {
        let mut m = Meta::default();
        m.set(RESOLUTION_KEY, resolution);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.trim().parse().ok())
    }

    pub fn resolution(&self) -> Option<f64> {
        self.get_f64(RESOLUTION_KEY)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut meta = Meta::default();
        let mut offset = 0;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let (k, v) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    offset,
                    message: format!("expected key=value, got {trimmed:?}"),
                })?;
                meta.set(k.trim(), v.trim());
            }
            offset += line.len();
        }
        Ok(meta)
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Meta::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a binary PGM. Header tokens may be separated by any whitespace and
/// interleaved with `#` comments; exactly one whitespace byte precedes the raster.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let mut cursor = HeaderCursor { bytes, pos: 0, path };
    let magic = cursor.token()?;
    if magic != b"P5" {
        return Err(cursor.error(0, format!("bad magic {:?}, expected \"P5\"", String::from_utf8_lossy(magic))));
    }
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(cursor.error(cursor.pos, format!("maxval {maxval} out of range 1..=65535")));
    }
    if cursor.pos >= bytes.len() || !bytes[cursor.pos].is_ascii_whitespace() {
        return Err(cursor.error(cursor.pos, "missing whitespace before raster data"));
    }
    let start = cursor.pos + 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let needed = width * height * sample_bytes;
    let data = &bytes[start.min(bytes.len())..];
    if data.len() < needed {
        return Err(cursor.error(
            bytes.len(),
            format!("truncated raster: {} bytes, expected {needed}", data.len()),
        ));
    }
    if data.len() > needed {
        return Err(cursor.error(start + needed, "trailing bytes after raster"));
    }
    let samples: Vec<u16> = if sample_bytes == 1 {
        data.iter().map(|&b| u16::from(b)).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
        return Err(cursor.error(start + i * sample_bytes, format!("sample exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval > 255 {
        for s in &pgm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(pgm.samples.iter().map(|&s| s as u8));
    }
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> HeaderCursor<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        let end = offset.min(self.bytes.len());
        let line = 1 + self.bytes[..end].iter().filter(|&&b| b == b'\n').count();
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            offset,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(start, "unexpected end of header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        let start = self.pos - tok.len();
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| {
                self.error(start, format!("invalid {what} {:?}", String::from_utf8_lossy(tok)))
            })
    }
}

/// Sidecar path for a raster file: `foo.pgm` -> `foo.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

fn find_meta(path: &Path) -> Option<PathBuf> {
    let direct = meta_path(path);
    if direct.exists() {
        return Some(direct);
    }
    let stem = path.file_stem()?;
    let prefix = Path::new(stem).file_stem()?;
    if prefix == stem {
        return None;
    }
    let shared = path.with_file_name(prefix).with_extension("meta");
    shared.exists().then_some(shared)
}

pub fn read_pgm_file(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_pgm_file(pgm: &Pgm, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(pgm)).map_err(|e| Error::io(path, e))
}

pub fn load_meta_for(path: &Path) -> Result<Meta> {
    let meta_file = find_meta(path).ok_or_else(|| {
        Error::io(
            meta_path(path),
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing .meta sidecar"),
        )
    })?;
    Meta::load(&meta_file)
}

/// Loads an 8-bit map and its resolution sidecar.
pub fn load_map(path: impl AsRef<Path>) -> Result<GridImage> {
    let path = path.as_ref();
    let pgm = read_pgm_file(path)?;
    if pgm.maxval > 255 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 3,
            offset: 0,
            message: format!("map rasters must be 8-bit, maxval is {}", pgm.maxval),
        });
    }
    let meta = load_meta_for(path)?;
    let resolution = meta.resolution().ok_or_else(|| Error::Parse {
        path: meta_path(path),
        line: 1,
        offset: 0,
        message: format!("missing or invalid {RESOLUTION_KEY}"),
    })?;
    let pixels = pgm.samples.iter().map(|&s| s as u8).collect();
    GridImage::from_pixels(pgm.width, pgm.height, resolution, pixels)
}

/// Writes `path` (PGM, maxval 255) and its `.meta` sidecar.
pub fn save_map(img: &GridImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_map_with_meta(img, path, &Meta::with_resolution(img.resolution()))
}

pub fn save_map_with_meta(img: &GridImage, path: &Path, meta: &Meta) -> Result<()> {
    let pgm = Pgm {
        width: img.width(),
        height: img.height(),
        maxval: 255,
        samples: img.pixels().iter().map(|&p| u16::from(p)).collect(),
    };
    write_pgm_file(&pgm, path)?;
    meta.save(&meta_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n3 2\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 2, 253, 254, 255]);
        let pgm = decode_pgm(&bytes, Path::new("x.pgm")).unwrap();
        assert_eq!((pgm.width, pgm.height, pgm.maxval), (3, 2, 255));
        assert_eq!(pgm.samples, vec![0, 1, 2, 253, 254, 255]);
    }

    #[test]
    fn reports_offsets_on_malformed_input() {
        let p = Path::new("bad.pgm");
        match decode_pgm(b"P2\n1 1\n255\n\x00", p) {
            Err(Error::Parse { offset, line, .. }) => assert_eq!((offset, line), (0, 1)),
            other => panic!("{other:?}"),
        }
        match decode_pgm(b"P5\n2 x\n255\n\x00\x00", p) {
            Err(Error::Parse { offset, line, .. }) => assert_eq!((offset, line), (5, 2)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x00", p), Err(Error::Parse { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n255\n\x00\x00", p), Err(Error::Parse { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1\n10\n\x0b", p), Err(Error::Parse { .. })));
        assert!(matches!(decode_pgm(b"P5\n1 1", p), Err(Error::Parse { .. })));
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let pgm = Pgm {
            width: 2,
            height: 1,
            maxval: 1000,
            samples: vec![0, 1000],
        };
        let bytes = encode_pgm(&pgm);
        assert_eq!(decode_pgm(&bytes, Path::new("c.pgm")).unwrap(), pgm);
    }

    #[test]
    fn shared_meta_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let img = GridImage::filled(3, 3, 0.05, 9).unwrap();
        let file = dir.path().join("obs.obstacle.pgm");
        let pgm = Pgm {
            width: 3,
            height: 3,
            maxval: 255,
            samples: vec![9; 9],
        };
        write_pgm_file(&pgm, &file).unwrap();
        assert!(load_map(&file).is_err());
        Meta::with_resolution(0.05)
            .save(&dir.path().join("obs.meta"))
            .unwrap();
        assert_eq!(load_map(&file).unwrap(), img);
    }

    #[test]
    fn meta_rejects_garbage_lines() {
        let err = Meta::parse("resolution_m_per_px=0.05\nnonsense\n", Path::new("m.meta"));
        match err {
            Err(Error::Parse { line, offset, .. }) => assert_eq!((line, offset), (2, 25)),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_then_load_is_bit_exact(
            w in 1usize..20,
            h in 1usize..20,
            res in 1e-4f64..10.0,
            seed in any::<u8>(),
        ) {
            let pixels: Vec<u8> = (0..w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
            let img = GridImage::from_pixels(w, h, res, pixels).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.pgm");
            save_map(&img, &path).unwrap();
            let back = load_map(&path).unwrap();
            prop_assert_eq!(back.resolution().to_bits(), img.resolution().to_bits());
            prop_assert_eq!(back, img);
        }
    }
}
