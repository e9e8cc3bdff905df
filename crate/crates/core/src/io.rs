//! File formats: binary PGM images, plain-text kernels and CSV iteration logs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::blur::PsfKernel;
use crate::error::{RestoreError, Result};
use crate::grid::ImageGrid;
use crate::solvers::IterationRecord;

/// Column header of iteration logs.
pub const LOG_HEADER: &str = "k,tau,rel_err,misfit,objective";

/// Cursor over the whitespace/comment separated PGM header.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(RestoreError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RestoreError::MalformedHeader(format!("{what} out of range")))
    }
}

/// Parses a binary 8-bit PGM (`P5`) into a square lattice, mapping samples
/// linearly onto `[0, 255]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(RestoreError::MalformedHeader("missing P5 magic number".into()));
    }
    let mut hdr = HeaderReader { bytes, pos: 2 };
    let width = hdr.number("width")? as usize;
    let height = hdr.number("height")? as usize;
    let maxval = hdr.number("maxval")?;
    if maxval == 0 {
        return Err(RestoreError::MalformedHeader("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(RestoreError::UnsupportedMaxval(maxval));
    }
    match bytes.get(hdr.pos) {
        Some(c) if c.is_ascii_whitespace() => hdr.pos += 1,
        _ => {
            return Err(RestoreError::MalformedHeader(
                "expected a single whitespace byte before pixel data".into(),
            ))
        }
    }
    if width != height {
        return Err(RestoreError::InvalidGrid(format!(
            "only square images are supported, got {width}x{height}"
        )));
    }
    let expected = width * height;
    let payload = &bytes[hdr.pos..];
    if payload.len() < expected {
        return Err(RestoreError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let scale = 255.0 / f64::from(maxval);
    let values = payload[..expected]
        .iter()
        .map(|&p| {
            if u32::from(p) > maxval {
                Err(RestoreError::MalformedHeader(format!(
                    "sample {p} exceeds maxval {maxval}"
                )))
            } else {
                Ok(f64::from(p) * scale)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ImageGrid::new(width, values)
}

/// Pixel value written for `v`: clamped to `[0, 255]`, rounded half away
/// from zero.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0).round() as u8
}

/// Encodes an image as binary 8-bit PGM.
pub fn encode_pgm(image: &ImageGrid) -> Vec<u8> {
    let side = image.side();
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(image.values().iter().map(|&v| quantize(v)));
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| RestoreError::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_image(image: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| RestoreError::io(path, e))
}

/// Parses a kernel written one row per line with whitespace-separated taps.
/// Blank lines and `#` comments are ignored. The origin is the middle tap.
pub fn parse_psf(text: &str) -> Result<PsfKernel> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    RestoreError::MalformedKernel(format!("line {}: bad number '{tok}'", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(RestoreError::MalformedKernel(format!(
                    "line {}: expected {} taps, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(RestoreError::MalformedKernel("no taps".into()));
    }
    let (r, c) = (rows.len(), rows[0].len());
    PsfKernel::custom(r, c, rows.into_iter().flatten().collect())
        .map_err(|e| RestoreError::MalformedKernel(e.to_string()))
}

/// Formats a kernel so that [`parse_psf`] recovers it exactly.
pub fn format_psf(psf: &PsfKernel) -> String {
    let mut out = String::new();
    for r in 0..psf.rows() {
        let row: Vec<String> = (0..psf.cols())
            .map(|c| {
                // Print negative zero as plain zero.
                let v = psf.tap(r, c);
                if v == 0.0 { 0.0 } else { v }.to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_psf(path: impl AsRef<Path>) -> Result<PsfKernel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| RestoreError::io(path, e))?;
    parse_psf(&text)
}

pub fn write_psf(psf: &PsfKernel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_psf(psf)).map_err(|e| RestoreError::io(path, e))
}

fn push_field(line: &mut String, value: Option<f64>) {
    line.push(',');
    if let Some(v) = value {
        line.push_str(&format!("{v:.14e}"));
    }
}

/// CSV rendering of an iteration log. Absent values are empty fields.
pub fn format_log(records: &[IterationRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(RestoreError::Parameter("iteration log is empty".into()));
    }
    let mut out = String::with_capacity(80 * (records.len() + 1));
    out.push_str(LOG_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.k.to_string());
        push_field(&mut out, r.tau);
        push_field(&mut out, Some(r.rel_err));
        push_field(&mut out, Some(r.misfit));
        push_field(&mut out, r.objective);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_log(records: &[IterationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_log(records)?;
    let mut file = fs::File::create(path).map_err(|e| RestoreError::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| RestoreError::io(path, e))
}
