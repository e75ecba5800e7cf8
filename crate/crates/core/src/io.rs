//! Bit-exact image and depth file formats plus CSV number formatting.
//!
//! RGB images are binary portable pixmaps (`P6`, maxval 255). Depth maps are
//! single-channel portable float maps (`Pf`) written little-endian (scale
//! `-1.0`) with rows stored bottom to top, as the format prescribes.

use std::fs;
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::image::{DepthMap, RgbImage};

/// Largest accepted image side.
pub const MAX_SIDE: usize = 1 << 16;

/// Quantizes a `[0, 1]` value to a byte, rounding half up.
pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&depth.at(x, y).to_le_bytes());
        }
    }
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Start of the most recent token.
    last: usize,
    source: &'a str,
}

impl<'a> Header<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.source.to_string(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        self.last = start;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("truncated header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| {
            Error::Format {
                path: self.source.to_string(),
                offset: start,
                reason: "non-ASCII header token".into(),
            }
        })
    }

    fn dimension(&mut self) -> Result<usize> {
        let tok = self.token()?;
        let at = self.last;
        let v: usize = tok.parse().map_err(|_| Error::Format {
            path: self.source.to_string(),
            offset: at,
            reason: format!("bad dimension {tok:?}"),
        })?;
        if v == 0 || v > MAX_SIDE {
            return Err(Error::Format {
                path: self.source.to_string(),
                offset: at,
                reason: format!("dimension {v} outside 1..={MAX_SIDE}"),
            });
        }
        Ok(v)
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(self.err("missing whitespace after header")),
        }
    }
}

pub fn decode_rgb(bytes: &[u8], source: &str) -> Result<RgbImage> {
    let mut h = Header {
        bytes,
        pos: 0,
        last: 0,
        source,
    };
    if h.token()? != "P6" {
        return Err(Error::Format {
            path: source.into(),
            offset: 0,
            reason: "bad magic, expected P6".into(),
        });
    }
    let width = h.dimension()?;
    let height = h.dimension()?;
    let maxval = h.token()?;
    let at = h.last;
    if maxval != "255" {
        return Err(Error::Format {
            path: source.into(),
            offset: at,
            reason: format!("maxval {maxval} unsupported, expected 255"),
        });
    }
    let start = h.end()?;
    let need = width * height * 3;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < need {
        return Err(Error::Format {
            path: source.into(),
            offset: bytes.len(),
            reason: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    let data = payload[..need].iter().map(|&b| b as f32 / 255.0).collect();
    RgbImage::new(width, height, data)
}

pub fn decode_depth(bytes: &[u8], source: &str) -> Result<DepthMap> {
    let mut h = Header {
        bytes,
        pos: 0,
        last: 0,
        source,
    };
    if h.token()? != "Pf" {
        return Err(Error::Format {
            path: source.into(),
            offset: 0,
            reason: "bad magic, expected Pf".into(),
        });
    }
    let width = h.dimension()?;
    let height = h.dimension()?;
    let scale_tok = h.token()?;
    let at = h.last;
    let scale: f64 = scale_tok.parse().map_err(|_| Error::Format {
        path: source.into(),
        offset: at,
        reason: format!("bad scale {scale_tok:?}"),
    })?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format {
            path: source.into(),
            offset: at,
            reason: "scale must be non-zero".into(),
        });
    }
    let little_endian = scale < 0.0;
    let start = h.end()?;
    let need = width * height * 4;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < need {
        return Err(Error::Format {
            path: source.into(),
            offset: bytes.len(),
            reason: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    let mut data = vec![0.0f32; width * height];
    for (i, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row_from_bottom, x) = (i / width, i % width);
        data[(height - 1 - row_from_bottom) * width + x] = v;
    }
    DepthMap::new(width, height, data).map_err(|e| Error::Format {
        path: source.into(),
        offset: start,
        reason: e.to_string(),
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_bytes(path.as_ref(), &encode_rgb(img))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_rgb(&bytes, &path.display().to_string())
}

pub fn save_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_bytes(path.as_ref(), &encode_depth(depth))
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_depth(&bytes, &path.display().to_string())
}

/// Formats `x` with `sig` significant digits, `%g` style.
pub fn format_sig(x: f64, sig: usize) -> String {
    let sig = sig.max(1);
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// CSV float cell: six significant digits.
pub fn csv_float(x: f64) -> String {
    format_sig(x, 6)
}

/// Writes a CSV document with a header row.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_bytes(path.as_ref(), out.as_bytes())
}
