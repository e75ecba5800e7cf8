//! Beer-Lambert underwater image formation.
//!
//! Each channel of a clean radiance `J` seen through `d` meters of water with
//! attenuation `K` and veiling light `B` is observed as
//! `I = J * exp(-K d) + B * (1 - exp(-K d))`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::image::{check_same_dims, DepthMap, RgbImage};

/// Column order of the water-type table.
pub const WATER_TABLE_HEADER: [&str; 7] = ["name", "K_r", "K_g", "K_b", "B_r", "B_g", "B_b"];

/// Per-channel attenuation (1/m) and background light for one water style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterType {
    pub name: String,
    pub attenuation: [f64; 3],
    pub background: [f64; 3],
}

impl WaterType {
    pub fn new(name: impl Into<String>, attenuation: [f64; 3], background: [f64; 3]) -> Result<Self> {
        let w = Self {
            name: name.into(),
            attenuation,
            background,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidArgument("water type name is empty".into()));
        }
        for (c, &k) in self.attenuation.iter().enumerate() {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{}: attenuation {} = {k} must be finite and >= 0",
                    self.name,
                    WATER_TABLE_HEADER[1 + c]
                )));
            }
        }
        for (c, &b) in self.background.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "{}: background {} = {b} must lie in [0, 1]",
                    self.name,
                    WATER_TABLE_HEADER[4 + c]
                )));
            }
        }
        Ok(())
    }
}

/// Built-in styles named after the four clusters. The coefficients are
/// illustrative config defaults chosen to give visibly distinct tints; they
/// are not measured values.
pub fn default_water_types() -> Vec<WaterType> {
    let table = [
        ("blue", [0.35, 0.07, 0.04], [0.04, 0.32, 0.62]),
        ("light-blue", [0.22, 0.05, 0.05], [0.28, 0.68, 0.82]),
        ("dark-blue", [0.55, 0.14, 0.09], [0.02, 0.12, 0.32]),
        ("black", [0.75, 0.45, 0.40], [0.02, 0.03, 0.05]),
    ];
    table
        .into_iter()
        .map(|(n, k, b)| WaterType::new(n, k, b).expect("default table is valid"))
        .collect()
}

/// Observed intensity of one channel.
pub fn render_value(clean: f64, background: f64, attenuation: f64, depth: f64) -> f64 {
    let t = (-attenuation * depth).exp();
    let v = clean * t + background * (1.0 - t);
    // The exact value is a convex combination of J and B.
    v.clamp(clean.min(background), clean.max(background))
        .clamp(0.0, 1.0)
}

pub fn render_underwater(clean: &RgbImage, depth: &DepthMap, water: &WaterType) -> Result<RgbImage> {
    check_same_dims(clean, depth)?;
    let (w, h) = clean.dims();
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let j = clean.pixel(x, y);
        let d = depth.at(x, y) as f64;
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            out[c] = render_value(j[c] as f64, water.background[c], water.attenuation[c], d) as f32;
        }
        out
    }))
}

#[derive(Debug, Deserialize)]
struct Row {
    name: String,
    #[serde(rename = "K_r")]
    k_r: f64,
    #[serde(rename = "K_g")]
    k_g: f64,
    #[serde(rename = "K_b")]
    k_b: f64,
    #[serde(rename = "B_r")]
    b_r: f64,
    #[serde(rename = "B_g")]
    b_g: f64,
    #[serde(rename = "B_b")]
    b_b: f64,
}

/// 1-based line of a record; counts blank lines, which the csv reader skips.
fn line_of(text: &str, pos: &csv::Position) -> u64 {
    let bytes = text.as_bytes();
    let mut end = (pos.byte() as usize).min(bytes.len());
    while end < bytes.len() && bytes[end].is_ascii_whitespace() {
        end += 1;
    }
    1 + bytes[..end].iter().filter(|&&b| b == b'\n').count() as u64
}

/// Parses a water-type table: CSV with header `name,K_r,K_g,K_b,B_r,B_g,B_b`.
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_water_types(text: &str, source: &str) -> Result<Vec<WaterType>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: source.into(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if header.iter().collect::<Vec<_>>() != WATER_TABLE_HEADER {
        return Err(Error::Parse {
            path: source.into(),
            line: header.position().map_or(1, |p| line_of(text, p)),
            reason: format!("expected header {}", WATER_TABLE_HEADER.join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: source.into(),
            line: e.position().map_or(0, |p| line_of(text, p)),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| line_of(text, p));
        let parse_err = |reason: String| Error::Parse {
            path: source.into(),
            line,
            reason,
        };
        let row: Row = record
            .deserialize(Some(&header))
            .map_err(|e| parse_err(e.to_string()))?;
        let water = WaterType::new(
            row.name,
            [row.k_r, row.k_g, row.k_b],
            [row.b_r, row.b_g, row.b_b],
        )
        .map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(water.name.clone()) {
            return Err(parse_err(format!("duplicate water type {:?}", water.name)));
        }
        out.push(water);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: source.into(),
            line: 1,
            reason: "table has no entries".into(),
        });
    }
    Ok(out)
}

pub fn load_water_types(path: impl AsRef<Path>) -> Result<Vec<WaterType>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_water_types(&text, &path.display().to_string())
}

/// Serializes with shortest round-trip decimals so reloading is exact.
pub fn format_water_types(types: &[WaterType]) -> String {
    let mut out = WATER_TABLE_HEADER.join(",");
    out.push('\n');
    for w in types {
        let [kr, kg, kb] = w.attenuation;
        let [br, bg, bb] = w.background;
        writeln!(out, "{},{kr},{kg},{kb},{br},{bg},{bb}", w.name).expect("write to string");
    }
    out
}

pub fn save_water_types(path: impl AsRef<Path>, types: &[WaterType]) -> Result<()> {
    crate::io::write_bytes(path.as_ref(), format_water_types(types).as_bytes())
}
