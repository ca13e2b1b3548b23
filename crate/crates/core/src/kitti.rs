//! KITTI object labels, `P2` calibration and 16-bit depth maps.
//!
//! Label lines carry 15 fields, or 16 with a trailing detection score:
//!
//! ```text
//! type truncated occluded alpha left top right bottom h w l x y z ry [score]
//! ```
//!
//! Depth maps are binary PGM (`P5`, maxval 65535, big-endian samples) with
//! `meters = stored / 256` and `0` marking a missing value.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Box2D, Box3D, Calibration, GeometryError};

pub const DONT_CARE: &str = "DontCare";
pub const DEPTH_SCALE: f64 = 256.0;
pub const DEPTH_MAXVAL: u32 = 65535;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("line {line}: expected 15 or 16 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field {field} is not a number: {value:?}")]
    Number { line: usize, field: usize, value: String },
    #[error("no P2 line in calibration")]
    MissingP2,
    #[error("P2 line has {found} values, expected 12")]
    ShortP2 { found: usize },
    #[error("P2 value {0:?} is not a number")]
    CalibNumber(String),
    #[error("depth map: {0}")]
    Pgm(String),
    #[error("depth {0} m cannot be stored")]
    DepthOutOfRange(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `(left, top, right, bottom)`, pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)`, meters.
    pub dims: [f64; 3],
    /// Bottom centre `(x, y, z)` in camera coordinates, meters.
    pub location: [f64; 3],
    pub ry: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.kind == DONT_CARE
    }

    pub fn box2d(&self) -> Box2D {
        let [l, t, r, b] = self.bbox;
        Box2D::from_ltrb(l, t, r, b)
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    /// The 3D box with the file's `alpha` and `ry` taken as given.
    pub fn box3d(&self, class_id: usize) -> Box3D {
        let [h, w, l] = self.dims;
        Box3D {
            center: self.location,
            dims: [w, h, l],
            ry: self.ry,
            alpha: self.alpha,
            class_id,
            score: self.score.unwrap_or(1.0),
        }
    }

    /// A detection record. Truncation and occlusion are unknown (`-1`).
    pub fn from_detection(kind: &str, box2d: &Box2D, box3d: &Box3D) -> Self {
        let [w, h, l] = box3d.dims;
        Self {
            kind: kind.to_string(),
            truncated: -1.0,
            occluded: -1,
            alpha: box3d.alpha,
            bbox: box2d.ltrb(),
            dims: [h, w, l],
            location: box3d.center,
            ry: box3d.ry,
            score: Some(box3d.score),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, field: usize) -> Result<T, KittiError> {
    tok.parse().map_err(|_| KittiError::Number { line, field, value: tok.to_string() })
}

/// Parses one record per non-blank line. Line numbers in errors are 1-based.
pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>, KittiError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 15 && toks.len() != 16 {
            return Err(KittiError::FieldCount { line, found: toks.len() });
        }
        let f = |k: usize| parse_num::<f64>(toks[k], line, k + 1);
        out.push(LabelRecord {
            kind: toks[0].to_string(),
            truncated: f(1)?,
            occluded: match toks[2].parse::<i32>() {
                Ok(v) => v,
                // some writers emit the occlusion level as a float
                Err(_) => {
                    let v = f(2)?;
                    if v.fract() != 0.0 {
                        return Err(KittiError::Number { line, field: 3, value: toks[2].to_string() });
                    }
                    v as i32
                }
            },
            alpha: f(3)?,
            bbox: [f(4)?, f(5)?, f(6)?, f(7)?],
            dims: [f(8)?, f(9)?, f(10)?],
            location: [f(11)?, f(12)?, f(13)?],
            ry: f(14)?,
            score: if toks.len() == 16 { Some(f(15)?) } else { None },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Two decimals, as the KITTI devkit writes.
    #[default]
    Fixed2,
    /// Shortest representation that parses back to the same bits.
    Full,
}

pub fn emit_labels(records: &[LabelRecord], precision: Precision) -> String {
    let mut s = String::new();
    for r in records {
        let nums = [r.alpha]
            .iter()
            .chain(&r.bbox)
            .chain(&r.dims)
            .chain(&r.location)
            .chain(std::iter::once(&r.ry))
            .chain(r.score.iter())
            .copied()
            .collect::<Vec<_>>();
        let fmt = |v: f64| match precision {
            Precision::Fixed2 => format!("{v:.2}"),
            Precision::Full => format!("{v:?}"),
        };
        let _ = write!(s, "{} {} {}", r.kind, fmt(r.truncated), r.occluded);
        for v in nums {
            s.push(' ');
            s.push_str(&fmt(v));
        }
        s.push('\n');
    }
    s
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>, KittiError> {
    parse_labels(&std::fs::read_to_string(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, records: &[LabelRecord], precision: Precision) -> Result<(), KittiError> {
    std::fs::write(path, emit_labels(records, precision))?;
    Ok(())
}

/// Reads the `P2:` line of a KITTI calibration file.
pub fn parse_calib(text: &str) -> Result<Calibration, KittiError> {
    let rest = text
        .lines()
        .find_map(|l| l.trim_start().strip_prefix("P2:"))
        .ok_or(KittiError::MissingP2)?;
    let vals = rest
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| KittiError::CalibNumber(t.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let vals: [f64; 12] = vals.try_into().map_err(|v: Vec<f64>| KittiError::ShortP2 { found: v.len() })?;
    Ok(Calibration::from_row_major(&vals)?)
}

pub fn emit_calib(calib: &Calibration) -> String {
    let vals: Vec<String> = calib.row_major().iter().map(|v| format!("{v:?}")).collect();
    format!("P2: {}\n", vals.join(" "))
}

pub fn read_calib(path: impl AsRef<Path>) -> Result<Calibration, KittiError> {
    parse_calib(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major meters; `0.0` is invalid.
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, KittiError> {
        if values.len() != width * height {
            return Err(KittiError::Pgm(format!("{} values for {width}x{height}", values.len())));
        }
        Ok(Self { width, height, values })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.at(row, col) > 0.0
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, KittiError> {
        let mut pos = 0;
        let mut token = || -> Result<&[u8], KittiError> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(KittiError::Pgm("truncated header".into()));
            }
            Ok(&bytes[start..pos])
        };
        if token()? != b"P5" {
            return Err(KittiError::Pgm("magic is not P5".into()));
        }
        let mut num = |what: &str| -> Result<usize, KittiError> {
            std::str::from_utf8(token()?)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| KittiError::Pgm(format!("bad {what}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if maxval != DEPTH_MAXVAL as usize {
            return Err(KittiError::Pgm(format!("maxval {maxval}, expected {DEPTH_MAXVAL}")));
        }
        // exactly one whitespace byte separates the header from the samples
        let payload = bytes.get(pos + 1..).unwrap_or(&[]);
        let expected = width * height * 2;
        if payload.len() != expected {
            return Err(KittiError::Pgm(format!("payload is {} bytes, expected {expected}", payload.len())));
        }
        let values = payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / DEPTH_SCALE)
            .collect();
        Ok(Self { width, height, values })
    }

    /// Quantizes to `round(meters · 256)`.
    pub fn to_pgm(&self) -> Result<Vec<u8>, KittiError> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, DEPTH_MAXVAL).into_bytes();
        out.reserve(self.values.len() * 2);
        for &d in &self.values {
            let q = (d * DEPTH_SCALE).round();
            if !(0.0..=DEPTH_MAXVAL as f64).contains(&q) {
                return Err(KittiError::DepthOutOfRange(d));
            }
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
        Ok(out)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, KittiError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_pgm(&buf)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), KittiError> {
        w.write_all(&self.to_pgm()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KittiError> {
        Self::from_pgm(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KittiError> {
        std::fs::write(path, self.to_pgm()?)?;
        Ok(())
    }
}
