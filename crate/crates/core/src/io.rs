//! The SPRG1 binary container shared by every on-disk artifact.
//!
//! Layout: the 6 magic bytes `SPRG1\n`, a little-endian `u32` header length,
//! a UTF-8 JSON header object, then little-endian `f32` payload values
//! (row-major for grids).

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::dose::StatWeights;
use crate::error::{Error, Result};
use crate::tomo::{Image, Sinogram};

pub const MAGIC: &[u8; 6] = b"SPRG1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Map<String, Value>,
    pub payload: Vec<f32>,
}

impl Container {
    pub fn new(kind: &str, mut header: Map<String, Value>, payload: Vec<f32>) -> Self {
        header.insert("kind".into(), Value::String(kind.into()));
        Container { header, payload }
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(Value::as_str)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(10 + header.len() + 4 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err("missing SPRG1 magic".into());
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let body = bytes.get(10..10 + hlen).ok_or("truncated header")?;
        let header: Value =
            serde_json::from_slice(body).map_err(|e| format!("header JSON: {e}"))?;
        let Value::Object(header) = header else {
            return Err("header is not a JSON object".into());
        };
        let rest = &bytes[10 + hlen..];
        if rest.len() % 4 != 0 {
            return Err(format!(
                "payload length {} is not a multiple of 4",
                rest.len()
            ));
        }
        let payload = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Container { header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::decode(&bytes).map_err(|d| Error::format(path, d))
    }

    pub fn get_usize(&self, key: &str) -> std::result::Result<usize, String> {
        self.header
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| format!("header field {key:?} missing or not an integer"))
    }

    pub fn get_f64(&self, key: &str) -> std::result::Result<f64, String> {
        self.header
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| format!("header field {key:?} missing or not a number"))
    }

    fn expect_grid(&self, kind: &str) -> std::result::Result<(usize, usize), String> {
        if self.kind() != Some(kind) {
            return Err(format!("expected kind {kind:?}, found {:?}", self.kind()));
        }
        let rows = self.get_usize("rows")?;
        let cols = self.get_usize("cols")?;
        if rows * cols != self.payload.len() {
            return Err(format!(
                "{rows}x{cols} header but {} payload values",
                self.payload.len()
            ));
        }
        Ok((rows, cols))
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn grid_header(
    rows: usize,
    cols: usize,
    spacing_key: &str,
    spacing: f64,
    units: &str,
) -> Map<String, Value> {
    let Value::Object(m) = json!({
        "rows": rows,
        "cols": cols,
        spacing_key: spacing,
        "units": units,
    }) else {
        unreachable!()
    };
    m
}

pub fn image_container(img: &Image) -> Container {
    Container::new(
        "image",
        grid_header(
            img.rows(),
            img.cols(),
            "pixel_size_mm",
            img.pixel_size_mm(),
            "HU",
        ),
        to_f32(img.data()),
    )
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    image_container(img).write(path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let c = Container::read(path)?;
    let (rows, cols) = c.expect_grid("image").map_err(|d| Error::format(path, d))?;
    let px = c
        .get_f64("pixel_size_mm")
        .map_err(|d| Error::format(path, d))?;
    Image::new(rows, cols, px, to_f64(&c.payload)).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_sinogram(path: &Path, sino: &Sinogram, det_spacing_mm: f64) -> Result<()> {
    let mut h = grid_header(
        sino.n_views(),
        sino.n_dets(),
        "det_spacing_mm",
        det_spacing_mm,
        "line-integral",
    );
    h.insert(
        "geometry_id".into(),
        Value::String(sino.geometry_id().into()),
    );
    Container::new("sinogram", h, to_f32(sino.data())).write(path)
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let c = Container::read(path)?;
    let (rows, cols) = c
        .expect_grid("sinogram")
        .map_err(|d| Error::format(path, d))?;
    let gid = c
        .header
        .get("geometry_id")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    Sinogram::new(rows, cols, to_f64(&c.payload), gid)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_weights(path: &Path, w: &StatWeights, det_spacing_mm: f64) -> Result<()> {
    let h = grid_header(
        w.n_views(),
        w.n_dets(),
        "det_spacing_mm",
        det_spacing_mm,
        "inverse-variance",
    );
    Container::new("weights", h, to_f32(w.data())).write(path)
}

pub fn read_weights(path: &Path) -> Result<StatWeights> {
    let c = Container::read(path)?;
    let (rows, cols) = c
        .expect_grid("weights")
        .map_err(|d| Error::format(path, d))?;
    StatWeights::new(rows, cols, to_f64(&c.payload)).map_err(|e| Error::format(path, e.to_string()))
}
