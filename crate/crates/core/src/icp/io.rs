//! Grid and cloud files.
//!
//! Depth maps and masks start with one JSON header line
//! `{"width":W,"height":H,"encoding":"csv"|"f64le"}`. For `csv` the header is
//! followed by `H` comma-separated rows; for `f64le` by `W*H` little-endian
//! f64 values (masks store 0/1). Clouds are CSV lines `x,y,z[,nx,ny,nz]`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{DepthMap, PointCloud, SegMask};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridEncoding {
    #[default]
    Csv,
    F64le,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridHeader {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub encoding: GridEncoding,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}: {e}", path.display()))
}

fn read_grid(path: &Path) -> Result<(GridHeader, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| io_err(path, e))?;
    let header: GridHeader = serde_json::from_str(line.trim()).map_err(|e| io_err(path, e))?;
    let values = match header.encoding {
        GridEncoding::Csv => {
            let mut values = Vec::with_capacity(header.width * header.height);
            for row in reader.lines() {
                let row = row.map_err(|e| io_err(path, e))?;
                if row.trim().is_empty() {
                    continue;
                }
                for cell in row.split(',') {
                    values.push(cell.trim().parse::<f64>().map_err(|e| io_err(path, e))?);
                }
            }
            values
        }
        GridEncoding::F64le => {
            let mut bytes = Vec::new();
            reader
                .read_to_end(&mut bytes)
                .map_err(|e| io_err(path, e))?;
            if bytes.len() % 8 != 0 {
                return Err(io_err(
                    path,
                    "binary payload is not a whole number of f64 values",
                ));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
    };
    if values.len() != header.width * header.height {
        return Err(Error::DimensionMismatch {
            expected: (header.width, header.height),
            got: (values.len(), 1),
        });
    }
    Ok((header, values))
}

fn write_grid(
    path: &Path,
    width: usize,
    height: usize,
    encoding: GridEncoding,
    values: &[f64],
) -> Result<()> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    let header = GridHeader {
        width,
        height,
        encoding,
    };
    let mut body = serde_json::to_string(&header).map_err(|e| io_err(path, e))?;
    body.push('\n');
    out.write_all(body.as_bytes())
        .map_err(|e| io_err(path, e))?;
    match encoding {
        GridEncoding::Csv => {
            for row in values.chunks(width.max(1)) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(",")).map_err(|e| io_err(path, e))?;
            }
        }
        GridEncoding::F64le => {
            for v in values {
                out.write_all(&v.to_le_bytes())
                    .map_err(|e| io_err(path, e))?;
            }
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_depth_map(path: &Path) -> Result<DepthMap> {
    let (h, values) = read_grid(path)?;
    DepthMap::new(h.width, h.height, values)
}

pub fn write_depth_map(path: &Path, d: &DepthMap, encoding: GridEncoding) -> Result<()> {
    write_grid(path, d.width(), d.height(), encoding, d.data())
}

pub fn read_seg_mask(path: &Path) -> Result<SegMask> {
    let (h, values) = read_grid(path)?;
    SegMask::new(
        h.width,
        h.height,
        values.iter().map(|&v| v != 0.0).collect(),
    )
}

pub fn write_seg_mask(path: &Path, m: &SegMask, encoding: GridEncoding) -> Result<()> {
    let values: Vec<f64> = m
        .data()
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    write_grid(path, m.width(), m.height(), encoding, &values)
}

/// Reads `x,y,z[,nx,ny,nz]` lines; a non-numeric first line is treated as a
/// header. Normals must be present on every line or on none.
pub fn read_cloud_csv(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if lineno == 0 => continue,
            Err(e) => return Err(io_err(path, format!("line {}: {e}", lineno + 1))),
        };
        match values.len() {
            3 | 6 => {}
            n => {
                return Err(io_err(
                    path,
                    format!("line {}: expected 3 or 6 values, got {n}", lineno + 1),
                ))
            }
        }
        points.push(Vector3::new(values[0], values[1], values[2]));
        if values.len() == 6 {
            normals.push(Vector3::new(values[3], values[4], values[5]));
        }
    }
    if normals.is_empty() {
        Ok(PointCloud::new(points))
    } else {
        PointCloud::with_normals(points, normals)
    }
}

pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.normals() {
            Some(ns) => {
                let n = ns[i];
                writeln!(out, "{},{},{},{},{},{}", p.x, p.y, p.z, n.x, n.y, n.z)
            }
            None => writeln!(out, "{},{},{}", p.x, p.y, p.z),
        }
        .map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}
