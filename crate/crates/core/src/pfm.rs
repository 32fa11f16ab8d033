//! Portable float map I/O.
//!
//! Maps are stored as standard little-endian grayscale PFM (`Pf`, negative
//! scale, rows bottom-to-top). A complex field is two PFM payloads (real
//! then imaginary) concatenated in one file. Every file has a one-line JSON
//! sidecar at `<file>.json` carrying the grid pitch and any extra metadata.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::field::{ComplexField, GridSpec, PhaseMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Real,
    Phase,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub pitch: f64,
    pub kind: MapKind,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Encodes one grayscale PFM payload. `values` are row-major, top row first.
pub fn encode_pfm(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for row in (0..height).rev() {
        for v in &values[row * width..(row + 1) * width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("non-ASCII PFM header".into()))
}

/// Decodes one PFM payload starting at `bytes[0]`; returns the width,
/// height, top-row-first values and the number of bytes consumed.
pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>, usize)> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "Pf" {
        return Err(Error::Format(format!("expected grayscale PFM 'Pf', found '{magic}'")));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Format(format!("bad PFM dimension '{s}'")))
    };
    let width = parse(next_token(bytes, &mut pos)?)?;
    let height = parse(next_token(bytes, &mut pos)?)?;
    let scale: f64 = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("bad PFM scale".into()))?;
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let end = pos + 4 * n;
    if bytes.len() < end {
        return Err(Error::Format(format!("PFM raster truncated: need {} bytes", 4 * n)));
    }
    let little = scale < 0.0;
    let mut values = vec![0f32; n];
    for (k, chunk) in bytes[pos..end].chunks_exact(4).enumerate() {
        let arr = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
        let (col, row_from_bottom) = (k % width, k / width);
        values[(height - 1 - row_from_bottom) * width + col] = v;
    }
    Ok((width, height, values, end))
}

fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let mut f = fs::File::create(sidecar_path(path))?;
    serde_json::to_writer(&mut f, sidecar)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn grid_from(width: usize, height: usize, sidecar: &Sidecar) -> Result<GridSpec> {
    GridSpec::new(width, height, sidecar.pitch)
}

pub fn write_real_map(
    path: &Path,
    grid: &GridSpec,
    values: &[f64],
    extra: Map<String, Value>,
) -> Result<()> {
    let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    fs::write(path, encode_pfm(grid.width, grid.height, &data))?;
    write_sidecar(path, &Sidecar { pitch: grid.pitch, kind: MapKind::Real, extra })
}

pub fn read_real_map(path: &Path) -> Result<(GridSpec, Vec<f64>, Sidecar)> {
    let bytes = fs::read(path)?;
    let sidecar = read_sidecar(path)?;
    let (w, h, values, _) = decode_pfm(&bytes)?;
    let grid = grid_from(w, h, &sidecar)?;
    Ok((grid, values.into_iter().map(f64::from).collect(), sidecar))
}

pub fn write_phase_mask(path: &Path, mask: &PhaseMask, extra: Map<String, Value>) -> Result<()> {
    let grid = mask.grid();
    let data: Vec<f32> = mask.values().iter().map(|&v| v as f32).collect();
    fs::write(path, encode_pfm(grid.width, grid.height, &data))?;
    write_sidecar(path, &Sidecar { pitch: grid.pitch, kind: MapKind::Phase, extra })
}

/// Reads a phase map; values are re-wrapped after the f32 round trip.
pub fn read_phase_mask(path: &Path) -> Result<(PhaseMask, Sidecar)> {
    let (grid, values, sidecar) = read_real_map(path)?;
    Ok((PhaseMask::new(grid, values)?, sidecar))
}

pub fn write_complex_field(
    path: &Path,
    field: &ComplexField,
    extra: Map<String, Value>,
) -> Result<()> {
    let grid = field.grid();
    let re: Vec<f32> = field.samples().iter().map(|z| z.re as f32).collect();
    let im: Vec<f32> = field.samples().iter().map(|z| z.im as f32).collect();
    let mut bytes = encode_pfm(grid.width, grid.height, &re);
    bytes.extend(encode_pfm(grid.width, grid.height, &im));
    fs::write(path, bytes)?;
    write_sidecar(path, &Sidecar { pitch: grid.pitch, kind: MapKind::Complex, extra })
}

pub fn read_complex_field(path: &Path) -> Result<(ComplexField, Sidecar)> {
    let bytes = fs::read(path)?;
    let sidecar = read_sidecar(path)?;
    let (w, h, re, used) = decode_pfm(&bytes)?;
    let (w2, h2, im, _) = decode_pfm(&bytes[used..])?;
    if (w, h) != (w2, h2) {
        return Err(Error::Format("real and imaginary planes differ in size".into()));
    }
    let grid = grid_from(w, h, &sidecar)?;
    let samples = re
        .into_iter()
        .zip(im)
        .map(|(a, b)| Complex64::new(a.into(), b.into()))
        .collect();
    Ok((ComplexField::new(grid, samples)?, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_standard_little_endian() {
        let bytes = encode_pfm(3, 2, &[0.0; 6]);
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        assert_eq!(bytes.len(), 12 + 24);
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let bytes = encode_pfm(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, 3.0);
    }

    #[test]
    fn rejects_color_and_truncated_maps() {
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
        assert!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0").is_err());
    }

    #[test]
    fn complex_field_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psi.pfm");
        let grid = GridSpec::new(3, 2, 4.5e-6).unwrap();
        let samples = (0..6).map(|k| Complex64::new(k as f64 * 0.25, -(k as f64))).collect();
        let field = ComplexField::new(grid, samples).unwrap();
        let mut extra = Map::new();
        extra.insert("tier".into(), Value::from("ideal"));
        write_complex_field(&path, &field, extra).unwrap();
        let (back, sidecar) = read_complex_field(&path).unwrap();
        assert_eq!(back, field);
        assert_eq!(sidecar.kind, MapKind::Complex);
        assert_eq!(sidecar.extra["tier"], "ideal");
        let text = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    proptest! {
        #[test]
        fn payload_round_trips(w in 1usize..9, h in 1usize..9, seed in any::<u32>()) {
            let values: Vec<f32> = (0..w * h)
                .map(|k| ((k as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-3)
                .collect();
            let bytes = encode_pfm(w, h, &values);
            let (w2, h2, back, used) = decode_pfm(&bytes).unwrap();
            prop_assert_eq!((w2, h2, used), (w, h, bytes.len()));
            prop_assert_eq!(back, values);
        }
    }
}
