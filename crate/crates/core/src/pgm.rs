//! Binary PGM (P5, 8-bit) reading and writing, and frame directory loading.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tracker::Frame;

/// Decodes a binary P5 image with maxval 255 into a frame with intensities
/// scaled to [0, 1].
pub fn decode_pgm(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::validation("not a binary PGM (expected P5)"));
    }
    let width = parse_number(next_token(bytes, &mut pos)?)?;
    let height = parse_number(next_token(bytes, &mut pos)?)?;
    let maxval = parse_number(next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::validation(format!("unsupported PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::validation("PGM raster is truncated"))?;
    let data = raster.iter().map(|&v| v as f64 / 255.0).collect();
    Frame::new(width, height, data)
}

/// Encodes a frame as P5, rounding intensities to the nearest 8-bit level.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(
        frame
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(frame))?;
    Ok(())
}

/// Loads every `frame_*.pgm` in a directory, in lexicographic file name order.
pub fn load_frame_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    names.sort();
    names.iter().map(|p| read_pgm(p)).collect()
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&c| c != b'\n') {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::validation("PGM header is truncated")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::validation("bad number in PGM header"))
}
