//! Binary PPM (P6) and PGM (P5) reading and writing, maxval 255 only.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Loads a binary PPM (3 channels) or PGM (1 channel) image.
///
/// Byte `v` maps to `v / 255` exactly.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let mut cursor = 0usize;
    let magic = read_token(bytes, &mut cursor).ok_or_else(|| Error::format("missing magic"))?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::format(format!(
                "magic: expected P5 or P6, got {other:?}"
            )))
        }
    };
    let width = read_number(bytes, &mut cursor, "width")?;
    let height = read_number(bytes, &mut cursor, "height")?;
    let maxval = read_number(bytes, &mut cursor, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!("maxval: expected 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
        return Err(Error::format("header: missing separator before payload"));
    }
    cursor += 1;
    let expected = width * height * channels;
    let payload = &bytes[cursor..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "payload: expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(height, width, channels, data)
}

/// Writes an image as binary PGM (1 channel) or PPM (3 channels).
///
/// Value `v` maps to byte `round(v * 255)`, so `write(load(p))` reproduces
/// `p` byte for byte.
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_token(bytes: &[u8], cursor: &mut usize) -> Option<String> {
    // Skip whitespace and `#` comments (to end of line).
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
        } else {
            break;
        }
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if *cursor > start {
        Some(String::from_utf8_lossy(&bytes[start..*cursor]).into_owned())
    } else {
        None
    }
}

fn read_number(bytes: &[u8], cursor: &mut usize, field: &str) -> Result<usize> {
    let tok = read_token(bytes, cursor).ok_or_else(|| Error::format(format!("{field}: missing")))?;
    tok.parse::<usize>()
        .map_err(|_| Error::format(format!("{field}: not a number ({tok:?})")))
}
