//! 8-bit PNG and binary PPM (P6) reading/writing.
//!
//! A sample `v` in `0..=255` decodes to exactly `v / 255`; encoding rounds
//! `255 * x` to the nearest integer, so a round trip is off by at most 1/510.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::{Frame, Mask};
use crate::error::{Error, Result};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn dequantize(v: u8) -> f64 {
    v as f64 / 255.0
}

pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (h, w, channels, samples) = if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(path, &bytes)?
    } else if bytes.starts_with(b"P6") {
        let (h, w, rgb) = decode_ppm(path, &bytes)?;
        (h, w, 3, rgb)
    } else {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: "neither a PNG nor a binary PPM (P6) file".into(),
        });
    };
    let data = expand_to_rgb(&samples, channels).into_iter().map(dequantize).collect();
    Frame::new(h, w, data)
}

/// Writes PNG unless the extension is `.ppm`, in which case P6 is written.
/// The file appears atomically (temp file + rename).
pub fn write_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = frame.data().iter().map(|&v| quantize(v)).collect();
    let (h, w) = frame.dims();
    if is_ppm(path) {
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(&bytes);
        write_atomic(path, &out)
    } else {
        let png = encode_png(w, h, png::ColorType::Rgb, &bytes).map_err(|e| write_err(path, e))?;
        write_atomic(path, &png)
    }
}

/// Masks are stored as 8-bit grayscale PNG with value `round(255 * m)`.
pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = mask.data().iter().map(|&v| quantize(v)).collect();
    let (h, w) = mask.dims();
    let png = encode_png(w, h, png::ColorType::Grayscale, &bytes).map_err(|e| write_err(path, e))?;
    write_atomic(path, &png)
}

/// Reads a grayscale mask. Colour inputs use their first channel.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if !bytes.starts_with(&PNG_SIGNATURE) {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: "masks must be PNG".into(),
        });
    }
    let (h, w, channels, samples) = decode_png(path, &bytes)?;
    let data = samples.chunks_exact(channels).map(|px| dequantize(px[0])).collect();
    Mask::new(h, w, data)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|source| {
        let _ = fs::remove_file(&tmp);
        Error::Write {
            path: path.to_owned(),
            source,
        }
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

fn is_ppm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_owned()),
        _ => Error::Io(e),
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn write_err(path: &Path, e: png::EncodingError) -> Error {
    Error::Write {
        path: path.to_owned(),
        source: std::io::Error::other(e),
    }
}

fn encode_png(w: usize, h: usize, color: png::ColorType, bytes: &[u8]) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(bytes)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Returns `(height, width, channels, samples)` for an 8-bit PNG.
fn decode_png(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let truncated = |reason: String| Error::Truncated {
        path: path.to_owned(),
        reason,
    };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| match e {
        png::DecodingError::IoError(io) if io.kind() == ErrorKind::UnexpectedEof => truncated(io.to_string()),
        other => Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    })?;
    let info = reader.info();
    let depth = info.bit_depth as u32;
    if info.bit_depth == png::BitDepth::Sixteen {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_owned(),
            depth,
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| truncated("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| truncated(e.to_string()))?;
    let (color, out_depth) = reader.output_color_type();
    if out_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_owned(),
            depth,
        });
    }
    let channels = color.samples();
    buf.truncate(frame.buffer_size());
    Ok((h, w, channels, buf))
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |reason: &str| Error::UnsupportedFormat {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => {
                    return Err(Error::Truncated {
                        path: path.to_owned(),
                        reason: "header ends early".into(),
                    })
                }
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed PPM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval > 255 {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_owned(),
            depth: 16,
        });
    }
    if maxval != 255 {
        return Err(bad("PPM maxval must be 255"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after PPM header"));
    }
    pos += 1;
    let need = w * h * 3;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::Truncated {
            path: path.to_owned(),
            reason: format!("expected {need} payload bytes, found {}", payload.len()),
        });
    }
    Ok((h, w, payload[..need].to_vec()))
}

fn expand_to_rgb(samples: &[u8], channels: usize) -> Vec<u8> {
    match channels {
        3 => samples.to_vec(),
        4 => samples.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        1 => samples.iter().flat_map(|&g| [g, g, g]).collect(),
        2 => samples.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        _ => unreachable!("PNG has 1 to 4 channels"),
    }
}
