//! On-disk formats: Middlebury `.flo`, grayscale PFM, 16-bit PNM and CSV.
//!
//! Every writer has a byte-level `encode_*` twin and every reader a
//! `decode_*` twin, so round-trips can be checked without touching disk.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::grid::{DepthMap, FlowField, Grid, Image};

const FLO_MAGIC: &[u8; 4] = b"PIEH";
/// Written for masked flow vectors; anything above `FLO_UNKNOWN_THRESHOLD` reads back as masked.
pub const FLO_UNKNOWN: f32 = 1e10;
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;
/// Largest accepted `width * height`; guards allocation on corrupt headers.
pub const MAX_PIXELS: usize = 1 << 28;

fn check_dims(width: i64, height: i64) -> std::result::Result<(usize, usize), FormatError> {
    if width <= 0 || height <= 0 || (width as u128) * (height as u128) > MAX_PIXELS as u128 {
        return Err(FormatError::DimensionOverflow { width, height });
    }
    Ok((width as usize, height as usize))
}

fn check_len(expected: usize, found: usize) -> std::result::Result<(), FormatError> {
    match found.cmp(&expected) {
        std::cmp::Ordering::Less => Err(FormatError::Truncated { expected, found }),
        std::cmp::Ordering::Greater => Err(FormatError::TrailingBytes { expected, found }),
        std::cmp::Ordering::Equal => Ok(()),
    }
}

pub fn encode_flow(flow: &FlowField) -> Result<Vec<u8>> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (i, (f, &valid)) in flow.vectors().as_slice().iter().zip(flow.mask().as_slice()).enumerate() {
        let pair = if valid {
            let pair = [f[0] as f32, f[1] as f32];
            if !pair.iter().all(|x| x.is_finite() && x.abs() <= FLO_UNKNOWN_THRESHOLD) {
                return Err(Error::InvalidValue(format!("flow vector {i} not representable in .flo")));
            }
            pair
        } else {
            [FLO_UNKNOWN; 2]
        };
        out.extend_from_slice(&pair[0].to_le_bytes());
        out.extend_from_slice(&pair[1].to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        if bytes.len() >= 4 && &bytes[..4] != FLO_MAGIC {
            return Err(FormatError::BadMagic { found: bytes[..4].to_vec() }.into());
        }
        return Err(FormatError::Truncated { expected: 12, found: bytes.len() }.into());
    }
    if &bytes[..4] != FLO_MAGIC {
        return Err(FormatError::BadMagic { found: bytes[..4].to_vec() }.into());
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap()) as i64;
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap()) as i64;
    let (w, h) = check_dims(width, height)?;
    check_len(12 + 8 * w * h, bytes.len())?;
    let mut vectors = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (i, chunk) in bytes[12..].chunks_exact(8).enumerate() {
        let a = f32::from_le_bytes(chunk[..4].try_into().unwrap());
        let b = f32::from_le_bytes(chunk[4..].try_into().unwrap());
        if a.is_nan() || b.is_nan() {
            return Err(FormatError::NonFinite { index: i }.into());
        }
        let unknown = a.abs() > FLO_UNKNOWN_THRESHOLD || b.abs() > FLO_UNKNOWN_THRESHOLD;
        vectors.push(if unknown { [0.0; 2] } else { [a as f64, b as f64] });
        mask.push(!unknown);
    }
    FlowField::with_mask(Grid::from_vec(w, h, vectors)?, Grid::from_vec(w, h, mask)?)
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    fs::write(path, encode_flow(flow)?)?;
    Ok(())
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flow(&fs::read(path)?)
}

/// Grayscale little-endian PFM, bottom row first. Masked pixels are written as 0.
pub fn encode_depth_pfm(depth: &DepthMap) -> Result<Vec<u8>> {
    let values: Vec<f64> = depth
        .values()
        .as_slice()
        .iter()
        .zip(depth.mask().as_slice())
        .map(|(&d, &m)| if m { d } else { 0.0 })
        .collect();
    encode_pfm(depth.width(), depth.height(), &values)
}

/// Nonpositive samples read back as masked pixels.
pub fn decode_depth_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let (w, h, values) = decode_pfm(bytes)?;
    let mask: Vec<bool> = values.iter().map(|&d| d > 0.0).collect();
    DepthMap::with_mask(Grid::from_vec(w, h, values)?, Grid::from_vec(w, h, mask)?)
}

pub fn write_depth_pfm(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    fs::write(path, encode_depth_pfm(depth)?)?;
    Ok(())
}

pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_depth_pfm(&fs::read(path)?)
}

/// Row-major `values` (top row first) as a grayscale PFM.
pub fn encode_pfm(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Dimension(format!("{} samples for a {width}x{height} PFM", values.len())));
    }
    let header = format!("Pf\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + 4 * values.len());
    out.extend_from_slice(header.as_bytes());
    for v in (0..height).rev() {
        for (u, &x) in values[v * width..(v + 1) * width].iter().enumerate() {
            let x = x as f32;
            if !x.is_finite() {
                return Err(Error::InvalidValue(format!("non-finite PFM sample at ({u}, {v})")));
            }
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns width, height and top-row-first samples. Both byte orders are accepted.
pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut header = HeaderReader::new(bytes);
    let magic = header.token()?;
    if magic != "Pf" {
        return Err(FormatError::BadMagic { found: magic.as_bytes().to_vec() }.into());
    }
    let width = header.integer()?;
    let height = header.integer()?;
    let scale: f64 = header
        .token()?
        .parse()
        .map_err(|_| FormatError::Header("PFM scale is not a number".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::Header(format!("PFM scale {scale}")).into());
    }
    let (w, h) = check_dims(width, height)?;
    let body = header.body()?;
    check_len(4 * w * h, body.len())?;
    let mut values = vec![0.0; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let x = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        if !x.is_finite() {
            return Err(FormatError::NonFinite { index: i }.into());
        }
        let (row, u) = (i / w, i % w);
        values[(h - 1 - row) * w + u] = x as f64;
    }
    Ok((w, h, values))
}

/// 16-bit binary PNM: P5 for one channel, P6 for three. Samples are `round(x·65535)`.
pub fn encode_image_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let header = format!("{magic}\n{} {}\n65535\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + 2 * image.as_slice().len());
    out.extend_from_slice(header.as_bytes());
    for &x in image.as_slice() {
        out.extend_from_slice(&quantize(x).to_be_bytes());
    }
    out
}

pub fn quantize(x: f64) -> u16 {
    (x.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Reads 8- or 16-bit P5/P6; intensities come back as `sample / maxval`.
pub fn decode_image_pnm(bytes: &[u8]) -> Result<Image> {
    let mut header = HeaderReader::new(bytes);
    let magic = header.token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(FormatError::BadMagic { found: magic.as_bytes().to_vec() }.into()),
    };
    let width = header.integer()?;
    let height = header.integer()?;
    let maxval = header.integer()?;
    if !(1..=65535).contains(&maxval) {
        return Err(FormatError::Header(format!("PNM maxval {maxval}")).into());
    }
    let (w, h) = check_dims(width, height)?;
    let body = header.body()?;
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let n = w * h * channels;
    check_len(n * bytes_per_sample, body.len())?;
    let mut data = Vec::with_capacity(n);
    for (i, chunk) in body.chunks_exact(bytes_per_sample).enumerate() {
        let sample = if bytes_per_sample == 1 { chunk[0] as i64 } else { u16::from_be_bytes([chunk[0], chunk[1]]) as i64 };
        if sample > maxval {
            return Err(FormatError::Header(format!("sample {i} exceeds maxval {maxval}")).into());
        }
        data.push(sample as f64 / maxval as f64);
    }
    Image::new(w, h, channels, data)
}

pub fn write_image_pnm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    fs::write(path, encode_image_pnm(image))?;
    Ok(())
}

pub fn read_image_pnm(path: impl AsRef<Path>) -> Result<Image> {
    decode_image_pnm(&fs::read(path)?)
}

/// Whitespace-separated ASCII header tokens with `#` comments, followed by
/// exactly one whitespace byte before the binary body.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn token(&mut self) -> std::result::Result<String, FormatError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(FormatError::Header("unexpected end of header".into())),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
            if self.pos - start > 32 {
                return Err(FormatError::Header("header token too long".into()));
            }
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map(str::to_owned)
            .map_err(|_| FormatError::Header("non-ASCII header".into()))
    }

    fn integer(&mut self) -> std::result::Result<i64, FormatError> {
        let token = self.token()?;
        token.parse().map_err(|_| FormatError::Header(format!("expected an integer, found {token:?}")))
    }

    fn body(mut self) -> std::result::Result<&'a [u8], FormatError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(&self.bytes[self.pos..])
            }
            _ => Err(FormatError::Header("missing separator before binary data".into())),
        }
    }
}

/// Comma-separated file with a header row; fields are written verbatim.
pub fn write_csv<I, R, S>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<usize>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    let mut count = 0;
    for row in rows {
        writer.write_record(row)?;
        count += 1;
    }
    writer.flush()?;
    Ok(count)
}

/// Header and rows of a CSV file as strings.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}
