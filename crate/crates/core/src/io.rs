//! Binary PGM/PPM images, Middlebury `.flo` flow files, and color-wheel
//! flow visualization.

use std::fs;
use std::path::Path;

use crate::error::{FlowError, Result};
use crate::flow::{FlowField, UNKNOWN_FLOW, UNKNOWN_FLOW_THRESHOLD};
use crate::image::GrayImage;

/// Tag opening every `.flo` file; its little-endian bytes spell `PIEH`.
pub const FLO_MAGIC: f32 = 202021.25;
/// Largest width or height accepted in a `.flo` file.
pub const FLO_MAX_DIM: usize = 99_999;

/// Luminance weights applied to RGB input.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

/// Parses `P5`/`P6` headers: magic, width, height and maxval separated by
/// whitespace, `#` comments running to end of line, then one whitespace
/// byte before the raster.
fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let err = |m: &str| FlowError::format(path, m);
    if bytes.len() < 2 {
        return Err(err("file too short for an image header"));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(err("unsupported format: expected binary PGM (P5) or PPM (P6)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(err("malformed header: expected a number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed header: number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err("malformed header: missing separator before pixel data"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err("image has zero width or height"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(err("maxval must lie in 1..=65535"));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Reads a binary PGM or PPM as intensities in `[0, 255]`.
///
/// Samples are scaled by `255 / maxval`, so 16-bit files map to the same
/// range. Color pixels are converted with the [`LUMA`] weights.
pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FlowError::io(path, e))?;
    decode_image(&bytes, path)
}

fn decode_image(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let h = parse_header(bytes, path)?;
    let channels = if &h.magic == b"P6" { 3 } else { 1 };
    let sample_bytes = if h.maxval > 255 { 2 } else { 1 };
    let n = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(channels * sample_bytes))
        .ok_or_else(|| FlowError::format(path, "image dimensions overflow"))?;
    let payload = bytes
        .get(h.data_start..h.data_start + n)
        .ok_or_else(|| FlowError::format(path, "truncated pixel data"))?;

    let scale = 255.0 / h.maxval as f64;
    let sample = |i: usize| -> f64 {
        let raw = if sample_bytes == 2 {
            u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as f64
        } else {
            payload[i] as f64
        };
        raw * scale
    };
    let data = (0..h.width * h.height)
        .map(|p| {
            if channels == 3 {
                LUMA[0] * sample(3 * p) + LUMA[1] * sample(3 * p + 1) + LUMA[2] * sample(3 * p + 2)
            } else {
                sample(p)
            }
        })
        .collect();
    GrayImage::new(h.width, h.height, data)
}

/// Writes an 8-bit binary PGM, rounding and clamping intensities to
/// `0..=255`.
pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    fs::write(path, out).map_err(|e| FlowError::io(path, e))
}

/// Writes an 8-bit binary PPM.
pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().flatten());
    fs::write(path, out).map_err(|e| FlowError::io(path, e))
}

/// Encodes a field in `.flo` layout. Components are stored as `f32`.
pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    let (w, h) = flow.dims();
    if w > FLO_MAX_DIM || h > FLO_MAX_DIM {
        return Err(FlowError::Dimensions(format!(
            "{w}x{h} exceeds the .flo limit of {FLO_MAX_DIM}"
        )));
    }
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend(FLO_MAGIC.to_le_bytes());
    out.extend((w as i32).to_le_bytes());
    out.extend((h as i32).to_le_bytes());
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        out.extend((u as f32).to_le_bytes());
        out.extend((v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Writes a `.flo` file.
pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_flo(flow)?;
    fs::write(path, bytes).map_err(|e| FlowError::io(path, e))
}

/// Reads a `.flo` file. Values with magnitude above
/// [`UNKNOWN_FLOW_THRESHOLD`], and non-finite values, become
/// [`UNKNOWN_FLOW`].
pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FlowError::io(path, e))?;
    decode_flo(&bytes, path)
}

/// Decodes `.flo` bytes; `path` is only used in error messages.
pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    let err = |m: String| FlowError::format(path, m);
    let word = |i: usize| -> Option<[u8; 4]> { bytes.get(4 * i..4 * i + 4).map(|b| b.try_into().expect("4 bytes")) };
    let magic = word(0).ok_or_else(|| err("file too short for a .flo header".into()))?;
    if f32::from_le_bytes(magic) != FLO_MAGIC {
        return Err(err("bad .flo magic".into()));
    }
    let (Some(wb), Some(hb)) = (word(1), word(2)) else {
        return Err(err("file too short for a .flo header".into()));
    };
    let (w, h) = (i32::from_le_bytes(wb), i32::from_le_bytes(hb));
    let valid = |d: i32| d >= 1 && d as usize <= FLO_MAX_DIM;
    if !valid(w) || !valid(h) {
        return Err(err(format!("invalid .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() < expected {
        return Err(err(format!(
            "short .flo file: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let read = |i: usize| -> f64 {
        let v = f32::from_le_bytes(word(3 + i).expect("length checked")) as f64;
        if v.is_finite() && v.abs() <= UNKNOWN_FLOW_THRESHOLD {
            v
        } else {
            UNKNOWN_FLOW
        }
    };
    let u = (0..w * h).map(|p| read(2 * p)).collect();
    let v = (0..w * h).map(|p| read(2 * p + 1)).collect();
    FlowField::new(w, h, u, v)
}

/// Renders a field on the standard color wheel: hue follows direction,
/// saturation grows with magnitude up to `max_magnitude` (default: the
/// 99th-percentile magnitude of the valid pixels), value is full. Zero
/// motion is white; unknown pixels are black.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let (w, h) = flow.dims();
    let max = max_magnitude
        .filter(|m| *m > 0.0 && m.is_finite())
        .unwrap_or_else(|| percentile_magnitude(flow, 0.99));
    let pixels = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            if !flow.is_valid_at(x, y) {
                return [0, 0, 0];
            }
            let (u, v) = flow.get(x, y);
            let sat = (u.hypot(v) / max).min(1.0);
            let hue = v.atan2(u).to_degrees().rem_euclid(360.0);
            hsv_to_rgb(hue, sat, 1.0)
        })
        .collect();
    RgbImage {
        width: w,
        height: h,
        pixels,
    }
}

fn percentile_magnitude(flow: &FlowField, q: f64) -> f64 {
    let (w, h) = flow.dims();
    let mut mags: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| flow.is_valid_at(x, y))
        .map(|(x, y)| flow.magnitude(x, y))
        .collect();
    if mags.is_empty() {
        return 1.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * q).round() as usize;
    let m = mags[idx];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// `hue` in degrees, `sat` and `val` in `[0, 1]`.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let c = val * sat;
    let hp = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn p5_decode() {
        let d = tmp();
        let p = d.path().join("a.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        fs::write(&p, bytes).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.data(), &[0.0, 255.0, 128.0, 64.0]);
    }

    #[test]
    fn p6_luminance() {
        let d = tmp();
        let p = d.path().join("a.ppm");
        let mut bytes = b"P6 2 1 255 ".to_vec();
        bytes.extend([255u8, 255, 255, 255, 0, 0]);
        fs::write(&p, bytes).unwrap();
        let img = read_image(&p).unwrap();
        assert!((img.get(0, 0) - 255.0).abs() < 1e-9);
        assert!((img.get(1, 0) - 76.245).abs() < 1e-9);
    }

    #[test]
    fn sixteen_bit_scaled() {
        let d = tmp();
        let p = d.path().join("a.pgm");
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_image(&p).unwrap().data(), &[255.0, 0.0]);
    }

    #[test]
    fn image_errors() {
        let d = tmp();
        let p = d.path().join("bad");
        for bytes in [&b"P2 2 2 255 "[..], b"P5 2 2", b"P5 2 x 255 ", b"P5 2 2 255 \x01\x02"] {
            fs::write(&p, bytes).unwrap();
            assert!(matches!(read_image(&p), Err(FlowError::Format { .. })), "{bytes:?}");
        }
        assert!(matches!(
            read_image(d.path().join("missing.pgm")),
            Err(FlowError::Io { .. })
        ));
    }

    #[test]
    fn pgm_round_trip_lossless() {
        let d = tmp();
        let p = d.path().join("r.pgm");
        let img = GrayImage::from_fn(17, 9, |x, y| ((x * 31 + y * 7) % 256) as f64);
        write_pgm(&img, &p).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn flo_layout() {
        let bytes = encode_flo(&FlowField::zeros(1, 1)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"PIEH");
    }

    #[test]
    fn flo_errors() {
        let p = Path::new("x.flo");
        let mut good = encode_flo(&FlowField::constant(2, 2, 1.0, 2.0)).unwrap();
        assert!(decode_flo(&good, p).is_ok());
        assert!(decode_flo(&good[..good.len() - 1], p).is_err());
        let mut bad_dims = good.clone();
        bad_dims[4..8].copy_from_slice(&100_000i32.to_le_bytes());
        assert!(decode_flo(&bad_dims, p).is_err());
        good[0] ^= 1;
        assert!(decode_flo(&good, p).is_err());
    }

    #[test]
    fn flo_sentinel_round_trip() {
        let mut f = FlowField::constant(3, 2, 0.5, -1.25);
        f.set(1, 1, (UNKNOWN_FLOW, UNKNOWN_FLOW));
        let back = decode_flo(&encode_flo(&f).unwrap(), Path::new("m")).unwrap();
        assert_eq!(back, f);
        assert!(!back.is_valid_at(1, 1));
    }

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(4, 3), None);
        assert!(img.pixels.iter().all(|&p| p == [255, 255, 255]));
    }

    #[test]
    fn opposite_flows_are_complementary() {
        let a = flow_to_color(&FlowField::constant(1, 1, 2.0, 1.0), Some(2.0)).get(0, 0);
        let b = flow_to_color(&FlowField::constant(1, 1, -2.0, -1.0), Some(2.0)).get(0, 0);
        // complementary hues at full saturation sum to white per channel
        for c in 0..3 {
            assert!((a[c] as i32 + b[c] as i32 - 255).abs() <= 1, "{a:?} {b:?}");
        }
    }

    #[test]
    fn saturation_clamps() {
        let a = flow_to_color(&FlowField::constant(1, 1, 5.0, 0.0), Some(5.0)).get(0, 0);
        let b = flow_to_color(&FlowField::constant(1, 1, 50.0, 0.0), Some(5.0)).get(0, 0);
        assert_eq!(a, b);
        assert_eq!(a, [255, 0, 0]);
    }

    #[test]
    fn ppm_written() {
        let d = tmp();
        let p = d.path().join("c.ppm");
        write_ppm(&flow_to_color(&FlowField::constant(2, 2, 0.0, 1.0), None), &p).unwrap();
        let gray = read_image(&p).unwrap();
        assert_eq!(gray.dims(), (2, 2));
    }
}
