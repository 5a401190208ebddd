//! Raster input/output (binary PGM/PPM and PNG, 8 or 16 bit) and the
//! synthetic test inputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fidelity::{FidelityError, ImageData};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("image dimensions overflow: {width}x{height}")]
    DimensionOverflow { width: u64, height: u64 },
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("png: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error(transparent)]
    Invalid(#[from] FidelityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Pgm,
    Ppm,
    Png,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Format, depth and dimensions of a raster file.
#[derive(Debug, Clone, Copy)]
pub struct RasterSpec {
    pub format: RasterFormat,
    pub depth: BitDepth,
    pub width: u32,
    pub height: u32,
    pub channels: usize,
}

const MAX_DIMENSION: u64 = 1 << 20;

/// Loads a raster image, sniffing the format from its magic bytes. Values
/// are normalized to `[0, 1]` by the type maximum; grayscale becomes one
/// channel and RGB three.
pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<ImageData<S>, ImageIoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes).map(|(img, _)| img)
}

/// Like [`load`] but also returns what was read.
pub fn load_with_spec<S: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(ImageData<S>, RasterSpec), ImageIoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Decodes from bytes; see [`load`].
pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<(ImageData<S>, RasterSpec), ImageIoError> {
    match bytes {
        [b'P', b'5', ..] | [b'P', b'6', ..] => decode_pnm(bytes),
        [0x89, b'P', b'N', b'G', ..] => decode_png(bytes),
        _ => Err(ImageIoError::UnsupportedFormat(
            "expected binary PGM (P5), PPM (P6) or PNG".into(),
        )),
    }
}

/// Saves to `path`, picking the container from the extension (`.pgm`,
/// `.ppm`, `.png`). PGM takes one channel, PPM three; PNG takes either.
pub fn save<S: Scalar>(
    path: impl AsRef<Path>,
    img: &ImageData<S>,
    depth: BitDepth,
) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "pgm" => encode_pnm(img, depth, false)?,
        "ppm" => encode_pnm(img, depth, true)?,
        "png" => encode_png(img, depth)?,
        other => {
            return Err(ImageIoError::UnsupportedFormat(format!(
                "extension .{other} (use .pgm, .ppm or .png)"
            )))
        }
    };
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&bytes)?;
    Ok(())
}

fn quantize<S: Scalar>(v: S, max: u32) -> u32 {
    let x = (v.to_f64_lossy() * max as f64).round();
    x.clamp(0.0, max as f64) as u32
}

fn normalize<S: Scalar>(raw: u32, max: u32) -> S {
    S::lit(raw as f64 / max as f64)
}

/// Binary PGM (P5) / PPM (P6) encoder; 16-bit samples are big-endian per the
/// format.
pub fn encode_pnm<S: Scalar>(
    img: &ImageData<S>,
    depth: BitDepth,
    color: bool,
) -> Result<Vec<u8>, ImageIoError> {
    let channels = if color { 3 } else { 1 };
    if img.channels() != channels {
        return Err(ImageIoError::UnsupportedFormat(format!(
            "{} needs {channels} channel(s), image has {}",
            if color { "PPM" } else { "PGM" },
            img.channels()
        )));
    }
    let max = depth.max_value();
    let mut out = Vec::new();
    write!(
        out,
        "P{}\n{} {}\n{}\n",
        if color { 6 } else { 5 },
        img.width(),
        img.height(),
        max
    )?;
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..channels {
                let q = quantize(img.pixel(c, x, y), max);
                match depth {
                    BitDepth::Eight => out.push(q as u8),
                    BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
                }
            }
        }
    }
    Ok(out)
}

fn decode_pnm<S: Scalar>(bytes: &[u8]) -> Result<(ImageData<S>, RasterSpec), ImageIoError> {
    let color = bytes[1] == b'6';
    let channels = if color { 3 } else { 1 };
    let mut pos = 2usize;
    let mut fields = [0u64; 3];
    for f in fields.iter_mut() {
        *f = read_pnm_number(bytes, &mut pos)?;
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(ImageIoError::DimensionOverflow { width, height });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageIoError::CorruptHeader(format!("maxval {maxval}")));
    }
    let wide = maxval > 255;
    let n_px = (width * height) as usize;
    let expected = n_px * channels * if wide { 2 } else { 1 };
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() < expected {
        return Err(ImageIoError::TruncatedData { expected, got: data.len() });
    }
    let mut planes = vec![Vec::with_capacity(n_px); channels];
    let mut cursor = 0usize;
    for _ in 0..n_px {
        for plane in planes.iter_mut() {
            let raw = if wide {
                let v = u16::from_be_bytes([data[cursor], data[cursor + 1]]) as u32;
                cursor += 2;
                v
            } else {
                let v = data[cursor] as u32;
                cursor += 1;
                v
            };
            if raw > maxval as u32 {
                return Err(ImageIoError::CorruptHeader(format!(
                    "sample {raw} exceeds maxval {maxval}"
                )));
            }
            plane.push(normalize(raw, maxval as u32));
        }
    }
    let spec = RasterSpec {
        format: if color { RasterFormat::Ppm } else { RasterFormat::Pgm },
        depth: if wide { BitDepth::Sixteen } else { BitDepth::Eight },
        width: width as u32,
        height: height as u32,
        channels,
    };
    Ok((ImageData::new(width as u32, height as u32, planes)?, spec))
}

fn read_pnm_number(bytes: &[u8], pos: &mut usize) -> Result<u64, ImageIoError> {
    // skip whitespace and '#' comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(ImageIoError::CorruptHeader("expected integer field".into()));
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).expect("digits are ascii");
    text.parse()
        .map_err(|_| ImageIoError::CorruptHeader(format!("integer field {text} too large")))
}

fn decode_png<S: Scalar>(bytes: &[u8]) -> Result<(ImageData<S>, RasterSpec), ImageIoError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().expect("png buffer size")];
    let info = reader.next_frame(&mut buf)?;
    let (width, height) = (info.width, info.height);
    if width as u64 > MAX_DIMENSION || height as u64 > MAX_DIMENSION {
        return Err(ImageIoError::DimensionOverflow {
            width: width as u64,
            height: height as u64,
        });
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(ImageIoError::UnsupportedFormat(format!(
                "png color type {other:?} (use grayscale or rgb without alpha)"
            )))
        }
    };
    let wide = match info.bit_depth {
        png::BitDepth::Eight => false,
        png::BitDepth::Sixteen => true,
        other => {
            return Err(ImageIoError::UnsupportedFormat(format!(
                "png bit depth {other:?} (use 8 or 16)"
            )))
        }
    };
    let max = if wide { 65535 } else { 255 };
    let n_px = (width * height) as usize;
    let mut planes = vec![Vec::with_capacity(n_px); channels];
    let data = &buf[..info.buffer_size()];
    let mut cursor = 0usize;
    for _ in 0..n_px {
        for plane in planes.iter_mut() {
            let raw = if wide {
                let v = u16::from_be_bytes([data[cursor], data[cursor + 1]]) as u32;
                cursor += 2;
                v
            } else {
                let v = data[cursor] as u32;
                cursor += 1;
                v
            };
            plane.push(normalize(raw, max));
        }
    }
    let spec = RasterSpec {
        format: RasterFormat::Png,
        depth: if wide { BitDepth::Sixteen } else { BitDepth::Eight },
        width,
        height,
        channels,
    };
    Ok((ImageData::new(width, height, planes)?, spec))
}

fn encode_png<S: Scalar>(img: &ImageData<S>, depth: BitDepth) -> Result<Vec<u8>, ImageIoError> {
    let color_type = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        n => {
            return Err(ImageIoError::UnsupportedFormat(format!(
                "png output needs 1 or 3 channels, image has {n}"
            )))
        }
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width(), img.height());
        encoder.set_color(color_type);
        encoder.set_depth(match depth {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = encoder.write_header()?;
        let max = depth.max_value();
        let mut data = Vec::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                for c in 0..img.channels() {
                    let q = quantize(img.pixel(c, x, y), max);
                    match depth {
                        BitDepth::Eight => data.push(q as u8),
                        BitDepth::Sixteen => data.extend_from_slice(&(q as u16).to_be_bytes()),
                    }
                }
            }
        }
        writer.write_image_data(&data)?;
    }
    Ok(out)
}

/// Geometry shared by [`synth_circles`] and the acceptance checks: ring
/// boundaries from the outermost radius inward, equally spaced.
pub fn circle_radii(width: u32, height: u32, n_rings: usize) -> Vec<f64> {
    let r_out = 0.45 * width.min(height) as f64;
    (0..=n_rings)
        .map(|k| r_out * (n_rings - k) as f64 / n_rings as f64)
        .collect()
}

/// Region label at a point: 0 is the background, ring `k` (outermost first)
/// is `k + 1`.
pub fn circle_region(width: u32, height: u32, n_rings: usize, x: f64, y: f64) -> usize {
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
    let radii = circle_radii(width, height, n_rings);
    if d > radii[0] {
        return 0;
    }
    for k in 0..n_rings {
        // ring k spans (radii[k+1], radii[k]]
        if d > radii[k + 1] {
            return k + 1;
        }
    }
    n_rings // exact center
}

/// Concentric rings of equal radial width over a flat background, with
/// uniform noise of the given amplitude added and clamped to `[0, 1]`.
/// `levels[0]` is the outermost ring.
pub fn synth_circles<S: Scalar>(
    size: u32,
    levels: &[S],
    background: S,
    noise_amp: S,
    seed: u64,
) -> ImageData<S> {
    synth_circles_labeled(size, levels, background, noise_amp, seed).0
}

/// [`synth_circles`] plus per-pixel region labels (0 = background, ring `k`
/// = `k + 1`) for error measurements.
pub fn synth_circles_labeled<S: Scalar>(
    size: u32,
    levels: &[S],
    background: S,
    noise_amp: S,
    seed: u64,
) -> (ImageData<S>, Vec<usize>) {
    assert!(!levels.is_empty(), "need at least one ring level");
    let n_rings = levels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = noise_amp.to_f64_lossy();
    let n_px = (size as usize) * (size as usize);
    let mut plane = Vec::with_capacity(n_px);
    let mut labels = Vec::with_capacity(n_px);
    for py in 0..size {
        for px in 0..size {
            let region =
                circle_region(size, size, n_rings, px as f64 + 0.5, py as f64 + 0.5);
            let base = if region == 0 { background } else { levels[region - 1] };
            let noise = S::lit(rng.random_range(-amp..=amp));
            plane.push((base + noise).max(S::zero()).min(S::one()));
            labels.push(region);
        }
    }
    (
        ImageData::new(size, size, vec![plane]).expect("generated values lie in range"),
        labels,
    )
}

/// Piecewise-constant `length x 1` strip with noise, for the one-dimensional
/// experiments. Segments split the strip evenly, `levels[0]` leftmost.
pub fn synth_step_signal<S: Scalar>(
    length: u32,
    levels: &[S],
    noise_amp: S,
    seed: u64,
) -> ImageData<S> {
    synth_step_signal_labeled(length, levels, noise_amp, seed).0
}

/// [`synth_step_signal`] plus per-pixel segment labels, the clean signal and
/// the injected noise.
pub fn synth_step_signal_labeled<S: Scalar>(
    length: u32,
    levels: &[S],
    noise_amp: S,
    seed: u64,
) -> (ImageData<S>, Vec<usize>, Vec<S>, Vec<S>) {
    assert!(!levels.is_empty(), "need at least one level");
    let k = levels.len() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = noise_amp.to_f64_lossy();
    let mut plane = Vec::with_capacity(length as usize);
    let mut labels = Vec::with_capacity(length as usize);
    let mut clean = Vec::with_capacity(length as usize);
    let mut noise_out = Vec::with_capacity(length as usize);
    for px in 0..length as u64 {
        let seg = ((px * k) / length as u64).min(k - 1) as usize;
        let base = levels[seg];
        let noise = S::lit(rng.random_range(-amp..=amp));
        let value = (base + noise).max(S::zero()).min(S::one());
        labels.push(seg);
        clean.push(base);
        // the effective injected noise is what survives clamping
        noise_out.push(value - base);
        plane.push(value);
    }
    (
        ImageData::new(length, 1, vec![plane]).expect("generated values lie in range"),
        labels,
        clean,
        noise_out,
    )
}

/// Settings for [`synth_composite`]: overlapping primitives over a chequered
/// field. The construction is deterministic.
#[derive(Debug, Clone)]
pub struct CompositeSpec<S> {
    pub tile: u32,
    pub shade_a: S,
    pub shade_b: S,
    pub disk_level: S,
    pub rect_level: S,
    pub triangle_level: S,
    pub noise_amp: S,
}

impl<S: Scalar> Default for CompositeSpec<S> {
    fn default() -> Self {
        Self {
            tile: 8,
            shade_a: S::lit(0.35),
            shade_b: S::lit(0.65),
            disk_level: S::lit(0.9),
            rect_level: S::lit(0.1),
            triangle_level: S::lit(0.5),
            noise_amp: S::zero(),
        }
    }
}

/// Overlapping geometric solids over a chequerboard.
pub fn synth_composite<S: Scalar>(size: u32, spec: &CompositeSpec<S>, seed: u64) -> ImageData<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = spec.noise_amp.to_f64_lossy();
    let s = size as f64;
    let n_px = (size as usize) * (size as usize);
    let mut plane = Vec::with_capacity(n_px);
    for py in 0..size {
        for px in 0..size {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let chequer = ((px / spec.tile) + (py / spec.tile)) % 2 == 0;
            let mut v = if chequer { spec.shade_a } else { spec.shade_b };
            // rectangle on the right
            if x >= 0.55 * s && x <= 0.9 * s && y >= 0.15 * s && y <= 0.6 * s {
                v = spec.rect_level;
            }
            // triangle along the bottom: y above the two slanted edges
            let apex = (0.5 * s, 0.45 * s);
            let (bl, br) = ((0.2 * s, 0.9 * s), (0.8 * s, 0.9 * s));
            if y <= bl.1
                && (y - apex.1) * (bl.0 - apex.0) >= (x - apex.0) * (bl.1 - apex.1)
                && (y - apex.1) * (br.0 - apex.0) <= (x - apex.0) * (br.1 - apex.1)
            {
                v = spec.triangle_level;
            }
            // disk on the upper left, drawn last
            let (cx, cy, r) = (0.35 * s, 0.35 * s, 0.22 * s);
            if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                v = spec.disk_level;
            }
            let noise = if amp > 0.0 { S::lit(rng.random_range(-amp..=amp)) } else { S::zero() };
            plane.push((v + noise).max(S::zero()).min(S::one()));
        }
    }
    ImageData::new(size, size, vec![plane]).expect("generated values lie in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip_pnm(img: &ImageData<f64>, depth: BitDepth, color: bool) {
        let bytes = encode_pnm(img, depth, color).unwrap();
        let (back, spec) = decode::<f64>(&bytes).unwrap();
        assert_eq!(spec.width, img.width());
        assert_eq!(spec.height, img.height());
        assert_eq!(spec.channels, img.channels());
        assert_eq!(spec.depth, depth);
        // byte-exact re-encode
        let bytes2 = encode_pnm(&back, depth, color).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn pgm_normalization() {
        let bytes = b"P5\n2 1\n255\n\xff\x00".to_vec();
        let (img, spec) = decode::<f64>(&bytes).unwrap();
        assert_eq!(spec.format, RasterFormat::Pgm);
        assert_eq!(img.pixel(0, 0, 0), 1.0);
        assert_eq!(img.pixel(0, 1, 0), 0.0);
    }

    #[test]
    fn ppm_normalization() {
        let bytes = b"P6\n1 1\n255\n\x00\x80\xff".to_vec();
        let (img, _) = decode::<f64>(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0, 0), 0.0);
        assert_eq!(img.pixel(1, 0, 0), 128.0 / 255.0);
        assert_eq!(img.pixel(2, 0, 0), 1.0);
    }

    #[test]
    fn pnm_roundtrips_bytes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = 7;
        let h = 5;
        let gray: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
        // snap to the 8-bit lattice so quantization is the identity
        let gray8: Vec<f64> =
            gray.iter().map(|v| (v * 255.0).round() / 255.0).collect();
        let img = ImageData::new(w as u32, h as u32, vec![gray8]).unwrap();
        roundtrip_pnm(&img, BitDepth::Eight, false);
        let gray16: Vec<f64> =
            gray.iter().map(|v| (v * 65535.0).round() / 65535.0).collect();
        let img = ImageData::new(w as u32, h as u32, vec![gray16]).unwrap();
        roundtrip_pnm(&img, BitDepth::Sixteen, false);

        let rgb: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..w * h)
                    .map(|_| (rng.random::<f64>() * 255.0).round() / 255.0)
                    .collect()
            })
            .collect();
        let img = ImageData::new(w as u32, h as u32, rgb).unwrap();
        roundtrip_pnm(&img, BitDepth::Eight, true);
    }

    #[test]
    fn pnm_comments_and_errors() {
        let bytes = b"P5\n# a comment\n2 1\n# another\n255\n\x10\x20".to_vec();
        let (img, _) = decode::<f64>(&bytes).unwrap();
        assert_eq!(img.width(), 2);
        assert!(decode::<f64>(b"P5\n2 1\n255\n\x10").is_err()); // truncated
        assert!(decode::<f64>(b"P5\nx\n").is_err()); // bad field
        assert!(decode::<f64>(b"BM123").is_err()); // unknown magic
    }

    #[test]
    fn png_roundtrip() {
        let w = 6u32;
        let h = 4u32;
        let plane: Vec<f64> = (0..w * h)
            .map(|i| ((i * 11 % 256) as f64 / 255.0 * 255.0).round() / 255.0)
            .collect();
        let img = ImageData::new(w, h, vec![plane]).unwrap();
        let bytes = encode_png(&img, BitDepth::Eight).unwrap();
        let (back, spec) = decode::<f64>(&bytes).unwrap();
        assert_eq!(spec.format, RasterFormat::Png);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(img.pixel(0, x, y), back.pixel(0, x, y));
            }
        }
        // 16-bit rgb
        let planes: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                (0..w * h)
                    .map(|i| (((i + c * 7) * 997 % 65536) as f64 / 65535.0))
                    .collect()
            })
            .collect();
        let img = ImageData::new(w, h, planes).unwrap();
        let bytes = encode_png(&img, BitDepth::Sixteen).unwrap();
        let (back, spec) = decode::<f64>(&bytes).unwrap();
        assert_eq!(spec.depth, BitDepth::Sixteen);
        assert_eq!(spec.channels, 3);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    assert!((img.pixel(c, x, y) - back.pixel(c, x, y)).abs() <= 0.5 / 65535.0);
                }
            }
        }
    }

    #[test]
    fn circles_deterministic_and_clean_without_noise() {
        let levels = [0.25f64, 0.95, 0.55, 0.75];
        let a = synth_circles(64, &levels, 0.1, 0.05, 42);
        let b = synth_circles(64, &levels, 0.1, 0.05, 42);
        for (x, y) in a.plane(0).iter().zip(b.plane(0)) {
            assert_eq!(x, y);
        }
        let clean = synth_circles(64, &levels, 0.1, 0.0, 7);
        let mut seen: Vec<f64> = clean.plane(0).to_vec();
        seen.sort_by(|p, q| p.partial_cmp(q).unwrap());
        seen.dedup();
        assert_eq!(seen, vec![0.1, 0.25, 0.55, 0.75, 0.95]);
    }

    #[test]
    fn circles_region_means_near_nominal() {
        let levels = [0.25f64, 0.95, 0.55, 0.75];
        let (img, labels) = synth_circles_labeled(128, &levels, 0.1, 0.05, 3);
        let mut sums = vec![0.0f64; 5];
        let mut counts = vec![0usize; 5];
        for (v, &l) in img.plane(0).iter().zip(&labels) {
            sums[l] += v;
            counts[l] += 1;
        }
        let nominal = [0.1, 0.25, 0.95, 0.55, 0.75];
        for region in 0..5 {
            assert!(counts[region] > 0, "region {region} empty");
            let mean = sums[region] / counts[region] as f64;
            assert!(
                (mean - nominal[region]).abs() <= 0.01,
                "region {region}: mean {mean} vs {}",
                nominal[region]
            );
        }
    }

    #[test]
    fn step_signal_levels_and_statistics() {
        let levels = [0.2f64, 0.8];
        let (img, labels, clean, noise) = synth_step_signal_labeled(256, &levels, 0.0, 0);
        assert_eq!(img.height(), 1);
        for (i, &l) in labels.iter().enumerate() {
            assert_eq!(l, if i < 128 { 0 } else { 1 });
            assert_eq!(img.plane(0)[i], levels[l]);
            assert_eq!(clean[i], levels[l]);
            assert_eq!(noise[i], 0.0);
        }
        // with noise: clamped band and near-zero segment means
        let amp = 0.1;
        let (img, _, clean, noise) = synth_step_signal_labeled(256, &levels, amp, 9);
        for (i, &v) in img.plane(0).iter().enumerate() {
            assert!(v >= (clean[i] - amp - 1e-12).max(0.0) && v <= (clean[i] + amp + 1e-12).min(1.0));
            assert!((v - clean[i] - noise[i]).abs() <= 1e-15);
        }
        for seg in 0..2 {
            let seg_noise: Vec<f64> = noise[seg * 128..(seg + 1) * 128].to_vec();
            let mean = seg_noise.iter().sum::<f64>() / 128.0;
            // standard error of the mean of uniform noise
            let se = amp / (3.0f64).sqrt() / (128.0f64).sqrt();
            assert!(mean.abs() <= 3.0 * se, "segment {seg} mean {mean}");
        }
    }

    #[test]
    fn composite_generator_is_deterministic() {
        let spec = CompositeSpec::<f64>::default();
        let a = synth_composite(64, &spec, 1);
        let b = synth_composite(64, &spec, 1);
        for (x, y) in a.plane(0).iter().zip(b.plane(0)) {
            assert_eq!(x, y);
        }
        // all five construction levels appear
        let mut seen: Vec<f64> = a.plane(0).to_vec();
        seen.sort_by(|p, q| p.partial_cmp(q).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 5);
    }
}
