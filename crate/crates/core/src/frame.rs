//! Encoded frame handling: decode, canonical JPEG re-encode and comment
//! segments.

use bytes::Bytes;
use image::codecs::jpeg::JpegEncoder;
use image::{DynamicImage, ImageFormat, RgbImage};

/// Quality of the pipeline's canonical baseline JPEG.
pub const CANONICAL_QUALITY: u8 = 85;

const SOI: [u8; 2] = [0xFF, 0xD8];
const EOI: [u8; 2] = [0xFF, 0xD9];
const COM: u8 = 0xFE;
const SOS: u8 = 0xDA;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("empty frame")]
    Empty,
    #[error("jpeg frame truncated (no end-of-image marker)")]
    Truncated,
    #[error("undecodable frame: {0}")]
    Decode(#[from] image::ImageError),
}

/// An encoded image with known dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub bytes: Bytes,
    pub width: u32,
    pub height: u32,
}

pub fn is_jpeg(bytes: &[u8]) -> bool {
    bytes.starts_with(&SOI)
}

/// Decodes any supported image. JPEG data must end with an EOI marker
/// (trailing padding of up to 16 bytes is tolerated).
pub fn decode(bytes: &[u8]) -> Result<DynamicImage, FrameError> {
    if bytes.is_empty() {
        return Err(FrameError::Empty);
    }
    if is_jpeg(bytes) {
        if !has_eoi(bytes) {
            return Err(FrameError::Truncated);
        }
        return Ok(image::load_from_memory_with_format(bytes, ImageFormat::Jpeg)?);
    }
    Ok(image::load_from_memory(bytes)?)
}

/// Cheap decodability check: reads only the header (and the JPEG end marker).
pub fn probe(bytes: &[u8]) -> Result<(u32, u32), FrameError> {
    if bytes.is_empty() {
        return Err(FrameError::Empty);
    }
    if is_jpeg(bytes) && !has_eoi(bytes) {
        return Err(FrameError::Truncated);
    }
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(image::ImageError::IoError)?;
    Ok(reader.into_dimensions()?)
}

fn has_eoi(bytes: &[u8]) -> bool {
    let tail = &bytes[bytes.len().saturating_sub(18)..];
    tail.windows(2).any(|w| w == EOI)
}

pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Vec<u8> {
    let mut out = Vec::with_capacity((img.width() * img.height() / 4) as usize);
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(img)
        .expect("encoding an in-memory RGB image cannot fail");
    out
}

/// Decodes `bytes` and re-encodes them as canonical JPEG, carrying over any
/// JPEG comment segments.
pub fn canonicalize(bytes: &[u8]) -> Result<EncodedFrame, FrameError> {
    let img = decode(bytes)?.to_rgb8();
    let mut out = encode_jpeg(&img, CANONICAL_QUALITY);
    for comment in comments(bytes).iter().rev() {
        out = with_comment(&out, comment);
    }
    Ok(EncodedFrame {
        bytes: Bytes::from(out),
        width: img.width(),
        height: img.height(),
    })
}

/// Comment (COM) segment payloads appearing before the scan data.
pub fn comments(jpeg: &[u8]) -> Vec<Vec<u8>> {
    let mut found = Vec::new();
    if !is_jpeg(jpeg) {
        return found;
    }
    let mut i = 2;
    while i + 4 <= jpeg.len() {
        if jpeg[i] != 0xFF {
            break;
        }
        let marker = jpeg[i + 1];
        if marker == 0xFF {
            i += 1;
            continue;
        }
        if marker == SOS || marker == EOI[1] {
            break;
        }
        let len = u16::from_be_bytes([jpeg[i + 2], jpeg[i + 3]]) as usize;
        if len < 2 || i + 2 + len > jpeg.len() {
            break;
        }
        if marker == COM {
            found.push(jpeg[i + 4..i + 2 + len].to_vec());
        }
        i += 2 + len;
    }
    found
}

/// Returns a copy of `jpeg` with a comment segment inserted right after SOI.
/// Comments longer than a segment allows are truncated.
pub fn with_comment(jpeg: &[u8], comment: &[u8]) -> Vec<u8> {
    debug_assert!(is_jpeg(jpeg));
    let body = &comment[..comment.len().min(u16::MAX as usize - 2)];
    let mut out = Vec::with_capacity(jpeg.len() + body.len() + 4);
    out.extend_from_slice(&SOI);
    out.extend_from_slice(&[0xFF, COM]);
    out.extend_from_slice(&((body.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(body);
    out.extend_from_slice(&jpeg[2..]);
    out
}
