//! Opaque image payloads. Pixels are never decoded here; the pipeline only
//! hashes bytes and sniffs the container format before handing them to backends.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Jpeg,
    Gif,
    Webp,
    Bmp,
}

impl ImageFormat {
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(ImageFormat::Png)
        } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(ImageFormat::Jpeg)
        } else if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
            Some(ImageFormat::Gif)
        } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
            Some(ImageFormat::Webp)
        } else if bytes.starts_with(b"BM") && bytes.len() > 14 {
            Some(ImageFormat::Bmp)
        } else {
            None
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            ImageFormat::Png => "image/png",
            ImageFormat::Jpeg => "image/jpeg",
            ImageFormat::Gif => "image/gif",
            ImageFormat::Webp => "image/webp",
            ImageFormat::Bmp => "image/bmp",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
            ImageFormat::Gif => "gif",
            ImageFormat::Webp => "webp",
            ImageFormat::Bmp => "bmp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("payload is not a recognised image container ({len} bytes)")]
pub struct UndecodableImage {
    pub len: usize,
}

/// Image bytes plus their content hash. Cheap to clone.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    bytes: Arc<[u8]>,
    format: ImageFormat,
    hash: String,
}

impl Image {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Result<Self, UndecodableImage> {
        let bytes: Vec<u8> = bytes.into();
        let format = ImageFormat::sniff(&bytes).ok_or(UndecodableImage { len: bytes.len() })?;
        let hash = content_hash(&bytes);
        Ok(Self {
            bytes: bytes.into(),
            format,
            hash,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn format(&self) -> ImageFormat {
        self.format
    }

    /// Lowercase hex SHA-256 of the raw bytes.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.format.mime(),
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("format", &self.format)
            .field("len", &self.bytes.len())
            .field("hash", &self.hash)
            .finish()
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A minimal valid 1x1 PNG, handy for fixtures. The trailing `salt` byte goes
/// into an ancillary chunk so callers can mint distinct hashes.
pub fn tiny_png(salt: u8) -> Vec<u8> {
    let mut out = Vec::from(&b"\x89PNG\r\n\x1a\n"[..]);
    out.extend_from_slice(&[0, 0, 0, 1, b't', b'E', b'X', b't', salt, 0, 0, 0, 0]);
    out.extend_from_slice(&[0, 0, 0, 0, b'I', b'E', b'N', b'D', 0xAE, 0x42, 0x60, 0x82]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sniffs_common_containers() {
        assert_eq!(ImageFormat::sniff(&tiny_png(0)), Some(ImageFormat::Png));
        assert_eq!(ImageFormat::sniff(b"GIF89a...."), Some(ImageFormat::Gif));
        assert_eq!(ImageFormat::sniff(&[0xFF, 0xD8, 0xFF, 0xE0]), Some(ImageFormat::Jpeg));
        assert_eq!(ImageFormat::sniff(b"RIFF\0\0\0\0WEBPVP8 "), Some(ImageFormat::Webp));
        assert_eq!(ImageFormat::sniff(b"hello world"), None);
        assert_eq!(ImageFormat::sniff(b""), None);
    }

    #[test]
    fn garbage_is_rejected() {
        assert_eq!(Image::from_bytes(b"not an image".to_vec()), Err(UndecodableImage { len: 12 }));
    }

    #[test]
    fn hash_is_content_addressed() {
        let a = Image::from_bytes(tiny_png(1)).unwrap();
        let b = Image::from_bytes(tiny_png(1)).unwrap();
        let c = Image::from_bytes(tiny_png(2)).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
        assert!(a.data_url().starts_with("data:image/png;base64,"));
    }
}
