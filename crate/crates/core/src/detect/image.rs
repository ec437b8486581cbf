//! 8-bit RGB images and binary PPM (P6) / PGM (P5) codecs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triplets.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        let img = Image { width, height, pixels };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Input(format!("degenerate image {}x{}", self.width, self.height)));
        }
        if self.pixels.len() != self.width * self.height * 3 {
            return Err(Error::Input(format!(
                "image {}x{} needs {} bytes, has {}",
                self.width,
                self.height,
                self.width * self.height * 3,
                self.pixels.len()
            )));
        }
        Ok(())
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Input(format!("bad PNM {what}")))
    }
}

/// Decodes a binary PPM (P6) or PGM (P5) image with maxval 255. Grey
/// images are replicated to three channels.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(Error::Input("file too short for a PNM header".into()));
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        other => {
            return Err(Error::Input(format!(
                "unsupported PNM magic {:?} (expected P5 or P6)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut p = HeaderParser { bytes, pos: 2 };
    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Input(format!("only 8-bit PNM (maxval 255) is supported, got {maxval}")));
    }
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return Err(Error::Input("missing whitespace after PNM header".into()));
    }
    let data = &bytes[p.pos + 1..];
    let need = width * height * channels;
    if data.len() < need {
        return Err(Error::Input(format!("PNM raster truncated: need {need} bytes, have {}", data.len())));
    }
    let pixels = if channels == 3 {
        data[..need].to_vec()
    } else {
        data[..need].iter().flat_map(|&g| [g, g, g]).collect()
    };
    Image::new(width, height, pixels)
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, img.to_ppm())?;
    Ok(())
}
