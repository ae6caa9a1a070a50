//! Planar pixel arrays and their on-disk formats.
//!
//! Raw layout (`.img`): three little-endian `u32` values `height`, `width`,
//! `channels`, followed by `height * width * channels` little-endian `f64`
//! samples in row-major `(row, col, channel)` order.
//!
//! PGM (`P5`, one channel) and PPM (`P6`, three channels) with maxval 255 are
//! supported for fixtures; samples map to `[0, 1]` as `byte / 255`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("Image::new", "dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(
                "Image::new",
                format!(
                    "{} samples for {height}x{width}x{channels}",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Sample with zero padding outside the image.
    #[inline]
    pub fn get_padded(&self, row: usize, col: usize, ch: usize) -> f64 {
        if row < self.height && col < self.width {
            self.get(row, col, ch)
        } else {
            0.0
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 8);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::invalid("Image::from_raw_bytes", "truncated header"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let body = &bytes[12..];
        if body.len() != h * w * c * 8 {
            return Err(Error::invalid(
                "Image::from_raw_bytes",
                format!("expected {} payload bytes, found {}", h * w * c * 8, body.len()),
            ));
        }
        let data = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Image::new(h, w, c, data)
    }

    /// Binary PGM/PPM encoding; samples are clamped to `[0, 1]` and quantized.
    pub fn to_pnm_bytes(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => {
                return Err(Error::invalid(
                    "Image::to_pnm_bytes",
                    format!("{c} channels (PGM needs 1, PPM needs 3)"),
                ))
            }
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        Ok(out)
    }

    pub fn from_pnm_bytes(bytes: &[u8]) -> Result<Self> {
        let op = "Image::from_pnm_bytes";
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid(op, "truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::invalid(op, format!("unsupported magic {m}"))),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(op, format!("bad header field {s:?}")))
        };
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::invalid(op, format!("maxval {maxval} (only 255 supported)")));
        }
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != w * h * channels {
            return Err(Error::invalid(
                op,
                format!("expected {} raster bytes, found {}", w * h * channels, raster.len()),
            ));
        }
        Image::new(h, w, channels, raster.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") | Some("ppm") => Image::from_pnm_bytes(&bytes),
            _ => Image::from_raw_bytes(&bytes),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") | Some("ppm") => self.to_pnm_bytes()?,
            _ => self.to_raw_bytes(),
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
