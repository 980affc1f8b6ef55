//! Binary PPM (P6) images and the grouped filter grid.
//!
//! Grid layout: one column per group, members stacked top to bottom in
//! group order. Tiles are separated (and framed) by 1-pixel black lines, so
//! `width = G*tw + G + 1` and `height = M*th + M + 1` with `M` the largest
//! group. Cells of shorter groups stay black.

use crate::error::{Error, Result};
use crate::gsmax::GroupSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn black(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape(format!("empty image {width}x{height}")));
        }
        Ok(Image { width, height, pixels: vec![[0; 3]; width * height] })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        // header: magic, width, height, maxval, each whitespace separated,
        // then exactly one whitespace byte before the raster
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
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
                return Err(Error::format("truncated PPM header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("non-ASCII PPM header"))?);
        }
        if fields[0] != "P6" {
            return Err(Error::format(format!("expected P6, got {:?}", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad PPM header field {s:?}")));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(Error::format(format!("unsupported maxval {maxval}")));
        }
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or_default();
        if width == 0 || height == 0 || raster.len() != width * height * 3 {
            return Err(Error::format(format!("PPM raster has {} bytes for {width}x{height}", raster.len())));
        }
        let pixels = raster.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Image { width, height, pixels })
    }
}

/// `round((x - min) / (max - min) * 255)` per value; a constant filter maps
/// to 128.
pub fn normalize_filter(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|&x| if range > 0.0 { ((x - lo) / range * 255.0).round() as u8 } else { 128 })
        .collect()
}

/// Tile geometry for a filter with `channels` planes of `height x width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TileShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if !(channels == 1 || channels == 3) || height == 0 || width == 0 {
            return Err(Error::config(format!(
                "filters of shape [{channels}, {height}, {width}] are not image-shaped (need 1 or 3 channels)"
            )));
        }
        Ok(TileShape { channels, height, width })
    }

    fn len(self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Lays out `filters` (each channel-major, `tile.len()` values) as a grid.
pub fn filter_grid(filters: &[Vec<f64>], tile: TileShape, spec: &GroupSpec) -> Result<Image> {
    if filters.len() != spec.channels() {
        return Err(Error::shape(format!("{} filters for a {}-channel group spec", filters.len(), spec.channels())));
    }
    if let Some(f) = filters.iter().find(|f| f.len() != tile.len()) {
        return Err(Error::shape(format!("filter has {} values, tile needs {}", f.len(), tile.len())));
    }
    let cols = spec.group_count();
    let rows = spec.groups().iter().map(Vec::len).max().unwrap_or(0);
    let mut img = Image::black(cols * tile.width + cols + 1, rows * tile.height + rows + 1)?;
    let plane = tile.height * tile.width;
    for (g, members) in spec.groups().iter().enumerate() {
        for (slot, &f) in members.iter().enumerate() {
            let px = normalize_filter(&filters[f]);
            let (x0, y0) = (1 + g * (tile.width + 1), 1 + slot * (tile.height + 1));
            for y in 0..tile.height {
                for x in 0..tile.width {
                    let at = y * tile.width + x;
                    let rgb = if tile.channels == 3 {
                        [px[at], px[plane + at], px[2 * plane + at]]
                    } else {
                        [px[at]; 3]
                    };
                    img.set(x0 + x, y0 + y, rgb);
                }
            }
        }
    }
    Ok(img)
}
