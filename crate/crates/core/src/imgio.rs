//! Image file I/O: binary PPM (P6, 8-bit) both ways, PNG read-only.
//!
//! Images are `[3,H,W]` tensors with values in `[0,1]`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Write a `[3,H,W]` image as binary PPM, clamping to `[0,1]`.
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Dimension(format!("write_ppm expects [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let data = img.data();
    let plane = h * w;
    let mut buf = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = (data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.push(v);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Read a binary PPM (P6, maxval 255) into a `[3,H,W]` tensor.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    fn skip_ws(bytes: &[u8], mut pos: usize) -> usize {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                return pos;
            }
        }
    }
    fn token(bytes: &[u8], pos: usize) -> (usize, usize) {
        let start = skip_ws(bytes, pos);
        let mut end = start;
        while end < bytes.len() && !bytes[end].is_ascii_whitespace() {
            end += 1;
        }
        (start, end)
    }
    fn parse_usize(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
        let (s, e) = token(bytes, pos);
        let text = std::str::from_utf8(&bytes[s..e])
            .map_err(|_| Error::Image(format!("ppm: bad {what}")))?;
        let v: usize = text
            .parse()
            .map_err(|_| Error::Image(format!("ppm: bad {what} '{text}'")))?;
        Ok((v, e))
    }

    let (s, e) = token(&bytes, pos);
    if &bytes[s..e] != b"P6" {
        return Err(Error::Image("ppm: not a P6 file".into()));
    }
    pos = e;
    let (w, p) = parse_usize(&bytes, pos, "width")?;
    let (h, p) = parse_usize(&bytes, p, "height")?;
    let (maxval, p) = parse_usize(&bytes, p, "maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("ppm: unsupported maxval {maxval}")));
    }
    pos = p + 1; // exactly one whitespace byte before the raster
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(Error::Image("ppm: truncated raster".into()));
    }
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = bytes[pos + 3 * i + c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_vec(data, &[3, h, w]))
}

/// Load a PNG or PPM image by extension.
pub fn read_image(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        Some("png") => {
            let img = image::open(path)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let plane = w * h;
            let mut data = vec![0.0; 3 * plane];
            for (i, px) in img.pixels().enumerate() {
                for c in 0..3 {
                    data[c * plane + i] = px.0[c] as f64 / 255.0;
                }
            }
            Ok(Tensor::from_vec(data, &[3, h, w]))
        }
        other => Err(Error::Image(format!(
            "unsupported image extension {other:?} (use .ppm or .png)"
        ))),
    }
}
