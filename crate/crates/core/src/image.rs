//! RGB frames as `3×H×W` tensors in `[0, 1]`, binary PPM I/O, and the
//! square crop-and-resize used for template and search patches.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Converts interleaved 8-bit RGB into a planar `3×H×W` tensor.
pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor> {
    if rgb.len() != width * height * 3 {
        return Err(Error::shape(format!(
            "{} bytes for a {width}×{height} RGB image",
            rgb.len()
        )));
    }
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, height, width], data)
}

pub fn to_rgb8(img: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape("expected a 3-channel image"));
    }
    let plane = w * h;
    let mut out = vec![0u8; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            out[3 * i + ch] = (img.data()[ch * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok((w, h, out))
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let (w, h, rgb) = to_rgb8(img)?;
    let mut buf = Vec::with_capacity(rgb.len() + 20);
    write!(buf, "P6\n{w} {h}\n255\n").expect("vec write");
    buf.extend_from_slice(&rgb);
    fs::write(path, buf).map_err(Error::io(path))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    parse_ppm(&bytes, path)
}

fn parse_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |msg: &str| Error::Format {
        what: "PPM image",
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P6") {
        return Err(bad("not a binary P6 file"));
    }
    let mut num = || token().and_then(|t| t.parse::<usize>().ok());
    let (w, h, max) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) => (w, h, m),
        _ => return Err(bad("bad header")),
    };
    if max != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let end = start + w * h * 3;
    if end > bytes.len() {
        return Err(bad("truncated raster"));
    }
    from_rgb8(w, h, &bytes[start..end])
}

/// Per-channel mean of an image.
pub fn channel_means(img: &Tensor) -> Result<[f64; 3]> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape("expected a 3-channel image"));
    }
    let n = (h * w) as f64;
    Ok([0, 1, 2].map(|ch| img.channel(ch).iter().sum::<f64>() / n))
}

/// Square crop of side `side` (image pixels) centered at `center`, resampled
/// bilinearly to `out_size × out_size`. Samples falling outside the image take
/// the channel mean.
pub fn crop_resize(
    img: &Tensor,
    center: (f64, f64),
    side: f64,
    out_size: usize,
    fill: [f64; 3],
) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape("expected a 3-channel image"));
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::Config(format!("crop side must be positive, got {side}")));
    }
    let step = side / out_size as f64;
    let x_start = center.0 - side / 2.0;
    let y_start = center.1 - side / 2.0;
    let plane = out_size * out_size;
    let mut out = vec![0.0; 3 * plane];
    let sample = |ch: usize, x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            fill[ch]
        } else {
            img.data()[(ch * h + y as usize) * w + x as usize]
        }
    };
    for oy in 0..out_size {
        // continuous pixel-center convention: pixel k covers [k, k + 1)
        let sy = y_start + (oy as f64 + 0.5) * step - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        for ox in 0..out_size {
            let sx = x_start + (ox as f64 + 0.5) * step - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let (xi, yi) = (x0 as isize, y0 as isize);
            for ch in 0..3 {
                let v = (1.0 - fy) * ((1.0 - fx) * sample(ch, xi, yi) + fx * sample(ch, xi + 1, yi))
                    + fy * ((1.0 - fx) * sample(ch, xi, yi + 1) + fx * sample(ch, xi + 1, yi + 1));
                out[ch * plane + oy * out_size + ox] = v;
            }
        }
    }
    Tensor::new(vec![3, out_size, out_size], out)
}

/// Side of the square context region around a `w × h` target: the geometric
/// mean of the sides after padding each by `(w + h) / 2`.
pub fn context_side(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    ((w + p) * (h + p)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let img = Tensor::from_fn([3, 4, 5], |i| ((i * 37) % 256) as f64 / 255.0);
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() < 1e-12);
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n5 4\n255\n"));
    }

    #[test]
    fn ppm_with_comment() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51]);
        let t = parse_ppm(&bytes, Path::new("mem")).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.2]);
        assert!(parse_ppm(b"P3\n1 1\n255\n", Path::new("mem")).is_err());
    }

    #[test]
    fn identity_crop() {
        let img = Tensor::from_fn([3, 8, 8], |i| (i as f64 * 0.13).sin().abs());
        let out = crop_resize(&img, (4.0, 4.0), 8.0, 8, [0.0; 3]).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn outside_takes_fill() {
        let img = Tensor::full([3, 4, 4], 0.2);
        let out = crop_resize(&img, (100.0, 100.0), 8.0, 4, [0.1, 0.5, 0.9]).unwrap();
        assert!(out.channel(0).iter().all(|&v| v == 0.1));
        assert!(out.channel(2).iter().all(|&v| v == 0.9));
    }

    #[test]
    fn context_of_square() {
        assert_eq!(context_side(10.0, 10.0), 20.0);
    }
}
