use std::io::{self, Write};

use crate::scalar::Scalar;

/// Binary PGM (P5, maxval 255) of a grayscale image with values in `[0, 1]`.
pub fn write_pgm<T: Scalar, W: Write>(
    mut out: W,
    width: usize,
    height: usize,
    pixels: &[T],
) -> io::Result<()> {
    if pixels.len() != width * height {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "pixel count does not match dimensions",
        ));
    }
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|p| (p.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)
}

pub fn encode_pgm<T: Scalar>(width: usize, height: usize, pixels: &[T]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(pixels.len() + 16);
    write_pgm(&mut buf, width, height, pixels).expect("in-memory write");
    buf
}
