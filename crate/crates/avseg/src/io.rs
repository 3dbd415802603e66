//! File formats: text tensors, binary PGM images, and CSV rows.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes a tensor to the text format (shape line, value line).
pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, t.to_text())?;
    Ok(())
}

/// Reads a tensor from the text format.
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    Tensor::from_text(&fs::read_to_string(path)?)
}

/// Writes a 2-D tensor of non-negative values as a binary (P5) 8-bit PGM,
/// mapping `[0, max]` linearly onto `[0, 255]`. An all-zero image maps to 0.
pub fn save_pgm(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = t.dims2()?;
    if t.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "PGM export requires non-negative values".into(),
        ));
    }
    let max = t.data().iter().cloned().fold(0.0_f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut bytes = Vec::with_capacity(32 + h * w);
    write!(&mut bytes, "P5\n{w} {h}\n255\n").expect("in-memory write");
    bytes.extend(t.data().iter().map(|&v| (v * scale).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes CSV content with a header row.
pub fn save_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let t = crate::rng::Rng::new(7).tensor_normal(&[3, 5]);
        save_tensor(&path, &t).unwrap();
        assert_eq!(load_tensor(&path).unwrap(), t);
    }

    #[test]
    fn pgm_header_and_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let t = Tensor::new(vec![2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        save_pgm(&path, &t).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 64, 128, 255]);
    }

    #[test]
    fn pgm_all_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        save_pgm(&path, &Tensor::zeros(&[1, 3])).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 0, 0]);
    }

    #[test]
    fn pgm_rejects_negative_values() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::new(vec![1, 2], vec![-1.0, 1.0]).unwrap();
        assert!(save_pgm(&dir.path().join("n.pgm"), &t).is_err());
    }
}
