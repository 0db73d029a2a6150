//! Portable float maps: `Pf` (one channel) or `PF` (three channels),
//! little-endian 32-bit floats stored bottom row first.

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Encode `raster` (one or three channels, finite values) as PFM bytes.
/// Values are narrowed to `f32`.
pub fn write_pfm(raster: &Raster) -> Result<Vec<u8>> {
    let magic = match raster.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Usage(format!("PFM stores 1 or 3 channels, not {c}"))),
    };
    if raster.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("PFM payload must be finite".into()));
    }
    let (w, h, c) = (raster.width, raster.height, raster.channels);
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h * c);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(raster.get(ch, x, y) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decode PFM bytes. Only little-endian files (negative scale) are accepted.
pub fn read_pfm(bytes: &[u8]) -> Result<Raster> {
    let bad = |m: &str| Error::Format(m.to_string());
    // three whitespace-terminated header fields: magic, "w h", scale
    let mut pos = 0;
    let mut token = || -> Result<&str> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= bytes.len() {
            return Err(bad("truncated PFM header"));
        }
        std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("PFM header is not ASCII"))
    };
    let channels = match token()? {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(Error::Format(format!("bad PFM magic `{m}`"))),
    };
    let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PFM dimension `{s}`")));
    let width = dim(token()?)?;
    let height = dim(token()?)?;
    let scale: f64 = token()?.parse().map_err(|_| bad("bad PFM scale"))?;
    if !(scale < 0.0) {
        return Err(bad("only little-endian PFM (negative scale) is supported"));
    }
    // exactly one whitespace byte ends the header
    let payload = &bytes[pos + 1..];
    let n = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| bad("PFM dimensions overflow"))?;
    if payload.len() != 4 * n {
        return Err(Error::Format(format!("PFM payload has {} bytes, expected {}", payload.len(), 4 * n)));
    }
    let mut r = Raster::filled(width, height, channels, 0.0);
    let mut values = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for y in (0..height).rev() {
        for x in 0..width {
            for ch in 0..channels {
                let v = values.next().expect("length checked");
                if v.is_nan() {
                    return Err(bad("NaN in PFM payload"));
                }
                r.set(ch, x, y, v as f64);
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_round_trip() {
        let r = Raster::new(1, 1, 1, vec![2.0]).unwrap();
        let bytes = write_pfm(&r).unwrap();
        assert_eq!(bytes, b"Pf\n1 1\n-1.0\n\x00\x00\x00\x40");
        assert_eq!(read_pfm(&bytes).unwrap(), r);
        assert_eq!(write_pfm(&read_pfm(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn payload_length_and_row_order() {
        let r = Raster::new(3, 2, 3, (0..18).map(|v| v as f64).collect()).unwrap();
        let bytes = write_pfm(&r).unwrap();
        let header = b"PF\n3 2\n-1.0\n".len();
        assert_eq!(bytes.len() - header, 4 * 3 * 2 * 3);
        // first stored pixel is (x=0, y=1): channel values 3, 9, 15
        let first: Vec<f32> = bytes[header..header + 12]
            .chunks(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        assert_eq!(first, vec![3.0, 9.0, 15.0]);
        assert_eq!(read_pfm(&bytes).unwrap(), r);
    }

    #[test]
    fn malformed_input_is_rejected() {
        let good = write_pfm(&Raster::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert!(matches!(read_pfm(&good[..good.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(read_pfm(b"P6\n1 1\n255\n\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(read_pfm(b"Pf\n1 1\n1.0\n\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(read_pfm(b"Pf\n1"), Err(Error::Format(_))));
        let nan = [b"Pf\n1 1\n-1.0\n".as_slice(), &f32::NAN.to_le_bytes()].concat();
        assert!(matches!(read_pfm(&nan), Err(Error::Format(_))));
        let mut extra = good.clone();
        extra.push(0);
        assert!(read_pfm(&extra).is_err());
        assert!(write_pfm(&Raster::new(1, 1, 2, vec![0.0, 0.0]).unwrap()).is_err());
        assert!(write_pfm(&Raster::new(1, 1, 1, vec![f64::INFINITY]).unwrap()).is_err());
    }
}
