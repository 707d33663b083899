//! Binary PPM (P6, 8-bit) encoding and a small validating reader.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("not a P6 ppm file")]
    BadMagic,
    #[error("malformed header")]
    BadHeader,
    #[error("pixel payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// Encode interleaved 8-bit RGB rows as P6.
pub fn encode(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width as usize * height as usize * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Parse a P6 file back into (width, height, rgb). Rejects truncated
/// payloads, which is what makes atomic frame writes checkable.
pub fn parse(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), PpmError> {
    if !bytes.starts_with(b"P6") {
        return Err(PpmError::BadMagic);
    }
    // header: magic, width, height, maxval, single whitespace, then payload
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(&bytes[start..pos]);
    }
    if fields.len() < 3 || pos >= bytes.len() {
        return Err(PpmError::BadHeader);
    }
    pos += 1; // the single whitespace after maxval
    let parse_u32 = |f: &[u8]| -> Result<u32, PpmError> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PpmError::BadHeader)
    };
    let width = parse_u32(fields[0])?;
    let height = parse_u32(fields[1])?;
    let maxval = parse_u32(fields[2])?;
    if maxval != 255 {
        return Err(PpmError::BadHeader);
    }
    let expected = width as usize * height as usize * 3;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Ok((width, height, payload[..expected].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8).collect();
        let bytes = encode(3, 2, &rgb);
        let (w, h, back) = parse(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, rgb);
    }

    #[test]
    fn truncated_payload_rejected() {
        let rgb = vec![7u8; 27];
        let mut bytes = encode(3, 3, &rgb);
        bytes.truncate(bytes.len() - 5);
        assert!(matches!(parse(&bytes), Err(PpmError::Truncated { .. })));
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(parse(b"P3\n1 1\n255\n000"), Err(PpmError::BadMagic)));
    }
}
