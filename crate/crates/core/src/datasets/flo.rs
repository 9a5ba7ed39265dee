use std::fs;
use std::io::Write as _;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array3;

use super::DataError;
use crate::nn::Map;

/// Sentinel float opening every Middlebury flow file.
pub const FLO_MAGIC: f32 = 202021.25;

const HEADER_BYTES: usize = 12;

/// Reads a Middlebury `.flo` file: little-endian float magic, int32 width,
/// int32 height, then row-major interleaved float32 `(u, v)` pairs. Returns
/// an `(h, w, 2)` field.
pub fn read_flo(path: &Path) -> Result<Map<f32>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 4 {
        return Err(DataError::TruncatedFile { expected: HEADER_BYTES, found: bytes.len() });
    }
    let magic = LittleEndian::read_f32(&bytes[0..4]);
    if magic != FLO_MAGIC {
        return Err(DataError::MagicMismatch(magic));
    }
    if bytes.len() < HEADER_BYTES {
        return Err(DataError::TruncatedFile { expected: HEADER_BYTES, found: bytes.len() });
    }
    let w = LittleEndian::read_i32(&bytes[4..8]);
    let h = LittleEndian::read_i32(&bytes[8..12]);
    if w <= 0 || h <= 0 {
        return Err(DataError::BadHeader(format!("non-positive dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = HEADER_BYTES + 8 * w * h;
    if bytes.len() != expected {
        return Err(DataError::TruncatedFile { expected, found: bytes.len() });
    }
    let mut flow = Array3::zeros((h, w, 2));
    {
        let out = flow.as_slice_mut().expect("standard layout");
        for (i, v) in out.iter_mut().enumerate() {
            *v = LittleEndian::read_f32(&bytes[HEADER_BYTES + 4 * i..HEADER_BYTES + 4 * i + 4]);
        }
    }
    Ok(flow)
}

/// Writes a flow field in the layout accepted by [`read_flo`]. The field
/// must be finite-valued; the round trip is bit-exact.
pub fn write_flo(flow: &Map<f32>, path: &Path) -> Result<(), DataError> {
    let (h, w, c) = flow.dim();
    if c != 2 {
        return Err(DataError::Malformed(format!("flow must have 2 channels, got {c}")));
    }
    for ((y, x, _), v) in flow.indexed_iter() {
        if !v.is_finite() {
            return Err(DataError::NonFiniteFlow(y, x));
        }
    }
    let mut bytes = Vec::with_capacity(HEADER_BYTES + 8 * w * h);
    bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    bytes.extend_from_slice(&(w as i32).to_le_bytes());
    bytes.extend_from_slice(&(h as i32).to_le_bytes());
    for &v in flow.as_slice().expect("standard layout") {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| DataError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn hand_assembled_1x2_fixture() {
        // 1 row, 2 columns, (u,v) = (1.5, -2.0), (0.0, 3.25). Payload bytes
        // written out by hand from the IEEE-754 single encodings.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        bytes.extend_from_slice(&[2, 0, 0, 0]); // width  = 2
        bytes.extend_from_slice(&[1, 0, 0, 0]); // height = 1
        bytes.extend_from_slice(&[0x00, 0x00, 0xC0, 0x3F]); // 1.5
        bytes.extend_from_slice(&[0x00, 0x00, 0x00, 0xC0]); // -2.0
        bytes.extend_from_slice(&[0x00, 0x00, 0x00, 0x00]); // 0.0
        bytes.extend_from_slice(&[0x00, 0x00, 0x50, 0x40]); // 3.25
        let dir = tmp();
        let path = dir.path().join("hand.flo");
        std::fs::write(&path, &bytes).unwrap();

        let flow = read_flo(&path).unwrap();
        assert_eq!(flow.dim(), (1, 2, 2));
        assert_eq!(flow[(0, 0, 0)], 1.5);
        assert_eq!(flow[(0, 0, 1)], -2.0);
        assert_eq!(flow[(0, 1, 0)], 0.0);
        assert_eq!(flow[(0, 1, 1)], 3.25);
    }

    #[test]
    fn zero_magic_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("bad.flo");
        std::fs::write(&path, 0.0f32.to_le_bytes()).unwrap();
        match read_flo(&path) {
            Err(DataError::MagicMismatch(got)) => assert_eq!(got, 0.0),
            other => panic!("expected MagicMismatch, got {other:?}"),
        }
    }

    #[test]
    fn wrong_byte_count_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("short.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        bytes.extend_from_slice(&[2, 0, 0, 0]);
        bytes.extend_from_slice(&[2, 0, 0, 0]);
        bytes.extend_from_slice(&[0u8; 8]); // 2x2 needs 32 payload bytes
        std::fs::write(&path, &bytes).unwrap();
        match read_flo(&path) {
            Err(DataError::TruncatedFile { expected, found }) => {
                assert_eq!(expected, 12 + 32);
                assert_eq!(found, 20);
            }
            other => panic!("expected TruncatedFile, got {other:?}"),
        }
    }

    #[test]
    fn one_by_one_zero_flow_is_twenty_bytes() {
        let dir = tmp();
        let path = dir.path().join("tiny.flo");
        write_flo(&Array3::zeros((1, 1, 2)), &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 20);
    }

    #[test]
    fn nan_is_rejected_before_write() {
        let dir = tmp();
        let path = dir.path().join("nan.flo");
        let mut flow = Array3::zeros((2, 2, 2));
        flow[(1, 0, 1)] = f32::NAN;
        match write_flo(&flow, &path) {
            Err(DataError::NonFiniteFlow(1, 0)) => {}
            other => panic!("expected NonFiniteFlow, got {other:?}"),
        }
        assert!(!path.exists(), "nothing may be written on rejection");
    }

    #[test]
    fn random_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dir = tmp();
        for case in 0..20 {
            let h = rng.random_range(1..9);
            let w = rng.random_range(1..9);
            let flow =
                Array3::from_shape_fn((h, w, 2), |_| rng.random_range(-1e4f32..1e4) * 1.37);
            let path = dir.path().join(format!("rt{case}.flo"));
            write_flo(&flow, &path).unwrap();
            let back = read_flo(&path).unwrap();
            assert_eq!(back.dim(), flow.dim());
            for (a, b) in flow.iter().zip(back.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
