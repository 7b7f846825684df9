//! Bit-exact file formats: ESTF tensors, binary PPM images, CSV reports.
//!
//! ESTF layout (all integers little-endian):
//! magic `ESTF` (4 bytes), version u16, dtype u8 (0=f32, 1=f64, 2=u8, 3=u32),
//! ndim u8, dims as ndim u32 values, then the row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::RgbImage;

const MAGIC: &[u8; 4] = b"ESTF";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U8(_) => 2,
            TensorData::U32(_) => 3,
        }
    }

    fn elem_size(code: u8) -> Result<usize> {
        match code {
            0 => Ok(4),
            1 => Ok(8),
            2 => Ok(1),
            3 => Ok(4),
            c => Err(Error::UnsupportedDtype(c)),
        }
    }
}

/// An n-dimensional array with explicit dims, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Self {
        let count: usize = dims.iter().map(|&d| d as usize).product();
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be > 0");
        assert_eq!(count, data.len(), "dims {:?} do not match payload", dims);
        Tensor { dims, data }
    }

    pub fn f32(dims: Vec<u32>, data: Vec<f32>) -> Self {
        Tensor::new(dims, TensorData::F32(data))
    }

    pub fn f64(dims: Vec<u32>, data: Vec<f64>) -> Self {
        Tensor::new(dims, TensorData::F64(data))
    }

    pub fn u8(dims: Vec<u32>, data: Vec<u8>) -> Self {
        Tensor::new(dims, TensorData::U8(data))
    }

    pub fn u32(dims: Vec<u32>, data: Vec<u32>) -> Self {
        Tensor::new(dims, TensorData::U32(data))
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + 4 * tensor.dims.len() + tensor.data.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(tensor.data.dtype_code());
    buf.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    match &tensor.data {
        TensorData::F32(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F64(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => buf.extend_from_slice(v),
        TensorData::U32(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header_err = |detail: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 8 {
        return Err(header_err("file shorter than fixed header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(header_err("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(header_err(&format!("unsupported version {version}")));
    }
    let dtype = bytes[6];
    let ndim = bytes[7] as usize;
    let dims_end = 8 + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(header_err("truncated dims"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 8 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if d == 0 {
            return Err(header_err("zero dim"));
        }
        dims.push(d);
    }
    let count: usize = dims.iter().map(|&d| d as usize).product();
    let elem = TensorData::elem_size(dtype)?;
    let expected = count * elem;
    let payload = &bytes[dims_end..];
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    let data = match dtype {
        0 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        1 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        2 => TensorData::U8(payload.to_vec()),
        3 => TensorData::U32(
            payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        c => return Err(Error::UnsupportedDtype(c)),
    };
    Ok(Tensor { dims, data })
}

/// Write a binary PPM (P6). Linear values are clamped to [0,1] and quantized.
pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(20 + image.data.len());
    write!(buf, "P6\n{} {}\n255\n", image.width, image.height).expect("write to vec");
    for &v in &image.data {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header_err = |detail: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    // Canonical header only: "P6\n<w> <h>\n255\n".
    if !bytes.starts_with(b"P6\n") {
        return Err(header_err("expected P6"));
    }
    let mut pos = 3;
    let dims_end = bytes[pos..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err("missing dims line"))?
        + pos;
    let dims_line =
        std::str::from_utf8(&bytes[pos..dims_end]).map_err(|_| header_err("non-utf8 dims"))?;
    let mut parts = dims_line.split_whitespace();
    let width: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err("bad width"))?;
    let height: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err("bad height"))?;
    if parts.next().is_some() {
        return Err(header_err("trailing tokens in dims line"));
    }
    pos = dims_end + 1;
    if !bytes[pos..].starts_with(b"255\n") {
        return Err(header_err("expected maxval 255"));
    }
    pos += 4;
    let expected = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(RgbImage {
        width,
        height,
        data,
    })
}

/// Write a CSV with a header row. Rows are written as-is; callers format values.
pub fn write_csv<I, R>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    let path = path.as_ref();
    let mut buf = String::new();
    buf.push_str(&header.join(","));
    buf.push('\n');
    for row in rows {
        buf.push_str(&row.as_ref().join(","));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir_all(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn f64_2x2_round_trip() {
        let dir = tmp();
        let path = dir.path().join("t.estf");
        let t = Tensor::f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        write_tensor(&path, &t).unwrap();
        let bytes = fs::read(&path).unwrap();
        // 8 header bytes, 8 dim bytes, 32 payload bytes.
        assert_eq!(bytes.len(), 8 + 8 + 32);
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn zero_filled_f32() {
        let dir = tmp();
        let path = dir.path().join("z.estf");
        write_tensor(&path, &Tensor::f32(vec![1, 1], vec![0.0])).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0u8, 0, 0, 0]);
    }

    #[test]
    fn u32_range_round_trip() {
        let dir = tmp();
        let path = dir.path().join("r.estf");
        let t = Tensor::u32(vec![3, 4, 5], (0..60).collect());
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn ppm_round_trip_identical_bytes() {
        let dir = tmp();
        let a = dir.path().join("a.ppm");
        let b = dir.path().join("b.ppm");
        let img = RgbImage {
            width: 2,
            height: 2,
            data: vec![
                0.0, 0.5, 1.0, 0.25, 0.75, 0.1, 0.9, 0.3, 0.6, 1.0, 0.0, 0.5,
            ],
        };
        write_ppm(&a, &img).unwrap();
        let back = read_ppm(&a).unwrap();
        write_ppm(&b, &back).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn ppm_header_defines_2x2() {
        let dir = tmp();
        let path = dir.path().join("h.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[10u8; 12]);
        fs::write(&path, bytes).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tmp();
        let path = dir.path().join("trunc.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[10u8; 7]);
        fs::write(&path, bytes).unwrap();
        let err = read_ppm(&path).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");

        let tpath = dir.path().join("trunc.estf");
        let t = Tensor::f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        write_tensor(&tpath, &t).unwrap();
        let mut bytes = fs::read(&tpath).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&tpath, bytes).unwrap();
        let err = read_tensor(&tpath).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tmp();
        let path = dir.path().join("bad.estf");
        fs::write(&path, b"NOPE\x01\x00\x00\x01").unwrap();
        assert!(read_tensor(&path).is_err());
    }

    proptest! {
        #[test]
        fn tensor_round_trip_bitwise(
            dims in prop::collection::vec(1u32..6, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let count: usize = dims.iter().map(|&d| d as usize).product();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..count).map(|_| rng.gen_range(-1e6..1e6)).collect();
            let dir = tmp();
            let path = dir.path().join("p.estf");
            let t = Tensor::f64(dims, data);
            write_tensor(&path, &t).unwrap();
            let back = read_tensor(&path).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
