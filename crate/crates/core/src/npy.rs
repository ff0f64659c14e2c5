//! Reading and writing the NumPy `.npy` format.
//!
//! Writes version 1.0, C order, with `<f8` for floats and `|u1` for labels.
//! The header dict is padded with spaces so the data starts on a 64-byte
//! boundary and ends in `\n`, which is what `numpy.save` produces. Reading
//! also accepts versions 2.0/3.0 and the common integer/float descriptors,
//! converting them to `f64`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor5};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq)]
pub enum NpyData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            shape,
            data: NpyData::F64(data),
        }
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        Self {
            shape,
            data: NpyData::U8(data),
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            NpyData::F64(v) => v.len(),
            NpyData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values as `f64`, converting labels.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            NpyData::F64(v) => v.clone(),
            NpyData::U8(v) => v.iter().map(|&b| b as f64).collect(),
        }
    }

    /// Values as `u8`; float data must hold integers in `0..=255`.
    pub fn to_u8(&self) -> Result<Vec<u8>> {
        match &self.data {
            NpyData::U8(v) => Ok(v.clone()),
            NpyData::F64(v) => v
                .iter()
                .map(|&x| {
                    if x.fract() == 0.0 && (0.0..=255.0).contains(&x) {
                        Ok(x as u8)
                    } else {
                        Err(Error::Npy(format!("value {x} is not a label byte")))
                    }
                })
                .collect(),
        }
    }
}

fn header_text(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_txt = match shape {
        [] => "()".to_string(),
        [d] => format!("({d},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // magic(6) + version(2) + header length(2)
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let mut out = dict.into_bytes();
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    out
}

pub fn write<W: Write>(writer: &mut W, array: &NpyArray) -> io::Result<()> {
    let expected: usize = array.shape.iter().product();
    if expected != array.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("shape {:?} does not match {} values", array.shape, array.len()),
        ));
    }
    let descr = match array.data {
        NpyData::F64(_) => "<f8",
        NpyData::U8(_) => "|u1",
    };
    let header = header_text(descr, &array.shape);
    writer.write_all(MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(header.len() as u16).to_le_bytes())?;
    writer.write_all(&header)?;
    match &array.data {
        NpyData::F64(v) => {
            let mut buf = Vec::with_capacity(v.len() * 8);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            writer.write_all(&buf)?;
        }
        NpyData::U8(v) => writer.write_all(v)?,
    }
    Ok(())
}

pub fn to_bytes(array: &NpyArray) -> Vec<u8> {
    let mut out = Vec::new();
    write(&mut out, array).expect("writing to a Vec cannot fail");
    out
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Float,
    Int,
    UInt,
    Bool,
}

#[derive(Clone, Copy, Debug)]
struct Descr {
    little: bool,
    kind: Kind,
    size: usize,
}

fn parse_descr(s: &str) -> Result<Descr> {
    let bytes = s.as_bytes();
    if bytes.len() < 3 {
        return Err(Error::Npy(format!("unsupported descr '{s}'")));
    }
    let little = match bytes[0] {
        b'<' | b'|' | b'=' => true,
        b'>' => false,
        _ => return Err(Error::Npy(format!("unsupported descr '{s}'"))),
    };
    let kind = match bytes[1] {
        b'f' => Kind::Float,
        b'i' => Kind::Int,
        b'u' => Kind::UInt,
        b'b' => Kind::Bool,
        _ => return Err(Error::Npy(format!("unsupported descr '{s}'"))),
    };
    let size: usize = s[2..]
        .parse()
        .map_err(|_| Error::Npy(format!("unsupported descr '{s}'")))?;
    let ok = match kind {
        Kind::Float => matches!(size, 4 | 8),
        Kind::Int | Kind::UInt => matches!(size, 1 | 2 | 4 | 8),
        Kind::Bool => size == 1,
    };
    if !ok {
        return Err(Error::Npy(format!("unsupported descr '{s}'")));
    }
    Ok(Descr { little, kind, size })
}

/// Value of `'key': ...` in the header dict, up to the next top-level comma.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let needle = format!("'{key}'");
    let start = dict
        .find(&needle)
        .ok_or_else(|| Error::Npy(format!("header lacks '{key}'")))?
        + needle.len();
    let rest = dict[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::Npy(format!("malformed header near '{key}'")))?
        .trim_start();
    let mut depth = 0usize;
    for (idx, ch) in rest.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' | '}' if depth == 0 => return Ok(rest[..idx].trim()),
            _ => {}
        }
    }
    Err(Error::Npy(format!("malformed header near '{key}'")))
}

fn parse_header(dict: &str) -> Result<(Descr, Vec<usize>)> {
    let descr = dict_value(dict, "descr")?;
    let descr = parse_descr(descr.trim_matches(|c| c == '\'' || c == '"'))?;
    match dict_value(dict, "fortran_order")? {
        "False" => {}
        "True" => return Err(Error::Npy("fortran_order arrays are not supported".into())),
        other => return Err(Error::Npy(format!("bad fortran_order '{other}'"))),
    }
    let shape_txt = dict_value(dict, "shape")?;
    let inner = shape_txt
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Npy(format!("bad shape '{shape_txt}'")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::Npy(format!("bad shape '{shape_txt}'"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((descr, shape))
}

pub fn read<R: Read>(reader: &mut R) -> Result<NpyArray> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Npy(e.to_string()))?;
    from_bytes(&bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Npy("missing magic string".into()));
    }
    let (header_len, header_start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Npy("truncated header".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(Error::Npy(format!("unsupported version {v}"))),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(Error::Npy("truncated header".into()));
    }
    let dict = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| Error::Npy("header is not text".into()))?;
    let (descr, shape) = parse_header(dict)?;
    let count: usize = shape.iter().product();
    let payload = &bytes[data_start..];
    if payload.len() != count * descr.size {
        return Err(Error::Npy(format!(
            "expected {} data bytes for shape {shape:?}, found {}",
            count * descr.size,
            payload.len()
        )));
    }
    if let (Kind::UInt, 1) = (descr.kind, descr.size) {
        return Ok(NpyArray::u8(shape, payload.to_vec()));
    }
    let data = payload
        .chunks_exact(descr.size)
        .map(|chunk| decode(chunk, descr))
        .collect();
    Ok(NpyArray::f64(shape, data))
}

fn decode(chunk: &[u8], d: Descr) -> f64 {
    let mut buf = [0u8; 8];
    buf[..d.size].copy_from_slice(chunk);
    if !d.little {
        buf[..d.size].reverse();
    }
    match (d.kind, d.size) {
        (Kind::Float, 8) => f64::from_le_bytes(buf),
        (Kind::Float, 4) => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        (Kind::Bool, _) => (buf[0] != 0) as u8 as f64,
        (Kind::UInt, 1) => buf[0] as f64,
        (Kind::UInt, 2) => u16::from_le_bytes([buf[0], buf[1]]) as f64,
        (Kind::UInt, 4) => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        (Kind::UInt, _) => u64::from_le_bytes(buf) as f64,
        (Kind::Int, 1) => buf[0] as i8 as f64,
        (Kind::Int, 2) => i16::from_le_bytes([buf[0], buf[1]]) as f64,
        (Kind::Int, 4) => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        (Kind::Int, _) => i64::from_le_bytes(buf) as f64,
        (Kind::Float, _) => unreachable!("validated in parse_descr"),
    }
}

pub fn save(path: &Path, array: &NpyArray) -> Result<()> {
    fs::write(path, to_bytes(array)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NpyArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Npy(msg) => Error::Npy(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn tensor_to_npy(t: &Tensor5) -> NpyArray {
    NpyArray::f64(t.shape().dims().to_vec(), t.data().to_vec())
}

pub fn npy_to_tensor(a: &NpyArray) -> Result<Tensor5> {
    let shape = Shape5::from_slice(&a.shape)?;
    Tensor5::from_vec(shape, a.to_f64())
}

pub fn save_tensor(path: &Path, t: &Tensor5) -> Result<()> {
    save(path, &tensor_to_npy(t))
}

pub fn load_tensor(path: &Path) -> Result<Tensor5> {
    npy_to_tensor(&load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_aligned_and_terminated() {
        for shape in [vec![], vec![3], vec![2, 3], vec![1, 16, 16, 16, 4], vec![123456, 7]] {
            let h = header_text("<f8", &shape);
            assert_eq!((10 + h.len()) % 64, 0);
            assert_eq!(*h.last().unwrap(), b'\n');
        }
    }

    #[test]
    fn known_bytes_for_small_array() {
        let bytes = to_bytes(&NpyArray::f64(vec![2], vec![1.0, -2.5]));
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        assert_eq!(u16::from_le_bytes([bytes[8], bytes[9]]), 118);
        let header = std::str::from_utf8(&bytes[10..128]).unwrap();
        assert!(header.starts_with("{'descr': '<f8', 'fortran_order': False, 'shape': (2,), }"));
        assert_eq!(&bytes[128..136], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 144);
    }

    #[test]
    fn u8_roundtrip() {
        let a = NpyArray::u8(vec![2, 2], vec![0, 1, 2, 4]);
        let b = from_bytes(&to_bytes(&a)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reads_other_descriptors() {
        let dict = "{'shape': (3,), 'fortran_order': False, 'descr': '<i2'}";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        for v in [-3i16, 0, 700] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let a = from_bytes(&bytes).unwrap();
        assert_eq!(a.shape, vec![3]);
        assert_eq!(a.to_f64(), vec![-3.0, 0.0, 700.0]);
    }

    #[test]
    fn rejects_fortran_and_truncation() {
        let dict = "{'descr': '<f8', 'fortran_order': True, 'shape': (1,), }";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.extend_from_slice(&0f64.to_le_bytes());
        assert!(from_bytes(&bytes).is_err());

        let good = to_bytes(&NpyArray::f64(vec![2], vec![1.0, 2.0]));
        assert!(from_bytes(&good[..good.len() - 1]).is_err());
        assert!(from_bytes(b"not npy at all").is_err());
    }
}
