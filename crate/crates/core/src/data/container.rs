//! `WLTENS1` tensor container.
//!
//! ```text
//! WLTENS1\n
//! n=<count> h=<H> w=<W> c=<C> dtype=f32\n
//! <n*H*W*C little-endian f32, examples in id-sorted order>
//! #index\n
//! <id>\t<ordinal>\n   (one line per example)
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, ImageTensor};

pub const TENSOR_MAGIC: &[u8] = b"WLTENS1\n";
const INDEX_MARKER: &[u8] = b"#index\n";

/// Images keyed by id, all of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorContainer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    ids: Vec<String>,
    ordinals: HashMap<String, usize>,
    data: Vec<f32>,
}

impl TensorContainer {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn get(&self, id: &str) -> Option<ImageTensor> {
        let ord = *self.ordinals.get(id)?;
        let len = self.image_len();
        Some(ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.data[ord * len..(ord + 1) * len].to_vec(),
        })
    }
}

fn check_id(id: &str) -> Result<(), DataError> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(DataError::InvalidId(id.to_owned()));
    }
    Ok(())
}

/// Serializes `(id, image)` pairs. Ids must be unique; output is id-sorted.
pub fn encode_tensors<'a, I>(items: I) -> Result<Vec<u8>, DataError>
where
    I: IntoIterator<Item = (&'a str, &'a ImageTensor)>,
{
    let mut items: Vec<(&str, &ImageTensor)> = items.into_iter().collect();
    items.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    if items.windows(2).any(|p| p[0].0 == p[1].0) {
        return Err(DataError::DuplicateId(items.windows(2).find(|p| p[0].0 == p[1].0).unwrap()[0].0.to_owned()));
    }
    let (h, w, c) = items.first().map(|(_, img)| img.dims()).ok_or(DataError::EmptyImage)?;
    let mut out = Vec::with_capacity(64 + items.len() * h * w * c * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    writeln!(out, "n={} h={h} w={w} c={c} dtype=f32", items.len()).expect("vec write");
    for (id, img) in &items {
        check_id(id)?;
        if img.dims() != (h, w, c) || img.pixels.len() != h * w * c {
            return Err(DataError::DimensionMismatch(format!(
                "image {id} is {:?}, container holds {:?}",
                img.dims(),
                (h, w, c)
            )));
        }
        for p in &img.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out.extend_from_slice(INDEX_MARKER);
    for (ord, (id, _)) in items.iter().enumerate() {
        writeln!(out, "{id}\t{ord}").expect("vec write");
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<TensorContainer, DataError> {
    let malformed = |m: &str| DataError::MalformedHeader(m.to_owned());
    let rest = bytes.strip_prefix(TENSOR_MAGIC).ok_or_else(|| malformed("bad magic"))?;
    let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| malformed("missing shape line"))?;
    let line = std::str::from_utf8(&rest[..nl]).map_err(|_| malformed("shape line is not ASCII"))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for f in line.split(' ') {
        let (k, v) = f.split_once('=').ok_or_else(|| malformed("bad shape field"))?;
        fields.insert(k, v);
    }
    let num = |k: &str| -> Result<usize, DataError> {
        fields.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| malformed(&format!("missing or bad {k}")))
    };
    let (n, h, w, c) = (num("n")?, num("h")?, num("w")?, num("c")?);
    if fields.get("dtype") != Some(&"f32") || fields.len() != 5 {
        return Err(malformed("unsupported dtype or extra fields"));
    }
    let payload = &rest[nl + 1..];
    let float_bytes =
        n.checked_mul(h * w * c).and_then(|v| v.checked_mul(4)).ok_or_else(|| malformed("size overflow"))?;
    if payload.len() < float_bytes {
        return Err(DataError::DimensionMismatch(format!(
            "header promises {float_bytes} bytes of pixels, file has {}",
            payload.len()
        )));
    }
    let (raw, index) = payload.split_at(float_bytes);
    let index = index
        .strip_prefix(INDEX_MARKER)
        .ok_or_else(|| DataError::DimensionMismatch("pixel block length does not match header".into()))?;
    let data: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let index = std::str::from_utf8(index).map_err(|_| malformed("index block is not UTF-8"))?;
    let mut ids = vec![String::new(); n];
    let mut ordinals = HashMap::with_capacity(n);
    for line in index.lines() {
        let (id, ord) = line.split_once('\t').ok_or_else(|| malformed("bad index line"))?;
        let ord: usize = ord.parse().map_err(|_| malformed("bad index ordinal"))?;
        if ord >= n || !ids[ord].is_empty() || ordinals.insert(id.to_owned(), ord).is_some() {
            return Err(malformed("inconsistent index block"));
        }
        ids[ord] = id.to_owned();
    }
    if ordinals.len() != n {
        return Err(DataError::DimensionMismatch(format!("index lists {} ids, header says n={n}", ordinals.len())));
    }
    Ok(TensorContainer { height: h, width: w, channels: c, ids, ordinals, data })
}

pub fn write_tensors<'a, I>(path: &Path, items: I) -> Result<(), DataError>
where
    I: IntoIterator<Item = (&'a str, &'a ImageTensor)>,
{
    let bytes = encode_tensors(items)?;
    crate::io_util::write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<TensorContainer, DataError> {
    decode_tensors(&fs::read(path)?)
}
