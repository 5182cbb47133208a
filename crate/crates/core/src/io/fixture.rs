//! Golden fixture container: `"M2UF"`, u32 version, u32 tensor count, then
//! per tensor a u32 name length, the UTF-8 name, a u8 rank, `rank` u32
//! dimensions and the raw f32 values. No padding.

use std::path::Path;

use super::binary::{element_count, put_f32s, put_u32, Reader};
use super::NamedTensor;
use crate::error::{Error, Result};

pub const FIXTURE_MAGIC: [u8; 4] = *b"M2UF";
const FIXTURE_VERSION: u32 = 1;

pub fn encode_fixture(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&FIXTURE_MAGIC);
    put_u32(&mut out, FIXTURE_VERSION);
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        let expected: usize = t.dims.iter().product();
        if expected != t.data.len() || t.dims.len() > u8::MAX as usize {
            return Err(Error::invalid(format!(
                "{}: dims do not match data",
                t.name
            )));
        }
        put_u32(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for d in &t.dims {
            put_u32(&mut out, *d as u32);
        }
        put_f32s(&mut out, &t.data);
    }
    Ok(out)
}

pub fn decode_fixture(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != FIXTURE_MAGIC {
        return Err(r.fail("bad magic, expected M2UF"));
    }
    let version = r.u32()?;
    if version != FIXTURE_VERSION {
        return Err(r.fail(format!("unsupported fixture version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = r.string(len)?;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = element_count(&dims, &r)?;
        let data = r.f32s(n)?;
        out.push(NamedTensor { name, dims, data });
    }
    if r.remaining() != 0 {
        return Err(r.fail(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

pub fn write_fixture(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    super::write_atomic(path.as_ref(), &encode_fixture(tensors)?)
}

pub fn read_fixture(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_fixture(&bytes, path)
}
