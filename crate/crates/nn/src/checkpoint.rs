//! Parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GWCK"  u32 version  u32 count
//! count × { u16 name_len, name bytes (UTF-8), u8 rank, u32 dims[rank], f32 data[∏dims] }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, ParamStore, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"GWCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ParamStore<f32>, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("parameter name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::InvalidArgument(format!("rank too large for {name}")))?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension too large in {name}")))?;
            out.write_all(&d.to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(input)?))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore<f32>> {
    if &read_array::<4, _>(&mut input)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_array(&mut input)?) as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name).map_err(|_| Error::Format("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("name is not UTF-8".into()))?;
        let [rank] = read_array::<1, _>(&mut input)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u32(&mut input)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f32::from_le_bytes(read_array(&mut input)?));
        }
        params.insert(name, Tensor::from_vec(&shape, data)?).map_err(|e| Error::Format(e.to_string()))?;
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last parameter".into()));
    }
    Ok(params)
}

pub fn save(params: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
