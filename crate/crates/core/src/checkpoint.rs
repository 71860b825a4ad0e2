//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MHEN" | u32 version | u32 config_len | config JSON
//! u32 entry_count | entries | payload
//! entry = u16 name_len | name | u8 dtype | u8 kind | u8 rank | rank × u32 dim | u64 offset
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64; offsets are relative to the start of
//! the payload. Running statistics and the frozen Sobel bases are stored with
//! everything else; the bases are verified against their constants on load.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::nn::{SOBEL_H, SOBEL_V};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Real, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MHEN";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

fn dtype_code() -> u8 {
    if std::mem::size_of::<Real>() == 8 {
        DTYPE_F64
    } else {
        DTYPE_F32
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode(config: &NetworkConfig, params: &ParamStore) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(config).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let width = std::mem::size_of::<Real>() as u64;
    let mut offset = 0u64;
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dtype_code());
        out.push(p.kind.code());
        out.push(4);
        for d in p.value.shape().dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += p.value.numel() as u64 * width;
    }
    for (_, p) in params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode a container into its configuration and parameters.
pub fn decode(buf: &[u8]) -> Result<(NetworkConfig, ParamStore)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let n = r.u32()? as usize;
    let config: NetworkConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| bad(format!("config: {e}")))?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad("parameter name is not UTF-8"))?
            .to_string();
        let dtype = r.u8()?;
        let kind = ParamKind::from_code(r.u8()?).ok_or_else(|| bad(format!("{name}: bad kind")))?;
        if r.u8()? != 4 {
            return Err(bad(format!("{name}: rank must be 4")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let offset = r.u64()? as usize;
        entries.push((name, dtype, kind, Shape::from_dims(dims), offset));
    }
    let payload = &buf[r.pos..];
    let mut params = ParamStore::new();
    for (name, dtype, kind, shape, offset) in entries {
        let width = match dtype {
            DTYPE_F32 => 4,
            DTYPE_F64 => 8,
            _ => return Err(bad(format!("{name}: unknown dtype {dtype}"))),
        };
        let bytes = offset
            .checked_add(shape.numel() * width)
            .and_then(|end| payload.get(offset..end))
            .ok_or_else(|| bad(format!("{name}: payload out of range")))?;
        let data = bytes
            .chunks_exact(width)
            .map(|c| match dtype {
                DTYPE_F32 => f32::from_le_bytes(c.try_into().unwrap()) as Real,
                _ => f64::from_le_bytes(c.try_into().unwrap()) as Real,
            })
            .collect();
        let t = Tensor::from_vec(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        params.insert(name, t, kind);
    }
    Ok((config, params))
}

/// Check a decoded store against the layout `net` expects and the Sobel
/// constants.
pub fn verify(net: &Network, params: &ParamStore) -> Result<()> {
    let expected = net.init_params(0);
    for (name, p) in expected.iter() {
        let got = params
            .get(name)
            .map_err(|_| bad(format!("missing parameter {name}")))?;
        if got.value.shape() != p.value.shape() || got.kind != p.kind {
            return Err(bad(format!(
                "{name}: expected {} {:?}, found {} {:?}",
                p.value.shape(),
                p.kind,
                got.value.shape(),
                got.kind
            )));
        }
    }
    if let Some((extra, _)) = params.iter().find(|(n, _)| !expected.contains(n)) {
        return Err(bad(format!("unexpected parameter {extra}")));
    }
    for (name, p) in params.iter() {
        let basis = if name.ends_with(".sobel_h") {
            &SOBEL_H
        } else if name.ends_with(".sobel_v") {
            &SOBEL_V
        } else {
            continue;
        };
        let want = basis.iter().flatten();
        if !p.value.data().iter().eq(want) {
            return Err(bad(format!("{name}: Sobel basis corrupted")));
        }
    }
    Ok(())
}

pub fn save(path: impl AsRef<Path>, config: &NetworkConfig, params: &ParamStore) -> Result<()> {
    let bytes = encode(config, params)?;
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Read a checkpoint and rebuild its network. When `expected` is given, its
/// layout-determining fields must match the stored configuration.
pub fn load(
    path: impl AsRef<Path>,
    expected: Option<&NetworkConfig>,
) -> Result<(Network, ParamStore)> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let (config, params) = decode(&buf)?;
    if let Some(exp) = expected {
        config.check_compatible(exp)?;
    }
    let net = Network::new(config)?;
    verify(&net, &params)?;
    Ok((net, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Network, ParamStore) {
        let net = Network::new(NetworkConfig::desk(64, 8)).unwrap();
        let p = net.init_params(4);
        (net, p)
    }

    #[test]
    fn round_trip_is_exact() {
        let (net, p) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mhen");
        save(&path, &net.config, &p).unwrap();
        let (net2, p2) = load(&path, Some(&net.config)).unwrap();
        assert_eq!(net2.config, net.config);
        assert_eq!(p2, p);
    }

    #[test]
    fn header_layout() {
        let (net, p) = small();
        let b = encode(&net.config, &p).unwrap();
        assert_eq!(&b[..4], b"MHEN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), VERSION);
    }

    #[test]
    fn channel_mismatch_names_both_values() {
        let (net, p) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mhen");
        save(&path, &net.config, &p).unwrap();
        let other = NetworkConfig::desk(64, 16);
        let err = load(&path, Some(&other)).unwrap_err().to_string();
        assert!(err.contains("checkpoint 8") && err.contains("config 16"), "{err}");
    }

    #[test]
    fn corrupted_sobel_rejected() {
        let (net, mut p) = small();
        let name = p.names_with_prefix("ghem.").find(|n| n.ends_with("sobel_h")).unwrap().to_string();
        p.tensor_mut(&name).unwrap().data_mut()[0] = 0.5;
        let (cfg, p2) = decode(&encode(&net.config, &p).unwrap()).unwrap();
        let err = verify(&Network::new(cfg).unwrap(), &p2).unwrap_err().to_string();
        assert!(err.contains("Sobel"), "{err}");
    }

    #[test]
    fn truncation_and_bad_magic_rejected() {
        let (net, p) = small();
        let b = encode(&net.config, &p).unwrap();
        assert!(decode(&b[..b.len() - 3]).is_err());
        let mut m = b.clone();
        m[0] = b'X';
        assert!(decode(&m).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn missing_parameter_rejected() {
        let (net, p) = small();
        let mut q = ParamStore::new();
        for (n, v) in p.iter().skip(1) {
            q.insert(n, v.value.clone(), v.kind);
        }
        assert!(verify(&net, &q).unwrap_err().to_string().contains("missing"));
    }
}
