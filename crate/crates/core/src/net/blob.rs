//! Little-endian parameter blob: magic `DQNW`, u32 version, u32 number of
//! layer widths, the widths as u32, then every parameter as f64.

use super::{NetError, QNetwork};

pub const MAGIC: [u8; 4] = *b"DQNW";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &QNetwork) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + net.dims().len() * 4 + net.param_count() * 8);
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((net.dims().len() as u32).to_le_bytes());
    for &d in net.dims() {
        out.extend((d as u32).to_le_bytes());
    }
    for p in net.params() {
        out.extend(p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| NetError::Blob("truncated network blob".into()))?;
        let slice = &self.data[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses one blob from the front of `data`, returning the network and the
/// number of bytes consumed.
pub fn from_bytes(data: &[u8]) -> Result<(QNetwork, usize), NetError> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NetError::Blob("bad network magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NetError::Blob(format!("unsupported network blob version {version}")));
    }
    let n = r.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(NetError::Blob(format!("implausible layer count {n}")));
    }
    let dims = (0..n).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    if dims.iter().any(|&d| d == 0 || d > 1 << 16) {
        return Err(NetError::Blob(format!("implausible layer widths {dims:?}")));
    }
    let count = super::mlp::param_count(&dims);
    let raw = r.take(count * 8)?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = QNetwork::from_params(&dims, params)?;
    Ok((net, r.pos))
}
