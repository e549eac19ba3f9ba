//! Little-endian binary persistence for networks, plus the counting reader
//! and primitive helpers shared by every model file in the repo.
//!
//! Network blob layout (all integers little-endian):
//!
//! ```text
//! magic  b"HNET" | version u8 | n_layers u32
//! per layer: in_dim u32 | out_dim u32 | activation u8 (0 relu, 1 identity)
//! per layer: weights f64 x (out*in) | bias f64 x out
//! ```

use super::network::{Activation, Layer, Network};
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const NETWORK_MAGIC: &[u8; 4] = b"HNET";
pub const NETWORK_VERSION: u8 = 1;

/// Reader wrapper that tracks the byte offset for parse errors.
pub struct CountingReader<R: Read> {
    inner: R,
    pub offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    pub fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::parse(at, format!("reading {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }
}

pub fn read_u8<R: Read>(r: &mut CountingReader<R>, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact_at(&mut b, what)?;
    Ok(b[0])
}

pub fn read_u32<R: Read>(r: &mut CountingReader<R>, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact_at(&mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_u64<R: Read>(r: &mut CountingReader<R>, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact_at(&mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f64<R: Read>(r: &mut CountingReader<R>, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact_at(&mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

pub fn expect_magic<R: Read>(r: &mut CountingReader<R>, magic: &[u8; 4]) -> Result<()> {
    let at = r.offset;
    let mut b = [0u8; 4];
    r.read_exact_at(&mut b, "magic")?;
    if &b != magic {
        return Err(Error::parse(
            at,
            format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&b)
            ),
        ));
    }
    Ok(())
}

pub fn expect_version<R: Read>(r: &mut CountingReader<R>, version: u8) -> Result<()> {
    let at = r.offset;
    let v = read_u8(r, "version")?;
    if v != version {
        return Err(Error::parse(
            at,
            format!("unsupported version {v}, expected {version}"),
        ));
    }
    Ok(())
}

/// Length-prefixed byte block (u32 length).
pub fn write_bytes_prefixed<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_bytes_prefixed<R: Read>(r: &mut CountingReader<R>, what: &str) -> Result<Vec<u8>> {
    let len = read_u32(r, what)? as usize;
    if len > 64 * 1024 * 1024 {
        return Err(Error::parse(r.offset, format!("{what}: length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact_at(&mut buf, what)?;
    Ok(buf)
}

pub fn write_network<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(NETWORK_MAGIC)?;
    w.write_all(&[NETWORK_VERSION])?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for layer in &net.layers {
        w.write_all(&(layer.in_dim as u32).to_le_bytes())?;
        w.write_all(&(layer.out_dim as u32).to_le_bytes())?;
        let act = match layer.activation {
            Activation::Relu => 0u8,
            Activation::Identity => 1u8,
        };
        w.write_all(&[act])?;
    }
    for layer in &net.layers {
        for &v in layer.weights.iter().chain(layer.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_network<R: Read>(r: &mut CountingReader<R>) -> Result<Network> {
    expect_magic(r, NETWORK_MAGIC)?;
    expect_version(r, NETWORK_VERSION)?;
    let n_layers = read_u32(r, "layer count")? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::parse(r.offset, format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = read_u32(r, "in_dim")? as usize;
        let out_dim = read_u32(r, "out_dim")? as usize;
        let act = match read_u8(r, "activation")? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            other => {
                return Err(Error::parse(r.offset, format!("unknown activation {other}")))
            }
        };
        if in_dim == 0 || out_dim == 0 || in_dim * out_dim > 16_000_000 {
            return Err(Error::parse(r.offset, "implausible layer shape"));
        }
        shapes.push((in_dim, out_dim, act));
    }
    for win in shapes.windows(2) {
        if win[0].1 != win[1].0 {
            return Err(Error::parse(r.offset, "layer dimensions do not chain"));
        }
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (in_dim, out_dim, activation) in shapes {
        let mut weights = vec![0.0; in_dim * out_dim];
        for v in weights.iter_mut() {
            *v = read_f64(r, "weight")?;
        }
        let mut bias = vec![0.0; out_dim];
        for v in bias.iter_mut() {
            *v = read_f64(r, "bias")?;
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::parse(r.offset, "non-finite parameter"));
        }
        layers.push(Layer {
            weights,
            bias,
            activation,
            in_dim,
            out_dim,
        });
    }
    Ok(Network { layers })
}
