//! Binary checkpoint format ("PRLC"), little-endian throughout.
//!
//! ```text
//! magic "PRLC" | version u32 | n_actions u32 | head kind u8 | atoms u32
//! n_specs u32  | per spec: kind u8, in u32, out u32, activation u8
//! n_layers u32 | per layer: rows u32, cols u32, prunable u8,
//!                weights f64×rows·cols, biases f64×rows, mask u8×rows·cols
//! ```

use std::io::{Read, Write};

use super::{Activation, Head, LayerKind, LayerSpec, MaskedParams, Network, ParamLayer};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRLC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(net.n_actions() as u32).to_le_bytes())?;
    let (kind, atoms) = match net.head() {
        Head::Scalar => (0u8, 1u32),
        Head::Categorical { num_atoms } => (1u8, num_atoms as u32),
    };
    w.write_all(&[kind])?;
    w.write_all(&atoms.to_le_bytes())?;
    w.write_all(&(net.specs().len() as u32).to_le_bytes())?;
    for s in net.specs() {
        let kind = match s.kind {
            LayerKind::Dense => 0u8,
            LayerKind::ResidualBlock => 1u8,
        };
        let act = match s.activation {
            Activation::Identity => 0u8,
            Activation::Relu => 1u8,
        };
        w.write_all(&[kind])?;
        w.write_all(&(s.in_dim as u32).to_le_bytes())?;
        w.write_all(&(s.out_dim as u32).to_le_bytes())?;
        w.write_all(&[act])?;
    }
    w.write_all(&(net.params.layers.len() as u32).to_le_bytes())?;
    for l in &net.params.layers {
        w.write_all(&(l.weight.rows() as u32).to_le_bytes())?;
        w.write_all(&(l.weight.cols() as u32).to_le_bytes())?;
        w.write_all(&[u8::from(l.prunable)])?;
        for x in l.weight.data() {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in &l.bias {
            w.write_all(&x.to_le_bytes())?;
        }
        let mask: Vec<u8> = l.mask.data().iter().map(|&m| u8::from(m != 0.0)).collect();
        w.write_all(&mask)?;
    }
    Ok(())
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n_actions = read_u32(&mut r)? as usize;
    let head = match (read_u8(&mut r)?, read_u32(&mut r)?) {
        (0, _) => Head::Scalar,
        (1, atoms) => Head::Categorical {
            num_atoms: atoms as usize,
        },
        (k, _) => return Err(bad(format!("unknown head kind {k}"))),
    };
    let n_specs = read_u32(&mut r)? as usize;
    let mut specs = Vec::with_capacity(n_specs);
    for _ in 0..n_specs {
        let kind = match read_u8(&mut r)? {
            0 => LayerKind::Dense,
            1 => LayerKind::ResidualBlock,
            k => return Err(bad(format!("unknown layer kind {k}"))),
        };
        let in_dim = read_u32(&mut r)? as usize;
        let out_dim = read_u32(&mut r)? as usize;
        let activation = match read_u8(&mut r)? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            a => return Err(bad(format!("unknown activation {a}"))),
        };
        specs.push(LayerSpec {
            kind,
            in_dim,
            out_dim,
            activation,
        });
    }
    let n_layers = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let prunable = read_u8(&mut r)? != 0;
        let weight = Matrix::new(rows, cols, read_f64s(&mut r, rows * cols)?)?;
        let bias = read_f64s(&mut r, rows)?;
        let mut mask_bytes = vec![0u8; rows * cols];
        r.read_exact(&mut mask_bytes)?;
        if mask_bytes.iter().any(|&b| b > 1) {
            return Err(bad("mask byte outside {0,1}"));
        }
        let mask = Matrix::new(rows, cols, mask_bytes.iter().map(|&b| f64::from(b)).collect())?;
        layers.push(ParamLayer {
            weight,
            bias,
            mask,
            prunable,
        });
    }
    Network::from_parts(specs, MaskedParams { layers }, head, n_actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Arch;
    use crate::rng::RngStream;

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = RngStream::new(1, 1);
        let mut net =
            Network::build(Arch::Residual, 1, 5, 3, Head::Categorical { num_atoms: 7 }, &mut rng)
                .unwrap();
        net.params.layers[2].mask.set(3, 4, 0.0);
        net.params.apply_masks();
        net.set_head_prunable(false);
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PRLC");
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut rng = RngStream::new(1, 2);
        let net = Network::build(Arch::Mlp, 1, 2, 2, Head::Scalar, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(read_checkpoint(&wrong[..]), Err(Error::Format { .. })));
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
