//! `MLP1` model checkpoints.
//!
//! Layout (little-endian): magic `MLP1`, `u32` layer count `L`, `L + 1`
//! `u32` layer dims, then per layer the row-major `f32` weights (out × in)
//! followed by the `f32` bias, then `L` activation bytes
//! (0 = identity, 1 = ReLU) and the `f32` dropout rate.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Activation, DenseLayer, MlpModel};
use crate::error::{Error, Result};
use crate::io::binary::{read_exact_or, ByteReader, ByteWriter};

pub const MLP_MAGIC: &[u8; 4] = b"MLP1";

pub fn write_mlp<W: Write>(model: &MlpModel<f32>, out: W) -> Result<()> {
    let mut w = ByteWriter::new(out);
    w.bytes(MLP_MAGIC)?;
    let dims = model.layer_dims();
    w.u32(model.layers().len() as u32)?;
    for d in &dims {
        w.u32(*d as u32)?;
    }
    for layer in model.layers() {
        w.f32s(layer.weights.iter().copied())?;
        w.f32s(layer.bias.iter().copied())?;
    }
    for layer in model.layers() {
        w.u8(activation_flag(layer.activation))?;
    }
    w.f32(model.dropout() as f32)?;
    w.finish()
}

pub fn read_mlp<R: Read>(input: R) -> Result<MlpModel<f32>> {
    let mut r = ByteReader::new(input);
    let magic: [u8; 4] = read_exact_or(&mut r, "magic")?;
    if &magic != MLP_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected MLP1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let dims = (0..=n_layers).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let mut params = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let weights = Array2::from_shape_vec((dims[i + 1], dims[i]), r.f32s(dims[i + 1] * dims[i])?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let bias = Array1::from(r.f32s(dims[i + 1])?);
        params.push((weights, bias));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (weights, bias) in params {
        let activation = flag_activation(r.u8()?)?;
        layers.push(DenseLayer {
            weights,
            bias,
            activation,
        });
    }
    let dropout = r.f32()? as f64;
    MlpModel::from_layers(layers, dropout)
}

pub fn save_mlp(model: &MlpModel<f32>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_mlp(model, std::io::BufWriter::new(file))
}

pub fn load_mlp(path: &Path) -> Result<MlpModel<f32>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_mlp(std::io::BufReader::new(file))
}

fn activation_flag(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
    }
}

fn flag_activation(flag: u8) -> Result<Activation> {
    match flag {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Relu),
        other => Err(Error::Format(format!("unknown activation flag {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model =
            MlpModel::<f32>::new(&[5, 7, 3, 5], Activation::Relu, Activation::Identity, 0.25, &mut rng)
                .unwrap();
        let mut buf = Vec::new();
        write_mlp(&model, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MLP1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        let back = read_mlp(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model =
            MlpModel::<f32>::new(&[2, 2], Activation::Relu, Activation::Identity, 0.0, &mut rng)
                .unwrap();
        let mut buf = Vec::new();
        write_mlp(&model, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_mlp(buf.as_slice()).is_err());
    }
}
