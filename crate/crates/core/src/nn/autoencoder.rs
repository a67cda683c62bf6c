//! Mirrored autoencoders built on [`MlpModel`].

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpModel};
use super::train::{train_regression, Split, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeArchitecture {
    /// Hidden widths `max(1000, 2d), max(150, 2d), …`; a two-layer encoder
    /// uses a single `max(150, 2d)` hidden layer.
    Narrow,
    /// Hidden widths equally spaced between input and latent width.
    Wide,
}

/// Encoder widths from input to latent inclusive, for `n_layers` linear
/// layers.
pub fn encoder_dims(input: usize, latent: usize, n_layers: usize, arch: AeArchitecture) -> Vec<usize> {
    let hidden: Vec<usize> = match (arch, n_layers) {
        (_, 0 | 1) => Vec::new(),
        (AeArchitecture::Narrow, 2) => vec![150.max(2 * latent)],
        (AeArchitecture::Narrow, n) => std::iter::once(1000.max(2 * latent))
            .chain(std::iter::repeat_n(150.max(2 * latent), n - 2))
            .collect(),
        (AeArchitecture::Wide, n) => (1..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                (input as f64 + t * (latent as f64 - input as f64)).round() as usize
            })
            .collect(),
    };
    std::iter::once(input)
        .chain(hidden)
        .chain(std::iter::once(latent))
        .collect()
}

/// ReLU autoencoder whose decoder mirrors the encoder; the bottleneck is
/// the output of the last encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub model: MlpModel<f32>,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        latent: usize,
        n_layers: usize,
        arch: AeArchitecture,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Argument("an encoder needs at least one layer".into()));
        }
        let enc = encoder_dims(input, latent, n_layers, arch);
        let dims: Vec<usize> = enc.iter().chain(enc.iter().rev().skip(1)).copied().collect();
        let model = MlpModel::new(&dims, Activation::Relu, Activation::Identity, dropout, rng)?;
        Ok(Autoencoder { model })
    }

    pub fn from_model(model: MlpModel<f32>) -> Result<Self> {
        let dims = model.layer_dims();
        let n = dims.len() - 1;
        if !n.is_multiple_of(2) || dims.first() != dims.last() {
            return Err(Error::Argument(format!(
                "layer dims {dims:?} do not form a mirrored autoencoder"
            )));
        }
        Ok(Autoencoder { model })
    }

    pub fn encoder_layers(&self) -> usize {
        self.model.layers().len() / 2
    }

    pub fn latent_dim(&self) -> usize {
        self.model.layers()[self.encoder_layers() - 1].output_dim()
    }

    pub fn encode(&self, x: ArrayView2<f32>) -> Result<Array2<f32>> {
        self.model.predict_layers(x, self.encoder_layers())
    }

    /// Maps latent codes back to the input space.
    pub fn decode(&self, z: ArrayView2<f32>) -> Result<Array2<f32>> {
        self.model.predict_from(z, self.encoder_layers())
    }

    pub fn reconstruct(&self, x: ArrayView2<f32>) -> Result<Array2<f32>> {
        self.model.predict(x)
    }

    pub fn train(
        self,
        train: ArrayView2<f32>,
        val: ArrayView2<f32>,
        cfg: &TrainConfig,
    ) -> Result<(Autoencoder, TrainOutcome<()>)> {
        let out = train_regression(self.model, Split::new(train, train), Split::new(val, val), cfg)?;
        let stats = TrainOutcome {
            model: (),
            history: out.history,
            best_epoch: out.best_epoch,
            stopped_early: out.stopped_early,
        };
        Ok((Autoencoder { model: out.model }, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decode_of_encode_is_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ae = Autoencoder::new(7, 3, 2, AeArchitecture::Wide, 0.0, &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 7), |(i, j)| (i * 7 + j) as f32 / 10.0);
        let z = ae.encode(x.view()).unwrap();
        assert_eq!(ae.decode(z.view()).unwrap(), ae.reconstruct(x.view()).unwrap());
        assert!(ae.decode(x.view()).is_err());
    }

    #[test]
    fn narrow_layouts() {
        assert_eq!(encoder_dims(20000, 20, 2, AeArchitecture::Narrow), vec![20000, 150, 20]);
        assert_eq!(encoder_dims(20000, 100, 2, AeArchitecture::Narrow), vec![20000, 200, 100]);
        assert_eq!(
            encoder_dims(20000, 100, 4, AeArchitecture::Narrow),
            vec![20000, 1000, 200, 200, 100]
        );
        assert_eq!(encoder_dims(5, 4, 1, AeArchitecture::Narrow), vec![5, 4]);
    }

    #[test]
    fn wide_layouts_are_equidistant() {
        assert_eq!(encoder_dims(2000, 100, 2, AeArchitecture::Wide), vec![2000, 1050, 100]);
        assert_eq!(encoder_dims(1000, 100, 3, AeArchitecture::Wide), vec![1000, 700, 400, 100]);
    }

    #[test]
    fn mirrored_model_and_bottleneck() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ae = Autoencoder::new(30, 4, 2, AeArchitecture::Wide, 0.0, &mut rng).unwrap();
        assert_eq!(ae.model.layer_dims(), vec![30, 17, 4, 17, 30]);
        assert_eq!(ae.latent_dim(), 4);
        let z = ae.encode(Array2::ones((3, 30)).view()).unwrap();
        assert_eq!(z.dim(), (3, 4));
        assert!(z.iter().all(|&v| v >= 0.0));
        assert!(Autoencoder::from_model(ae.model.clone()).is_ok());
    }
}
