//! Convolutional autoencoder whose encoder compresses a slice into a small
//! stack of latent feature maps.

use glioseg_nn::{Conv2dGeom, Graph, Initializer, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;
use crate::training::{adam_step, AdamState, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSpec {
    pub latent_channels: usize,
    /// Number of 2× downsampling stages.
    pub depth: usize,
    pub input_side: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            latent_channels: 8,
            depth: 2,
            input_side: 256,
        }
    }
}

impl AutoencoderSpec {
    pub fn latent_side(&self) -> usize {
        self.input_side >> self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!(
                "autoencoder needs latent_channels >= 1 and depth in 1..=8, got {} / {}",
                self.latent_channels, self.depth
            )));
        }
        if self.input_side == 0 || self.input_side % (1 << self.depth) != 0 {
            return Err(Error::Config(format!(
                "input_side {} is not divisible by 2^{}",
                self.input_side, self.depth
            )));
        }
        Ok(())
    }
}

/// Trained (or freshly initialised) autoencoder. Only the encoder is needed
/// for segmentation; the decoder is kept for reconstruction checks.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub params: ParamStore,
}

fn conv(g: &mut Graph, name: &str, x: Var) -> Result<Var> {
    let w = g.param_named(&format!("{name}.weight"))?;
    let b = g.param_named(&format!("{name}.bias"))?;
    Ok(g.conv2d(x, w, Some(b), Conv2dGeom::same(3))?)
}

impl Autoencoder {
    pub fn new(spec: AutoencoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let l = spec.latent_channels;
        let mut add = |name: String, c_in: usize, c_out: usize| {
            params.insert(format!("{name}.weight"), init.he_normal(&[c_out, c_in, 3, 3], c_in * 9, 1.0));
            params.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        };
        for d in 0..spec.depth {
            add(format!("enc{d}"), if d == 0 { 1 } else { l }, l);
        }
        for d in 0..spec.depth {
            let out = if d + 1 == spec.depth { 1 } else { l };
            add(format!("dec{d}"), l, out);
        }
        Ok(Self { spec, params })
    }

    fn encode_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for d in 0..self.spec.depth {
            let c = conv(g, &format!("enc{d}"), h)?;
            let c = g.relu(c);
            h = g.max_pool2(c)?;
        }
        Ok(h)
    }

    fn reconstruct_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = self.encode_graph(g, x)?;
        for d in 0..self.spec.depth {
            let (_, _, hh, ww) = g.value(h).dims4()?;
            let up = g.resize_bilinear(h, hh * 2, ww * 2)?;
            let c = conv(g, &format!("dec{d}"), up)?;
            h = if d + 1 == self.spec.depth { g.sigmoid(c) } else { g.relu(c) };
        }
        Ok(h)
    }

    fn batch(&self, images: &[&Grid]) -> Result<Tensor> {
        let side = self.spec.input_side;
        let mut data = Vec::with_capacity(images.len() * side * side);
        for img in images {
            if img.channels() != 1 || img.height() != side || img.width() != side {
                return Err(Error::Validation(format!(
                    "autoencoder expects {side}x{side} grayscale, got {}x{}x{}",
                    img.height(),
                    img.width(),
                    img.channels()
                )));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Tensor::from_vec(&[images.len(), 1, side, side], data)?)
    }

    /// Latent maps of one image, shape `(latent_channels, side/2^depth, side/2^depth)`
    /// (as a 4-D tensor with leading batch axis 1).
    pub fn encode(&self, image: &Grid) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let x = g.input(self.batch(&[image])?);
        let z = self.encode_graph(&mut g, x)?;
        Ok(g.value(z).clone())
    }

    pub fn reconstruct(&self, image: &Grid) -> Result<Grid> {
        let mut g = Graph::new(&self.params);
        let x = g.input(self.batch(&[image])?);
        let y = self.reconstruct_graph(&mut g, x)?;
        let side = self.spec.input_side;
        Grid::from_vec(side, side, 1, g.value(y).data().to_vec())
    }

    /// Mean squared reconstruction error over `images`.
    pub fn reconstruction_mse(&self, images: &[Grid]) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Validation("no images to reconstruct".into()));
        }
        let mut mean = 0.0;
        for (i, img) in images.iter().enumerate() {
            let mut g = Graph::new(&self.params);
            let t = self.batch(&[img])?;
            let x = g.input(t.clone());
            let y = self.reconstruct_graph(&mut g, x)?;
            let l = g.mse(y, &t)?;
            mean += (g.value(l).item() - mean) / (i + 1) as f64;
        }
        Ok(mean)
    }
}

/// Trains under mean-squared reconstruction loss with Adam, using the epoch,
/// batch size, optimiser settings and seed of `config` (augmentation is not
/// applied). `epochs = 0` returns the initial weights.
pub fn train_autoencoder(images: &[Grid], spec: AutoencoderSpec, config: &TrainConfig) -> Result<Autoencoder> {
    config.validate()?;
    let mut ae = Autoencoder::new(spec, config.seed)?;
    if config.epochs == 0 {
        return Ok(ae);
    }
    if images.is_empty() {
        return Err(Error::Config("autoencoder training set is empty".into()));
    }
    let mut state = AdamState::new(&ae.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut t = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&Grid> = batch.iter().map(|&i| &images[i]).collect();
            let target = ae.batch(&refs)?;
            let (loss, grads) = {
                let mut g = Graph::new(&ae.params);
                let x = g.input(target.clone());
                let y = ae.reconstruct_graph(&mut g, x)?;
                let l = g.mse(y, &target)?;
                (g.value(l).item(), g.backward(l)?)
            };
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite reconstruction loss in epoch {epoch}")));
            }
            t += 1;
            adam_step(&mut ae.params, &grads, &mut state, config, t)?;
            epoch_loss += loss * batch.len() as f64;
        }
        log::debug!("autoencoder epoch {epoch}: mse {:.6}", epoch_loss / images.len() as f64);
    }
    Ok(ae)
}
