//! UNet and DeepLabv3 networks with segmentation and classification heads.

mod deeplab;
mod layers;
mod spec;
mod unet;

use glioseg_nn::{Graph, Initializer, ParamStore, Tensor, Var};

pub use deeplab::aspp_branch_count;
pub use spec::{Arch, ModelSpec, Task, SEGMENT_CLASSES};

use crate::error::{Error, Result};

/// A network: its topology, named parameters and how many optimizer steps
/// have been applied to it.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub steps_trained: u64,
}

pub fn build_unet(spec: ModelSpec, seed: u64) -> Result<Model> {
    if spec.arch != Arch::Unet {
        return Err(Error::Config(format!("build_unet called with arch {:?}", spec.arch)));
    }
    Model::build(spec, seed)
}

pub fn build_deeplabv3(spec: ModelSpec, seed: u64) -> Result<Model> {
    if spec.arch != Arch::Deeplabv3 {
        return Err(Error::Config(format!("build_deeplabv3 called with arch {:?}", spec.arch)));
    }
    Model::build(spec, seed)
}

impl Model {
    /// Builds either architecture with seeded fan-in-scaled initialization.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let mut r = layers::Registrar {
            store: &mut store,
            init: &mut init,
        };
        match spec.arch {
            Arch::Unet => unet::register(&spec, &mut r),
            Arch::Deeplabv3 => deeplab::register(&spec, &mut r),
        }
        Ok(Model {
            spec,
            params: store,
            steps_trained: 0,
        })
    }

    /// Assembles a model from loaded parameters, checking every expected
    /// tensor is present with the right shape.
    pub fn from_parts(spec: ModelSpec, params: ParamStore, steps_trained: u64) -> Result<Model> {
        let reference = Model::build(spec.clone(), 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(crate::error::CheckpointError::SpecMismatch(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            ))));
        }
        for (name, t) in reference.params.iter() {
            let got = params
                .id(name)
                .map(|id| params.get(id))
                .map_err(|_| mismatch(format!("missing tensor `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(mismatch(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
            if !got.is_finite() {
                return Err(Error::Checkpoint(crate::error::CheckpointError::Corrupt(format!(
                    "tensor `{name}` holds non-finite values"
                ))));
            }
        }
        Ok(Model {
            spec,
            params,
            steps_trained,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Expected input shape for a batch of `n` images.
    pub fn input_shape(&self, n: usize) -> [usize; 4] {
        [n, self.spec.in_channels, self.spec.input_side, self.spec.input_side]
    }

    pub fn check_input(&self, batch: &Tensor) -> Result<()> {
        let shape = batch.shape();
        let ok = shape.len() == 4 && shape[0] > 0 && shape[1..] == self.input_shape(shape[0])[1..];
        if !ok {
            return Err(Error::Validation(format!(
                "input batch shape mismatch: expected (N, {}, {}, {}), got {:?}",
                self.spec.in_channels, self.spec.input_side, self.spec.input_side, shape
            )));
        }
        if !batch.is_finite() {
            return Err(Error::Validation("input batch holds non-finite values".into()));
        }
        Ok(())
    }

    /// Adds the network to `g`, which must have been built over `self.params`.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self.spec.arch {
            Arch::Unet => unet::forward(&self.spec, g, x),
            Arch::Deeplabv3 => deeplab::forward(&self.spec, g, x),
        }
    }

    /// Inference: `(N, 1)` logits for classification, `(N, C, S, S)` for segmentation.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut g = Graph::new(&self.params);
        let x = g.input(batch.clone());
        let y = self.forward_graph(&mut g, x)?;
        Ok(g.value(y).clone())
    }
}

fn mismatch(msg: String) -> Error {
    Error::Checkpoint(crate::error::CheckpointError::SpecMismatch(msg))
}
