use glioseg_nn::{Conv2dGeom, Graph, Initializer, ParamStore, Var};

use crate::error::Result;

/// Registers parameters under dotted names in a fixed, seed-determined order.
pub(crate) struct Registrar<'a> {
    pub store: &'a mut ParamStore,
    pub init: &'a mut Initializer,
}

impl Registrar<'_> {
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, gain: f64) {
        let fan_in = c_in * kernel * kernel;
        let w = self.init.he_normal(&[c_out, c_in, kernel, kernel], fan_in, gain);
        self.store.insert(format!("{name}.weight"), w);
        self.store.insert(format!("{name}.bias"), glioseg_nn::Tensor::zeros(&[c_out]));
    }

    pub fn dense(&mut self, name: &str, inputs: usize, outputs: usize) {
        let w = self.init.he_normal(&[outputs, inputs], inputs, 0.5);
        self.store.insert(format!("{name}.weight"), w);
        self.store.insert(format!("{name}.bias"), glioseg_nn::Tensor::zeros(&[outputs]));
    }
}

pub(crate) fn conv(g: &mut Graph, name: &str, x: Var, geom: Conv2dGeom) -> Result<Var> {
    let w = g.param_named(&format!("{name}.weight"))?;
    let b = g.param_named(&format!("{name}.bias"))?;
    Ok(g.conv2d(x, w, Some(b), geom)?)
}

pub(crate) fn conv_relu(g: &mut Graph, name: &str, x: Var, geom: Conv2dGeom) -> Result<Var> {
    let y = conv(g, name, x, geom)?;
    Ok(g.relu(y))
}

pub(crate) fn dense(g: &mut Graph, name: &str, x: Var) -> Result<Var> {
    let w = g.param_named(&format!("{name}.weight"))?;
    let b = g.param_named(&format!("{name}.bias"))?;
    Ok(g.linear(x, w, Some(b))?)
}

/// Image-level logit head: global average pooling followed by a dense layer.
pub(crate) fn classify_head(g: &mut Graph, x: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(x)?;
    dense(g, "classifier", pooled)
}
