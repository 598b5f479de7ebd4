//! Encoder–decoder with channel-concatenating skip connections.
//!
//! Each encoder level runs two 3×3 conv + ReLU layers and halves the resolution
//! with 2×2 max pooling; channels double per level. The decoder mirrors it:
//! bilinear 2× upsampling, concatenation with the matching encoder output, then
//! two 3×3 conv + ReLU layers. A 1×1 conv maps to class logits.

use glioseg_nn::{Conv2dGeom, Graph, Var};

use super::layers::{classify_head, conv, conv_relu, Registrar};
use super::spec::{ModelSpec, Task};
use crate::error::Result;

fn channels(spec: &ModelSpec, level: usize) -> usize {
    spec.base_channels << level
}

pub(crate) fn register(spec: &ModelSpec, r: &mut Registrar) {
    let mut c_prev = spec.in_channels;
    for level in 0..spec.depth {
        let c = channels(spec, level);
        r.conv(&format!("enc{level}.conv1"), c_prev, c, 3, 1.0);
        r.conv(&format!("enc{level}.conv2"), c, c, 3, 1.0);
        c_prev = c;
    }
    let bottom = channels(spec, spec.depth);
    r.conv("bottleneck.conv1", c_prev, bottom, 3, 1.0);
    r.conv("bottleneck.conv2", bottom, bottom, 3, 1.0);
    for level in (0..spec.depth).rev() {
        let c = channels(spec, level);
        r.conv(&format!("dec{level}.conv1"), channels(spec, level + 1) + c, c, 3, 1.0);
        r.conv(&format!("dec{level}.conv2"), c, c, 3, 1.0);
    }
    r.conv("head", channels(spec, 0), spec.num_classes, 1, 1.0);
    if spec.task == Task::Classify {
        r.dense("classifier", spec.num_classes, 1);
    }
}

pub(crate) fn forward(spec: &ModelSpec, g: &mut Graph, x: Var) -> Result<Var> {
    let same = Conv2dGeom::same(3);
    let mut skips = Vec::with_capacity(spec.depth);
    let mut h = x;
    for level in 0..spec.depth {
        h = conv_relu(g, &format!("enc{level}.conv1"), h, same)?;
        h = conv_relu(g, &format!("enc{level}.conv2"), h, same)?;
        skips.push(h);
        h = g.max_pool2(h)?;
    }
    h = conv_relu(g, "bottleneck.conv1", h, same)?;
    h = conv_relu(g, "bottleneck.conv2", h, same)?;
    for level in (0..spec.depth).rev() {
        let skip = skips[level];
        let (_, _, sh, sw) = g.value(skip).dims4()?;
        let up = g.resize_bilinear(h, sh, sw)?;
        h = g.concat(&[up, skip])?;
        h = conv_relu(g, &format!("dec{level}.conv1"), h, same)?;
        h = conv_relu(g, &format!("dec{level}.conv2"), h, same)?;
    }
    let logits = conv(g, "head", h, Conv2dGeom::same(1))?;
    match spec.task {
        Task::Segment => Ok(logits),
        Task::Classify => classify_head(g, logits),
    }
}
