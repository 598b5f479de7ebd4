//! Atrous segmentation network with a residual backbone at output stride 16
//! and an atrous spatial pyramid pooling (ASPP) block.
//!
//! Backbone: a full-resolution 3×3 stem, a strided 3×3 stem, then four residual
//! stages (3, 4, 6, 3 blocks) at strides 2, 4, 8 and 16. Blocks after the first
//! in the last stage use dilation 2. ASPP runs a 1×1 branch, one 3×3 atrous
//! branch per rate and an image-pooling branch, fuses them with a 1×1 conv, and
//! the result is bilinearly upsampled to input size before the 1×1 class head.

use glioseg_nn::{Conv2dGeom, Graph, Var};

use super::layers::{classify_head, conv, conv_relu, Registrar};
use super::spec::{ModelSpec, Task};
use crate::error::Result;

/// `(channel multiplier, blocks, first-block stride, dilation after the first block)`
const STAGES: [(usize, usize, usize, usize); 4] = [(2, 3, 1, 1), (4, 4, 2, 1), (8, 6, 2, 1), (16, 3, 2, 2)];

/// Second conv of each residual branch starts small so the stack begins close
/// to identity without normalization layers.
const RESIDUAL_GAIN: f64 = 0.1;

fn aspp_channels(spec: &ModelSpec) -> usize {
    spec.base_channels * 8
}

/// Number of parallel ASPP branches: 1×1, one per atrous rate, image pooling.
pub fn aspp_branch_count(spec: &ModelSpec) -> usize {
    spec.atrous_rates.len() + 2
}

struct BlockPlan {
    name: String,
    c_in: usize,
    c_out: usize,
    stride: usize,
    dilation: usize,
}

fn plan(spec: &ModelSpec) -> Vec<BlockPlan> {
    let mut blocks = Vec::new();
    let mut c_in = spec.base_channels * 2;
    for (s, &(mult, count, stride, dilation)) in STAGES.iter().enumerate() {
        let c_out = spec.base_channels * mult;
        for b in 0..count {
            blocks.push(BlockPlan {
                name: format!("stage{}.block{b}", s + 1),
                c_in,
                c_out,
                stride: if b == 0 { stride } else { 1 },
                dilation: if b == 0 { 1 } else { dilation },
            });
            c_in = c_out;
        }
    }
    blocks
}

fn needs_projection(b: &BlockPlan) -> bool {
    b.c_in != b.c_out || b.stride != 1
}

pub(crate) fn register(spec: &ModelSpec, r: &mut Registrar) {
    let base = spec.base_channels;
    r.conv("stem.conv1", spec.in_channels, base, 3, 1.0);
    r.conv("stem.conv2", base, base * 2, 3, 1.0);
    let blocks = plan(spec);
    for b in &blocks {
        r.conv(&format!("{}.conv1", b.name), b.c_in, b.c_out, 3, 1.0);
        r.conv(&format!("{}.conv2", b.name), b.c_out, b.c_out, 3, RESIDUAL_GAIN);
        if needs_projection(b) {
            r.conv(&format!("{}.proj", b.name), b.c_in, b.c_out, 1, 1.0);
        }
    }
    let feat = blocks.last().map_or(base * 2, |b| b.c_out);
    let a = aspp_channels(spec);
    r.conv("aspp.branch0", feat, a, 1, 1.0);
    for i in 0..spec.atrous_rates.len() {
        r.conv(&format!("aspp.atrous{i}"), feat, a, 3, 1.0);
    }
    r.conv("aspp.pool", feat, a, 1, 1.0);
    r.conv("aspp.project", a * aspp_branch_count(spec), a, 1, 1.0);
    r.conv("head", a, spec.num_classes, 1, 1.0);
    if spec.task == Task::Classify {
        r.dense("classifier", spec.num_classes, 1);
    }
}

fn residual_block(g: &mut Graph, b: &BlockPlan, x: Var) -> Result<Var> {
    let first = if b.stride == 1 {
        Conv2dGeom::atrous(b.dilation)
    } else {
        Conv2dGeom::strided(3, b.stride)
    };
    let h = conv_relu(g, &format!("{}.conv1", b.name), x, first)?;
    let h = conv(g, &format!("{}.conv2", b.name), h, Conv2dGeom::atrous(b.dilation))?;
    let shortcut = if needs_projection(b) {
        let geom = Conv2dGeom {
            stride: b.stride,
            padding: 0,
            dilation: 1,
        };
        conv(g, &format!("{}.proj", b.name), x, geom)?
    } else {
        x
    };
    let sum = g.add(h, shortcut)?;
    Ok(g.relu(sum))
}

fn aspp(spec: &ModelSpec, g: &mut Graph, x: Var) -> Result<Var> {
    let (_, _, h, w) = g.value(x).dims4()?;
    let mut branches = vec![conv_relu(g, "aspp.branch0", x, Conv2dGeom::same(1))?];
    for (i, &rate) in spec.atrous_rates.iter().enumerate() {
        branches.push(conv_relu(g, &format!("aspp.atrous{i}"), x, Conv2dGeom::atrous(rate))?);
    }
    let pooled = g.global_avg_pool(x)?;
    let pooled = conv_relu(g, "aspp.pool", pooled, Conv2dGeom::same(1))?;
    branches.push(g.resize_bilinear(pooled, h, w)?);
    let cat = g.concat(&branches)?;
    conv_relu(g, "aspp.project", cat, Conv2dGeom::same(1))
}

pub(crate) fn forward(spec: &ModelSpec, g: &mut Graph, x: Var) -> Result<Var> {
    let (_, _, in_h, in_w) = g.value(x).dims4()?;
    let mut h = conv_relu(g, "stem.conv1", x, Conv2dGeom::same(3))?;
    h = conv_relu(g, "stem.conv2", h, Conv2dGeom::strided(3, 2))?;
    for b in plan(spec) {
        h = residual_block(g, &b, h)?;
    }
    let fused = aspp(spec, g, h)?;
    let up = g.resize_bilinear(fused, in_h, in_w)?;
    let logits = conv(g, "head", up, Conv2dGeom::same(1))?;
    match spec.task {
        Task::Segment => Ok(logits),
        Task::Classify => classify_head(g, logits),
    }
}
