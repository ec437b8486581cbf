//! The detector as an ordered DAG of typed nodes.
//!
//! Layout for a config with widths `c0..c4`, depths `d0..d3` and input size
//! `S`:
//!
//! ```text
//! input (3, S)
//! backbone.stem         RepVGG 3 -> c0            S
//! backbone.pool         maxpool 2/2               S/2
//! backbone.stageK.down  RepVGG stride 2 -> cK     S/2^(K+1)   K = 1..4
//! backbone.stageK.osa   RCS-OSA(cK, d(K-1))
//! neck.lateral          1x1 conv c4 -> c3          S/32
//! neck.upsample         nearest x2                 S/16
//! neck.concat_up        [upsample, stage3.osa]     2*c3
//! neck.reduce_up        1x1 conv 2*c3 -> c3
//! neck.osa_up           RCS-OSA(c3, d2)            -> P4 features
//! neck.down             RepVGG stride 2 c3 -> c3   S/32
//! neck.concat_down      [down, lateral]            2*c3
//! neck.reduce_down      1x1 conv 2*c3 -> c4
//! neck.osa_down         RCS-OSA(c4, d3)            -> P5 features
//! head.p4.rep / pred    RepVGG c3 + implicit 1x1 prediction (stride 16)
//! head.p5.rep / pred    RepVGG c4 + implicit 1x1 prediction (stride 32)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, MAX_STRIDE};
use crate::rcs::RcsOsa;
use crate::reparam::{fuse_conv_bn, init_bn, init_conv, ConvBn, Mode, RepVggBlock, RepVggState, Reparameterize};
use crate::tensor::{self, BnParams, ConvParams, Shape, Tensor};

/// 1×1 (or general) convolution with batch norm and SiLU. Batch norm is
/// folded into the convolution on deployment.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvUnit {
    Train(ConvBn),
    Deployed(ConvParams),
}

impl ConvUnit {
    pub fn conv(&self) -> &ConvParams {
        match self {
            ConvUnit::Train(cb) => &cb.conv,
            ConvUnit::Deployed(c) => c,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = match self {
            ConvUnit::Train(cb) => cb.forward(x)?,
            ConvUnit::Deployed(c) => tensor::conv2d(x, c)?,
        };
        tensor::activation_inplace(&mut y);
        Ok(y)
    }

    pub fn calibrate(&mut self, x: &Tensor) -> Result<Tensor> {
        let ConvUnit::Train(cb) = self else {
            return Err(Error::State("cannot calibrate a deployed conv unit".into()));
        };
        let mut y = cb.calibrate(x)?;
        tensor::activation_inplace(&mut y);
        Ok(y)
    }
}

impl Reparameterize for ConvUnit {
    fn mode(&self) -> Mode {
        match self {
            ConvUnit::Train(_) => Mode::Train,
            ConvUnit::Deployed(_) => Mode::Deployed,
        }
    }

    fn to_deployed(&self) -> Result<Self> {
        match self {
            ConvUnit::Train(cb) => Ok(ConvUnit::Deployed(fuse_conv_bn(&cb.conv, &cb.bn)?)),
            ConvUnit::Deployed(_) => Err(Error::State("conv unit is already deployed".into())),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            ConvUnit::Train(cb) => cb.param_count(),
            ConvUnit::Deployed(c) => c.param_count(),
        }
    }
}

/// Prediction layer with implicit knowledge: a learned per-channel offset
/// added before the 1×1 conv and a per-channel scale applied after it.
/// Both fold into the conv on deployment.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectHead {
    Train {
        implicit_add: Vec<f32>,
        conv: ConvParams,
        implicit_mul: Vec<f32>,
    },
    Deployed(ConvParams),
}

impl DetectHead {
    pub fn conv(&self) -> &ConvParams {
        match self {
            DetectHead::Train { conv, .. } | DetectHead::Deployed(conv) => conv,
        }
    }

    /// Raw logits; no activation.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            DetectHead::Deployed(conv) => tensor::conv2d(x, conv),
            DetectHead::Train {
                implicit_add,
                conv,
                implicit_mul,
            } => {
                let s = x.shape();
                if s.c != implicit_add.len() {
                    return Err(Error::Shape(format!(
                        "detect head expects {} channels, got {}",
                        implicit_add.len(),
                        s.c
                    )));
                }
                let mut shifted = x.clone();
                for (i, plane) in shifted.data_mut().chunks_mut(s.plane()).enumerate() {
                    let a = implicit_add[i % s.c];
                    plane.iter_mut().for_each(|v| *v += a);
                }
                let mut y = tensor::conv2d(&shifted, conv)?;
                let ys = y.shape();
                for (i, plane) in y.data_mut().chunks_mut(ys.plane()).enumerate() {
                    let m = implicit_mul[i % ys.c];
                    plane.iter_mut().for_each(|v| *v *= m);
                }
                Ok(y)
            }
        }
    }
}

impl Reparameterize for DetectHead {
    fn mode(&self) -> Mode {
        match self {
            DetectHead::Train { .. } => Mode::Train,
            DetectHead::Deployed(_) => Mode::Deployed,
        }
    }

    fn to_deployed(&self) -> Result<Self> {
        match self {
            DetectHead::Deployed(_) => Err(Error::State("detect head is already deployed".into())),
            DetectHead::Train {
                implicit_add,
                conv,
                implicit_mul,
            } => {
                let mut fused = conv.clone();
                for o in 0..conv.c_out {
                    let shift: f32 = (0..conv.c_in).map(|i| conv.weight(o, i, 0, 0) * implicit_add[i]).sum();
                    fused.bias[o] = (conv.bias[o] + shift) * implicit_mul[o];
                    for i in 0..conv.c_in {
                        fused.kernel[o * conv.c_in + i] *= implicit_mul[o];
                    }
                }
                Ok(DetectHead::Deployed(fused))
            }
        }
    }

    fn param_count(&self) -> usize {
        match self {
            DetectHead::Train {
                implicit_add,
                conv,
                implicit_mul,
            } => implicit_add.len() + conv.param_count() + implicit_mul.len(),
            DetectHead::Deployed(conv) => conv.param_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    RepVgg(RepVggBlock),
    Osa(RcsOsa),
    Conv(ConvUnit),
    MaxPool { k: usize, stride: usize },
    Upsample { factor: usize },
    Concat,
    Detect(DetectHead),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::RepVgg(_) => "repvgg",
            Op::Osa(_) => "rcs_osa",
            Op::Conv(_) => "conv",
            Op::MaxPool { .. } => "maxpool",
            Op::Upsample { .. } => "upsample",
            Op::Concat => "concat",
            Op::Detect(_) => "detect",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    /// Indices of producer nodes, all smaller than this node's index.
    pub inputs: Vec<usize>,
}

/// Per-channel-map shape `(c, h, w)`; the batch axis is free.
pub type MapShape = (usize, usize, usize);

/// Raw prediction map of one head, `(n, anchors * (5 + classes), h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub tensor: Tensor,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    nodes: Vec<Node>,
    outputs: [usize; 2],
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn push(&mut self, name: &str, op: Op, inputs: &[usize]) -> usize {
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs: inputs.to_vec(),
        });
        self.nodes.len() - 1
    }

    fn repvgg(&mut self, name: &str, c_in: usize, c_out: usize, stride: usize, input: usize) -> Result<usize> {
        let blk = RepVggBlock::init(c_in, c_out, stride, self.cfg.bn_eps, &mut self.rng)?;
        Ok(self.push(name, Op::RepVgg(blk), &[input]))
    }

    fn osa(&mut self, name: &str, c: usize, n: usize, input: usize) -> Result<usize> {
        let osa = RcsOsa::init(c, n, self.cfg.bn_eps, &mut self.rng)?;
        Ok(self.push(name, Op::Osa(osa), &[input]))
    }

    fn conv1x1(&mut self, name: &str, c_in: usize, c_out: usize, input: usize) -> Result<usize> {
        let unit = ConvUnit::Train(ConvBn {
            conv: init_conv(c_out, c_in, 1, 1, 0, &mut self.rng)?,
            bn: init_bn(c_out, self.cfg.bn_eps, &mut self.rng)?,
        });
        Ok(self.push(name, Op::Conv(unit), &[input]))
    }

    fn detect(&mut self, name: &str, c_in: usize, stride: usize, input: usize) -> Result<usize> {
        let c_out = self.cfg.head_channels();
        let implicit_add = (0..c_in).map(|_| self.rng.gen_range(-0.02..0.02)).collect();
        let mut conv = init_conv(c_out, c_in, 1, 1, 0, &mut self.rng)?;
        add_prior_bias(&mut conv.bias, self.cfg, stride);
        let implicit_mul = (0..c_out).map(|_| self.rng.gen_range(0.98..1.02)).collect();
        let head = DetectHead::Train {
            implicit_add,
            conv,
            implicit_mul,
        };
        Ok(self.push(name, Op::Detect(head), &[input]))
    }
}

/// Shifts the prediction biases so an untrained head starts out expecting
/// about `PRIOR_OBJECTS` objects per image and a 0.6 class probability.
fn add_prior_bias(bias: &mut [f32], cfg: &ModelConfig, stride: usize) {
    let cells = (cfg.input_size / stride).pow(2) as f64;
    let obj = (PRIOR_OBJECTS / cells).ln() as f32;
    let cls = (0.6 / (cfg.num_classes as f64 - 0.99)).ln() as f32;
    for anchor in bias.chunks_mut(5 + cfg.num_classes) {
        anchor[4] += obj;
        for b in &mut anchor[5..] {
            *b += cls;
        }
    }
}

const PRIOR_OBJECTS: f64 = 8.0;

/// Deterministically builds a train-mode model with weights drawn from
/// `seed`. Batch-norm running statistics are then calibrated on seeded
/// uniform-noise images so activations stay well scaled with depth.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    let mut model = build_skeleton(cfg, seed)?;
    let s = cfg.input_size;
    let coarse = (s / MAX_STRIDE).max(1);
    let batch = CALIBRATION_SAMPLES.div_ceil(coarse * coarse).clamp(1, MAX_CALIBRATION_BATCH);
    let shape = Shape::new(batch, 3, s, s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CALIBRATION_STREAM);
    let x = Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    model.calibrate_bn(&x)?;
    Ok(model)
}

const CALIBRATION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
// Small inputs leave only a few pixels per channel at the coarsest map, so
// calibration stacks extra noise images until it sees at least this many.
const CALIBRATION_SAMPLES: usize = 256;
const MAX_CALIBRATION_BATCH: usize = 16;

/// Structure with seeded weights but uncalibrated batch-norm statistics.
pub(crate) fn build_skeleton(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let c = &cfg.stage_channels;
    let d = &cfg.osa_depths;
    let mut b = Builder {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
    };
    let input = b.push("input", Op::Input, &[]);
    let stem = b.repvgg("backbone.stem", 3, c[0], 1, input)?;
    let mut cur = b.push("backbone.pool", Op::MaxPool { k: 2, stride: 2 }, &[stem]);
    let mut stage_out = Vec::new();
    for k in 1..=4 {
        let down = b.repvgg(&format!("backbone.stage{k}.down"), c[k - 1], c[k], 2, cur)?;
        cur = b.osa(&format!("backbone.stage{k}.osa"), c[k], d[k - 1], down)?;
        stage_out.push(cur);
    }
    let (p4, p5) = (stage_out[2], stage_out[3]);

    let lateral = b.conv1x1("neck.lateral", c[4], c[3], p5)?;
    let up = b.push("neck.upsample", Op::Upsample { factor: 2 }, &[lateral]);
    let cat_up = b.push("neck.concat_up", Op::Concat, &[up, p4]);
    let reduce_up = b.conv1x1("neck.reduce_up", 2 * c[3], c[3], cat_up)?;
    let n4 = b.osa("neck.osa_up", c[3], d[2], reduce_up)?;
    let down = b.repvgg("neck.down", c[3], c[3], 2, n4)?;
    let cat_down = b.push("neck.concat_down", Op::Concat, &[down, lateral]);
    let reduce_down = b.conv1x1("neck.reduce_down", 2 * c[3], c[4], cat_down)?;
    let n5 = b.osa("neck.osa_down", c[4], d[3], reduce_down)?;

    let rep4 = b.repvgg("head.p4.rep", c[3], c[3], 1, n4)?;
    let out4 = b.detect("head.p4.pred", c[3], cfg.head_strides[0], rep4)?;
    let rep5 = b.repvgg("head.p5.rep", c[4], c[4], 1, n5)?;
    let out5 = b.detect("head.p5.pred", c[4], cfg.head_strides[1], rep5)?;

    let model = Model {
        cfg: cfg.clone(),
        nodes: b.nodes,
        outputs: [out4, out5],
    };
    model.check_graph()?;
    Ok(model)
}

pub fn reparameterize_model(m: &Model) -> Result<Model> {
    m.to_deployed()
}

impl Model {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        build_model(cfg, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Node indices of the stride-16 and stride-32 heads.
    pub fn outputs(&self) -> [usize; 2] {
        self.outputs
    }

    fn check_graph(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.inputs.iter().any(|&j| j >= i) {
                return Err(Error::Shape(format!("node `{}` consumes a later node", node.name)));
            }
        }
        let sinks: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| !self.nodes.iter().any(|n| n.inputs.contains(&i)))
            .collect();
        if sinks != self.outputs {
            return Err(Error::Shape(format!("graph sinks {sinks:?} are not the two heads")));
        }
        self.infer_shapes()?;
        Ok(())
    }

    /// Static `(c, h, w)` of every node for the configured input size.
    pub fn infer_shapes(&self) -> Result<Vec<MapShape>> {
        let s = self.cfg.input_size;
        let mut shapes: Vec<MapShape> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<MapShape> = node.inputs.iter().map(|&j| shapes[j]).collect();
            let mismatch = |expected: usize, got: usize| {
                Error::Shape(format!("node `{}` expects {expected} channels, got {got}", node.name))
            };
            let shape = match &node.op {
                Op::Input => (3, s, s),
                Op::RepVgg(blk) => {
                    let (c, h, w) = ins[0];
                    if c != blk.c_in() {
                        return Err(mismatch(blk.c_in(), c));
                    }
                    let (ho, wo) = blk.output_hw(h, w)?;
                    (blk.c_out(), ho, wo)
                }
                Op::Osa(osa) => {
                    if ins[0].0 != osa.channels() {
                        return Err(mismatch(osa.channels(), ins[0].0));
                    }
                    ins[0]
                }
                Op::Conv(unit) => {
                    let conv = unit.conv();
                    if ins[0].0 != conv.c_in {
                        return Err(mismatch(conv.c_in, ins[0].0));
                    }
                    let (ho, wo) = conv.output_hw(ins[0].1, ins[0].2)?;
                    (conv.c_out, ho, wo)
                }
                Op::Detect(head) => {
                    let conv = head.conv();
                    if ins[0].0 != conv.c_in {
                        return Err(mismatch(conv.c_in, ins[0].0));
                    }
                    (conv.c_out, ins[0].1, ins[0].2)
                }
                Op::MaxPool { k, stride } => {
                    let (c, h, w) = ins[0];
                    if *k > h || *k > w {
                        return Err(Error::Shape(format!("node `{}`: pool window exceeds input", node.name)));
                    }
                    (c, (h - k) / stride + 1, (w - k) / stride + 1)
                }
                Op::Upsample { factor } => (ins[0].0, ins[0].1 * factor, ins[0].2 * factor),
                Op::Concat => {
                    let (a, b) = (ins[0], ins[1]);
                    if (a.1, a.2) != (b.1, b.2) {
                        return Err(Error::Shape(format!(
                            "node `{}` concatenates {a:?} with {b:?}",
                            node.name
                        )));
                    }
                    (a.0 + b.0, a.1, a.2)
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    fn expected_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let size = self.cfg.input_size;
        if s.c != 3 || s.h != size || s.w != size {
            return Err(Error::Shape(format!(
                "model expects input (n, 3, {size}, {size}), got {s}"
            )));
        }
        Ok(())
    }

    /// Runs the graph; `keep_all` retains every intermediate activation.
    fn run(&self, x: &Tensor, keep_all: bool) -> Result<Vec<Option<Tensor>>> {
        self.expected_input(x)?;
        let mut remaining: Vec<usize> = vec![0; self.nodes.len()];
        for node in &self.nodes {
            for &j in &node.inputs {
                remaining[j] += 1;
            }
        }
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| -> &Tensor { values[node.inputs[k]].as_ref().expect("producer evaluated") };
            let y = match &node.op {
                Op::Input => x.clone(),
                Op::RepVgg(blk) => blk.forward(arg(0))?,
                Op::Osa(osa) => osa.forward(arg(0))?,
                Op::Conv(unit) => unit.forward(arg(0))?,
                Op::MaxPool { k, stride } => tensor::maxpool2d(arg(0), *k, *stride)?,
                Op::Upsample { factor } => tensor::upsample_nearest(arg(0), *factor)?,
                Op::Concat => tensor::concat_channels(arg(0), arg(1))?,
                Op::Detect(head) => head.forward(arg(0))?,
            };
            values[i] = Some(y);
            if !keep_all {
                for &j in &node.inputs {
                    remaining[j] -= 1;
                    if remaining[j] == 0 {
                        values[j] = None;
                    }
                }
            }
        }
        Ok(values)
    }

    /// Recomputes every batch-norm's running mean and variance from the
    /// activations it sees on `x`. Train mode only.
    pub fn calibrate_bn(&mut self, x: &Tensor) -> Result<()> {
        self.expected_input(x)?;
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in 0..self.nodes.len() {
            let ins: Vec<&Tensor> = self.nodes[i]
                .inputs
                .iter()
                .map(|&j| values[j].as_ref().expect("producer evaluated"))
                .collect();
            let y = match &mut self.nodes[i].op {
                Op::Input => x.clone(),
                Op::RepVgg(blk) => blk.calibrate(ins[0])?,
                Op::Osa(osa) => osa.calibrate(ins[0])?,
                Op::Conv(unit) => unit.calibrate(ins[0])?,
                Op::MaxPool { k, stride } => tensor::maxpool2d(ins[0], *k, *stride)?,
                Op::Upsample { factor } => tensor::upsample_nearest(ins[0], *factor)?,
                Op::Concat => tensor::concat_channels(ins[0], ins[1])?,
                Op::Detect(head) => head.forward(ins[0])?,
            };
            values[i] = Some(y);
        }
        Ok(())
    }

    /// Raw head maps for the stride-16 and stride-32 heads.
    pub fn forward(&self, x: &Tensor) -> Result<(HeadOutput, HeadOutput)> {
        let mut values = self.run(x, false)?;
        let [a, b] = self.outputs;
        let take = |v: &mut Vec<Option<Tensor>>, i: usize| v[i].take().expect("head evaluated");
        Ok((
            HeadOutput {
                tensor: take(&mut values, a),
                stride: self.cfg.head_strides[0],
            },
            HeadOutput {
                tensor: take(&mut values, b),
                stride: self.cfg.head_strides[1],
            },
        ))
    }

    /// Runtime shape of every node's output for input `x`.
    pub fn runtime_shapes(&self, x: &Tensor) -> Result<Vec<Shape>> {
        Ok(self
            .run(x, true)?
            .into_iter()
            .map(|v| v.expect("all nodes kept").shape())
            .collect())
    }

    /// Number of RepVGG blocks (including those inside RCS units) that still
    /// execute more than one branch.
    pub fn multi_branch_count(&self) -> usize {
        self.repvgg_blocks().iter().filter(|b| b.branch_count() > 1).count()
    }

    pub fn repvgg_blocks(&self) -> Vec<&RepVggBlock> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::RepVgg(b) => out.push(b),
                Op::Osa(osa) => out.extend(osa.units().iter().map(|u| u.block())),
                _ => {}
            }
        }
        out
    }

    /// Zeroes every convolution kernel, leaving biases and batch-norm
    /// statistics in place.
    pub fn zero_kernels(&mut self) {
        self.visit_params_mut(&mut |name, _, data| {
            if name.ends_with(".weight") {
                data.fill(0.0);
            }
        });
    }

    /// Visits every stored tensor in a fixed order with its dotted name and
    /// shape.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        for node in &mut self.nodes {
            let p = node.name.as_str();
            match &mut node.op {
                Op::RepVgg(blk) => visit_repvgg(p, blk, f),
                Op::Osa(osa) => {
                    for (i, unit) in osa.units_mut().iter_mut().enumerate() {
                        visit_repvgg(&format!("{p}.units.{i}"), unit.block_mut(), f);
                    }
                    visit_conv(&format!("{p}.aggregate"), osa.aggregate_mut(), f);
                }
                Op::Conv(ConvUnit::Train(cb)) => {
                    visit_conv(&format!("{p}.conv"), &mut cb.conv, f);
                    visit_bn(&format!("{p}.bn"), &mut cb.bn, f);
                }
                Op::Conv(ConvUnit::Deployed(c)) => visit_conv(&format!("{p}.fused"), c, f),
                Op::Detect(DetectHead::Train {
                    implicit_add,
                    conv,
                    implicit_mul,
                }) => {
                    let n = implicit_add.len();
                    f(&format!("{p}.implicit_add"), &[n], implicit_add);
                    visit_conv(&format!("{p}.conv"), conv, f);
                    let n = implicit_mul.len();
                    f(&format!("{p}.implicit_mul"), &[n], implicit_mul);
                }
                Op::Detect(DetectHead::Deployed(c)) => visit_conv(&format!("{p}.fused"), c, f),
                Op::Input | Op::MaxPool { .. } | Op::Upsample { .. } | Op::Concat => {}
            }
        }
    }

    /// `(name, shape, values)` for every stored tensor, in file order.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.visit_params_mut(&mut |name, shape, data| out.push((name.to_string(), shape.to_vec(), data.to_vec())));
        out
    }
}

fn visit_conv(prefix: &str, p: &mut ConvParams, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
    let shape = [p.c_out, p.c_in, p.k, p.k];
    f(&format!("{prefix}.weight"), &shape, &mut p.kernel);
    let n = p.bias.len();
    f(&format!("{prefix}.bias"), &[n], &mut p.bias);
}

fn visit_bn(prefix: &str, b: &mut BnParams, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
    let n = b.channels();
    f(&format!("{prefix}.gamma"), &[n], &mut b.gamma);
    f(&format!("{prefix}.beta"), &[n], &mut b.beta);
    f(&format!("{prefix}.mean"), &[n], &mut b.mean);
    f(&format!("{prefix}.var"), &[n], &mut b.var);
}

fn visit_repvgg(prefix: &str, blk: &mut RepVggBlock, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
    match blk.state_mut() {
        RepVggState::Train {
            dense,
            pointwise,
            identity,
        } => {
            visit_conv(&format!("{prefix}.dense.conv"), &mut dense.conv, f);
            visit_bn(&format!("{prefix}.dense.bn"), &mut dense.bn, f);
            visit_conv(&format!("{prefix}.pointwise.conv"), &mut pointwise.conv, f);
            visit_bn(&format!("{prefix}.pointwise.bn"), &mut pointwise.bn, f);
            if let Some(bn) = identity {
                visit_bn(&format!("{prefix}.identity.bn"), bn, f);
            }
        }
        RepVggState::Deployed { fused } => visit_conv(&format!("{prefix}.fused"), fused, f),
    }
}

impl Reparameterize for Model {
    fn mode(&self) -> Mode {
        self.nodes
            .iter()
            .find_map(|n| match &n.op {
                Op::RepVgg(b) => Some(b.mode()),
                _ => None,
            })
            .unwrap_or(Mode::Train)
    }

    fn to_deployed(&self) -> Result<Self> {
        if self.mode() == Mode::Deployed {
            return Err(Error::State("model is already deployed".into()));
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let op = match &n.op {
                    Op::RepVgg(b) => Op::RepVgg(b.to_deployed()?),
                    Op::Osa(o) => Op::Osa(o.to_deployed()?),
                    Op::Conv(c) => Op::Conv(c.to_deployed()?),
                    Op::Detect(d) => Op::Detect(d.to_deployed()?),
                    other => other.clone(),
                };
                Ok(Node {
                    name: n.name.clone(),
                    op,
                    inputs: n.inputs.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            cfg: self.cfg.clone(),
            nodes,
            outputs: self.outputs,
        })
    }

    fn param_count(&self) -> usize {
        let mut total = 0;
        self.clone().visit_params_mut(&mut |_, _, d| total += d.len());
        total
    }
}
