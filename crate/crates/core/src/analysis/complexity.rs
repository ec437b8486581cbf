//! Closed-form FLOPs/MAC of convolutions and structural counts over a model.
//!
//! FLOPs are multiply-accumulates (one per kernel tap per output element);
//! the doubled "multiply + add" convention is 2x these totals. MAC counts
//! memory accesses: activations read and written plus weights read.
//! Non-convolution nodes (pooling, upsampling, concat, shuffle, elementwise
//! identity branches) contribute zero FLOPs and only their activation
//! traffic to MAC.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{ConvUnit, DetectHead, Model, Op};
use crate::rcs::RcsOsa;
use crate::reparam::{RepVggBlock, RepVggState, Reparameterize};
use crate::tensor::ConvParams;

/// One square convolution: `m x m` output, `k x k` kernel, `c1 -> c2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub m: u64,
    pub k: u64,
    pub c1: u64,
    pub c2: u64,
}

impl LayerSpec {
    pub fn new(m: u64, k: u64, c1: u64, c2: u64) -> Result<Self> {
        if m == 0 || k == 0 || c1 == 0 || c2 == 0 {
            return Err(Error::Precondition(format!(
                "layer spec needs positive values, got M={m} K={k} C1={c1} C2={c2}"
            )));
        }
        Ok(LayerSpec { m, k, c1, c2 })
    }
}

/// `M²·K²·C₁·C₂`.
pub fn flops(l: &LayerSpec) -> u64 {
    l.m * l.m * l.k * l.k * l.c1 * l.c2
}

/// `M²·(C₁ + C₂) + K²·C₁·C₂`.
pub fn mac(l: &LayerSpec) -> u64 {
    l.m * l.m * (l.c1 + l.c2) + l.k * l.k * l.c1 * l.c2
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    /// Present for convolutions only.
    pub spec: Option<LayerSpec>,
    pub flops: u64,
    pub mac: u64,
}

impl LayerCost {
    pub fn conv(name: impl Into<String>, spec: LayerSpec) -> Self {
        LayerCost {
            name: name.into(),
            kind: "conv",
            spec: Some(spec),
            flops: flops(&spec),
            mac: mac(&spec),
        }
    }

    /// Zero-FLOP node moving `elems_in` activations in and `elems_out` out.
    pub fn movement(name: impl Into<String>, kind: &'static str, elems_in: u64, elems_out: u64) -> Self {
        LayerCost {
            name: name.into(),
            kind,
            spec: None,
            flops: 0,
            mac: elems_in + elems_out,
        }
    }
}

/// Closed forms quoted for RCS-OSA and ELAN at `(c, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForms {
    pub c: u64,
    pub m: u64,
    /// `20.25·C²M²`
    pub rcs_osa: f64,
    /// `40·C²M²`
    pub elan: f64,
    /// `rcs_osa / elan` (0.50625)
    pub ratio: f64,
    /// `6·C·M² + 20.25·C²`
    pub mac_rcs_osa: f64,
    /// `17·C·M² + 40·C²`
    pub mac_elan: f64,
}

impl ClosedForms {
    pub fn at(c: u64, m: u64) -> Self {
        let (cf, mf) = (c as f64, m as f64);
        let rcs_osa = 20.25 * cf * cf * mf * mf;
        let elan = 40.0 * cf * cf * mf * mf;
        ClosedForms {
            c,
            m,
            rcs_osa,
            elan,
            ratio: rcs_osa / elan,
            mac_rcs_osa: 6.0 * cf * mf * mf + 20.25 * cf * cf,
            mac_elan: 17.0 * cf * mf * mf + 40.0 * cf * cf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub title: String,
    pub layers: Vec<LayerCost>,
    pub flops: u64,
    pub mac: u64,
    pub closed_forms: Option<ClosedForms>,
    pub notes: Vec<String>,
}

fn convention_notes() -> Vec<String> {
    vec![
        "FLOPs are multiply-accumulates (1 MAC = 1 FLOP); double them for the multiply+add convention".into(),
        "bias, batch-norm, activation and pooling arithmetic are excluded from FLOPs".into(),
        "pooling, upsampling, concat, shuffle and identity branches count 0 FLOPs; MAC counts their activation reads and writes"
            .into(),
        "channel shuffle is treated as a pure permutation".into(),
    ]
}

impl ComplexityReport {
    pub fn from_layers(title: impl Into<String>, layers: Vec<LayerCost>) -> Self {
        let flops = layers.iter().map(|l| l.flops).sum();
        let mac = layers.iter().map(|l| l.mac).sum();
        ComplexityReport {
            title: title.into(),
            layers,
            flops,
            mac,
            closed_forms: None,
            notes: convention_notes(),
        }
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerCost> {
        self.layers.iter().filter(|l| l.spec.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,m,k,c1,c2,flops,mac\n");
        for l in &self.layers {
            let dims = match l.spec {
                Some(s) => format!("{},{},{},{}", s.m, s.k, s.c1, s.c2),
                None => ",,,".into(),
            };
            let _ = writeln!(out, "{},{},{dims},{},{}", l.name, l.kind, l.flops, l.mac);
        }
        let _ = writeln!(out, "total,,,,,,{},{}", self.flops, self.mac);
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{:<width$}  {:<8}  {:>18}  {:>14}  {:>14}", "layer", "kind", "M K C1 C2", "FLOPs", "MAC");
        for l in &self.layers {
            let dims = l
                .spec
                .map(|s| format!("{} {} {} {}", s.m, s.k, s.c1, s.c2))
                .unwrap_or_default();
            let _ = writeln!(out, "{:<width$}  {:<8}  {dims:>18}  {:>14}  {:>14}", l.name, l.kind, l.flops, l.mac);
        }
        let _ = writeln!(out, "{:<width$}  {:<8}  {:>18}  {:>14}  {:>14}", "total", "", "", self.flops, self.mac);
        if let Some(p) = &self.closed_forms {
            let _ = writeln!(out, "reference closed forms at C={} M={}:", p.c, p.m);
            let _ = writeln!(out, "  RCS-OSA FLOPs 20.25*C^2*M^2 = {}", p.rcs_osa);
            let _ = writeln!(out, "  ELAN FLOPs    40*C^2*M^2    = {}", p.elan);
            let _ = writeln!(out, "  ratio                       = {}", p.ratio);
            let _ = writeln!(out, "  RCS-OSA MAC   6*C*M^2 + 20.25*C^2 = {}", p.mac_rcs_osa);
            let _ = writeln!(out, "  ELAN MAC      17*C*M^2 + 40*C^2   = {}", p.mac_elan);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

fn square(h: usize, w: usize, name: &str) -> Result<u64> {
    if h != w {
        return Err(Error::Shape(format!("`{name}` has a non-square {h}x{w} map")));
    }
    Ok(h as u64)
}

fn conv_cost(name: String, p: &ConvParams, m_out: u64) -> LayerCost {
    LayerCost::conv(
        name,
        LayerSpec {
            m: m_out,
            k: p.k as u64,
            c1: p.c_in as u64,
            c2: p.c_out as u64,
        },
    )
}

fn repvgg_costs(name: &str, blk: &RepVggBlock, m_in: u64, m_out: u64, out: &mut Vec<LayerCost>) {
    match blk.state() {
        RepVggState::Deployed { fused } => out.push(conv_cost(format!("{name}.fused"), fused, m_out)),
        RepVggState::Train {
            dense,
            pointwise,
            identity,
        } => {
            out.push(conv_cost(format!("{name}.dense"), &dense.conv, m_out));
            out.push(conv_cost(format!("{name}.pointwise"), &pointwise.conv, m_out));
            if identity.is_some() {
                let elems = m_in * m_in * blk.c_in() as u64;
                out.push(LayerCost::movement(format!("{name}.identity"), "identity", elems, elems));
            }
        }
    }
}

fn osa_costs(name: &str, osa: &RcsOsa, m: u64, out: &mut Vec<LayerCost>) {
    let c = osa.channels() as u64;
    let plane = m * m;
    for (i, unit) in osa.units().iter().enumerate() {
        let u = format!("{name}.units.{i}");
        out.push(LayerCost::movement(format!("{u}.split"), "split", plane * c, plane * c));
        repvgg_costs(&format!("{u}.block"), unit.block(), m, m, out);
        out.push(LayerCost::movement(format!("{u}.concat"), "concat", plane * c, plane * c));
        out.push(LayerCost::movement(format!("{u}.shuffle"), "shuffle", plane * c, plane * c));
    }
    out.push(LayerCost::movement(format!("{name}.concat"), "concat", 3 * plane * c, 3 * plane * c));
    out.push(conv_cost(format!("{name}.aggregate"), osa.aggregate(), m));
}

/// Per-layer costs of a standalone RCS-OSA module on an `m x m` map.
pub fn osa_complexity(osa: &RcsOsa, m: u64) -> ComplexityReport {
    let mut layers = Vec::new();
    osa_costs("osa", osa, m, &mut layers);
    ComplexityReport::from_layers(
        format!("RCS-OSA c={} n={} m={m} ({})", osa.channels(), osa.depth(), osa.mode().as_str()),
        layers,
    )
}

/// Structural FLOPs/MAC of every node for the configured input size.
pub fn model_complexity(model: &Model) -> Result<ComplexityReport> {
    let shapes = model.infer_shapes()?;
    let mut layers = Vec::new();
    for (i, node) in model.nodes().iter().enumerate() {
        let (c_out, h, w) = shapes[i];
        let m_out = square(h, w, &node.name)?;
        let elems = |j: usize| {
            let (c, h, w) = shapes[j];
            (c * h * w) as u64
        };
        let out_elems = (c_out * h * w) as u64;
        match &node.op {
            Op::Input => {}
            Op::RepVgg(blk) => {
                let (_, hi, wi) = shapes[node.inputs[0]];
                repvgg_costs(&node.name, blk, square(hi, wi, &node.name)?, m_out, &mut layers);
            }
            Op::Osa(osa) => osa_costs(&node.name, osa, m_out, &mut layers),
            Op::Conv(unit) => {
                let p = match unit {
                    ConvUnit::Train(cb) => &cb.conv,
                    ConvUnit::Deployed(c) => c,
                };
                layers.push(conv_cost(node.name.clone(), p, m_out));
            }
            Op::Detect(head) => {
                let p = match head {
                    DetectHead::Train { conv, .. } => conv,
                    DetectHead::Deployed(c) => c,
                };
                layers.push(conv_cost(node.name.clone(), p, m_out));
            }
            Op::MaxPool { .. } => {
                layers.push(LayerCost::movement(node.name.clone(), "maxpool", elems(node.inputs[0]), out_elems))
            }
            Op::Upsample { .. } => {
                layers.push(LayerCost::movement(node.name.clone(), "upsample", elems(node.inputs[0]), out_elems))
            }
            Op::Concat => {
                let inp = node.inputs.iter().map(|&j| elems(j)).sum();
                layers.push(LayerCost::movement(node.name.clone(), "concat", inp, out_elems));
            }
        }
    }
    let cfg = model.config();
    Ok(ComplexityReport::from_layers(
        format!(
            "model {}x{} ({}), config {}",
            cfg.input_size,
            cfg.input_size,
            model.mode().as_str(),
            cfg.hash()
        ),
        layers,
    ))
}

/// The reference RCS-OSA/ELAN closed forms next to this crate's own
/// structural count of a deployed RCS-OSA module.
#[derive(Debug, Clone, PartialEq)]
pub struct OsaElanComparison {
    pub c: u64,
    pub m: u64,
    pub n: usize,
    /// Only reported for `n == 4`, the depth the closed forms describe.
    pub closed_forms: Option<ClosedForms>,
    pub structural: ComplexityReport,
    /// `structural.flops - closed_forms.rcs_osa`, when the closed forms apply.
    pub flops_delta: Option<f64>,
}

impl OsaElanComparison {
    pub fn to_text(&self) -> String {
        let mut out = self.structural.to_text();
        match (&self.closed_forms, self.flops_delta) {
            (Some(p), Some(d)) => {
                let _ = writeln!(
                    out,
                    "structural deployed FLOPs {} vs RCS-OSA closed form {} (delta {d}); ratio RCS-OSA/ELAN {}",
                    self.structural.flops, p.rcs_osa, p.ratio
                );
            }
            _ => {
                let _ = writeln!(out, "closed forms describe n = 4 only; structural count reported alone");
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,value\n");
        let _ = writeln!(out, "structural_flops,{}", self.structural.flops);
        let _ = writeln!(out, "structural_mac,{}", self.structural.mac);
        if let Some(p) = &self.closed_forms {
            for (k, v) in [
                ("rcs_osa_flops", p.rcs_osa),
                ("elan_flops", p.elan),
                ("ratio", p.ratio),
                ("rcs_osa_mac", p.mac_rcs_osa),
                ("elan_mac", p.mac_elan),
            ] {
                let _ = writeln!(out, "{k},{v}");
            }
        }
        if let Some(d) = self.flops_delta {
            let _ = writeln!(out, "flops_delta,{d}");
        }
        out
    }
}

pub fn compare_osa_elan(c: u64, m: u64, n: usize) -> Result<OsaElanComparison> {
    if c < 2 || c % 2 != 0 || m == 0 {
        return Err(Error::Precondition(format!(
            "comparison needs even C >= 2 and M >= 1, got C={c} M={m}"
        )));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let osa = RcsOsa::init(c as usize, n, crate::tensor::BN_EPS, &mut rng)?.to_deployed()?;
    let mut structural = osa_complexity(&osa, m);
    let forms = (n == 4).then(|| ClosedForms::at(c, m));
    structural.closed_forms = forms;
    Ok(OsaElanComparison {
        c,
        m,
        n,
        closed_forms: forms,
        flops_delta: forms.map(|p| structural.flops as f64 - p.rcs_osa),
        structural,
    })
}
