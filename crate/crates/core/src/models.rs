//! Autoencoder family and the task classifier.
//!
//! Encoder: 3x3 conv (2 -> 2), batch norm, activation, optional refinement
//! blocks, flatten, dense to the code. Decoder: dense back to `2 N_t N_c`,
//! reshape, refinement blocks, 3x3 conv (2 -> 2), sigmoid.
//!
//! A refinement block is conv(2 -> a), BN, act, conv(a -> b), BN, act,
//! conv(b -> 2), BN, a skip connection and a final activation.

use std::fmt;
use std::str::FromStr;

use csi_nn::{Activation, LayerSpec, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{config, CsiError, Result};

/// Hidden width unit of a refinement block. Width-`K` blocks use `13 K`
/// channels in both hidden convolutions.
pub const REFINE_UNIT: usize = 13;

pub const GATE_HIDDEN: [usize; 2] = [2048, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Family {
    SimpleCnn,
    CsiNet,
    CsiNetEncPlus,
    CsiNetWide(usize),
}

impl Family {
    /// Refinement blocks in (encoder, decoder).
    pub fn blocks(&self) -> (usize, usize) {
        match self {
            Family::SimpleCnn => (0, 0),
            Family::CsiNet | Family::CsiNetWide(_) => (0, 2),
            Family::CsiNetEncPlus => (2, 2),
        }
    }

    /// Hidden channels of each refinement block.
    pub fn refine_widths(&self) -> (usize, usize) {
        let k = match self {
            Family::CsiNetWide(k) => *k,
            _ => 1,
        };
        (REFINE_UNIT * k, REFINE_UNIT * k)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::SimpleCnn => f.write_str("SimpleCNN"),
            Family::CsiNet => f.write_str("CsiNet"),
            Family::CsiNetEncPlus => f.write_str("CsiNet_enc+"),
            Family::CsiNetWide(k) => write!(f, "CsiNet_{k}wide"),
        }
    }
}

impl FromStr for Family {
    type Err = CsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SimpleCNN" => Ok(Family::SimpleCnn),
            "CsiNet" => Ok(Family::CsiNet),
            "CsiNet_enc+" => Ok(Family::CsiNetEncPlus),
            _ => s
                .strip_prefix("CsiNet_")
                .and_then(|r| r.strip_suffix("wide"))
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(Family::CsiNetWide)
                .ok_or_else(|| config(format!("unknown architecture family '{s}'"))),
        }
    }
}

impl TryFrom<String> for Family {
    type Error = CsiError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Family> for String {
    fn from(f: Family) -> String {
        f.to_string()
    }
}

/// Compression ratio `dim(s) / (2 N_t N_c)`, written `1/16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub const fn new(num: usize, den: usize) -> Self {
        Ratio { num, den }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = CsiError;

    fn from_str(s: &str) -> Result<Self> {
        let (n, d) = s
            .split_once('/')
            .ok_or_else(|| config(format!("compression ratio '{s}' is not of the form a/b")))?;
        let num = n.trim().parse().map_err(|_| config(format!("bad ratio numerator in '{s}'")))?;
        let den = d.trim().parse().map_err(|_| config(format!("bad ratio denominator in '{s}'")))?;
        if num == 0 || den == 0 || num > den {
            return Err(config(format!("compression ratio '{s}' must lie in (0, 1]")));
        }
        Ok(Ratio { num, den })
    }
}

impl TryFrom<String> for Ratio {
    type Error = CsiError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub family: Family,
    pub cr: Ratio,
    pub n_tx: usize,
    pub n_c: usize,
    #[serde(default = "default_activation", with = "activation_text")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

mod activation_text {
    use csi_nn::Activation;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(a: &Activation, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&a.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Activation, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl ArchSpec {
    pub fn new(family: Family, cr: Ratio, n_tx: usize, n_c: usize) -> Self {
        ArchSpec {
            family,
            cr,
            n_tx,
            n_c,
            activation: default_activation(),
        }
    }

    pub fn input_len(&self) -> usize {
        2 * self.n_tx * self.n_c
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![2, self.n_tx, self.n_c]
    }

    pub fn code_len(&self) -> Result<usize> {
        let total = self.input_len() * self.cr.num;
        if self.n_tx == 0 || self.n_c == 0 || total % self.cr.den != 0 {
            return Err(config(format!(
                "compression ratio {} gives a non-integer code length for input {}x{}x2",
                self.cr, self.n_tx, self.n_c
            )));
        }
        Ok(total / self.cr.den)
    }

    /// Label stored in weight files.
    pub fn label(&self) -> String {
        format!("{} cr={} act={}", self.family, self.cr, self.activation)
    }
}

fn refine_block(name: &str, widths: (usize, usize), act: Activation) -> Vec<LayerSpec> {
    let (a, b) = widths;
    vec![
        LayerSpec::residual(
            name,
            vec![
                LayerSpec::conv3x3("conv1", 2, a),
                LayerSpec::batch_norm("bn1", a),
                LayerSpec::activation("act1", act),
                LayerSpec::conv3x3("conv2", a, b),
                LayerSpec::batch_norm("bn2", b),
                LayerSpec::activation("act2", act),
                LayerSpec::conv3x3("conv3", b, 2),
                LayerSpec::batch_norm("bn3", 2),
            ],
        ),
        LayerSpec::activation(format!("{name}.act"), act),
    ]
}

pub fn build_encoder(spec: &ArchSpec) -> Result<ModelSpec> {
    let code = spec.code_len()?;
    let act = spec.activation;
    let mut layers = vec![
        LayerSpec::conv3x3("enc.conv", 2, 2),
        LayerSpec::batch_norm("enc.bn", 2),
        LayerSpec::activation("enc.act", act),
    ];
    for i in 0..spec.family.blocks().0 {
        layers.extend(refine_block(&format!("enc.refine{}", i + 1), spec.family.refine_widths(), act));
    }
    layers.push(LayerSpec::reshape("enc.flatten", vec![spec.input_len()]));
    layers.push(LayerSpec::dense("enc.fc", spec.input_len(), code));
    Ok(ModelSpec::new(spec.input_shape(), layers)?)
}

pub fn build_decoder(spec: &ArchSpec) -> Result<ModelSpec> {
    let code = spec.code_len()?;
    let act = spec.activation;
    let mut layers = vec![
        LayerSpec::dense("dec.fc", code, spec.input_len()),
        LayerSpec::reshape("dec.unflatten", spec.input_shape()),
    ];
    for i in 0..spec.family.blocks().1 {
        layers.extend(refine_block(&format!("dec.refine{}", i + 1), spec.family.refine_widths(), act));
    }
    layers.push(LayerSpec::conv3x3("dec.conv", 2, 2));
    layers.push(LayerSpec::activation("dec.sigmoid", Activation::Sigmoid));
    Ok(ModelSpec::new(vec![code], layers)?)
}

pub fn build_gatenet(code_len: usize, n_tasks: usize) -> Result<ModelSpec> {
    if code_len == 0 {
        return Err(config("GateNet code length must be positive"));
    }
    if n_tasks < 2 {
        return Err(config("GateNet needs at least two tasks"));
    }
    let [h1, h2] = GATE_HIDDEN;
    Ok(ModelSpec::new(
        vec![code_len],
        vec![
            LayerSpec::dense("gate.fc1", code_len, h1),
            LayerSpec::batch_norm("gate.bn1", h1),
            LayerSpec::activation("gate.act1", Activation::Relu),
            LayerSpec::dense("gate.fc2", h1, h2),
            LayerSpec::batch_norm("gate.bn2", h2),
            LayerSpec::activation("gate.act2", Activation::Relu),
            LayerSpec::dense("gate.fc3", h2, n_tasks),
            LayerSpec::batch_norm("gate.bn3", n_tasks),
            LayerSpec::activation("gate.softmax", Activation::Softmax),
        ],
    )?)
}
