//! Cell and macro-architecture representation.
//!
//! A cell is the complete feed-forward DAG on four nodes (0 = input,
//! 3 = output) with one operation per edge. Candidates are encoded as
//! base-`|OpSet|` integers, little-endian in edge order
//! `con01, con02, con03, con12, con13, con23`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_EDGES: usize = 6;
pub const MAX_CELLS: usize = 3;

/// `(from, to)` node pairs in encoding order.
pub const EDGES: [(usize, usize); NUM_EDGES] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArchError {
    #[error("edge {edge} uses {op}, which is not in operation set {opset}")]
    EdgeOpNotInSet {
        edge: &'static str,
        op: Operation,
        opset: String,
    },
    #[error("candidate index {index} out of range for a space of {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("invalid operation set: {0}")]
    InvalidOpSet(String),
    #[error("operation set {opset} would be left with {remaining} operation(s)")]
    OpSetTooSmall { opset: String, remaining: usize },
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("invalid macro configuration: {0}")]
    InvalidMacroConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operation {
    Zeroize,
    SkipCon,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

impl Operation {
    pub const ALL: [Operation; 5] = [
        Operation::Zeroize,
        Operation::SkipCon,
        Operation::Conv1x1,
        Operation::Conv3x3,
        Operation::AvgPool3x3,
    ];

    /// Stable integer code, 0..=4.
    pub fn code(self) -> u8 {
        match self {
            Operation::Zeroize => 0,
            Operation::SkipCon => 1,
            Operation::Conv1x1 => 2,
            Operation::Conv3x3 => 3,
            Operation::AvgPool3x3 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Operation> {
        Operation::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Operation::Zeroize => "Zeroize",
            Operation::SkipCon => "SkipCon",
            Operation::Conv1x1 => "Conv1x1",
            Operation::Conv3x3 => "Conv3x3",
            Operation::AvgPool3x3 => "AvgPool3x3",
        }
    }

    /// Kernel size for convolutions, `None` otherwise.
    pub fn conv_kernel(self) -> Option<usize> {
        match self {
            Operation::Conv1x1 => Some(1),
            Operation::Conv3x3 => Some(3),
            _ => None,
        }
    }

    pub fn is_conv(self) -> bool {
        self.conv_kernel().is_some()
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operation {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "zeroize" | "none" | "zero" => Ok(Operation::Zeroize),
            "skipcon" | "skip" | "skipconnect" => Ok(Operation::SkipCon),
            "conv1x1" | "1x1conv" => Ok(Operation::Conv1x1),
            "conv3x3" | "3x3conv" => Ok(Operation::Conv3x3),
            "avgpool3x3" | "3x3avgpool" | "avgpool" => Ok(Operation::AvgPool3x3),
            _ => Err(ArchError::UnknownOperation(s.to_string())),
        }
    }
}

/// Ordered list of admissible edge operations. The position of an
/// operation in the list is its digit value in candidate encodings.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OpSet {
    name: String,
    ops: Vec<Operation>,
}

impl OpSet {
    pub fn new(name: impl Into<String>, ops: Vec<Operation>) -> Result<OpSet, ArchError> {
        let name = name.into();
        if ops.is_empty() {
            return Err(ArchError::InvalidOpSet(format!("{name}: empty")));
        }
        for (i, op) in ops.iter().enumerate() {
            if ops[..i].contains(op) {
                return Err(ArchError::InvalidOpSet(format!("{name}: duplicate {op}")));
            }
        }
        Ok(OpSet { name, ops })
    }

    /// All five operations in code order.
    pub fn five() -> OpSet {
        OpSet {
            name: "5O".into(),
            ops: Operation::ALL.to_vec(),
        }
    }

    pub fn three() -> OpSet {
        OpSet {
            name: "3O".into(),
            ops: vec![
                Operation::SkipCon,
                Operation::Conv3x3,
                Operation::AvgPool3x3,
            ],
        }
    }

    pub fn two() -> OpSet {
        OpSet {
            name: "2O".into(),
            ops: vec![Operation::SkipCon, Operation::Conv3x3],
        }
    }

    /// Preset lookup by operation count (5, 3 or 2).
    pub fn preset(count: usize) -> Option<OpSet> {
        match count {
            5 => Some(OpSet::five()),
            3 => Some(OpSet::three()),
            2 => Some(OpSet::two()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ops(&self) -> &[Operation] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn contains(&self, op: Operation) -> bool {
        self.ops.contains(&op)
    }

    pub fn position(&self, op: Operation) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }

    /// The set with `removed` dropped. At least two operations must remain
    /// in the original set for an ablation to make sense.
    pub fn without(&self, removed: Operation) -> Result<OpSet, ArchError> {
        if !self.contains(removed) {
            return Err(ArchError::InvalidOpSet(format!(
                "{} does not contain {removed}",
                self.name
            )));
        }
        if self.len() < 2 {
            return Err(ArchError::OpSetTooSmall {
                opset: self.name.clone(),
                remaining: self.len() - 1,
            });
        }
        let ops: Vec<Operation> = self.ops.iter().copied().filter(|&o| o != removed).collect();
        if ops.len() < 2 {
            return Err(ArchError::OpSetTooSmall {
                opset: self.name.clone(),
                remaining: ops.len(),
            });
        }
        Ok(OpSet {
            name: format!("{}-{}", self.name, removed),
            ops,
        })
    }

    /// The set with `added` inserted at its code-order position.
    pub fn with(&self, added: Operation) -> Result<OpSet, ArchError> {
        if self.contains(added) {
            return Err(ArchError::InvalidOpSet(format!(
                "{} already contains {added}",
                self.name
            )));
        }
        let mut ops = self.ops.clone();
        let at = ops
            .iter()
            .position(|o| o.code() > added.code())
            .unwrap_or(ops.len());
        ops.insert(at, added);
        let suffix = format!("-{added}");
        let name = match self.name.strip_suffix(&suffix) {
            Some(base) => base.to_string(),
            None => format!("{}+{}", self.name, added),
        };
        Ok(OpSet { name, ops })
    }
}

impl fmt::Display for OpSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for OpSet {
    type Err = ArchError;

    /// Accepts a preset name (`5O`, `3O`, `2O`), a preset with removed or
    /// added operations (`5O-Zeroize`, `2O+AvgPool3x3`), or a comma-separated
    /// list of operation names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if !trimmed.contains(',') {
            if let Some(at) = trimmed.rfind(['-', '+']) {
                let base: OpSet = trimmed[..at].parse()?;
                let op: Operation = trimmed[at + 1..].parse()?;
                return if trimmed[at..].starts_with('-') {
                    base.without(op)
                } else {
                    base.with(op)
                };
            }
        }
        let upper = trimmed.to_ascii_uppercase();
        if let Some(n) = upper
            .strip_suffix('O')
            .and_then(|n| n.parse::<usize>().ok())
        {
            return OpSet::preset(n)
                .ok_or_else(|| ArchError::InvalidOpSet(format!("no preset named {trimmed}")));
        }
        let ops = trimmed
            .split(',')
            .map(|p| p.trim().parse::<Operation>())
            .collect::<Result<Vec<_>, _>>()?;
        let name = ops.iter().map(|o| o.name()).collect::<Vec<_>>().join(",");
        OpSet::new(name, ops)
    }
}

/// `|ops|^6`.
pub fn search_space_size(ops: &OpSet) -> u64 {
    (ops.len() as u64).pow(NUM_EDGES as u32)
}

/// One cell: an operation on each of the six edges of the 4-node DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellArch {
    edges: [Operation; NUM_EDGES],
}

impl CellArch {
    pub const EDGE_NAMES: [&'static str; NUM_EDGES] =
        ["con01", "con02", "con03", "con12", "con13", "con23"];

    pub fn new(edges: [Operation; NUM_EDGES]) -> CellArch {
        CellArch { edges }
    }

    pub fn uniform(op: Operation) -> CellArch {
        CellArch {
            edges: [op; NUM_EDGES],
        }
    }

    pub fn edges(&self) -> &[Operation; NUM_EDGES] {
        &self.edges
    }

    /// Operation on the edge `from -> to`, if that pair is an edge.
    pub fn edge(&self, from: usize, to: usize) -> Option<Operation> {
        EDGES
            .iter()
            .position(|&e| e == (from, to))
            .map(|i| self.edges[i])
    }

    pub fn con01(&self) -> Operation {
        self.edges[0]
    }
    pub fn con02(&self) -> Operation {
        self.edges[1]
    }
    pub fn con03(&self) -> Operation {
        self.edges[2]
    }
    pub fn con12(&self) -> Operation {
        self.edges[3]
    }
    pub fn con13(&self) -> Operation {
        self.edges[4]
    }
    pub fn con23(&self) -> Operation {
        self.edges[5]
    }

    pub fn with_edge(mut self, edge: usize, op: Operation) -> CellArch {
        self.edges[edge] = op;
        self
    }
}

impl fmt::Display for CellArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, op)) in Self::EDGE_NAMES.iter().zip(self.edges).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{name}={op}")?;
        }
        Ok(())
    }
}

pub fn encode_cell(cell: &CellArch, ops: &OpSet) -> Result<u64, ArchError> {
    let base = ops.len() as u64;
    let mut index = 0u64;
    for (i, &op) in cell.edges.iter().enumerate().rev() {
        let digit = ops.position(op).ok_or_else(|| ArchError::EdgeOpNotInSet {
            edge: CellArch::EDGE_NAMES[i],
            op,
            opset: ops.name().to_string(),
        })?;
        index = index * base + digit as u64;
    }
    Ok(index)
}

pub fn decode_cell(index: u64, ops: &OpSet) -> Result<CellArch, ArchError> {
    let size = search_space_size(ops);
    if index >= size {
        return Err(ArchError::IndexOutOfRange { index, size });
    }
    let base = ops.len() as u64;
    let mut rest = index;
    let mut edges = [ops.ops()[0]; NUM_EDGES];
    for slot in edges.iter_mut() {
        *slot = ops.ops()[(rest % base) as usize];
        rest /= base;
    }
    Ok(CellArch { edges })
}

/// Which layer kinds carry a bias vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub stem: bool,
    pub cell: bool,
    pub downsample: bool,
    pub classifier: bool,
}

impl BiasConfig {
    pub fn all() -> BiasConfig {
        BiasConfig {
            stem: true,
            cell: true,
            downsample: true,
            classifier: true,
        }
    }

    pub fn none() -> BiasConfig {
        BiasConfig {
            stem: false,
            cell: false,
            downsample: false,
            classifier: false,
        }
    }
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig::all()
    }
}

/// Channel/spatial shape of one sample's feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Shape {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Fixed skeleton the searched cells are inserted into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub num_cells: usize,
    pub stem_channels: usize,
    /// Channel growth factor applied by every downsample stage.
    pub width_multiplier: usize,
    pub num_classes: usize,
    pub input_shape: Shape,
    #[serde(default)]
    pub bias: BiasConfig,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            num_cells: 2,
            stem_channels: 64,
            width_multiplier: 2,
            num_classes: 10,
            input_shape: Shape::new(3, 32, 32),
            bias: BiasConfig::all(),
        }
    }
}

impl MacroConfig {
    pub fn with_cells(mut self, num_cells: usize) -> MacroConfig {
        self.num_cells = num_cells;
        self
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |msg: String| Err(ArchError::InvalidMacroConfig(msg));
        if !(1..=MAX_CELLS).contains(&self.num_cells) {
            return bad(format!("unsupported cell count {}", self.num_cells));
        }
        if self.stem_channels == 0 {
            return bad("stem_channels must be positive".into());
        }
        if self.width_multiplier == 0 {
            return bad("width_multiplier must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        let s = self.input_shape;
        if s.channels == 0 || s.height == 0 || s.width == 0 {
            return bad(format!("input shape {s} has a zero dimension"));
        }
        let shrink = 1usize << (self.num_cells - 1);
        if s.height < shrink || s.width < shrink {
            return bad(format!(
                "input {s} too small for {} downsample stage(s)",
                self.num_cells - 1
            ));
        }
        Ok(())
    }

    /// Channel width of each cell stage.
    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.num_cells)
            .map(|i| self.stem_channels * self.width_multiplier.pow(i as u32))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn weight_len(&self) -> usize {
        self.fan_in() * self.out_channels
    }
}

/// A cell instantiated at one stage of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellBlock {
    pub index: usize,
    pub cell: CellArch,
    pub shape: Shape,
    pub bias: bool,
}

impl CellBlock {
    /// Convolution for each edge, in edge order; `None` for parameter-free edges.
    pub fn edge_convs(&self) -> [Option<ConvSpec>; NUM_EDGES] {
        let mut out = [None; NUM_EDGES];
        for (slot, op) in out.iter_mut().zip(self.cell.edges) {
            *slot = op.conv_kernel().map(|k| ConvSpec {
                kernel: k,
                padding: k / 2,
                in_channels: self.shape.channels,
                out_channels: self.shape.channels,
                bias: self.bias,
            });
        }
        out
    }
}

/// One stage of the flattened network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    /// Stride-1 convolution that maps `input` to `output`.
    Conv {
        name: String,
        spec: ConvSpec,
        input: Shape,
        output: Shape,
    },
    /// Average pool with stride equal to the window.
    AvgPool {
        name: String,
        window: usize,
        input: Shape,
        output: Shape,
    },
    Cell(CellBlock),
    /// Spiking stage; its firing pattern is one layer of binary codes.
    Lif {
        name: String,
        shape: Shape,
    },
    GlobalAvgPool {
        input: Shape,
        output: Shape,
    },
    FullyConnected {
        name: String,
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
}

impl Layer {
    pub fn name(&self) -> String {
        match self {
            Layer::Conv { name, .. }
            | Layer::AvgPool { name, .. }
            | Layer::Lif { name, .. }
            | Layer::FullyConnected { name, .. } => name.clone(),
            Layer::Cell(block) => format!("cell{}", block.index),
            Layer::GlobalAvgPool { .. } => "gap".into(),
        }
    }

    pub fn output_shape(&self) -> Shape {
        match self {
            Layer::Conv { output, .. }
            | Layer::AvgPool { output, .. }
            | Layer::GlobalAvgPool { output, .. } => *output,
            Layer::Cell(block) => block.shape,
            Layer::Lif { shape, .. } => *shape,
            Layer::FullyConnected { out_features, .. } => Shape::new(*out_features, 1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkArch {
    cells: Vec<CellArch>,
    config: MacroConfig,
}

impl NetworkArch {
    pub fn new(cells: Vec<CellArch>, config: MacroConfig) -> Result<NetworkArch, ArchError> {
        if cells.is_empty() || cells.len() > MAX_CELLS {
            return Err(ArchError::InvalidMacroConfig(format!(
                "unsupported cell count {}",
                cells.len()
            )));
        }
        if cells.len() != config.num_cells {
            return Err(ArchError::InvalidMacroConfig(format!(
                "{} cell(s) given for a {}-cell macro",
                cells.len(),
                config.num_cells
            )));
        }
        config.validate()?;
        Ok(NetworkArch { cells, config })
    }

    /// Every cell set to `cell`.
    pub fn uniform(cell: CellArch, config: MacroConfig) -> Result<NetworkArch, ArchError> {
        let n = config.num_cells;
        NetworkArch::new(vec![cell; n], config)
    }

    pub fn cells(&self) -> &[CellArch] {
        &self.cells
    }

    pub fn config(&self) -> &MacroConfig {
        &self.config
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_indices(&self, ops: &OpSet) -> Result<Vec<u64>, ArchError> {
        self.cells.iter().map(|c| encode_cell(c, ops)).collect()
    }

    /// stem conv -> LIF -> [cell -> LIF -> avgpool 2x2 -> conv 1x1 -> LIF]* ->
    /// cell -> LIF -> global average pool -> FC -> LIF.
    pub fn layers(&self) -> Vec<Layer> {
        let cfg = &self.config;
        let input = cfg.input_shape;
        let mut layers = Vec::with_capacity(6 * self.cells.len() + 4);

        let mut shape = Shape::new(cfg.stem_channels, input.height, input.width);
        layers.push(Layer::Conv {
            name: "stem".into(),
            spec: ConvSpec {
                kernel: 3,
                padding: 1,
                in_channels: input.channels,
                out_channels: cfg.stem_channels,
                bias: cfg.bias.stem,
            },
            input,
            output: shape,
        });
        layers.push(Layer::Lif {
            name: "stem.lif".into(),
            shape,
        });

        for (i, cell) in self.cells.iter().enumerate() {
            layers.push(Layer::Cell(CellBlock {
                index: i,
                cell: *cell,
                shape,
                bias: cfg.bias.cell,
            }));
            layers.push(Layer::Lif {
                name: format!("cell{i}.lif"),
                shape,
            });
            if i + 1 < self.cells.len() {
                let pooled = Shape::new(shape.channels, shape.height / 2, shape.width / 2);
                layers.push(Layer::AvgPool {
                    name: format!("down{i}.pool"),
                    window: 2,
                    input: shape,
                    output: pooled,
                });
                let widened = Shape::new(
                    shape.channels * cfg.width_multiplier,
                    pooled.height,
                    pooled.width,
                );
                layers.push(Layer::Conv {
                    name: format!("down{i}.conv"),
                    spec: ConvSpec {
                        kernel: 1,
                        padding: 0,
                        in_channels: shape.channels,
                        out_channels: widened.channels,
                        bias: cfg.bias.downsample,
                    },
                    input: pooled,
                    output: widened,
                });
                layers.push(Layer::Lif {
                    name: format!("down{i}.lif"),
                    shape: widened,
                });
                shape = widened;
            }
        }

        let pooled = Shape::new(shape.channels, 1, 1);
        layers.push(Layer::GlobalAvgPool {
            input: shape,
            output: pooled,
        });
        layers.push(Layer::FullyConnected {
            name: "classifier".into(),
            in_features: shape.channels,
            out_features: cfg.num_classes,
            bias: cfg.bias.classifier,
        });
        layers.push(Layer::Lif {
            name: "classifier.lif".into(),
            shape: Shape::new(cfg.num_classes, 1, 1),
        });
        layers
    }
}

/// Assembles the network and its flattened layer list.
pub fn build_network(
    cells: &[CellArch],
    config: &MacroConfig,
) -> Result<(NetworkArch, Vec<Layer>), ArchError> {
    let net = NetworkArch::new(cells.to_vec(), config.clone())?;
    let layers = net.layers();
    Ok((net, layers))
}
