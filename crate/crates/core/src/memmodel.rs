//! Analytical memory model: parameter counts per layer and their size in bits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ConvSpec, Layer, NetworkArch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamLayerKind {
    Conv,
    FullyConnected,
    ParameterFree,
}

/// Weight-tensor geometry of one parameterized (or parameter-free) layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParamSpec {
    pub kernel_h: u64,
    pub kernel_w: u64,
    pub in_channels: u64,
    pub filters: u64,
    pub has_bias: bool,
    pub kind: ParamLayerKind,
}

impl LayerParamSpec {
    pub fn conv(kernel: u64, in_channels: u64, filters: u64, has_bias: bool) -> Self {
        LayerParamSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            filters,
            has_bias,
            kind: ParamLayerKind::Conv,
        }
    }

    pub fn fully_connected(in_features: u64, out_features: u64, has_bias: bool) -> Self {
        LayerParamSpec {
            kernel_h: 1,
            kernel_w: 1,
            in_channels: in_features,
            filters: out_features,
            has_bias,
            kind: ParamLayerKind::FullyConnected,
        }
    }

    pub fn parameter_free() -> Self {
        LayerParamSpec {
            kernel_h: 0,
            kernel_w: 0,
            in_channels: 0,
            filters: 0,
            has_bias: false,
            kind: ParamLayerKind::ParameterFree,
        }
    }

    fn from_conv(spec: &ConvSpec) -> Self {
        LayerParamSpec::conv(
            spec.kernel as u64,
            spec.in_channels as u64,
            spec.out_channels as u64,
            spec.bias,
        )
    }
}

/// `h * w * c * r` weights plus `r` biases when present; zero for parameter-free layers.
pub fn count_layer_params(spec: &LayerParamSpec) -> u64 {
    match spec.kind {
        ParamLayerKind::ParameterFree => 0,
        ParamLayerKind::Conv | ParamLayerKind::FullyConnected => {
            let weights = spec.kernel_h * spec.kernel_w * spec.in_channels * spec.filters;
            let biases = if spec.has_bias { spec.filters } else { 0 };
            weights + biases
        }
    }
}

/// Parameter specs for a layer. A cell block expands to one spec per edge.
pub fn layer_param_specs(layer: &Layer) -> Vec<LayerParamSpec> {
    match layer {
        Layer::Conv { spec, .. } => vec![LayerParamSpec::from_conv(spec)],
        Layer::Cell(block) => block
            .edge_convs()
            .iter()
            .map(|c| match c {
                Some(spec) => LayerParamSpec::from_conv(spec),
                None => LayerParamSpec::parameter_free(),
            })
            .collect(),
        Layer::FullyConnected {
            in_features,
            out_features,
            bias,
            ..
        } => vec![LayerParamSpec::fully_connected(
            *in_features as u64,
            *out_features as u64,
            *bias,
        )],
        Layer::AvgPool { .. } | Layer::Lif { .. } | Layer::GlobalAvgPool { .. } => {
            vec![LayerParamSpec::parameter_free()]
        }
    }
}

pub fn count_network_params(net: &NetworkArch) -> u64 {
    net.layers()
        .iter()
        .flat_map(layer_param_specs)
        .map(|s| count_layer_params(&s))
        .sum()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BudgetError {
    #[error("max_params must be at least 1")]
    ZeroParams,
    #[error("bit precision {0} outside 1..=64")]
    BadPrecision(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub max_params: u64,
    pub bit_precision: u32,
}

impl MemoryBudget {
    pub fn new(max_params: u64, bit_precision: u32) -> Result<Self, BudgetError> {
        if max_params == 0 {
            return Err(BudgetError::ZeroParams);
        }
        if !(1..=64).contains(&bit_precision) {
            return Err(BudgetError::BadPrecision(bit_precision));
        }
        Ok(MemoryBudget {
            max_params,
            bit_precision,
        })
    }

    pub fn admits(&self, n_param: u64) -> bool {
        n_param <= self.max_params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub n_param: u64,
    pub bits: u64,
    pub bytes: u64,
}

pub fn memory_footprint(n_param: u64, bit_precision: u32) -> MemoryFootprint {
    let bits = n_param * bit_precision as u64;
    MemoryFootprint {
        n_param,
        bits,
        bytes: bits.div_ceil(8),
    }
}

pub fn memory_bytes(n_param: u64, budget: &MemoryBudget) -> MemoryFootprint {
    memory_footprint(n_param, budget.bit_precision)
}
