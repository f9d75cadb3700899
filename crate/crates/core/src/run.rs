//! End-to-end orchestration: dataset -> scoring batch -> search -> report.

use thiserror::Error;

use crate::arch::{
    decode_cell, ArchError, BiasConfig, MacroConfig, NetworkArch, OpSet, Operation, Shape,
};
use crate::config::RunConfig;
use crate::data::{self, DataError, Dataset, DatasetKind, Normalization};
use crate::memmodel::{
    count_network_params, memory_footprint, BudgetError, MemoryBudget, MemoryFootprint,
};
use crate::mix_seed;
use crate::report::ReportDoc;
use crate::scenario::{self, Scenario};
use crate::score::{ScoreError, ScoreResult, ScoreSettings};
use crate::search::{
    ablate_operation, search_memory_aware, search_random, AblationStrategy, CellFixing,
    ProxyEvaluator, SearchConfig, SearchError, SearchReport,
};
use crate::snn::{ForwardOptions, InputCoding, LifParams, SpikeTensor};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

const RATE_STREAM: u64 = 0xA7E;

pub fn load_dataset(kind: DatasetKind, cfg: &RunConfig) -> Result<Dataset, DataError> {
    match kind {
        DatasetKind::Synthetic => Ok(data::synth_dataset(
            cfg.synthetic_records.max(cfg.batch_size),
            scenario::num_classes(kind),
            cfg.seed,
        )),
        _ => {
            let dir = cfg.data_dir.as_ref().ok_or_else(|| {
                DataError::DatasetUnavailable(format!(
                    "no data directory given (use --data-dir or {})",
                    data::DATA_DIR_ENV
                ))
            })?;
            data::load_from_dir(kind, dir)
        }
    }
}

/// Seeded mini-batch, block-averaged to the configured resolution.
pub fn scoring_batch(dataset: &Dataset, cfg: &RunConfig) -> Result<SpikeTensor, DataError> {
    let norm = if cfg.standardize {
        Normalization::Standardize
    } else {
        Normalization::Unit
    };
    let batch = data::sample_batch(dataset, cfg.batch_size, cfg.seed, norm)?;
    Ok(batch.downsample(32 / cfg.resolution).to_tensor())
}

pub fn macro_config(cells: usize, kind: DatasetKind, cfg: &RunConfig) -> MacroConfig {
    MacroConfig {
        num_cells: cells,
        stem_channels: cfg.stem_channels,
        width_multiplier: cfg.width_multiplier,
        num_classes: scenario::num_classes(kind),
        input_shape: Shape::new(3, cfg.resolution, cfg.resolution),
        bias: if cfg.no_bias {
            BiasConfig::none()
        } else {
            BiasConfig::all()
        },
    }
}

pub fn score_settings(cfg: &RunConfig) -> ScoreSettings {
    ScoreSettings {
        lif: LifParams {
            tau_leak: cfg.tau,
            v_threshold: cfg.v_threshold,
            v_reset: cfg.v_reset,
            timesteps: cfg.timesteps,
        },
        alpha: cfg.alpha,
        forward: ForwardOptions {
            coding: if cfg.rate_coding {
                InputCoding::Rate {
                    seed: mix_seed(cfg.seed, RATE_STREAM),
                }
            } else {
                InputCoding::Direct
            },
            code_mode: cfg.code_mode,
        },
        diagnostics: false,
    }
}

pub fn search_config(
    opset: OpSet,
    cells: usize,
    kind: DatasetKind,
    budget: Option<MemoryBudget>,
    cfg: &RunConfig,
) -> SearchConfig {
    SearchConfig {
        opset,
        macro_config: macro_config(cells, kind, cfg),
        budget,
        seed: cfg.seed,
        jobs: cfg.jobs,
        cell_fixing: if cfg.literal_cell_fixing {
            CellFixing::Literal
        } else {
            CellFixing::BestSoFar
        },
        keep_log: false,
    }
}

/// Budget of a scenario: the `--budget` override or the dataset preset,
/// only when the scenario is constrained.
pub fn scenario_budget(
    scenario: &Scenario,
    kind: DatasetKind,
    cfg: &RunConfig,
) -> Result<Option<MemoryBudget>, BudgetError> {
    scenario
        .budget_for(kind)
        .map(|preset| MemoryBudget::new(cfg.budget.unwrap_or(preset), cfg.bits))
        .transpose()
}

pub struct RunOutput {
    pub doc: ReportDoc,
    pub report: SearchReport,
}

fn evaluator(kind: DatasetKind, cfg: &RunConfig) -> Result<ProxyEvaluator, RunError> {
    let dataset = load_dataset(kind, cfg)?;
    Ok(ProxyEvaluator::new(
        scoring_batch(&dataset, cfg)?,
        score_settings(cfg),
    ))
}

/// Memory-aware search for a scenario.
pub fn run_scenario(
    scenario: &Scenario,
    kind: DatasetKind,
    cfg: &RunConfig,
    keep_log: bool,
) -> Result<RunOutput, RunError> {
    let budget = scenario_budget(scenario, kind, cfg)?;
    let eval = evaluator(kind, cfg)?;
    let mut scfg = search_config(scenario.opset(), scenario.cells, kind, budget, cfg);
    scfg.keep_log = keep_log;
    let report = search_memory_aware(&scfg, &eval)?;
    let doc = ReportDoc::from_search(
        &scenario.to_string(),
        kind.name(),
        &report,
        budget,
        cfg.bits,
        cfg.seed,
    );
    Ok(RunOutput { doc, report })
}

/// Random-search baseline for a scenario's cell count and operation set.
pub fn run_random(
    scenario: &Scenario,
    kind: DatasetKind,
    cfg: &RunConfig,
    keep_log: bool,
) -> Result<RunOutput, RunError> {
    let budget = if cfg.random_budget {
        scenario_budget(scenario, kind, cfg)?
    } else {
        None
    };
    let eval = evaluator(kind, cfg)?;
    let mut scfg = search_config(scenario.opset(), scenario.cells, kind, budget, cfg);
    scfg.keep_log = keep_log;
    let report = search_random(&scfg, cfg.iterations, &eval)?;
    let doc = ReportDoc::from_search(
        &scenario.to_string(),
        kind.name(),
        &report,
        budget,
        cfg.bits,
        cfg.seed,
    );
    Ok(RunOutput { doc, report })
}

/// Search with one operation removed; constrained only when `cfg.budget` is set.
pub fn run_ablation(
    opset: &OpSet,
    cells: usize,
    removed: Operation,
    strategy: AblationStrategy,
    kind: DatasetKind,
    cfg: &RunConfig,
    keep_log: bool,
) -> Result<RunOutput, RunError> {
    let budget = cfg
        .budget
        .map(|b| MemoryBudget::new(b, cfg.bits))
        .transpose()?;
    // Validate before touching the dataset.
    opset.without(removed)?;
    let eval = evaluator(kind, cfg)?;
    let mut scfg = search_config(opset.clone(), cells, kind, budget, cfg);
    scfg.keep_log = keep_log;
    let report = ablate_operation(&scfg, removed, strategy, &eval)?;
    let doc = ReportDoc::from_search(
        &format!("{cells}C{}", opset.name()),
        kind.name(),
        &report,
        budget,
        cfg.bits,
        cfg.seed,
    );
    Ok(RunOutput { doc, report })
}

pub fn network_from_indices(
    opset: &OpSet,
    indices: &[u64],
    kind: DatasetKind,
    cfg: &RunConfig,
) -> Result<NetworkArch, ArchError> {
    let cells = indices
        .iter()
        .map(|&i| decode_cell(i, opset))
        .collect::<Result<Vec<_>, _>>()?;
    NetworkArch::new(cells, macro_config(indices.len(), kind, cfg))
}

/// Scores one architecture with the same seeding the searches use.
pub fn score_architecture(
    net: &NetworkArch,
    kind: DatasetKind,
    cfg: &RunConfig,
    diagnostics: bool,
) -> Result<ScoreResult, RunError> {
    let dataset = load_dataset(kind, cfg)?;
    let batch = scoring_batch(&dataset, cfg)?;
    let settings = ScoreSettings {
        diagnostics,
        ..score_settings(cfg)
    };
    let seed = crate::search::candidate_seed(cfg.seed, net.cells());
    Ok(crate::score::score_candidate(net, &batch, &settings, seed)?)
}

pub fn memcalc(net: &NetworkArch, bits: u32) -> MemoryFootprint {
    memory_footprint(count_network_params(net), bits)
}
