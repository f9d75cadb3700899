//! Memory-aware per-cell search, the random-search baseline and the
//! operation-ablation runner.
//!
//! Candidate scoring within a phase runs on a rayon pool of `jobs` workers.
//! Results are reduced in candidate order afterwards, so the outcome does
//! not depend on scheduling.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{
    decode_cell, search_space_size, ArchError, CellArch, MacroConfig, NetworkArch, OpSet, Operation,
};
use crate::memmodel::{count_network_params, MemoryBudget};
use crate::mix_seed;
use crate::score::{score_candidate, ScoreError, ScoreResult, ScoreSettings};
use crate::snn::SpikeTensor;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no architecture fits the budget of {budget} parameters (smallest candidate needs {min_params})")]
    NoFeasibleArchitecture { budget: u64, min_params: u64 },
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Scores a concrete network. `seed` fixes its random weights.
pub trait Evaluator: Sync {
    fn evaluate(&self, net: &NetworkArch, seed: u64) -> Result<ScoreResult, ScoreError>;
}

impl<F> Evaluator for F
where
    F: Fn(&NetworkArch, u64) -> Result<ScoreResult, ScoreError> + Sync,
{
    fn evaluate(&self, net: &NetworkArch, seed: u64) -> Result<ScoreResult, ScoreError> {
        self(net, seed)
    }
}

/// The Hamming-kernel log-determinant proxy on a fixed input batch.
#[derive(Debug, Clone)]
pub struct ProxyEvaluator {
    pub batch: SpikeTensor,
    pub settings: ScoreSettings,
}

impl ProxyEvaluator {
    pub fn new(batch: SpikeTensor, settings: ScoreSettings) -> ProxyEvaluator {
        ProxyEvaluator { batch, settings }
    }
}

impl Evaluator for ProxyEvaluator {
    fn evaluate(&self, net: &NetworkArch, seed: u64) -> Result<ScoreResult, ScoreError> {
        score_candidate(net, &self.batch, &self.settings, seed)
    }
}

/// How cells 1..i are held while cell i+1 is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellFixing {
    /// Earlier cells keep the best architecture found so far.
    #[default]
    BestSoFar,
    /// Earlier cells keep whatever was assigned last, as a literal in-place
    /// reading of the nested loops would leave them.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub opset: OpSet,
    /// Macro skeleton; `num_cells` is the number of searched cells.
    pub macro_config: MacroConfig,
    pub budget: Option<MemoryBudget>,
    pub seed: u64,
    pub jobs: usize,
    pub cell_fixing: CellFixing,
    pub keep_log: bool,
}

impl SearchConfig {
    pub fn new(opset: OpSet, macro_config: MacroConfig) -> SearchConfig {
        SearchConfig {
            opset,
            macro_config,
            budget: None,
            seed: 0,
            jobs: 1,
            cell_fixing: CellFixing::BestSoFar,
            keep_log: false,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        self.macro_config.validate()?;
        if self.jobs == 0 {
            return Err(SearchError::InvalidConfig("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.macro_config.num_cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    MemoryAware,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// 1-based phase for memory-aware search; draw number for random search.
    pub phase: usize,
    pub candidate_index: u64,
    pub cell_indices: Vec<u64>,
    /// `None` when skipped by the budget or when the score is singular.
    pub score: Option<f64>,
    pub n_param: u64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub mode: SearchMode,
    pub opset: OpSet,
    pub best_arch: NetworkArch,
    pub best_score: ScoreResult,
    pub n_param: u64,
    pub evaluations_total: u64,
    pub evaluations_skipped_by_budget: u64,
    /// Random search only: draws that repeated an earlier candidate.
    pub duplicate_draws: u64,
    pub per_cell_best_indices: Vec<u64>,
    pub removed: Option<Operation>,
    pub wall_time: Duration,
    pub candidate_log: Option<Vec<CandidateRecord>>,
}

impl SearchReport {
    pub fn candidates_visited(&self) -> u64 {
        self.evaluations_total + self.evaluations_skipped_by_budget
    }
}

/// Weight seed for a network: depends only on the run seed and the cells,
/// so the same network scores identically wherever it is visited.
pub fn candidate_seed(run_seed: u64, cells: &[CellArch]) -> u64 {
    cells
        .iter()
        .fold(mix_seed(run_seed, cells.len() as u64), |s, cell| {
            let code = cell
                .edges()
                .iter()
                .rev()
                .fold(0u64, |acc, op| acc * 5 + op.code() as u64);
            mix_seed(s, code)
        })
}

struct Incumbent {
    cells: Vec<CellArch>,
    score: ScoreResult,
    n_param: u64,
}

struct Visit {
    index: u64,
    cells: Vec<CellArch>,
    n_param: u64,
    feasible: bool,
}

fn build_pool(jobs: usize) -> Result<rayon::ThreadPool, SearchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SearchError::InvalidConfig(format!("worker pool: {e}")))
}

/// Scores the feasible visits in parallel, returning results in visit order.
fn score_visits<E: Evaluator>(
    pool: &rayon::ThreadPool,
    cfg: &SearchConfig,
    visits: &[Visit],
    eval: &E,
) -> Result<Vec<Option<ScoreResult>>, SearchError> {
    pool.install(|| {
        visits
            .par_iter()
            .map(|v| {
                if !v.feasible {
                    return Ok(None);
                }
                let net = NetworkArch::new(v.cells.clone(), cfg.macro_config.clone())?;
                let mut r = eval.evaluate(&net, candidate_seed(cfg.seed, &v.cells))?;
                r.diagnostics = None;
                Ok(Some(r))
            })
            .collect()
    })
}

fn visit(cfg: &SearchConfig, index: u64, cells: Vec<CellArch>) -> Result<Visit, SearchError> {
    let net = NetworkArch::new(cells, cfg.macro_config.clone())?;
    let n_param = count_network_params(&net);
    let feasible = cfg.budget.is_none_or(|b| b.admits(n_param));
    Ok(Visit {
        index,
        cells: net.cells().to_vec(),
        n_param,
        feasible,
    })
}

fn record(phase: usize, v: &Visit, score: Option<&ScoreResult>, opset: &OpSet) -> CandidateRecord {
    CandidateRecord {
        phase,
        candidate_index: v.index,
        cell_indices: v
            .cells
            .iter()
            .map(|c| crate::arch::encode_cell(c, opset).expect("cells drawn from opset"))
            .collect(),
        score: score.and_then(|s| s.as_option()),
        n_param: v.n_param,
        skipped: !v.feasible,
    }
}

/// Strict improvement keeps the earliest visit on ties.
fn offer(best: &mut Option<Incumbent>, v: &Visit, score: &ScoreResult) {
    let better = match best {
        None => true,
        Some(b) => score.cmp_value(&b.score).is_gt(),
    };
    if better {
        *best = Some(Incumbent {
            cells: v.cells.clone(),
            score: score.clone(),
            n_param: v.n_param,
        });
    }
}

fn no_feasible(cfg: &SearchConfig, visits: &[Visit]) -> SearchError {
    SearchError::NoFeasibleArchitecture {
        budget: cfg.budget.map_or(u64::MAX, |b| b.max_params),
        min_params: visits.iter().map(|v| v.n_param).min().unwrap_or(0),
    }
}

/// Phase 1 applies each cell architecture to every cell at once; phases
/// 2..=C re-search cell `i` alone with the other cells held fixed.
/// Candidates over budget are skipped without scoring.
pub fn search_memory_aware<E: Evaluator>(
    cfg: &SearchConfig,
    eval: &E,
) -> Result<SearchReport, SearchError> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = build_pool(cfg.jobs)?;
    let space = search_space_size(&cfg.opset);
    let cells_n = cfg.num_cells();
    let last = decode_cell(space - 1, &cfg.opset)?;

    let mut best: Option<Incumbent> = None;
    let mut context: Vec<CellArch> = Vec::new();
    let mut scored = 0u64;
    let mut skipped = 0u64;
    let mut log = cfg.keep_log.then(Vec::new);

    for phase in 1..=cells_n {
        let visits = (0..space)
            .map(|index| {
                let cell = decode_cell(index, &cfg.opset)?;
                let cells = if phase == 1 {
                    vec![cell; cells_n]
                } else {
                    let mut cells = context.clone();
                    cells[phase - 1] = cell;
                    cells
                };
                visit(cfg, index, cells)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scores = score_visits(&pool, cfg, &visits, eval)?;

        for (v, s) in visits.iter().zip(&scores) {
            match s {
                Some(score) => {
                    scored += 1;
                    offer(&mut best, v, score);
                }
                None => skipped += 1,
            }
            if let Some(log) = log.as_mut() {
                log.push(record(phase, v, s.as_ref(), &cfg.opset));
            }
        }

        let Some(incumbent) = best.as_ref() else {
            return Err(no_feasible(cfg, &visits));
        };
        context = match cfg.cell_fixing {
            CellFixing::BestSoFar => incumbent.cells.clone(),
            CellFixing::Literal if phase == 1 => vec![last; cells_n],
            CellFixing::Literal => {
                let mut c = context;
                c[phase - 1] = last;
                c
            }
        };
    }

    let best = best.expect("phase 1 produced an incumbent");
    finish(
        cfg,
        SearchMode::MemoryAware,
        best,
        scored,
        skipped,
        0,
        start,
        log,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cfg: &SearchConfig,
    mode: SearchMode,
    best: Incumbent,
    scored: u64,
    skipped: u64,
    duplicates: u64,
    start: Instant,
    log: Option<Vec<CandidateRecord>>,
) -> Result<SearchReport, SearchError> {
    let best_arch = NetworkArch::new(best.cells, cfg.macro_config.clone())?;
    let per_cell_best_indices = best_arch.cell_indices(&cfg.opset)?;
    Ok(SearchReport {
        mode,
        opset: cfg.opset.clone(),
        best_arch,
        best_score: best.score,
        n_param: best.n_param,
        evaluations_total: scored,
        evaluations_skipped_by_budget: skipped,
        duplicate_draws: duplicates,
        per_cell_best_indices,
        removed: None,
        wall_time: start.elapsed(),
        candidate_log: log,
    })
}

/// Stream id separating random-search draws from other uses of the run seed.
const RANDOM_DRAW_STREAM: u64 = 0x5EA4C4;

/// Candidate indices the random baseline draws (uniform, with replacement).
pub fn random_draws(opset: &OpSet, iterations: usize, seed: u64) -> Vec<u64> {
    let space = search_space_size(opset);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, RANDOM_DRAW_STREAM));
    (0..iterations)
        .map(|_| rng.random_range(0..space))
        .collect()
}

/// Draws `iterations` shared cell architectures uniformly with replacement,
/// applying each to every cell, and keeps the best feasible one.
pub fn search_random<E: Evaluator>(
    cfg: &SearchConfig,
    iterations: usize,
    eval: &E,
) -> Result<SearchReport, SearchError> {
    cfg.validate()?;
    if iterations == 0 {
        return Err(SearchError::InvalidConfig(
            "iterations must be positive".into(),
        ));
    }
    let start = Instant::now();
    let pool = build_pool(cfg.jobs)?;
    let draws = random_draws(&cfg.opset, iterations, cfg.seed);
    let mut seen = std::collections::HashSet::new();
    let duplicates = draws.iter().filter(|&&d| !seen.insert(d)).count() as u64;

    let visits = draws
        .iter()
        .map(|&index| {
            let cell = decode_cell(index, &cfg.opset)?;
            visit(cfg, index, vec![cell; cfg.num_cells()])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores = score_visits(&pool, cfg, &visits, eval)?;

    let mut best = None;
    let (mut scored, mut skipped) = (0, 0);
    let mut log = cfg.keep_log.then(Vec::new);
    for (draw, (v, s)) in visits.iter().zip(&scores).enumerate() {
        match s {
            Some(score) => {
                scored += 1;
                offer(&mut best, v, score);
            }
            None => skipped += 1,
        }
        if let Some(log) = log.as_mut() {
            log.push(record(draw + 1, v, s.as_ref(), &cfg.opset));
        }
    }
    let best = best.ok_or_else(|| no_feasible(cfg, &visits))?;
    finish(
        cfg,
        SearchMode::Random,
        best,
        scored,
        skipped,
        duplicates,
        start,
        log,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationStrategy {
    MemoryAware,
    Random { iterations: usize },
}

/// Searches with `removed` dropped from the operation set and tags the
/// report with it.
pub fn ablate_operation<E: Evaluator>(
    cfg: &SearchConfig,
    removed: Operation,
    strategy: AblationStrategy,
    eval: &E,
) -> Result<SearchReport, SearchError> {
    let reduced = cfg.opset.without(removed)?;
    let sub = SearchConfig {
        opset: reduced,
        ..cfg.clone()
    };
    let mut report = match strategy {
        AblationStrategy::MemoryAware => search_memory_aware(&sub, eval)?,
        AblationStrategy::Random { iterations } => search_random(&sub, iterations, eval)?,
    };
    report.removed = Some(removed);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{encode_cell, Shape};

    fn tiny_macro(cells: usize) -> MacroConfig {
        MacroConfig {
            num_cells: cells,
            stem_channels: 4,
            width_multiplier: 2,
            num_classes: 10,
            input_shape: Shape::new(3, 8, 8),
            bias: Default::default(),
        }
    }

    /// Deterministic stand-in score: pseudo-random in the seed.
    fn hashed(net: &NetworkArch, seed: u64) -> Result<ScoreResult, ScoreError> {
        let _ = net;
        Ok(ScoreResult::finite((mix_seed(seed, 1) % 1000) as f64))
    }

    #[test]
    fn candidate_count_law() {
        for cells in 1..=3 {
            let cfg = SearchConfig::new(OpSet::two(), tiny_macro(cells));
            let r = search_memory_aware(&cfg, &hashed).unwrap();
            assert_eq!(r.candidates_visited(), cells as u64 * 64);
            assert_eq!(r.evaluations_skipped_by_budget, 0);
        }
    }

    #[test]
    fn sequential_reference_matches() {
        // Direct transcription of the phase loop, single-threaded.
        let cfg = SearchConfig {
            jobs: 3,
            seed: 9,
            ..SearchConfig::new(OpSet::two(), tiny_macro(2))
        };
        let r = search_memory_aware(&cfg, &hashed).unwrap();

        let ops = OpSet::two();
        let mut best: Option<(f64, Vec<CellArch>)> = None;
        let mut visited = 0;
        for phase in 1..=2 {
            let base = best.as_ref().map(|b| b.1.clone());
            for i in 0..64 {
                let cell = decode_cell(i, &ops).unwrap();
                let cells = match &base {
                    None => vec![cell; 2],
                    Some(b) => {
                        let mut c = b.clone();
                        c[phase - 1] = cell;
                        c
                    }
                };
                visited += 1;
                let net = NetworkArch::new(cells.clone(), tiny_macro(2)).unwrap();
                let s = hashed(&net, candidate_seed(9, &cells)).unwrap().value;
                if best.as_ref().is_none_or(|b| s > b.0) {
                    best = Some((s, cells));
                }
            }
        }
        assert_eq!(visited, 128);
        let (score, cells) = best.unwrap();
        assert_eq!(r.best_score.value, score);
        assert_eq!(r.best_arch.cells(), &cells[..]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let flat = |_: &NetworkArch, _: u64| Ok(ScoreResult::finite(1.0));
        let cfg = SearchConfig::new(OpSet::three(), tiny_macro(2));
        let r = search_memory_aware(&cfg, &flat).unwrap();
        assert_eq!(r.per_cell_best_indices, vec![0, 0]);
    }

    #[test]
    fn budget_filters_and_errors() {
        let ops = OpSet::two();
        let macro_cfg = tiny_macro(1);
        let all_skip =
            NetworkArch::uniform(CellArch::uniform(Operation::SkipCon), macro_cfg.clone()).unwrap();
        let min = count_network_params(&all_skip);
        let mut cfg = SearchConfig::new(ops.clone(), macro_cfg);
        cfg.budget = Some(MemoryBudget::new(min - 1, 32).unwrap());
        match search_memory_aware(&cfg, &hashed) {
            Err(SearchError::NoFeasibleArchitecture { min_params, .. }) => {
                assert_eq!(min_params, min)
            }
            other => panic!("expected NoFeasibleArchitecture, got {other:?}"),
        }
        cfg.budget = Some(MemoryBudget::new(min, 32).unwrap());
        let r = search_memory_aware(&cfg, &hashed).unwrap();
        assert_eq!(r.evaluations_total, 1);
        assert_eq!(r.evaluations_skipped_by_budget, 63);
        assert_eq!(r.per_cell_best_indices, vec![0]);
    }

    #[test]
    fn literal_fixing_uses_last_assignment() {
        // Phase 2 holds cell 0 at the last phase-1 assignment.
        let cfg = SearchConfig {
            cell_fixing: CellFixing::Literal,
            keep_log: true,
            ..SearchConfig::new(OpSet::two(), tiny_macro(2))
        };
        let r = search_memory_aware(&cfg, &hashed).unwrap();
        let log = r.candidate_log.unwrap();
        let last = encode_cell(&CellArch::uniform(Operation::Conv3x3), &OpSet::two()).unwrap();
        assert!(log
            .iter()
            .filter(|c| c.phase == 2)
            .all(|c| c.cell_indices[0] == last));
    }

    #[test]
    fn random_search_basics() {
        let cfg = SearchConfig {
            seed: 4,
            keep_log: true,
            ..SearchConfig::new(OpSet::two(), tiny_macro(2))
        };
        let one = search_random(&cfg, 1, &hashed).unwrap();
        assert_eq!(one.evaluations_total, 1);
        assert_eq!(one.candidate_log.as_ref().unwrap().len(), 1);
        let a = search_random(&cfg, 50, &hashed).unwrap();
        let b = search_random(&cfg, 50, &hashed).unwrap();
        assert_eq!(a.best_arch, b.best_arch);
        assert_eq!(a.duplicate_draws, b.duplicate_draws);
        assert!(search_random(&cfg, 0, &hashed).is_err());
    }

    #[test]
    fn random_draws_cover_small_space() {
        let draws = random_draws(&OpSet::two(), 5000, 42);
        let distinct: std::collections::HashSet<_> = draws.iter().collect();
        assert_eq!(distinct.len(), 64);
        assert!(draws.iter().all(|&d| d < 64));
    }

    #[test]
    fn ablation_space_and_errors() {
        let cfg = SearchConfig {
            keep_log: true,
            ..SearchConfig::new(OpSet::two(), tiny_macro(1))
        };
        assert!(matches!(
            ablate_operation(
                &cfg,
                Operation::Conv3x3,
                AblationStrategy::MemoryAware,
                &hashed
            ),
            Err(SearchError::Arch(ArchError::OpSetTooSmall { .. }))
        ));
        let five = SearchConfig {
            opset: OpSet::five(),
            ..cfg
        };
        let r = ablate_operation(
            &five,
            Operation::Zeroize,
            AblationStrategy::MemoryAware,
            &hashed,
        )
        .unwrap();
        assert_eq!(r.candidates_visited(), 4096);
        assert_eq!(r.removed, Some(Operation::Zeroize));
        assert_eq!(r.opset.len(), 4);
    }

    #[test]
    fn seeds_depend_only_on_cells() {
        let a = CellArch::uniform(Operation::SkipCon);
        let b = a.with_edge(2, Operation::Conv3x3);
        assert_eq!(candidate_seed(1, &[a, b]), candidate_seed(1, &[a, b]));
        assert_ne!(candidate_seed(1, &[a, b]), candidate_seed(1, &[b, a]));
        assert_ne!(candidate_seed(1, &[a]), candidate_seed(2, &[a]));
    }
}
