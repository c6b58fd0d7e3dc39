//! Benchmark execution: model and table setup, the config grid, inline
//! lossless checks and event-log recounts.

use std::fmt::Write as _;
use std::sync::Arc;

use draftreuse_core::models::sub_seed;
use draftreuse_core::token_info::{parse_corpus, residual_samples};
use draftreuse_core::{
    collapse, decode_logged, default_keep, fit_factors, hot_token_stats, prune_table, DecodeMetrics, DraftModel,
    EngineConfig, Event, PassKind, TargetModel, TokenId, TokenInfoTable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::report::{Report, Row};
use crate::spec::{RunSpec, TableMode};
use crate::{write_atomic, CliError};

/// `count` prompts of `len` uniform token ids.
pub fn random_prompts(count: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<TokenId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..len).map(|_| rng.random_range(0..vocab as TokenId)).collect())
        .collect()
}

/// Prompts decoded in repetition `rep` of a run seeded with `seed`.
pub fn eval_prompts(spec: &RunSpec, vocab: usize, seed: u64, rep: usize) -> Vec<Vec<TokenId>> {
    random_prompts(spec.prompts, spec.prompt_len, vocab, sub_seed(seed, 1000 + rep as u64))
}

/// Prompts the token-info table is fitted on; disjoint stream from
/// [`eval_prompts`].
pub fn fit_prompts(spec: &RunSpec, vocab: usize) -> Vec<Vec<TokenId>> {
    random_prompts(spec.fit_prompts, spec.prompt_len, vocab, sub_seed(spec.seed, 7))
}

/// Fits, collapses and prunes a token-info table for `draft`.
pub fn build_table(spec: &RunSpec, target: &TargetModel, draft: &DraftModel) -> Result<TokenInfoTable, CliError> {
    let vocab = target.vocab_size();
    if spec.table == TableMode::Zero {
        return Ok(TokenInfoTable::zero(vocab));
    }
    let prompts = fit_prompts(spec, vocab);
    let samples = residual_samples(target, draft, &prompts, spec.fit_positions, spec.steps, spec.fit_include_root)?;
    let rank = spec.table_rank.min(target.hidden_dim());
    let factors = fit_factors(target.embed(), &samples, rank, spec.table_ridge)?;
    let table = collapse(target.embed(), &factors)?;

    let keep = match spec.table_keep {
        Some(q) => ((q * vocab as f64).ceil() as usize).clamp(1, vocab),
        None => default_keep(vocab),
    };
    if keep == vocab {
        return Ok(table);
    }
    let corpus = match &spec.corpus_path {
        Some(path) => parse_corpus(&std::fs::read_to_string(path)?)?,
        None => {
            let mut all = Vec::new();
            for p in &prompts {
                all.extend(target.greedy_decode(p, spec.fit_positions)?);
            }
            all
        }
    };
    let stats = hot_token_stats(&corpus, vocab)?;
    Ok(prune_table(&table, &stats, keep)?)
}

/// Target model plus one (draft, table) pair per distinct draft noise.
pub struct Workload {
    pub target: Arc<TargetModel>,
    setups: Vec<(f32, DraftModel, TokenInfoTable)>,
}

impl Workload {
    pub fn build(spec: &RunSpec) -> Result<Self, CliError> {
        let target = Arc::new(match &spec.model_path {
            Some(path) => TargetModel::read_from(std::io::BufReader::new(std::fs::File::open(path)?))?,
            None => TargetModel::synthetic(&spec.model_spec())?,
        });
        let mut noises: Vec<f32> = spec.grid().iter().map(|c| c.draft_noise).collect();
        noises.sort_by(f32::total_cmp);
        noises.dedup();
        let setups = noises
            .into_iter()
            .map(|noise| {
                let draft = DraftModel::perturbed(target.clone(), noise, spec.seed)?;
                let table = build_table(spec, &target, &draft)?;
                Ok((noise, draft, table))
            })
            .collect::<Result<_, CliError>>()?;
        Ok(Self { target, setups })
    }

    pub fn setup(&self, noise: f32) -> (&DraftModel, &TokenInfoTable) {
        let (_, d, t) = self
            .setups
            .iter()
            .find(|(n, _, _)| *n == noise)
            .expect("workload built for every grid noise");
        (d, t)
    }
}

/// Result of one (cell, repetition) job.
struct Job {
    row: Row,
    log: String,
}

/// Recomputes emitted tokens and per-step counts from an event log.
pub fn recount(events: &[Event]) -> DecodeMetrics {
    let mut m = DecodeMetrics::default();
    for ev in events {
        m.target_forwards += 1;
        m.tokens_emitted += ev.emitted as u64;
        if ev.kind == PassKind::Resample {
            m.resample_pass_accepted += ev.accepted as u64;
            continue;
        }
        if m.per_step_offered.len() < ev.offered.len() {
            m.per_step_offered.resize(ev.offered.len(), 0);
            m.per_step_accepted.resize(ev.offered.len(), 0);
        }
        for (i, &offered) in ev.offered.iter().enumerate() {
            if offered {
                m.per_step_offered[i] += 1;
                if i < ev.accepted {
                    m.per_step_accepted[i] += 1;
                }
            }
        }
    }
    m
}

fn check_recount(label: &str, metrics: &DecodeMetrics, events: &[Event]) -> Result<(), CliError> {
    let r = recount(events);
    let same = r.target_forwards == metrics.target_forwards
        && r.tokens_emitted == metrics.tokens_emitted
        && r.resample_pass_accepted == metrics.resample_pass_accepted
        && r.per_step_offered == metrics.per_step_offered
        && r.per_step_accepted == metrics.per_step_accepted;
    if same {
        Ok(())
    } else {
        Err(CliError::Recount(format!("{label}: event log {r:?} vs metrics {metrics:?}")))
    }
}

fn run_job(
    spec: &RunSpec,
    work: &Workload,
    label: &str,
    cfg: &EngineConfig,
    rep: usize,
    with_log: bool,
) -> Result<Job, CliError> {
    let (draft, table) = work.setup(cfg.draft_noise);
    let target = &*work.target;
    let mut total = DecodeMetrics::default();
    let mut log = String::new();
    for (i, prompt) in eval_prompts(spec, target.vocab_size(), cfg.seed, rep).iter().enumerate() {
        let (tokens, metrics, events) = decode_logged(cfg, target, draft, table, prompt)?;
        let oracle = target.greedy_decode(prompt, cfg.max_new_tokens)?;
        if tokens != oracle {
            let at = tokens.iter().zip(&oracle).position(|(a, b)| a != b).unwrap_or(tokens.len().min(oracle.len()));
            return Err(CliError::Equivalence(format!(
                "cell {label} seed {} repetition {rep} prompt {i}: first mismatch at token {at}",
                cfg.seed
            )));
        }
        let where_ = format!("cell {label} seed {} repetition {rep} prompt {i}", cfg.seed);
        check_recount(&where_, &metrics, &events)?;
        if with_log {
            let _ = writeln!(log, "# label={label} seed={} repetition={rep} prompt={i}", cfg.seed);
            for ev in &events {
                let _ = writeln!(log, "{ev}");
            }
        }
        total.absorb(&metrics);
    }
    Ok(Job {
        row: Row::new(label, cfg, rep, &total),
        log,
    })
}

/// Runs every labelled cell for every repetition, in parallel, and returns
/// rows in (cell, repetition) order.
pub fn run_cells(spec: &RunSpec, cells: &[(String, EngineConfig)]) -> Result<Report, CliError> {
    spec.validate()?;
    let work = Workload::build(spec)?;
    run_cells_with(spec, &work, cells)
}

pub fn run_cells_with(spec: &RunSpec, work: &Workload, cells: &[(String, EngineConfig)]) -> Result<Report, CliError> {
    let with_log = spec.event_log.is_some();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.repetitions).map(move |r| (c, r)))
        .collect();
    let done = jobs
        .par_iter()
        .map(|&(c, rep)| run_job(spec, work, &cells[c].0, &cells[c].1, rep, with_log))
        .collect::<Result<Vec<Job>, CliError>>()?;
    if let Some(path) = &spec.event_log {
        let text: String = done.iter().map(|j| j.log.as_str()).collect();
        write_atomic(path, text.as_bytes())?;
    }
    Ok(Report::new(done.into_iter().map(|j| j.row).collect()))
}

/// The configured grid, one labelled cell per config.
pub fn run_bench(spec: &RunSpec) -> Result<Report, CliError> {
    let grid = spec.grid();
    let cells: Vec<(String, EngineConfig)> = if grid.len() == 1 {
        vec![("bench".to_string(), grid[0].clone())]
    } else {
        grid.into_iter().enumerate().map(|(i, c)| (format!("cell{i}"), c)).collect()
    };
    run_cells(spec, &cells)
}

/// Full system, resampling off, and fusion off for every grid config.
pub fn ablation_cells(spec: &RunSpec) -> Vec<(String, EngineConfig)> {
    let grid = spec.grid();
    let many = grid.len() > 1;
    let mut cells = Vec::new();
    for (i, cfg) in grid.into_iter().enumerate() {
        let prefix = if many { format!("cell{i}/") } else { String::new() };
        let variants = [
            ("full", true, true),
            ("no-resample", false, false),
            ("no-fusion", true, false),
        ];
        for (name, resample, fusion) in variants {
            cells.push((
                format!("{prefix}{name}"),
                EngineConfig {
                    resample,
                    fusion,
                    ..cfg.clone()
                },
            ));
        }
    }
    cells
}

pub fn run_ablation(spec: &RunSpec) -> Result<Report, CliError> {
    run_cells(spec, &ablation_cells(spec))
}
