//! Curriculum training, evaluation and checkpointing.
//!
//! Each seed trains one model: the forecast horizon grows from one day to
//! `t_pre`, each stage runs Adam epochs over shuffled mini-batches of the
//! training windows until validation MAE stops improving, and the stage
//! ends on its best weights.

mod adam;
mod baselines;
mod checkpoint;
mod config;
mod report;

pub use adam::Adam;
pub use baselines::{baseline_metrics, persistence_forecast, refit_forecast, BaselineKind};
pub use checkpoint::Checkpoint;
pub use config::{LossSpace, TrainConfig, Variant, SEED_ENV};
pub use report::{mean_ci, MetricSummary, RunReport, SeedResult, StageCurve, METRIC_NAMES};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{make_windows, split_and_normalize, EpidemicDataset, NormStats, SampleWindow, Split};
use crate::diffcore::{Tape, Tensor3, Var};
use crate::error::{Error, Result};
use crate::heads::ForecastBundle;
use crate::metrics::{compute, MetricReport};
use crate::mobility::StaticGraph;
use crate::model::{GraphSource, ModelState, Network};

/// Mean over cells of `|y_pre − y_obs|` plus, when given, `|y_cau − y_obs|`.
pub fn loss<'t>(y_pre: &Var<'t>, y_cau: Option<&Var<'t>>, y_obs: &Var<'t>) -> Result<Var<'t>> {
    let err = |y: &Var<'t>| -> Result<Var<'t>> {
        if y.shape() != y_obs.shape() {
            return Err(Error::shape("loss", &y.shape(), &y_obs.shape()));
        }
        Ok(y.sub(y_obs)?.abs().mean())
    };
    let neural = err(y_pre)?;
    match y_cau {
        Some(c) => neural.add(&err(c)?),
        None => Ok(neural),
    }
}

/// Split, statistics and stride-1 windows of a dataset.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: Split,
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

impl PreparedData {
    pub fn new(ds: &EpidemicDataset, cfg: &TrainConfig) -> Result<Self> {
        let split = split_and_normalize(ds, cfg.ratios, cfg.norm_scope)?;
        Self::with_split(ds, split, cfg.t_obs, cfg.t_pre)
    }

    /// Windows over `ds` normalized with fixed `stats` instead of statistics
    /// refitted to the training span.
    pub fn with_stats(ds: &EpidemicDataset, cfg: &TrainConfig, stats: &NormStats) -> Result<Self> {
        Self::with_split(ds, split_with_stats(ds, cfg, stats)?, cfg.t_obs, cfg.t_pre)
    }

    fn with_split(ds: &EpidemicDataset, split: Split, t_obs: usize, t_pre: usize) -> Result<Self> {
        let windows = |name: &str, span: std::ops::Range<usize>| {
            make_windows(ds, &split, span, t_obs, t_pre).map_err(|e| Error::Data(format!("{name} span: {e}")))
        };
        Ok(Self {
            train: windows("training", split.train.clone())?,
            val: windows("validation", split.val.clone())?,
            test: windows("test", split.test.clone())?,
            split,
        })
    }
}

/// The configured split of `ds`, normalized with `stats`.
pub fn split_with_stats(ds: &EpidemicDataset, cfg: &TrainConfig, stats: &NormStats) -> Result<Split> {
    let mut split = split_and_normalize(ds, cfg.ratios, cfg.norm_scope)?;
    split.normalized = stats.normalize_tensor(&ds.sir, 0);
    split.stats = stats.clone();
    Ok(split)
}

/// Checkpoints of every seed, the one with the lowest validation MAE, and
/// the test-set report.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub best: usize,
    pub report: RunReport,
}

impl TrainOutcome {
    pub fn best_checkpoint(&self) -> &Checkpoint {
        &self.checkpoints[self.best]
    }
}

/// Trains one model per configured seed.
pub fn train(ds: &EpidemicDataset, cfg: &TrainConfig, graph: Option<&StaticGraph>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = PreparedData::new(ds, cfg)?;
    let mut checkpoints = Vec::new();
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let (ck, result) = train_seed(ds, cfg, &data, graph, seed)?;
        checkpoints.push(ck);
        results.push(result);
    }
    let best = (0..results.len())
        .min_by(|&a, &b| {
            let key = |k: usize| results[k].val_mae.unwrap_or(f64::INFINITY);
            key(a).total_cmp(&key(b))
        })
        .expect("at least one seed");
    Ok(TrainOutcome {
        checkpoints,
        best,
        report: RunReport::new(cfg.variant, cfg.t_pre, results),
    })
}

fn resolve_graph<'g>(cfg: &TrainConfig, graph: Option<&'g StaticGraph>, q: usize) -> Result<GraphSource<'g>> {
    match (cfg.variant, graph) {
        (Variant::StaticGraph, Some(g)) if g.matrix.shape() == [1, q, q] => Ok(GraphSource::Static(g)),
        (Variant::StaticGraph, Some(g)) => Err(Error::shape("static graph", &g.matrix.shape(), &[1, q, q])),
        (Variant::StaticGraph, None) => Err(Error::InvalidArgument(
            "the static_graph variant needs a neighbour graph".into(),
        )),
        _ => Ok(GraphSource::Dynamic),
    }
}

/// Trains one seed through the full curriculum and scores it on the test
/// windows.
pub fn train_seed(
    ds: &EpidemicDataset,
    cfg: &TrainConfig,
    data: &PreparedData,
    graph: Option<&StaticGraph>,
    seed: u64,
) -> Result<(Checkpoint, SeedResult)> {
    cfg.validate()?;
    let q = ds.num_regions();
    let source = resolve_graph(cfg, graph, q)?;
    let stats = &data.split.stats;
    let mut state = ModelState::init(cfg.model(q), seed)?;
    let mut adam = Adam::new(&state, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curves = Vec::with_capacity(cfg.t_pre);
    let mut final_val = None;

    for h in 1..=cfg.t_pre {
        let initial_val_mae = validation_mae(&state, &data.val, stats, source, h)?;
        let mut best = (initial_val_mae, None, state.clone());
        let mut curve = StageCurve {
            horizon: h,
            train_loss: Vec::new(),
            val_mae: Vec::new(),
            initial_val_mae,
            best_epoch: None,
        };
        let mut stale = 0;
        for epoch in 0..cfg.max_epochs_per_horizon {
            let mut epoch_loss = 0.0;
            for batch in batches(data.train.len(), cfg.batch_size, &mut rng) {
                let windows: Vec<SampleWindow> = batch.iter().map(|&k| data.train[k].clone()).collect();
                let (batch_loss, grads) = batch_gradients(&state, &windows, stats, source, cfg, h)?;
                if !batch_loss.is_finite() {
                    return Err(Error::TrainingAborted(format!(
                        "non-finite training loss at horizon {h}, epoch {epoch}"
                    )));
                }
                epoch_loss += batch_loss * batch.len() as f64;
                adam.step(&mut state, &grads);
            }
            let batch_loss = epoch_loss / data.train.len() as f64;
            let val = validation_mae(&state, &data.val, stats, source, h)?;
            curve.train_loss.push(batch_loss);
            curve.val_mae.push(val);
            if val < best.0 {
                best = (val, Some(epoch), state.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        if h == 1 {
            check_first_stage(&curve)?;
        }
        curve.best_epoch = best.1;
        state = best.2;
        final_val = Some(best.0);
        curves.push(curve);
        log::info!("seed {seed}: horizon {h} done, validation MAE {:.4}", best.0);
    }

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        seed,
        regions: ds.regions.clone(),
        stats: stats.clone(),
        static_graph: match source {
            GraphSource::Static(g) => Some(g.matrix.clone()),
            GraphSource::Dynamic => None,
        },
        model: state,
    };
    let (metrics, clamp_events) = score_windows(&checkpoint, &data.test)?;
    Ok((
        checkpoint,
        SeedResult {
            seed,
            metrics,
            val_mae: final_val,
            clamp_events,
            curves,
        },
    ))
}

/// Window indices per update: one batch in order, or shuffled chunks.
fn batches(n: usize, size: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    match size {
        Some(size) if size < n => {
            order.shuffle(rng);
            order.chunks(size).map(<[usize]>::to_vec).collect()
        }
        _ => vec![order],
    }
}

fn check_first_stage(curve: &StageCurve) -> Result<()> {
    let Some(&first) = curve.train_loss.first() else {
        return Ok(());
    };
    let decreased = curve.train_loss.len() < 2 || curve.train_loss[1..].iter().any(|l| *l < first);
    if decreased {
        return Ok(());
    }
    let dump: Vec<String> = curve
        .train_loss
        .iter()
        .zip(&curve.val_mae)
        .enumerate()
        .map(|(e, (l, v))| format!("epoch {e}: loss {l:.6e} val_mae {v:.6e}"))
        .collect();
    Err(Error::TrainingAborted(format!(
        "training loss never fell below its first value {first:.6e} at horizon 1; {}",
        dump.join("; ")
    )))
}

/// Per-region `(offset, width)` mapping normalized infectious counts back
/// to persons.
fn infectious_scale(stats: &NormStats, q: usize) -> (Tensor3, Tensor3) {
    let lo: Vec<f64> = (0..q).map(|k| stats.denormalize(0.0, k, 1)).collect();
    let width: Vec<f64> = (0..q).map(|k| stats.denormalize(1.0, k, 1) - lo[k]).collect();
    let col = |v: Vec<f64>| Tensor3::new([1, q, 1], v).expect("q values");
    (col(lo), col(width))
}

/// Loss of one window at horizon `h` on the network's tape.
pub fn window_loss<'t>(
    net: &Network<'t>,
    w: &SampleWindow,
    stats: &NormStats,
    graph: GraphSource<'_>,
    cfg: &TrainConfig,
    h: usize,
) -> Result<Var<'t>> {
    let causal = cfg.variant.uses_causal_loss();
    let out = net.forward(&w.x_obs, &w.sir_last, stats, graph, h, causal)?;
    let tape = out.y_pre.tape();
    match cfg.loss_space {
        LossSpace::Normalized => {
            let y_obs = tape.constant(w.y_obs.time_slice(0, h)?);
            loss(&out.y_pre, out.causal.as_ref().map(|c| &c.y_cau), &y_obs)
        }
        LossSpace::Raw => {
            let (lo, width) = infectious_scale(stats, w.sir_last.regions());
            let y_pre = out.y_pre.mul(&tape.constant(width))?.add(&tape.constant(lo))?;
            let y_obs = tape.constant(w.y_obs_raw.time_slice(0, h)?);
            loss(&y_pre, out.causal.as_ref().map(|c| &c.infectious), &y_obs)
        }
    }
}

/// Mean loss over `windows` and its gradient per parameter; frozen
/// parameters get `None`.
pub fn batch_gradients(
    state: &ModelState,
    windows: &[SampleWindow],
    stats: &NormStats,
    graph: GraphSource<'_>,
    cfg: &TrainConfig,
    h: usize,
) -> Result<(f64, Vec<Option<Tensor3>>)> {
    if windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let mut total = 0.0;
    let mut grads: Vec<Option<Tensor3>> = state
        .params
        .iter()
        .map(|(name, p)| (!cfg.variant.is_frozen(name)).then(|| Tensor3::zeros(p.shape())))
        .collect();
    for w in windows {
        let tape = Tape::new();
        let net = state.bind(&tape, |name| cfg.variant.is_frozen(name));
        let l = window_loss(&net, w, stats, graph, cfg, h)?;
        total += l.value().data()[0];
        tape.backward(l)?;
        for (slot, var) in grads.iter_mut().zip(&net.vars) {
            if let (Some(acc), Some(g)) = (slot.as_mut(), tape.grad(*var)) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
        }
    }
    let n = windows.len() as f64;
    for g in grads.iter_mut().flatten() {
        for v in g.data_mut() {
            *v /= n;
        }
    }
    Ok((total / n, grads))
}

/// Neural forecasts of the first `h` days, in persons, `[h, Q, 1]`.
fn neural_forecast(
    state: &ModelState,
    w: &SampleWindow,
    stats: &NormStats,
    graph: GraphSource<'_>,
    h: usize,
) -> Result<Tensor3> {
    let tape = Tape::new();
    let net = state.bind(&tape, |_| true);
    let out = net.forward(&w.x_obs, &w.sir_last, stats, graph, h, false)?;
    Ok(stats.denormalize_tensor(&out.y_pre.value(), 1))
}

/// MAE in persons of the neural forecast over the first `h` target days.
pub fn validation_mae(
    state: &ModelState,
    windows: &[SampleWindow],
    stats: &NormStats,
    graph: GraphSource<'_>,
    h: usize,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no validation windows".into()));
    }
    let mut acc = 0.0;
    let mut cells = 0usize;
    for w in windows {
        let pred = neural_forecast(state, w, stats, graph, h)?;
        let obs = w.y_obs_raw.time_slice(0, h)?;
        acc += pred.data().iter().zip(obs.data()).map(|(p, o)| (p - o).abs()).sum::<f64>();
        cells += pred.len();
    }
    Ok(acc / cells as f64)
}

/// Full-horizon forecasts of a checkpoint for each window.
pub fn predict_windows(ck: &Checkpoint, windows: &[SampleWindow]) -> Result<Vec<ForecastBundle>> {
    let graph = ck.graph();
    let source = match &graph {
        Some(g) => GraphSource::Static(g),
        None => GraphSource::Dynamic,
    };
    windows
        .iter()
        .map(|w| ck.model.forecast(&w.x_obs, &w.sir_last, &ck.stats, source))
        .collect()
}

/// Metrics of the denormalized neural forecasts against the raw targets
/// over all windows, plus the causal rollouts' clamp count.
pub fn score_windows(ck: &Checkpoint, windows: &[SampleWindow]) -> Result<(MetricReport, usize)> {
    let bundles = predict_windows(ck, windows)?;
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    let mut clamps = 0;
    for (b, w) in bundles.iter().zip(windows) {
        pred.extend_from_slice(ck.stats.denormalize_tensor(&b.y_pre, 1).data());
        obs.extend_from_slice(w.y_obs_raw.data());
        clamps += b.clamp_events;
    }
    Ok((compute(&pred, &obs)?, clamps))
}

/// Scores a checkpoint on the test windows of `ds`, using the checkpoint's
/// own normalization statistics.
pub fn evaluate(ck: &Checkpoint, ds: &EpidemicDataset, t_pre: usize) -> Result<RunReport> {
    if t_pre != ck.config.t_pre {
        return Err(Error::InvalidArgument(format!(
            "horizon mismatch: checkpoint forecasts {} days, {t_pre} requested",
            ck.config.t_pre
        )));
    }
    ck.check_dataset(ds)?;
    let data = PreparedData::with_stats(ds, &ck.config, &ck.stats)?;
    let (metrics, clamp_events) = score_windows(ck, &data.test)?;
    Ok(RunReport::new(
        ck.config.variant,
        t_pre,
        vec![SeedResult {
            seed: ck.seed,
            metrics,
            val_mae: None,
            clamp_events,
            curves: vec![],
        }],
    ))
}
