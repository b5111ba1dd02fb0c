//! One function per CLI subcommand. Each returns everything it produced so
//! callers decide where it goes; [`RunOutput::write`] lays it out on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::optim::{EpsSchedule, LrSchedule, Method, OptimConfig};
use crate::quantize::{quantize_params, smol_train};
use crate::share::{
    compute_lsm, fold_and_execute, group_layers, matrix_to_csv, mean_off_diagonal, reparameterize,
    TemplateBank,
};
use crate::sparsify::{
    cs_ticket_search, imp, iss, sequential_cs, supermask_search, train_masked, ImpConfig,
    SupermaskMethod,
};
use crate::tasks::grid::shortest_path_labels;
use crate::tasks::synth::{presets, synth_run, SynthProblem};
use crate::tensor::Tensor;

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::{RunConfig, SparsifyMethod, TaskKind, TunerKind};
use super::metrics::{to_csv, to_jsonl, MetricsLog, MetricsRecord};
use super::parallel::run_parallel;
use super::train::{
    build_net, build_problem, generate_grids, stream, task_metrics, train, train_net, train_shared,
    NOISE_STREAM,
};
use super::tune::{log_space, tune as run_tuner, TunerSpec};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: Value,
    /// Human-readable report.
    pub report: String,
    pub metrics: Vec<MetricsRecord>,
    /// Extra artifacts as `(file name, bytes)`.
    pub files: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    /// Writes the metrics (JSONL and CSV), the summary and every artifact.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(METRICS_FILE), to_jsonl(&self.metrics))?;
        std::fs::write(dir.join("metrics.csv"), to_csv(&self.metrics))?;
        let mut summary = serde_json::to_string_pretty(&self.summary)?;
        summary.push('\n');
        std::fs::write(dir.join("summary.json"), summary)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Config spelling of an enum value, e.g. `sequential-cs`.
fn label<T: serde::Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn train_command(cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.model.shared {
        let out = train_shared(cfg)?;
        let mut ck = Checkpoint::new(CheckpointKind::Share, cfg.echo());
        ck.put_bank(&out.net.bank, out.net.activation);
        let last = out.metrics.records().last().cloned().unwrap_or_default();
        let summary = json!({
            "command": "train",
            "shared": true,
            "steps": cfg.train.steps,
            "loss": last.loss,
            "lsm_mean": last.lsm_mean,
            "stored_values": out.net.bank.stored_values(),
            "unshared_values": out.net.bank.unshared_values(),
        });
        let report = format!(
            "trained shared stack: loss {:.6}, mean layer similarity {:.4}\n",
            last.loss.unwrap_or(f64::NAN),
            last.lsm_mean.unwrap_or(f64::NAN)
        );
        return Ok(RunOutput {
            summary,
            report,
            metrics: out.metrics.into_records(),
            files: vec![(CHECKPOINT_FILE.into(), ck.to_bytes())],
        });
    }
    let (_, out) = train(cfg)?;
    let mut ck = Checkpoint::new(CheckpointKind::Train, cfg.echo());
    ck.put_net(&out.net);
    let last = out.metrics.records().last().cloned().unwrap_or_default();
    let summary = json!({
        "command": "train",
        "steps": cfg.train.steps,
        "loss": last.loss,
        "accuracy": last.accuracy,
        "f1": last.f1,
    });
    let mut report = format!("trained {} steps: loss {:.6}", cfg.train.steps, last.loss.unwrap_or(f64::NAN));
    if let Some(a) = last.accuracy {
        let _ = write!(report, ", accuracy {a:.4}");
    }
    if let Some(f) = last.f1 {
        let _ = write!(report, ", f1 {f:.4}");
    }
    report.push('\n');
    Ok(RunOutput {
        summary,
        report,
        metrics: out.metrics.into_records(),
        files: vec![(CHECKPOINT_FILE.into(), ck.to_bytes())],
    })
}

pub fn ticket_search_command(cfg: &RunConfig) -> Result<RunOutput> {
    let problem = build_problem(&cfg.task, cfg.seed)?;
    let net = build_net(cfg, &problem)?;
    let sp = &cfg.sparsify;
    let optim = cfg.optim.build(sp.search.steps as u64);
    let data = &problem.data;
    let noise_seed = stream(cfg.seed, NOISE_STREAM);
    let result = match sp.method {
        SparsifyMethod::Cs => cs_ticket_search(&net, data, &sp.search, &optim)?,
        SparsifyMethod::Imp => imp(
            &net,
            data,
            &ImpConfig {
                tau: sp.tau,
                rounds: sp.search.rounds,
                steps: sp.search.steps,
                rewind_step: sp.search.rewind_step,
                continued: false,
            },
            &optim,
        )?,
        SparsifyMethod::Iss => iss(&net, data, &sp.search, &optim, noise_seed)?,
        SparsifyMethod::SequentialCs => sequential_cs(&net, data, sp.tau, &sp.search, &optim)?,
        SparsifyMethod::SupermaskCs => {
            supermask_search(&net, data, &sp.search, &optim, SupermaskMethod::Cs, noise_seed)?
        }
        SparsifyMethod::SupermaskSs => {
            supermask_search(&net, data, &sp.search, &optim, SupermaskMethod::Ss, noise_seed)?
        }
    };
    let mut log = MetricsLog::new();
    for r in &result.rounds {
        log.push(MetricsRecord {
            loss: finite(r.loss),
            sparsity: Some(r.sparsity),
            ..MetricsRecord::at(r.round as u64)
        })?;
    }
    let frozen = matches!(sp.method, SparsifyMethod::SupermaskCs | SparsifyMethod::SupermaskSs);
    let start = result.rewind.clone().unwrap_or_else(|| net.params().to_vec());
    let (weights, loss) = if frozen {
        let w = crate::sparsify::apply_masks(&net, &start, &result.masks);
        let l = net.loss_with(&w, data)?;
        (w, l)
    } else {
        train_masked(&net, &start, &result.masks, data, &optim, sp.retrain_steps)?
    };
    let mut rec = MetricsRecord {
        loss: finite(loss),
        sparsity: Some(result.sparsity),
        ..MetricsRecord::at(result.rounds.len() as u64 + 1)
    };
    task_metrics(&net, &weights, &problem, &mut rec)?;
    log.push(rec.clone())?;
    let mut final_net = net.clone();
    final_net.set_params(weights)?;
    let mut ck = Checkpoint::new(CheckpointKind::Sparsify, cfg.echo());
    ck.put_net(&final_net);
    ck.put_masks(&result.masks);
    let summary = json!({
        "command": "ticket-search",
        "method": sp.method,
        "sparsity": result.sparsity,
        "undecided": result.undecided,
        "loss": rec.loss,
        "accuracy": rec.accuracy,
        "f1": rec.f1,
    });
    let report = format!(
        "ticket search ({}): sparsity {:.4}, retrained loss {:.6}{}\n",
        label(&sp.method),
        result.sparsity,
        loss,
        rec.accuracy.map(|a| format!(", accuracy {a:.4}")).unwrap_or_default()
    );
    Ok(RunOutput {
        summary,
        report,
        metrics: log.into_records(),
        files: vec![(CHECKPOINT_FILE.into(), ck.to_bytes())],
    })
}

pub fn quantize_command(cfg: &RunConfig) -> Result<RunOutput> {
    let problem = build_problem(&cfg.task, cfg.seed)?;
    let net = build_net(cfg, &problem)?;
    let optim = cfg.optim.build(cfg.quantize.steps as u64);
    let res = smol_train(&net, &problem.data, &cfg.quantize, &optim, stream(cfg.seed, NOISE_STREAM))?;
    let every = cfg.train.log_every.max(1);
    let mut log = MetricsLog::new();
    let last = res.history.len().saturating_sub(1);
    for (i, &(t, loss)) in res.history.iter().enumerate() {
        if t % every == 0 || i == last {
            log.push(MetricsRecord {
                loss: finite(loss),
                ..MetricsRecord::at(t as u64)
            })?;
        }
    }
    let quantized = quantize_params(&net, &res.params, &res.precisions);
    let bpp = res.precisions.bpp();
    let mut rec = MetricsRecord {
        loss: finite(res.final_loss),
        bpp: Some(bpp),
        ..MetricsRecord::at(res.history.len() as u64 + 1)
    };
    task_metrics(&net, &quantized, &problem, &mut rec)?;
    log.push(rec.clone())?;
    let mut final_net = net.clone();
    final_net.set_params(quantized)?;
    let mut ck = Checkpoint::new(CheckpointKind::Quantize, cfg.echo());
    ck.put_net(&final_net);
    ck.put_precisions(&res.precisions);
    let zero = res.precisions.bits.iter().filter(|&&b| b == 0).count();
    let summary = json!({
        "command": "quantize",
        "bpp": bpp,
        "compression_ratio": res.precisions.compression_ratio(),
        "zero_precision_weights": zero,
        "loss": rec.loss,
        "accuracy": rec.accuracy,
        "f1": rec.f1,
    });
    let report = format!(
        "quantized: {bpp:.3} bits per weight ({:.1}x), {zero} weights at zero bits, loss {:.6}\n",
        res.precisions.compression_ratio(),
        res.final_loss
    );
    Ok(RunOutput {
        summary,
        report,
        metrics: log.into_records(),
        files: vec![(CHECKPOINT_FILE.into(), ck.to_bytes())],
    })
}

/// Where `fold` reads layer coefficients from.
#[derive(Clone, Debug, PartialEq)]
pub enum FoldSource {
    /// A `share` or `fold` checkpoint holding a template bank.
    Checkpoint(PathBuf),
    /// CSV with one row per template and one column per layer.
    Coefficients(PathBuf),
}

pub fn parse_matrix_csv(text: &str) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad matrix entry `{c}`")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Tensor::from_rows(&refs)
}

pub fn fold_command(cfg: &RunConfig, source: &FoldSource) -> Result<RunOutput> {
    let (coeffs, bank): (Tensor, Option<(TemplateBank, Activation)>) = match source {
        FoldSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.kind != CheckpointKind::Fold {
                ck.expect_kind(CheckpointKind::Share)?;
            }
            let (bank, act) = ck.bank()?;
            (bank.coeffs.clone(), Some((bank, act)))
        }
        FoldSource::Coefficients(path) => (parse_matrix_csv(&std::fs::read_to_string(path)?)?, None),
    };
    let tau = cfg.share.tau;
    let lsm = compute_lsm(&coeffs)?;
    let groups = group_layers(&lsm, tau)?;
    let fold = reparameterize(&coeffs, &groups)?;
    let deviation = match &bank {
        Some((bank, act)) => {
            let net = crate::share::SharedNet {
                bank: bank.clone(),
                activation: *act,
            };
            let mut rng = crate::seeded(stream(cfg.seed, NOISE_STREAM));
            let x = Tensor::randn(&[16, net.width()], 1.0, &mut rng);
            Some(fold_and_execute(&net, &fold, &x)?.deviation)
        }
        None => None,
    };

    let mut report = String::new();
    let members: Vec<String> = (0..fold.group_count())
        .map(|g| {
            let layers: Vec<String> = groups
                .iter()
                .enumerate()
                .filter(|&(_, &x)| x == g)
                .map(|(l, _)| (l + 1).to_string())
                .collect();
            format!("{{{}}}", layers.join(","))
        })
        .collect();
    let _ = writeln!(report, "threshold: {tau}");
    let _ = writeln!(report, "groups: {}", members.join(" "));
    let _ = writeln!(report, "program: {}", fold.program());
    let _ = writeln!(report, "B ({}x{}):", fold.b.rows(), fold.b.cols());
    for i in 0..fold.b.rows() {
        let row: Vec<String> = fold.b.row(i).iter().map(|v| format!("{v:8.4}")).collect();
        let _ = writeln!(report, "  {}", row.join(" "));
    }
    let max_res = fold.residuals.iter().copied().fold(0.0, f64::max);
    let _ = writeln!(report, "max coefficient residual: {max_res:.6}");
    if let Some(d) = deviation {
        let _ = writeln!(report, "max output deviation: {d:.3e}");
    }

    let lsm_mean = mean_off_diagonal(&lsm);
    let mut ck = Checkpoint::new(CheckpointKind::Fold, cfg.echo());
    if let Some((bank, act)) = &bank {
        ck.put_bank(bank, *act);
        ck.push("fold.templates", fold.templates(bank));
    }
    ck.put_fold(&fold);
    let summary = json!({
        "command": "fold",
        "tau": tau,
        "groups": groups.iter().map(|g| g + 1).collect::<Vec<_>>(),
        "program": fold.program(),
        "b": (0..fold.b.rows()).map(|i| fold.b.row(i).to_vec()).collect::<Vec<_>>(),
        "residuals": fold.residuals,
        "deviation": deviation,
        "lsm_mean": lsm_mean,
    });
    Ok(RunOutput {
        summary,
        report,
        metrics: vec![MetricsRecord {
            lsm_mean: Some(lsm_mean),
            ..MetricsRecord::at(0)
        }],
        files: vec![
            ("lsm.csv".into(), matrix_to_csv(&lsm).into_bytes()),
            ("b.csv".into(), matrix_to_csv(&fold.b).into_bytes()),
            (CHECKPOINT_FILE.into(), ck.to_bytes()),
        ],
    })
}

pub fn tune_command(cfg: &RunConfig) -> Result<RunOutput> {
    let tc = &cfg.tune;
    if tc.grid == 0 {
        return Err(Error::Config("tuning grid needs at least one point per axis".into()));
    }
    let problem = build_problem(&cfg.task, cfg.seed)?;
    let net = build_net(cfg, &problem)?;
    let lrs = log_space(tc.lr_min, tc.lr_max, tc.grid);
    let epss = log_space(tc.eps_min, tc.eps_max, tc.grid);
    let trial = |cell: &[usize]| -> f64 {
        let mut section = cfg.optim.clone();
        section.lr = lrs[cell[0]];
        section.eps = epss[cell[1]];
        let optim = section.build(tc.steps as u64);
        match train_net(&net, &problem, &optim, tc.steps, usize::MAX) {
            Ok(out) => out.net.loss(&problem.data).ok().filter(|v| v.is_finite()).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    };
    let dims = [tc.grid, tc.grid];
    let spec = TunerSpec::new(tc.kind, tc.budget);
    let mut rng = crate::seeded(stream(cfg.seed, NOISE_STREAM));
    let result = if tc.kind == TunerKind::Grid {
        let jobs: Vec<[usize; 2]> = (0..tc.grid)
            .flat_map(|i| (0..tc.grid).map(move |j| [i, j]))
            .collect();
        let values = run_parallel(jobs, tc.threads, |_, cell| trial(&cell));
        run_tuner(&dims, &spec, &mut rng, |c| values[c[0] * tc.grid + c[1]])?
    } else {
        run_tuner(&dims, &spec, &mut rng, trial)?
    };
    let metrics: Vec<MetricsRecord> = result
        .history
        .iter()
        .enumerate()
        .map(|(k, t)| MetricsRecord {
            loss: finite(t.value),
            lr: Some(lrs[t.cell[0]]),
            eps: Some(epss[t.cell[1]]),
            ..MetricsRecord::at(k as u64 + 1)
        })
        .collect();
    let (best_lr, best_eps) = (lrs[result.best[0]], epss[result.best[1]]);
    let summary = json!({
        "command": "tune",
        "kind": tc.kind,
        "trials": result.trials,
        "best_lr": best_lr,
        "best_eps": best_eps,
        "best_loss": finite(result.best_value),
        "exhausted": result.exhausted,
    });
    let report = format!(
        "{} tuner: {} trials, best loss {:.6} at lr {best_lr:.3e}, eps {best_eps:.3e}{}\n",
        label(&tc.kind),
        result.trials,
        result.best_value,
        if result.exhausted { " (budget exhausted)" } else { "" }
    );
    Ok(RunOutput {
        summary,
        report,
        metrics,
        files: Vec::new(),
    })
}

/// Optimizer for a named synthetic-problem preset, with optional overrides.
pub fn synth_optimizer(name: &str, horizon: u64, eps: Option<f64>, lr: Option<f64>) -> Result<OptimConfig> {
    let mut cfg = match name {
        "adam" => presets::adam(horizon),
        "eps-adam" => presets::adam_growing_eps(horizon),
        "delayed-adam" => presets::delayed_adam(horizon),
        "amsgrad" => presets::amsgrad(horizon),
        "sgd" => presets::sgd(horizon),
        "avagrad" => OptimConfig {
            method: Method::AvaGrad,
            ..presets::delayed_adam(horizon)
        },
        other => {
            return Err(Error::Config(format!(
                "unknown synthetic optimizer `{other}` (adam, eps-adam, delayed-adam, amsgrad, sgd, avagrad)"
            )))
        }
    };
    if let Some(e) = eps {
        cfg.eps = EpsSchedule { base: e, ..cfg.eps };
    }
    if let Some(a) = lr {
        cfg.lr = LrSchedule::Constant { base: a };
    }
    Ok(cfg)
}

pub fn synth_command(cfg: &RunConfig) -> Result<RunOutput> {
    let sc = &cfg.synth;
    let problem = SynthProblem::new(sc.c, sc.delta)?;
    let optim = synth_optimizer(&sc.optimizer, sc.steps, sc.eps, sc.lr)?;
    let run = synth_run(&problem, &optim, sc.steps, sc.w_init, cfg.seed, sc.log_every)?;
    let metrics = run
        .records
        .iter()
        .map(|r| MetricsRecord {
            grad_norm_mean: Some(r.running_mean),
            w: Some(r.w),
            ..MetricsRecord::at(r.step)
        })
        .collect();
    let summary = json!({
        "command": "synth",
        "optimizer": sc.optimizer,
        "steps": sc.steps,
        "running_mean": run.running_mean,
        "final_w": run.final_w,
        "stationary_point": problem.stationary_point(),
    });
    let report = format!(
        "{} after {} steps: running mean of squared gradient {:.6}, w = {:.6}\n",
        sc.optimizer, sc.steps, run.running_mean, run.final_w
    );
    Ok(RunOutput {
        summary,
        report,
        metrics,
        files: Vec::new(),
    })
}

pub fn gen_data_command(cfg: &RunConfig) -> Result<RunOutput> {
    let task = &cfg.task;
    match task.kind {
        TaskKind::Grid => {
            let grids = generate_grids(task, cfg.seed)?;
            let mut text = String::new();
            let mut metrics = Vec::with_capacity(grids.len());
            for (i, g) in grids.iter().enumerate() {
                text.push_str(&g.to_text());
                let (labels, distance) =
                    shortest_path_labels(g.size, &g.obstacles, g.queries[0], g.queries[1])
                        .ok_or_else(|| Error::Config("generated grid is disconnected".into()))?;
                metrics.push(MetricsRecord {
                    f1: Some(crate::tasks::f1_score(&g.labels, &labels)?),
                    w: Some(distance as f64),
                    ..MetricsRecord::at(i as u64 + 1)
                });
            }
            let mean_len =
                grids.iter().map(|g| g.distance as f64).sum::<f64>() / grids.len().max(1) as f64;
            Ok(RunOutput {
                summary: json!({
                    "command": "gen-data",
                    "kind": "grid",
                    "samples": grids.len(),
                    "size": task.grid_size,
                    "max_distance": task.max_distance,
                    "mean_path_length": mean_len,
                }),
                report: format!("generated {} grids of size {}\n", grids.len(), task.grid_size),
                metrics,
                files: vec![("data.txt".into(), text.into_bytes())],
            })
        }
        TaskKind::Blobs | TaskKind::Regression => {
            let problem = build_problem(task, cfg.seed)?;
            let x = &problem.data.inputs;
            let mut text = String::new();
            for i in 0..x.rows() {
                let mut row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
                match &problem.data.targets {
                    crate::nn::Targets::Classes(c) => row.push(c[i].to_string()),
                    crate::nn::Targets::Values(t) => row.extend(t.row(i).iter().map(|v| v.to_string())),
                }
                text.push_str(&row.join(","));
                text.push('\n');
            }
            Ok(RunOutput {
                summary: json!({
                    "command": "gen-data",
                    "kind": task.kind,
                    "samples": x.rows(),
                    "features": x.cols(),
                }),
                report: format!("generated {} samples with {} features\n", x.rows(), x.cols()),
                metrics: vec![MetricsRecord::at(x.rows() as u64)],
                files: vec![("data.csv".into(), text.into_bytes())],
            })
        }
    }
}
