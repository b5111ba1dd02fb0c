//! Dataset assembly and full-batch training loops.

use crate::error::{Error, Result};
use crate::nn::{Activation, Dataset, DenseNet, LossKind, Targets};
use crate::optim::{OptimConfig, Optimizer};
use crate::share::{compute_lsm, mean_off_diagonal, recurrence_regularized_loss, SharedNet};
use crate::tasks::{f1_score, generate_grid, toy_blobs, toy_regression, GridSample};
use crate::tensor::Tensor;

use super::config::{RunConfig, TaskKind, TaskSection};
use super::metrics::{MetricsLog, MetricsRecord};

/// Seed offsets so data, initialization and noise use independent streams.
pub const DATA_STREAM: u64 = 0;
pub const INIT_STREAM: u64 = 0x5EED_0001;
pub const NOISE_STREAM: u64 = 0x5EED_0002;

pub fn stream(seed: u64, offset: u64) -> u64 {
    seed.wrapping_add(offset)
}

/// A dataset together with the loss it is trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub data: Dataset,
    pub loss: LossKind,
    pub outputs: usize,
    pub kind: TaskKind,
}

/// Encodes grids as query and obstacle indicator channels, labels as targets.
pub fn grid_dataset(samples: &[GridSample]) -> Result<Dataset> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let cells = first.size * first.size;
    let mut x = Vec::with_capacity(samples.len() * 2 * cells);
    let mut y = Vec::with_capacity(samples.len() * cells);
    for s in samples {
        if s.size != first.size {
            return Err(Error::Shape("grids of different sizes".into()));
        }
        let (q, o) = s.channels();
        x.extend(q.iter().chain(&o).map(|&b| f64::from(u8::from(b))));
        y.extend(s.labels.iter().map(|&b| f64::from(u8::from(b))));
    }
    let n = samples.len();
    Dataset::new(
        Tensor::matrix(n, 2 * cells, x)?,
        Targets::Values(Tensor::matrix(n, cells, y)?),
    )
}

pub fn generate_grids(task: &TaskSection, seed: u64) -> Result<Vec<GridSample>> {
    let mut rng = crate::seeded(seed);
    (0..task.samples)
        .map(|_| generate_grid(&mut rng, task.max_distance, task.grid_size))
        .collect()
}

pub fn build_problem(task: &TaskSection, seed: u64) -> Result<Problem> {
    let seed = stream(seed, DATA_STREAM);
    let (data, loss, outputs) = match task.kind {
        TaskKind::Blobs => (
            toy_blobs(task.samples, task.features, task.classes, task.separation, seed)?,
            LossKind::CrossEntropy,
            task.classes,
        ),
        TaskKind::Regression => (
            toy_regression(task.samples, task.features, task.noise, seed)?.0,
            LossKind::Mse,
            1,
        ),
        TaskKind::Grid => (
            grid_dataset(&generate_grids(task, seed)?)?,
            LossKind::BinaryCrossEntropy,
            task.grid_size * task.grid_size,
        ),
    };
    Ok(Problem {
        data,
        loss,
        outputs,
        kind: task.kind,
    })
}

pub fn build_net(cfg: &RunConfig, problem: &Problem) -> Result<DenseNet> {
    let mut sizes = vec![problem.data.features()];
    sizes.extend(&cfg.model.hidden);
    sizes.push(problem.outputs);
    let mut rng = crate::seeded(stream(cfg.seed, INIT_STREAM));
    DenseNet::random(
        &sizes,
        cfg.model.activation,
        Activation::Identity,
        cfg.model.bias,
        problem.loss,
        &mut rng,
    )
}

/// F1 over every grid cell, predicting a label where the logit is positive.
pub fn grid_f1(logits: &Tensor, targets: &Targets) -> Result<f64> {
    let Targets::Values(t) = targets else {
        return Err(Error::Config("grid targets are values".into()));
    };
    let pred: Vec<bool> = logits.data().iter().map(|&v| v > 0.0).collect();
    let truth: Vec<bool> = t.data().iter().map(|&v| v > 0.5).collect();
    f1_score(&truth, &pred)
}

/// Fills the task metric of `record`: accuracy for classification, F1 for grids.
pub fn task_metrics(net: &DenseNet, params: &[Tensor], problem: &Problem, record: &mut MetricsRecord) -> Result<()> {
    match problem.kind {
        TaskKind::Blobs => record.accuracy = Some(net.accuracy_with(params, &problem.data)?),
        TaskKind::Grid => {
            let out = net.forward_with(params, &problem.data.inputs)?;
            record.f1 = Some(grid_f1(&out, &problem.data.targets)?);
        }
        TaskKind::Regression => {}
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub init: DenseNet,
    pub net: DenseNet,
    pub metrics: MetricsLog,
}

/// Full-batch training of `net` for `steps`, logging every `log_every`.
pub fn train_net(
    net: &DenseNet,
    problem: &Problem,
    optim: &OptimConfig,
    steps: usize,
    log_every: usize,
) -> Result<TrainOutcome> {
    let mut opt = Optimizer::new(optim.clone())?;
    let mut work = net.clone();
    let mut params = net.params().to_vec();
    let mut metrics = MetricsLog::new();
    let log_every = log_every.max(1);
    let mut rec = MetricsRecord {
        loss: Some(net.loss(&problem.data)?),
        ..MetricsRecord::at(0)
    };
    task_metrics(net, &params, problem, &mut rec)?;
    metrics.push(rec)?;
    for t in 1..=steps {
        let lr = opt.next_rates().0;
        let (_, grads) = work.loss_and_grad(&problem.data)?;
        opt.step(&mut params, &grads)?;
        work.set_params(params.clone())?;
        if t % log_every == 0 || t == steps {
            let mut rec = MetricsRecord {
                loss: Some(work.loss(&problem.data)?),
                lr: Some(lr),
                ..MetricsRecord::at(t as u64)
            };
            task_metrics(&work, &params, problem, &mut rec)?;
            metrics.push(rec)?;
        }
    }
    Ok(TrainOutcome {
        init: net.clone(),
        net: work,
        metrics,
    })
}

/// Trains the network described by `cfg` on its task.
pub fn train(cfg: &RunConfig) -> Result<(Problem, TrainOutcome)> {
    let problem = build_problem(&cfg.task, cfg.seed)?;
    let net = build_net(cfg, &problem)?;
    let optim = cfg.optim.build(cfg.train.steps as u64);
    let out = train_net(&net, &problem, &optim, cfg.train.steps, cfg.train.log_every)?;
    Ok((problem, out))
}

#[derive(Clone, Debug)]
pub struct SharedOutcome {
    pub net: SharedNet,
    pub metrics: MetricsLog,
}

/// Fits a template-shared stack to a random teacher of the same shape with
/// the recurrence regularizer.
pub fn train_shared(cfg: &RunConfig) -> Result<SharedOutcome> {
    let sc = &cfg.share;
    let mut data_rng = crate::seeded(stream(cfg.seed, DATA_STREAM));
    let teacher = SharedNet::random(sc.width, sc.layers, sc.templates, sc.activation, &mut data_rng)?;
    let inputs = Tensor::randn(&[cfg.task.samples, sc.width], 1.0, &mut data_rng);
    let targets = teacher.forward(&inputs)?;
    let data = Dataset::new(inputs, Targets::Values(targets))?;
    let mut init_rng = crate::seeded(stream(cfg.seed, INIT_STREAM));
    let mut net = SharedNet::random(sc.width, sc.layers, sc.templates, sc.activation, &mut init_rng)?;
    let mut opt = Optimizer::new(cfg.optim.build(cfg.train.steps as u64))?;
    let mut metrics = MetricsLog::new();
    let log_every = cfg.train.log_every.max(1);
    for t in 0..=cfg.train.steps {
        let out = recurrence_regularized_loss(&net, sc.lambda_r, &data)?;
        if t % log_every == 0 || t == cfg.train.steps {
            metrics.push(MetricsRecord {
                loss: Some(out.data_loss),
                lsm_mean: Some(mean_off_diagonal(&compute_lsm(&net.bank.coeffs)?)),
                ..MetricsRecord::at(t as u64)
            })?;
        }
        if t == cfg.train.steps {
            break;
        }
        let mut params = [net.bank.coeffs.clone(), net.bank.templates.clone()];
        opt.step(&mut params, &[out.coeff_grad, out.template_grad])?;
        let [coeffs, templates] = params;
        net.bank.coeffs = coeffs;
        net.bank.templates = templates;
    }
    Ok(SharedOutcome { net, metrics })
}
