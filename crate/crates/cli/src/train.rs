use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use mhenet::checkpoint;
use mhenet::data::{synth_sample, DatasetManifest, Sample, Split};
use mhenet::network::Network;
use mhenet::train::{StepLog, Trainer};
use mhenet::Real;

use crate::config::RunConfig;
use crate::{set_threads, CliError, CliResult, TrainArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_LOG: &str = "loss.tsv";
pub const EPOCH_LOG: &str = "epochs.tsv";
pub const LAST_CHECKPOINT: &str = "last.mhen";
pub const BEST_CHECKPOINT: &str = "best.mhen";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out: PathBuf,
    pub steps: usize,
    pub epochs: usize,
    pub best_val: Real,
}

fn synthetic(cfg: &RunConfig, range: std::ops::Range<usize>) -> CliResult<Vec<Sample>> {
    let [h, w] = cfg.network.input_size;
    if h != w {
        return Err(CliError::Failed(format!("synthetic data needs a square input size, got {h}x{w}")));
    }
    let seed = cfg.data.synthetic_seed.unwrap_or(cfg.seed);
    Ok(range.map(|i| synth_sample(h, i, seed)).collect::<Result<_, _>>()?)
}

fn load_data(cfg: &RunConfig) -> CliResult<(Vec<Sample>, Option<Vec<Sample>>)> {
    let [h, w] = cfg.network.input_size;
    let load = |root: &PathBuf, split| -> CliResult<Vec<Sample>> {
        Ok(DatasetManifest::open(root, split)?.load_all((h, w))?)
    };
    let train = match &cfg.data.train {
        Some(root) => load(root, Split::Train)?,
        None => synthetic(cfg, 0..cfg.data.synthetic)?,
    };
    if train.len() < 2 {
        return Err(CliError::Failed(format!("training set has {} samples, need at least 2", train.len())));
    }
    let val = match (&cfg.data.val, &cfg.data.train) {
        (Some(root), _) => Some(load(root, Split::Test)?),
        (None, None) if cfg.data.synthetic_val > 0 => {
            let n = cfg.data.synthetic;
            Some(synthetic(cfg, n..n + cfg.data.synthetic_val)?)
        }
        _ => None,
    };
    Ok((train, val))
}

fn create(path: PathBuf) -> CliResult<BufWriter<File>> {
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::file(path, e))
}

/// Train with a resolved configuration, writing the run directory.
pub fn run_training(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    let out = cfg.out.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::file(&out, e))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()).map_err(|e| CliError::file(out.join(CONFIG_FILE), e))?;

    let (train, val) = load_data(cfg)?;
    let net = Network::new(cfg.network.clone())?;
    let params = net.init_params(cfg.seed);
    let mut trainer = Trainer::new(net, params, cfg.train.clone())?;

    let mut loss_log = create(out.join(LOSS_LOG))?;
    let mut epoch_log = create(out.join(EPOCH_LOG))?;
    writeln!(loss_log, "{}", StepLog::HEADER).map_err(|e| CliError::file(out.join(LOSS_LOG), e))?;
    writeln!(epoch_log, "epoch\tlr\ttrain_loss\tval_loss").map_err(|e| CliError::file(out.join(EPOCH_LOG), e))?;

    let mut best = Real::INFINITY;
    let mut epochs = 0;
    for epoch in 1..=cfg.train.epochs {
        if trainer.finished() {
            break;
        }
        let mut io_err = None;
        let mean = trainer.run_epoch(&train, epoch, &mut |row| {
            if let Err(e) = writeln!(loss_log, "{}", row.to_tsv()) {
                io_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = io_err {
            return Err(CliError::file(out.join(LOSS_LOG), e));
        }
        let score = match &val {
            Some(v) => trainer.eval_loss(v)?,
            None => mean,
        };
        checkpoint::save(out.join(LAST_CHECKPOINT), &trainer.net.config, &trainer.params)?;
        if score < best {
            best = score;
            checkpoint::save(out.join(BEST_CHECKPOINT), &trainer.net.config, &trainer.params)?;
        }
        let lr = cfg.train.schedule.lr(epoch);
        writeln!(epoch_log, "{epoch}\t{lr:e}\t{mean:e}\t{score:e}").map_err(|e| CliError::file(out.join(EPOCH_LOG), e))?;
        println!("epoch {epoch:>4}  lr {lr:.3e}  train {mean:.5}  val {score:.5}  steps {}", trainer.step);
        epochs = epoch;
    }
    loss_log.flush().map_err(|e| CliError::file(out.join(LOSS_LOG), e))?;
    epoch_log.flush().map_err(|e| CliError::file(out.join(EPOCH_LOG), e))?;
    Ok(TrainOutcome {
        out,
        steps: trainer.step,
        epochs,
        best_val: best,
    })
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<Option<TrainOutcome>> {
    let cfg = RunConfig::resolve_train(a)?;
    println!("{}", cfg.summary());
    if a.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(None);
    }
    set_threads(cfg.threads);
    run_training(&cfg).map(Some)
}
