use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{update_buffer, ReplayBuffer};
use super::{save_checkpoint, HarnessError, RunRecord, TrainConfig};
use crate::lego::{Dataset, TokenizedExample};
use crate::models::{Batch, Classifier, TransformerModel};
use crate::tensor::{AdamState, Tape};

/// Per-position accuracy and mean token cross-entropy on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: Vec<f64>,
    pub loss: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub seed: u64,
    pub global_epoch: usize,
    /// One-based.
    pub experience: usize,
    pub epoch_in_experience: usize,
    pub train_loss: f64,
    pub lr: f64,
    /// One entry per experience when this epoch was evaluated.
    pub eval: Option<Vec<EvalResult>>,
}

/// Scores `model` on the first `limit` examples of `test` (all when `None`).
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    test: &Dataset,
    limit: Option<usize>,
) -> Result<EvalResult, HarnessError> {
    let n = limit.map_or(test.len(), |l| l.min(test.len()));
    if n == 0 {
        return Err(HarnessError::Contract("nothing to evaluate".into()));
    }
    let examples: Vec<&TokenizedExample> = test.examples[..n].iter().map(|e| &e.tokens).collect();
    let positions = examples[0].num_clauses();
    if examples.iter().any(|e| e.num_clauses() != positions) {
        return Err(HarnessError::Contract("test examples differ in length".into()));
    }
    let classes = model.num_classes();
    let logits = model.logits(&examples)?;
    let mut correct = vec![0usize; positions];
    let (mut loss, mut labeled) = (0.0, 0usize);
    for (ex, row) in examples.iter().zip(&logits) {
        for (pos, &tok) in ex.label_positions.iter().enumerate() {
            let z = &row[tok * classes..(tok + 1) * classes];
            let target = ex.labels[tok].expect("label positions carry labels");
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[target];
            labeled += 1;
            // ties resolve to the lowest class id
            let pred = z.iter().enumerate().fold(0, |b, (c, &v)| if v > z[b] { c } else { b });
            correct[pos] += usize::from(pred == target);
        }
    }
    Ok(EvalResult {
        accuracy: correct.iter().map(|&c| c as f64 / n as f64).collect(),
        loss: loss / labeled as f64,
        examples: n,
    })
}

/// Trains on each experience in turn and evaluates on all of them.
///
/// Every epoch walks a fresh permutation of the current train set plus the
/// replay buffer in `floor(pool / batch_size)` full batches. With a
/// `run_dir`, a checkpoint is written at each experience boundary.
pub fn train_sequential(
    model: &mut TransformerModel<f32>,
    train: &[Dataset],
    test: &[Dataset],
    cfg: &TrainConfig,
    seed: u64,
    run_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<RunRecord, HarnessError> {
    if train.is_empty() || train.len() != test.len() {
        return Err(HarnessError::Schedule(format!("{} train sets vs {} test sets", train.len(), test.len())));
    }
    for (a, b) in train.iter().zip(test) {
        if a.experience != b.experience {
            return Err(HarnessError::Schedule(format!(
                "train/test mismatch at experience {}",
                a.experience.name
            )));
        }
    }
    let min_train = train.iter().map(Dataset::len).min().unwrap_or(0);
    cfg.validate(min_train)?;
    let positions = test[0].length;
    if test.iter().any(|t| t.length != positions) {
        return Err(HarnessError::Schedule("experiences differ in chain length".into()));
    }

    let names = train.iter().map(|d| d.experience.name.clone()).collect();
    let mut record = RunRecord::new(seed, names, cfg.epochs_per_experience, positions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut buffer = ReplayBuffer::new();
    let pad = (model.config().vocab_size - 1) as u32;
    let jitter = model.config().position_jitter;
    let max_pos = model.config().max_positions;

    for (phase, data) in train.iter().enumerate() {
        if phase > 0 && cfg.reset_optimizer {
            adam.reset();
        }
        let pool: Vec<&TokenizedExample> = data
            .examples
            .iter()
            .map(|e| &e.tokens)
            .chain(buffer.entries().iter().map(|e| &e.example.tokens))
            .collect();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for e in 0..cfg.epochs_per_experience {
            let k = phase * cfg.epochs_per_experience + e + 1;
            let lr = cfg.lr.lr_for(k - 1, e);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let steps = pool.len() / cfg.batch_size;
            for chunk in order.chunks_exact(cfg.batch_size) {
                let items: Vec<&TokenizedExample> = chunk.iter().map(|&i| pool[i]).collect();
                let mut batch = Batch::new(&items, pad)?;
                if jitter {
                    batch.jitter_positions(max_pos, &mut rng);
                }
                let mut tape = Tape::new();
                let dropout = (model.config().dropout > 0.0).then_some(&mut rng);
                let loss = model.loss(&mut tape, &batch, dropout)?;
                total += tape.value(loss).item() as f64;
                let grads = tape.backward(loss)?;
                model.params_mut().accumulate(&grads);
                adam.step(model.params_mut(), lr)?;
            }
            let train_loss = total / steps as f64;
            if !train_loss.is_finite() {
                return Err(HarnessError::Contract(format!("training diverged at epoch {k}")));
            }
            record.train_loss[k - 1] = train_loss;
            record.lr[k - 1] = lr;

            let last = e + 1 == cfg.epochs_per_experience;
            let eval = if last || (e + 1) % cfg.eval_every == 0 {
                let results = test.iter().map(|t| evaluate(&*model, t, cfg.eval_limit)).collect::<Result<Vec<_>, _>>()?;
                for (i, r) in results.iter().enumerate() {
                    record.set_eval(i + 1, k, &r.accuracy, r.loss);
                }
                Some(results)
            } else {
                None
            };
            on_epoch(&EpochReport {
                seed,
                global_epoch: k,
                experience: phase + 1,
                epoch_in_experience: e + 1,
                train_loss,
                lr,
                eval,
            });
        }
        if let Some(dir) = run_dir {
            let k = (phase + 1) * cfg.epochs_per_experience;
            let file = format!("checkpoints/seed{seed}-exp{}-epoch{k}.ckpt", phase + 1);
            record.checkpoints.push(save_checkpoint(model, dir, &file, k, phase + 1)?);
        }
        if phase + 1 < train.len() {
            update_buffer(&mut buffer, data, phase, cfg.replay_fraction, &mut rng)?;
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::build_dihedral;
    use crate::harness::load_checkpoint;
    use crate::lego::{generate_dataset, make_flipflop_experiences, VocabSpec};
    use crate::models::ModelConfig;

    fn tiny() -> (Vec<Dataset>, Vec<Dataset>, ModelConfig) {
        let g = build_dihedral(3).unwrap();
        let v = VocabSpec::new(&g, 26);
        let exps = make_flipflop_experiences(&g).unwrap();
        let train = exps[..2].iter().enumerate().map(|(i, e)| generate_dataset(e, &g, &v, 24, 4, i as u64).unwrap());
        let test = exps[..2].iter().enumerate().map(|(i, e)| generate_dataset(e, &g, &v, 10, 4, 50 + i as u64).unwrap());
        let cfg = ModelConfig::new(1, 2, 16, v.len(), 6).shared(true);
        (train.collect(), test.collect(), cfg)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { epochs_per_experience: 2, batch_size: 8, replay_fraction: 0.25, ..TrainConfig::desk() }
    }

    #[test]
    fn same_seed_same_record() {
        let (train, test, mcfg) = tiny();
        let run = || {
            let mut m = TransformerModel::<f32>::init(&mcfg, 4).unwrap();
            let r = train_sequential(&mut m, &train, &test, &small_cfg(), 4, None, &mut |_| {}).unwrap();
            (r, m.params().digest())
        };
        let (a, da) = run();
        let (b, db) = run();
        assert_eq!(da, db);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.train_loss, b.train_loss);
    }

    #[test]
    fn record_shape_and_checkpoints() {
        let (train, test, mcfg) = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut m = TransformerModel::<f32>::init(&mcfg, 1).unwrap();
        let mut reports = Vec::new();
        let r = train_sequential(&mut m, &train, &test, &small_cfg(), 1, Some(dir.path()), &mut |e| {
            reports.push(e.global_epoch)
        })
        .unwrap();
        assert_eq!(reports, vec![1, 2, 3, 4]);
        assert_eq!(r.num_epochs(), 4);
        assert!((1..=4).all(|k| r.is_evaluated(k)));
        for k in 1..=4 {
            for i in 1..=2 {
                for j in 1..=4 {
                    assert!((0.0..=1.0).contains(&r.c(j, i, k)));
                }
            }
        }
        assert_eq!(r.checkpoints.len(), 2);
        let last = &r.checkpoints[1];
        let back = load_checkpoint(&dir.path().join(&last.path), Some(&last.digest), Some(&mcfg)).unwrap();
        assert_eq!(back.params().digest(), m.params().digest());
    }

    #[test]
    fn evaluation_does_not_mutate() {
        let (_, test, mcfg) = tiny();
        let m = TransformerModel::<f32>::init(&mcfg, 2).unwrap();
        let before = m.params().digest();
        let a = evaluate(&m, &test[0], None).unwrap();
        let b = evaluate(&m, &test[0], Some(5)).unwrap();
        assert_eq!(m.params().digest(), before);
        assert_eq!(a.examples, 10);
        assert_eq!(b.examples, 5);
        assert_eq!(evaluate(&m, &test[0], None).unwrap(), a);
    }

    #[test]
    fn oversized_batch_is_a_schedule_error() {
        let (train, test, mcfg) = tiny();
        let mut m = TransformerModel::<f32>::init(&mcfg, 2).unwrap();
        let cfg = TrainConfig { batch_size: 25, ..small_cfg() };
        let err = train_sequential(&mut m, &train, &test, &cfg, 0, None, &mut |_| {}).unwrap_err();
        assert!(matches!(err, HarnessError::Schedule(_)));
    }
}
