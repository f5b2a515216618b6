use serde::{Deserialize, Serialize};

use super::{CheckpointEntry, HarnessError};

pub const METRICS_HEADER: &str = "global_epoch,experience_trained,eval_experience,position,accuracy,loss,lr";

/// One row of the long-format metrics table. Indices are one-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub global_epoch: usize,
    pub experience_trained: usize,
    pub eval_experience: usize,
    pub position: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub lr: f64,
}

/// Everything measured during one seed's sequential run.
///
/// Accuracy `C[j][i][k]` is stored flat; epochs that were not evaluated
/// hold NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub experiences: Vec<String>,
    pub epochs_per_experience: usize,
    pub positions: usize,
    accuracy: Vec<f64>,
    eval_loss: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub checkpoints: Vec<CheckpointEntry>,
}

impl RunRecord {
    pub fn new(seed: u64, experiences: Vec<String>, epochs_per_experience: usize, positions: usize) -> Self {
        let k = experiences.len() * epochs_per_experience;
        let e = experiences.len();
        Self {
            seed,
            epochs_per_experience,
            positions,
            accuracy: vec![f64::NAN; k * e * positions],
            eval_loss: vec![f64::NAN; k * e],
            train_loss: vec![f64::NAN; k],
            lr: vec![f64::NAN; k],
            checkpoints: Vec::new(),
            experiences,
        }
    }

    pub fn num_experiences(&self) -> usize {
        self.experiences.len()
    }

    pub fn num_epochs(&self) -> usize {
        self.num_experiences() * self.epochs_per_experience
    }

    fn slot(&self, i: usize, k: usize) -> usize {
        assert!(
            (1..=self.num_experiences()).contains(&i) && (1..=self.num_epochs()).contains(&k),
            "experience {i} / epoch {k} out of range"
        );
        (k - 1) * self.num_experiences() + (i - 1)
    }

    /// Accuracy at position `j` on experience `i` after global epoch `k`.
    pub fn c(&self, j: usize, i: usize, k: usize) -> f64 {
        assert!((1..=self.positions).contains(&j), "position {j} out of range");
        self.accuracy[self.slot(i, k) * self.positions + j - 1]
    }

    pub fn eval_loss(&self, i: usize, k: usize) -> f64 {
        self.eval_loss[self.slot(i, k)]
    }

    pub fn is_evaluated(&self, k: usize) -> bool {
        !self.eval_loss[self.slot(1, k)].is_nan()
    }

    /// Stores per-position accuracy and mean loss for experience `i` at `k`.
    pub fn set_eval(&mut self, i: usize, k: usize, accuracy: &[f64], loss: f64) {
        assert_eq!(accuracy.len(), self.positions);
        let s = self.slot(i, k);
        self.accuracy[s * self.positions..(s + 1) * self.positions].copy_from_slice(accuracy);
        self.eval_loss[s] = loss;
    }

    /// One-based experience being trained during global epoch `k`.
    pub fn experience_trained(&self, k: usize) -> usize {
        (k - 1) / self.epochs_per_experience + 1
    }

    /// Global epochs `(first, last)` of experience `i`'s training phase.
    pub fn phase(&self, i: usize) -> (usize, usize) {
        let p = self.epochs_per_experience;
        ((i - 1) * p + 1, i * p)
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for k in 1..=self.num_epochs() {
            if !self.is_evaluated(k) {
                continue;
            }
            for i in 1..=self.num_experiences() {
                for j in 1..=self.positions {
                    out.push(MetricRow {
                        global_epoch: k,
                        experience_trained: self.experience_trained(k),
                        eval_experience: i,
                        position: j,
                        accuracy: self.c(j, i, k),
                        loss: self.eval_loss(i, k),
                        lr: self.lr[k - 1],
                    });
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    /// Rebuilds the accuracy, loss and lr curves from a metrics table.
    /// Experience names and train loss are not part of the table.
    pub fn from_csv(text: &str, seed: u64) -> Result<Self, HarnessError> {
        let table = |m: String| HarnessError::Table(m);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| table(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
        if header != METRICS_HEADER {
            return Err(table(format!("unexpected header `{header}`")));
        }
        let rows: Vec<MetricRow> =
            r.deserialize().collect::<Result<_, _>>().map_err(|e: csv::Error| table(e.to_string()))?;
        if rows.is_empty() {
            return Err(table("no rows".into()));
        }
        let experiences = rows.iter().map(|r| r.eval_experience.max(r.experience_trained)).max().unwrap_or(0);
        let positions = rows.iter().map(|r| r.position).max().unwrap_or(0);
        let per = rows.iter().filter(|r| r.experience_trained == 1).map(|r| r.global_epoch).max().unwrap_or(0);
        if experiences == 0 || positions == 0 || per == 0 || rows.iter().any(|r| r.global_epoch == 0 || r.position == 0) {
            return Err(table("indices are one-based".into()));
        }
        let names = (1..=experiences).map(|i| format!("E{i}")).collect();
        let mut rec = RunRecord::new(seed, names, per, positions);
        for row in rows {
            if row.global_epoch > rec.num_epochs() || rec.experience_trained(row.global_epoch) != row.experience_trained {
                return Err(table(format!("epoch {} inconsistent with {per} epochs per experience", row.global_epoch)));
            }
            let s = rec.slot(row.eval_experience, row.global_epoch);
            rec.accuracy[s * positions + row.position - 1] = row.accuracy;
            rec.eval_loss[s] = row.loss;
            rec.lr[row.global_epoch - 1] = row.lr;
        }
        Ok(rec)
    }
}
