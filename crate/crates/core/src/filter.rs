//! Keep/remove decisions from scores, and applying them to line-aligned files.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{count_lines, open_lines, AtomicFile, Utf8Policy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    /// Remove scores strictly below the threshold.
    Absolute(f64),
    /// Remove the given percentage of lowest-scored lines.
    Relative(f64),
    /// Remove scores strictly below the model's minimum training score.
    TrainMin,
}

impl ThresholdSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdSpec::Relative(p) if !(0.0..=100.0).contains(&p) => Err(Error::InvalidConfig(format!(
                "relative percentage {p} is outside [0, 100]"
            ))),
            ThresholdSpec::Absolute(t) if t.is_nan() => Err(Error::InvalidConfig("threshold is NaN".into())),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ThresholdSpec::Absolute(_) => "abs",
            ThresholdSpec::Relative(_) => "rel",
            ThresholdSpec::TrainMin => "train-min",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Min,
    Max,
    Avg,
}

impl Reduction {
    pub fn reduce(&self, values: &[f64]) -> f64 {
        match self {
            Reduction::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Reduction::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Reduction::Avg => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepMask {
    kept: Vec<bool>,
    removed: usize,
}

impl KeepMask {
    pub fn from_kept(kept: Vec<bool>) -> Self {
        let removed = kept.iter().filter(|&&k| !k).count();
        KeepMask { kept, removed }
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn removed_count(&self) -> usize {
        self.removed
    }

    pub fn kept_count(&self) -> usize {
        self.kept.len() - self.removed
    }
}

/// Number of lines relative thresholding removes from `n` lines.
pub fn relative_removal_count(percent: f64, n: usize) -> usize {
    ((percent * n as f64) / 100.0).floor() as usize
}

pub fn filter_mono(scores: &[f64], spec: ThresholdSpec, train_min: Option<f64>) -> Result<KeepMask> {
    spec.validate()?;
    let kept = match spec {
        ThresholdSpec::Absolute(t) => scores.iter().map(|&s| !(s < t)).collect(),
        ThresholdSpec::TrainMin => {
            let t = train_min.ok_or_else(|| Error::InvalidConfig("train-min mode needs a training minimum".into()))?;
            scores.iter().map(|&s| !(s < t)).collect()
        }
        ThresholdSpec::Relative(p) => {
            let remove = relative_removal_count(p, scores.len());
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            let mut kept = vec![true; scores.len()];
            for &i in &order[..remove] {
                kept[i] = false;
            }
            kept
        }
    };
    Ok(KeepMask::from_kept(kept))
}

/// Filter line-aligned score columns, one per side.
///
/// In absolute and relative modes each row is reduced to one score first.
/// In train-min mode a row is removed if any side falls below that side's
/// training minimum, and the reduction is ignored.
pub fn filter_parallel(
    columns: &[Vec<f64>],
    reduction: Reduction,
    spec: ThresholdSpec,
    train_mins: Option<&[f64]>,
) -> Result<KeepMask> {
    spec.validate()?;
    let n = columns
        .first()
        .ok_or_else(|| Error::InvalidConfig("no score columns".into()))?
        .len();
    if let Some(bad) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::Alignment(format!("score columns have {n} and {} rows", bad.len())));
    }
    if spec == ThresholdSpec::TrainMin {
        let mins = train_mins.ok_or_else(|| Error::InvalidConfig("train-min mode needs per-side minima".into()))?;
        if mins.len() != columns.len() {
            return Err(Error::InvalidConfig(format!(
                "{} training minima for {} sides",
                mins.len(),
                columns.len()
            )));
        }
        let kept = (0..n)
            .map(|row| columns.iter().zip(mins).all(|(col, &t)| !(col[row] < t)))
            .collect();
        return Ok(KeepMask::from_kept(kept));
    }
    let mut row = Vec::with_capacity(columns.len());
    let reduced: Vec<f64> = (0..n)
        .map(|i| {
            row.clear();
            row.extend(columns.iter().map(|c| c[i]));
            reduction.reduce(&row)
        })
        .collect();
    filter_mono(&reduced, spec, None)
}

/// Write the kept lines of each input to the matching output.
///
/// All inputs are checked against the mask before anything is written, and
/// outputs only appear once every side has been written successfully.
pub fn apply_mask<P: AsRef<Path>, Q: AsRef<Path>>(
    inputs: &[P],
    outputs: &[Q],
    mask: &KeepMask,
    policy: Utf8Policy,
) -> Result<()> {
    if inputs.len() != outputs.len() {
        return Err(Error::InvalidConfig(format!(
            "{} inputs but {} outputs",
            inputs.len(),
            outputs.len()
        )));
    }
    for input in inputs {
        let n = count_lines(input.as_ref())?;
        if n != mask.len() {
            return Err(Error::Alignment(format!(
                "{} has {n} lines, expected {}",
                input.as_ref().display(),
                mask.len()
            )));
        }
    }
    let mut pending = Vec::with_capacity(inputs.len());
    for (input, output) in inputs.iter().zip(outputs) {
        let mut out = AtomicFile::create(output.as_ref())?;
        let reader = open_lines(input.as_ref(), policy)?;
        for (line, &keep) in reader.zip(mask.kept()) {
            let line = line?;
            if keep {
                out.write_all(line.as_bytes())?;
                out.write_all(b"\n")?;
            }
        }
        pending.push(out);
    }
    for out in pending {
        out.commit()?;
    }
    Ok(())
}
