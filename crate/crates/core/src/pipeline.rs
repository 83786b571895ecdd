//! End-to-end filtering of line-aligned corpora with one model per side.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::blocks::BlockTable;
use crate::error::{Error, Result};
use crate::filter::{apply_mask, filter_parallel, Reduction, ThresholdSpec};
use crate::io::{count_lines, format_score, open_lines, AtomicFile, Utf8Policy};
use crate::model::{score_all, BlockModel, ScoreOptions};

#[derive(Debug, Clone)]
pub struct FilterOptions {
    pub spec: ThresholdSpec,
    pub reduction: Reduction,
    /// Appended to each input path to name its filtered output.
    pub output_suffix: String,
    /// Also write `<input>.scores` with one score per input line.
    pub write_scores: bool,
    pub utf8: Utf8Policy,
    pub score: ScoreOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub total: usize,
    pub removed: usize,
    pub outputs: Vec<PathBuf>,
    /// Lines with invalid UTF-8 that were repaired, summed over sides.
    pub replaced_utf8: usize,
}

impl FilterSummary {
    pub fn removed_percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.removed as f64 / self.total as f64
        }
    }
}

pub fn output_path(input: &Path, suffix: &str) -> PathBuf {
    let mut s = input.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn scores_path(input: &Path) -> PathBuf {
    output_path(input, ".scores")
}

/// Score and filter `inputs`, side `i` scored by `models[i]`.
///
/// Nothing is written unless every side is readable and all sides have the
/// same number of lines.
pub fn filter_corpus<P: AsRef<Path>>(
    inputs: &[P],
    models: &[&BlockModel],
    table: &BlockTable,
    opts: &FilterOptions,
) -> Result<FilterSummary> {
    opts.spec.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("no input files".into()));
    }
    if inputs.len() != models.len() {
        return Err(Error::InvalidConfig(format!(
            "{} inputs but {} models",
            inputs.len(),
            models.len()
        )));
    }
    let inputs: Vec<&Path> = inputs.iter().map(AsRef::as_ref).collect();
    let outputs: Vec<PathBuf> = inputs.iter().map(|p| output_path(p, &opts.output_suffix)).collect();
    for (i, o) in inputs.iter().zip(&outputs) {
        if i == o {
            return Err(Error::InvalidConfig("output suffix must not be empty".into()));
        }
    }
    let train_mins: Vec<f64> = models.iter().map(|m| m.min_train_score()).collect();
    match opts.spec {
        ThresholdSpec::Relative(_) => filter_two_pass(&inputs, &outputs, models, table, opts, &train_mins),
        _ => filter_streaming(&inputs, &outputs, models, table, opts, &train_mins),
    }
}

fn filter_two_pass(
    inputs: &[&Path],
    outputs: &[PathBuf],
    models: &[&BlockModel],
    table: &BlockTable,
    opts: &FilterOptions,
    train_mins: &[f64],
) -> Result<FilterSummary> {
    let n = count_lines(inputs[0])?;
    for p in &inputs[1..] {
        let m = count_lines(p)?;
        if m != n {
            return Err(Error::Alignment(format!(
                "{} has {n} lines but {} has {m}",
                inputs[0].display(),
                p.display()
            )));
        }
    }
    let mut columns = Vec::with_capacity(inputs.len());
    let mut replaced = 0;
    for (input, model) in inputs.iter().zip(models) {
        let mut reader = open_lines(input, opts.utf8)?;
        let mut scores = Vec::with_capacity(n);
        model.score_lines(&mut reader, table, &opts.score, |s| {
            scores.push(s);
            Ok(())
        })?;
        replaced += reader.replaced();
        columns.push(scores);
    }
    let mask = filter_parallel(&columns, opts.reduction, opts.spec, Some(train_mins))?;
    let mut score_files = Vec::new();
    if opts.write_scores {
        for (input, col) in inputs.iter().zip(&columns) {
            let mut f = AtomicFile::create(scores_path(input))?;
            for &s in col {
                writeln!(f, "{}", format_score(s))?;
            }
            score_files.push(f);
        }
    }
    apply_mask(inputs, outputs, &mask, opts.utf8)?;
    for f in score_files {
        f.commit()?;
    }
    Ok(FilterSummary {
        total: mask.len(),
        removed: mask.removed_count(),
        outputs: outputs.to_vec(),
        replaced_utf8: replaced,
    })
}

/// Absolute and train-min decisions are row-local, so all sides are read in
/// lockstep and filtered in a single pass.
fn filter_streaming(
    inputs: &[&Path],
    outputs: &[PathBuf],
    models: &[&BlockModel],
    table: &BlockTable,
    opts: &FilterOptions,
    train_mins: &[f64],
) -> Result<FilterSummary> {
    let sides = inputs.len();
    let mut readers = inputs
        .iter()
        .map(|p| open_lines(p, opts.utf8))
        .collect::<Result<Vec<_>>>()?;
    let mut outs = outputs.iter().map(AtomicFile::create).collect::<Result<Vec<_>>>()?;
    let mut score_outs = if opts.write_scores {
        inputs
            .iter()
            .map(|p| AtomicFile::create(scores_path(p)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let pool = if opts.score.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.score.threads)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?,
        )
    } else {
        None
    };
    let chunk_size = opts.score.chunk_size.max(1);
    let mut total = 0;
    let mut removed = 0;
    loop {
        let mut rows: Vec<Vec<String>> = vec![Vec::with_capacity(chunk_size); sides];
        for _ in 0..chunk_size {
            let mut ended = 0;
            let mut line_set = Vec::with_capacity(sides);
            for r in readers.iter_mut() {
                match r.next_line()? {
                    Some(l) => line_set.push(l),
                    None => ended += 1,
                }
            }
            if ended == sides {
                break;
            }
            if ended > 0 {
                return Err(Error::Alignment(format!(
                    "input files end at different lines (around line {})",
                    total + rows[0].len() + 1
                )));
            }
            for (col, l) in rows.iter_mut().zip(line_set) {
                col.push(l);
            }
        }
        let n = rows[0].len();
        if n == 0 {
            break;
        }
        let score_col = |side: usize| -> Vec<f64> {
            let model = models[side];
            match &pool {
                Some(pool) => pool.install(|| rows[side].par_iter().map(|s| model.score_sentence(s, table)).collect()),
                None => rows[side].iter().map(|s| model.score_sentence(s, table)).collect(),
            }
        };
        let columns: Vec<Vec<f64>> = (0..sides).map(score_col).collect();
        let mask = filter_parallel(&columns, opts.reduction, opts.spec, Some(train_mins))?;
        for side in 0..sides {
            for (line, &keep) in rows[side].iter().zip(mask.kept()) {
                if keep {
                    outs[side].write_all(line.as_bytes())?;
                    outs[side].write_all(b"\n")?;
                }
            }
            if let Some(f) = score_outs.get_mut(side) {
                for &s in &columns[side] {
                    writeln!(f, "{}", format_score(s))?;
                }
            }
        }
        total += n;
        removed += mask.removed_count();
        if n < chunk_size {
            break;
        }
    }
    // every reader must be exhausted together
    for r in readers.iter_mut() {
        if r.next_line()?.is_some() {
            return Err(Error::Alignment("input files have different line counts".into()));
        }
    }
    let replaced = readers.iter().map(|r| r.replaced()).sum();
    for f in outs.into_iter().chain(score_outs) {
        f.commit()?;
    }
    Ok(FilterSummary {
        total,
        removed,
        outputs: outputs.to_vec(),
        replaced_utf8: replaced,
    })
}

/// Scores from a `.scores` file or any reader, one per line.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in open_lines(path, Utf8Policy::Strict)?.enumerate() {
        let line = line?;
        let v = line.trim().parse::<f64>().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("invalid score {line:?}: {e}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Scores for a whole file held in memory.
pub fn score_file(model: &BlockModel, path: &Path, table: &BlockTable, policy: Utf8Policy, opts: &ScoreOptions) -> Result<Vec<f64>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    score_all(model, reader, table, policy, opts)
}
