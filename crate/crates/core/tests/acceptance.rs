//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blockmix::filter::relative_removal_count;
use blockmix::io::LineReader;
use blockmix::pipeline::{filter_corpus, output_path, FilterOptions};
use blockmix::vbgmm::ELBO_SLACK;
use blockmix::{
    filter_mono, filter_parallel, fit, BlockModel, BlockTable, FitConfig, MixtureModel, PriorConfig, Priors,
    Reduction, ScoreOptions, ThresholdSpec, Utf8Policy,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn table() -> &'static BlockTable {
    BlockTable::builtin()
}

fn train(lines: &[String]) -> BlockModel {
    BlockModel::train(lines, table(), &PriorConfig::default(), &FitConfig::default())
        .expect("training succeeds")
        .0
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

const HANZI: &str = "的一是在不了有和人这中大为上个国我以要他时来用们生到作地于出就分对成会可也你发年动同工经法面政策财务展小组健康整洁卫生清洁技术织测定样品总交换容量平衡等温线数据集包含句子简单新版本布";

fn insert_at(s: &mut String, char_idx: usize, text: &str) {
    let byte = s.char_indices().nth(char_idx).map_or(s.len(), |(b, _)| b);
    s.insert_str(byte, text);
}

fn pick(rng: &mut ChaCha8Rng, alphabet: &[char]) -> char {
    alphabet[rng.random_range(0..alphabet.len())]
}

/// Synthetic clean Chinese dev set: mostly hanzi with CJK punctuation and
/// some ASCII digits. Two lines carry a single katakana character, so the
/// Katakana block is retained with very little training mass.
fn zh_dev_set() -> Vec<String> {
    let hanzi: Vec<char> = HANZI.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2019);
    let mut lines: Vec<String> = (0..300)
        .map(|i| {
            let len = rng.random_range(12..30);
            let mut s: String = (0..len).map(|_| pick(&mut rng, &hanzi)).collect();
            if i % 3 == 0 {
                insert_at(&mut s, len / 2, &rng.random_range(1..3000).to_string());
            }
            if i % 2 == 0 {
                insert_at(&mut s, len / 3, "、");
            }
            s.push('。');
            s
        })
        .collect();
    insert_at(&mut lines[17], 5, "ー");
    insert_at(&mut lines[150], 8, "ア");
    lines
}

// 1. Unseen-block sentences score exactly 0.
fn unseen_block_score() -> Outcome {
    let model = train(&zh_dev_set());
    ensure!(model.unseen_score() == 0.0, "default unseen score is {}", model.unseen_score());
    let probes = [
        "从系统目录→位置→传送我的位置",
        "From System Menu → Location",
        "Salubrité, propreté",
        "财务政策\u{1F600}",
        "\u{2FE5}",
    ];
    for p in probes {
        let s = model.score_sentence(p, table());
        ensure!(s.to_bits() == 0.0f64.to_bits(), "{p:?} scored {s}");
    }
    Ok(format!("{} sentences scored exactly 0", probes.len()))
}

// 2. Qualitative ordering: foreign-only < half-foreign < one foreign char <= clean.
fn score_ordering() -> Outcome {
    let model = train(&zh_dev_set());
    let names = model.projection().names();
    ensure!(names.iter().any(|n| n == "Katakana"), "Katakana not retained: {names:?}");
    let score = |s: &str| model.score_sentence(s, table());
    let foreign = score("リリースノート");
    let half = score("リリース发布说明");
    let one = score("财务政策及发展小组的报告ア已经发布了新版本");
    let clean = score("财务政策及发展小组的报告已经发布了新版本");
    let detail = format!("foreign {foreign:.2} < half {half:.2} < one {one:.2} <= clean {clean:.2}");
    ensure!(foreign < half && half < one && one <= clean, "ordering violated: {detail}");
    Ok(detail)
}

// 3. Single-block training corpus: one retained dimension, and train-min
// filtering removes every sentence touching another block.
fn single_block_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ascii: Vec<char> = (' '..='~').collect();
    let dev: Vec<String> = (0..500)
        .map(|_| (0..rng.random_range(5..120)).map(|_| pick(&mut rng, &ascii)).collect())
        .collect();
    let model = train(&dev);
    ensure!(model.projection().dim() == 1, "retained {} blocks", model.projection().dim());
    ensure!(model.projection().names()[0] == "Basic Latin", "retained {:?}", model.projection().names());

    let foreign = ['é', '😀', '中', 'д', '→', '\u{00A0}'];
    let mut corpus = Vec::new();
    let mut expected = Vec::new();
    for i in 0..2000 {
        let mut s: String = (0..rng.random_range(1..80)).map(|_| pick(&mut rng, &ascii)).collect();
        let dirty = i % 7 == 0;
        if dirty {
            let at = rng.random_range(0..=s.chars().count());
            insert_at(&mut s, at, &foreign[i % foreign.len()].to_string());
        }
        corpus.push(s);
        expected.push(!dirty);
    }
    let scores: Vec<f64> = corpus.iter().map(|s| model.score_sentence(s, table())).collect();
    let mask = filter_mono(&scores, ThresholdSpec::TrainMin, Some(model.min_train_score())).map_err(|e| e.to_string())?;
    ensure!(mask.kept() == expected.as_slice(), "train-min mask differs from the block rule");
    Ok(format!("1 retained block, removed {}/{} non-ASCII lines", mask.removed_count(), corpus.len()))
}

/// Dense Gauss-Jordan inverse and determinant, independent of the factored
/// evaluation used by the library.
fn naive_inverse_det(m: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        if pivot != col {
            a.swap(pivot, col);
            inv.swap(pivot, col);
            det = -det;
        }
        let p = a[col][col];
        det *= p;
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..n {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    (inv, det)
}

fn naive_log_density(weights: &[f64], means: &[Vec<f64>], covs: &[Vec<Vec<f64>>], x: &[f64]) -> f64 {
    let d = x.len();
    let mut total = 0.0;
    for ((w, mu), cov) in weights.iter().zip(means).zip(covs) {
        let (inv, det) = naive_inverse_det(cov);
        let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += diff[i] * inv[i][j] * diff[j];
            }
        }
        let norm = ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt();
        total += w * (-0.5 * quad).exp() / norm;
    }
    total.ln()
}

// 4. Factored log density equals brute-force dense evaluation.
fn density_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let d = rng.random_range(1..=5);
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let means: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).collect();
        let covs: Vec<Vec<Vec<f64>>> = (0..k)
            .map(|_| {
                let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
                (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| {
                                let dot: f64 = (0..d).map(|t| a[i][t] * a[j][t]).sum();
                                dot + if i == j { 0.3 } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let model = MixtureModel::new(weights.clone(), means.clone(), covs.clone()).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let c = rng.random_range(0..k);
            let x: Vec<f64> = means[c].iter().map(|m| m + normal(&mut rng)).collect();
            let fast = model.weighted_log_prob(&x).map_err(|e| e.to_string())?;
            let slow = naive_log_density(&weights, &means, &covs, &x);
            ensure!(slow.is_finite(), "oracle underflowed at {x:?}");
            worst = worst.max((fast - slow).abs());
        }
    }
    ensure!(worst <= 1e-8, "max deviation {worst:e} exceeds 1e-8");
    Ok(format!("10000 evaluations, max |diff| = {worst:.2e}"))
}

// 5. Two well-separated clusters are recovered with a monotone bound.
fn vi_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = [[0.0, 0.0], [1.0, 1.0]];
    let data: Vec<Vec<f64>> = (0..500)
        .map(|i| {
            let c = truth[i % 2];
            vec![c[0] + 0.1 * normal(&mut rng), c[1] + 0.1 * normal(&mut rng)]
        })
        .collect();
    let cfg = FitConfig {
        max_components: 8,
        ..FitConfig::default()
    };
    let priors = Priors::empirical(&data, &cfg).map_err(|e| e.to_string())?;
    let model = fit(&data, &priors, &cfg).map_err(|e| e.to_string())?;

    let heavy: Vec<usize> = (0..model.n_components()).filter(|&k| model.weights()[k] > 0.05).collect();
    ensure!(heavy.len() == 2, "{} components above 0.05: {:?}", heavy.len(), model.weights());
    let mut matched = [false; 2];
    let mut worst: f64 = 0.0;
    for &k in &heavy {
        let m = &model.means()[k];
        let (best, dist) = truth
            .iter()
            .enumerate()
            .map(|(t, c)| (t, ((m[0] - c[0]).powi(2) + (m[1] - c[1]).powi(2)).sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        ensure!(!matched[best], "two components matched the same true mean");
        matched[best] = true;
        worst = worst.max(dist);
    }
    ensure!(worst < 0.05, "mean error {worst} >= 0.05");
    let trace = &model.summary().elbo_trace;
    for (i, w) in trace.windows(2).enumerate() {
        ensure!(w[1] >= w[0] - ELBO_SLACK, "bound decreased at iteration {}: {} -> {}", i + 2, w[0], w[1]);
    }
    let total: f64 = model.weights().iter().sum();
    ensure!((total - 1.0).abs() < 1e-10, "weights sum to {total}");
    Ok(format!(
        "2 components, max mean error {worst:.4}, {} monotone iterations",
        trace.len()
    ))
}

// 6. Relative thresholding removes exactly floor(p/100 * N) lines.
fn relative_counts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    for n in [10usize, 1000] {
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).round() - 10.0).collect();
        for p in [0usize, 10, 20, 30, 100] {
            let expected = p * n / 100;
            let mask = filter_mono(&scores, ThresholdSpec::Relative(p as f64), None).map_err(|e| e.to_string())?;
            ensure!(mask.removed_count() == expected, "N={n} p={p}: removed {} != {expected}", mask.removed_count());
            ensure!(relative_removal_count(p as f64, n) == expected, "count helper disagrees at N={n} p={p}");
            let max_removed = (0..n).filter(|&i| !mask.kept()[i]).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
            let min_kept = (0..n).filter(|&i| mask.kept()[i]).map(|i| scores[i]).fold(f64::INFINITY, f64::min);
            ensure!(max_removed <= min_kept, "N={n} p={p}: removed a higher score than one kept");
            checked += 1;
        }
    }
    Ok(format!("{checked} (N, p) combinations exact"))
}

// 7. Parallel "one bad, remove all" against hand-derived masks.
fn parallel_one_bad() -> Outcome {
    // direct: minima (2, 3)
    let cols = vec![vec![5.0, 1.0, 2.0, 9.0], vec![2.0, 4.0, 3.0, 2.9]];
    let mask = filter_parallel(&cols, Reduction::Avg, ThresholdSpec::TrainMin, Some(&[2.0, 3.0])).map_err(|e| e.to_string())?;
    ensure!(mask.kept() == [false, false, true, false], "literal fixture mask {:?}", mask.kept());

    // end to end: single-block models, so each side's training minimum is the
    // score of any in-block sentence and every foreign character scores 0
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let en = train(&["Financial Policy and Development Unit".into(), "Open Directory".into(), "hello".into()]);
    let zh = train(&["财务政策及发展小组".into(), "健康整洁卫生".into(), "发展".into()]);
    ensure!(en.min_train_score() > 0.0 && zh.min_train_score() > 0.0, "training minima are not above the unseen score");
    let rows = [
        ("Open Directory - Unix", "リリースノート", false),
        ("Salubrité, propreté", "健康整洁卫生", false),
        ("From System Menu → Location", "从系统目录→位置", false),
        ("Cation exchange at 25 ℃", "在二十五度下测定", false),
        ("Financial Policy and Development Unit", "财务政策及发展小组", true),
        ("plain text", "发展", true),
    ];
    let en_path = dir.path().join("c.en");
    let zh_path = dir.path().join("c.zh");
    let en_text: String = rows.iter().map(|r| format!("{}\n", r.0)).collect();
    let zh_text: String = rows.iter().map(|r| format!("{}\n", r.1)).collect();
    fs::write(&en_path, en_text).map_err(|e| e.to_string())?;
    fs::write(&zh_path, zh_text).map_err(|e| e.to_string())?;
    let opts = FilterOptions {
        spec: ThresholdSpec::TrainMin,
        reduction: Reduction::Max,
        output_suffix: ".kept".into(),
        write_scores: false,
        utf8: Utf8Policy::Strict,
        score: ScoreOptions::default(),
    };
    let summary = filter_corpus(&[&en_path, &zh_path], &[&en, &zh], table(), &opts).map_err(|e| e.to_string())?;
    let expect_en: String = rows.iter().filter(|r| r.2).map(|r| format!("{}\n", r.0)).collect();
    let expect_zh: String = rows.iter().filter(|r| r.2).map(|r| format!("{}\n", r.1)).collect();
    let got_en = fs::read_to_string(output_path(&en_path, ".kept")).map_err(|e| e.to_string())?;
    let got_zh = fs::read_to_string(output_path(&zh_path, ".kept")).map_err(|e| e.to_string())?;
    ensure!(got_en == expect_en && got_zh == expect_zh, "filtered output differs:\n{got_en}\n{got_zh}");
    Ok(format!("removed {}/{} rows as derived by hand", summary.removed, summary.total))
}

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let pools: [&[(u32, u32)]; 6] = [
        &[(0x4E00, 0x4FFF)],
        &[(0x61, 0x7A), (0x30, 0x39), (0x20, 0x20)],
        &[(0x3001, 0x3002)],
        &[(0x30A1, 0x30FA)],
        &[(0xC0, 0xFF)],
        &[(0x0, 0x10FFFF)],
    ];
    let len = rng.random_range(0..25);
    let main = rng.random_range(0..3);
    (0..len)
        .map(|_| {
            let pool = if rng.random::<f64>() < 0.85 { main } else { rng.random_range(0..pools.len()) };
            let (lo, hi) = pools[pool][rng.random_range(0..pools[pool].len())];
            loop {
                if let Some(c) = char::from_u32(rng.random_range(lo..=hi)) {
                    if c != '\n' && c != '\r' {
                        break c;
                    }
                }
            }
        })
        .collect()
}

// 8. save -> load -> score is bit-identical.
fn roundtrip_stability() -> Outcome {
    let mut dev = zh_dev_set();
    dev.extend(["Open Directory", "Financial Policy 2019", "hello world"].map(String::from));
    let model = train(&dev);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    model.save(&path).map_err(|e| e.to_string())?;
    let loaded = BlockModel::load(&path, table()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut in_support = 0;
    for _ in 0..1000 {
        let s = random_sentence(&mut rng);
        let a = model.score_sentence(&s, table());
        let b = loaded.score_sentence(&s, table());
        ensure!(a.to_bits() == b.to_bits(), "{s:?}: {a} vs {b}");
        if a != 0.0 {
            in_support += 1;
        }
    }
    ensure!(in_support > 100, "only {in_support} in-support sentences exercised");
    Ok(format!("1000 sentences identical ({in_support} in support)"))
}

// 9. Every codepoint resolves; all 300 blocks; range boundaries.
fn block_table_totality() -> Outcome {
    let t = table();
    ensure!(t.len() == 300, "{} named blocks", t.len());
    let ranges = t.ranges();
    let mut hits = 0usize;
    for cp in 0..=0x10FFFFu32 {
        let idx = t.block_of(cp).map_err(|e| e.to_string())?;
        ensure!(idx < t.dim(), "U+{cp:04X} -> {idx}");
        // linear scan oracle
        let expected = ranges.iter().position(|r| r.start <= cp && cp <= r.end).unwrap_or(t.no_block());
        ensure!(idx == expected, "U+{cp:04X}: {idx} vs {expected}");
        if idx != t.no_block() {
            hits += 1;
        }
    }
    for (i, r) in ranges.iter().enumerate() {
        for cp in [r.start, r.end] {
            ensure!(t.block_of(cp).map_err(|e| e.to_string())? == i, "boundary U+{cp:04X} of {}", r.name);
        }
    }
    ensure!(t.block_of(0x110000).is_err(), "U+110000 accepted");
    Ok(format!("1114112 codepoints resolved, {hits} inside named blocks"))
}

fn read_status_kib(field: &str) -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with(field))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn score_file(model: &BlockModel, input: &Path, output: &Path, threads: usize) -> Result<(), String> {
    let mut reader = LineReader::new(BufReader::new(File::open(input).map_err(|e| e.to_string())?), Utf8Policy::Replace);
    let mut out = BufWriter::new(File::create(output).map_err(|e| e.to_string())?);
    let opts = ScoreOptions {
        threads,
        ..ScoreOptions::default()
    };
    model.score_to_writer(&mut reader, table(), &opts, &mut out).map_err(|e| e.to_string())?;
    out.flush().map_err(|e| e.to_string())
}

const MEMORY_CEILING_KIB: u64 = 32 * 1024;

// 10. 1M lines: bounded memory, byte-identical across runs and worker counts.
fn determinism_and_scale() -> Outcome {
    let model = train(&zh_dev_set());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("corpus.txt");
    {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let hanzi: Vec<char> = HANZI.chars().collect();
        let mut w = BufWriter::new(File::create(&input).map_err(|e| e.to_string())?);
        for i in 0..1_000_000u32 {
            let line: String = match i % 10 {
                0 => random_sentence(&mut rng),
                1 => "Open Directory - Unix".into(),
                _ => (0..rng.random_range(8..20)).map(|_| pick(&mut rng, &hanzi)).collect(),
            };
            writeln!(w, "{line}").map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    let input_kib = fs::metadata(&input).map_err(|e| e.to_string())?.len() / 1024;

    // reset the peak-RSS counter where the kernel allows it
    let _ = fs::write("/proc/self/clear_refs", "5");
    let base = read_status_kib("VmRSS:");
    let start = Instant::now();
    let outs: Vec<_> = [(1, "a"), (1, "b"), (4, "c")]
        .iter()
        .map(|&(threads, name)| {
            let p = dir.path().join(name);
            score_file(&model, &input, &p, threads).map(|_| p)
        })
        .collect::<Result<_, _>>()?;
    let elapsed = start.elapsed();
    let peak = read_status_kib("VmHWM:");

    let first = fs::read(&outs[0]).map_err(|e| e.to_string())?;
    ensure!(first.iter().filter(|&&b| b == b'\n').count() == 1_000_000, "score count mismatch");
    for p in &outs[1..] {
        ensure!(fs::read(p).map_err(|e| e.to_string())? == first, "{} differs from the first run", p.display());
    }
    let growth = match (base, peak) {
        (Some(b), Some(p)) => p.saturating_sub(b),
        _ => return Err("cannot read /proc/self/status".into()),
    };
    ensure!(
        growth < MEMORY_CEILING_KIB,
        "peak RSS grew by {growth} KiB while scoring a {input_kib} KiB corpus"
    );
    let note = if elapsed > Duration::from_secs(60) { " (over the 60 s soft target)" } else { "" };
    Ok(format!(
        "3 runs identical, peak RSS +{growth} KiB for a {} MiB corpus, {:.1} s{note}",
        input_kib / 1024,
        elapsed.as_secs_f64()
    ))
}

fn main() {
    // 10 runs first so that the peak-RSS baseline is not inflated by the
    // other criteria.
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (10, "determinism & scale", determinism_and_scale),
        (1, "unseen-block score", unseen_block_score),
        (2, "score ordering", score_ordering),
        (3, "single-block reduction", single_block_reduction),
        (4, "density oracle", density_oracle),
        (5, "VI recovery", vi_recovery),
        (6, "relative thresholding", relative_counts),
        (7, "parallel one-bad-remove-all", parallel_one_bad),
        (8, "round-trip stability", roundtrip_stability),
        (9, "block-table totality", block_table_totality),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  AC{id:<2} {name} [{secs:.2}s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  AC{id:<2} {name} [{secs:.2}s]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
