use std::fmt::Write;

use blockmix::io::format_score;
use blockmix::model::EFFECTIVE_WEIGHT;
use blockmix::BlockModel;

/// Human-readable summary of a model.
pub fn describe(model: &BlockModel) -> String {
    let mut out = String::new();
    let proj = model.projection();
    let mix = model.mixture();
    let plural = if proj.dim() == 1 { "" } else { "s" };
    let _ = writeln!(out, "unicode version: {}", model.unicode_version());
    let _ = writeln!(out, "{} retained block{plural}:", proj.dim());
    for name in proj.names() {
        let _ = writeln!(out, "  {name}");
    }
    let summary = mix.summary();
    let _ = writeln!(
        out,
        "mixture: {} components, {} effective (weight > {EFFECTIVE_WEIGHT}), {} iterations, converged: {}",
        mix.n_components(),
        mix.effective_components(EFFECTIVE_WEIGHT),
        summary.n_iter,
        summary.converged
    );
    let mut order: Vec<usize> = (0..mix.n_components()).collect();
    order.sort_by(|&a, &b| mix.weights()[b].total_cmp(&mix.weights()[a]).then(a.cmp(&b)));
    for k in order {
        let mean: Vec<String> = mix.means()[k].iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(out, "  weight {:.6}  mean [{}]", mix.weights()[k], mean.join(", "));
    }
    let _ = writeln!(out, "weights sum: {:.6}", mix.weights().iter().sum::<f64>());
    let _ = writeln!(out, "min_train_score: {}", format_score(model.min_train_score()));
    let _ = writeln!(out, "unseen_score: {}", format_score(model.unseen_score()));
    out
}

/// Equal-width histogram of the finite scores as `lower,upper,count` CSV
/// rows. Infinite scores get their own `-inf`/`inf` rows.
pub fn histogram_csv(scores: &[f64], bins: usize) -> String {
    let bins = bins.max(1);
    let finite: Vec<f64> = scores.iter().copied().filter(|v| v.is_finite()).collect();
    let neg_inf = scores.iter().filter(|&&v| v == f64::NEG_INFINITY).count();
    let pos_inf = scores.iter().filter(|&&v| v == f64::INFINITY).count();
    let mut out = String::from("lower,upper,count\n");
    if neg_inf > 0 {
        let _ = writeln!(out, "-inf,-inf,{neg_inf}");
    }
    if !finite.is_empty() {
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (bins, width) = if hi > lo { (bins, (hi - lo) / bins as f64) } else { (1, 0.0) };
        let mut counts = vec![0usize; bins];
        for v in &finite {
            let b = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
            counts[b.min(bins - 1)] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let lower = lo + width * i as f64;
            let upper = if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 };
            let _ = writeln!(out, "{},{},{c}", format_score(lower), format_score(upper));
        }
    }
    if pos_inf > 0 {
        let _ = writeln!(out, "inf,inf,{pos_inf}");
    }
    out
}
