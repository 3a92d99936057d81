//! Metrics, ROC analysis, threshold sweeps, and report emission.

use ndarray::Array2;
use serde::Serialize;

use crate::data::{make_batch, LoadedDataset};
use crate::error::{Error, Result};
use crate::model::{DomainTag, Model};

/// ROC-AUC for a binary task, with an explicit marker when the label
/// vector contains a single class and the area is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AucValue {
    Value(f64),
    UndefinedSingleClass,
}

impl Serialize for AucValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AucValue::Value(v) => serializer.serialize_f64(*v),
            AucValue::UndefinedSingleClass => serializer.serialize_str("undefined"),
        }
    }
}

impl AucValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            AucValue::Value(v) => Some(*v),
            AucValue::UndefinedSingleClass => None,
        }
    }

    pub fn to_cell(&self) -> String {
        match self {
            AucValue::Value(v) => format!("{v}"),
            AucValue::UndefinedSingleClass => "undefined".to_string(),
        }
    }
}

/// Classification metrics for one evaluation run. Precision, recall, F1,
/// and ROC-AUC apply to binary tasks; top-5 to multi-class tasks.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub roc_auc: Option<AucValue>,
    pub top1: f64,
    pub top5: Option<f64>,
    pub n_samples: usize,
    pub positive_class: usize,
    pub seed: Option<u64>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "accuracy,precision,recall,f1,roc_auc,top1,top5,n_samples,positive_class,seed\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            self.accuracy,
            opt(self.precision),
            opt(self.recall),
            opt(self.f1),
            self.roc_auc.as_ref().map(|a| a.to_cell()).unwrap_or_default(),
            self.top1,
            opt(self.top5),
            self.n_samples,
            self.positive_class,
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        ));
        s
    }
}

fn looks_like_probabilities(scores: &Array2<f64>) -> bool {
    scores.rows().into_iter().all(|row| {
        let sum: f64 = row.sum();
        (sum - 1.0).abs() <= 1e-6 && row.iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v))
    })
}

/// Rows already on the simplex pass through; anything else is treated as
/// logits and softmaxed.
pub fn normalize_scores(scores: &Array2<f64>) -> Array2<f64> {
    if looks_like_probabilities(scores) {
        scores.clone()
    } else {
        crate::transfer::softmax_rows(scores)
    }
}

/// Argmax accuracy with smallest-index tie-breaking.
pub fn argmax_accuracy(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    let correct = scores
        .rows()
        .into_iter()
        .zip(labels.iter())
        .filter(|(row, &y)| argmax(row.iter().cloned()) == y)
        .count();
    correct as f64 / labels.len() as f64
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mann-Whitney AUC with average ranks for ties (ties contribute 0.5).
/// Returns `None` when either class is absent.
pub fn binary_auc(pos_scores: &[f64], is_positive: &[bool]) -> Option<f64> {
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    let n_neg = is_positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..pos_scores.len()).collect();
    order.sort_by(|&a, &b| pos_scores[a].partial_cmp(&pos_scores[b]).expect("finite scores"));
    // average ranks over tie groups, 1-based
    let mut ranks = vec![0.0; pos_scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pos_scores[order[j + 1]] == pos_scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = is_positive
        .iter()
        .zip(ranks.iter())
        .filter(|(&p, _)| p)
        .map(|(_, &r)| r)
        .sum();
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Some(auc)
}

/// Computes the metric set from per-sample score rows (probabilities or
/// logits) and integer labels. Binary decisions for precision/recall/F1
/// threshold the positive-class probability at 0.5.
pub fn compute_metrics(
    scores: &Array2<f64>,
    labels: &[usize],
    positive_class: usize,
) -> Result<MetricsReport> {
    let n = scores.nrows();
    let k = scores.ncols();
    if n == 0 {
        return Err(Error::data("cannot compute metrics over an empty set"));
    }
    if labels.len() != n {
        return Err(Error::config("labels length does not match scores"));
    }
    if k < 2 {
        return Err(Error::config("scores need at least 2 columns"));
    }
    if positive_class >= k {
        return Err(Error::config(format!(
            "positive_class {positive_class} out of range for {k} classes"
        )));
    }
    for &y in labels {
        if y >= k {
            return Err(Error::data(format!("label {y} out of range for {k} classes")));
        }
    }
    let probs = normalize_scores(scores);
    let accuracy = argmax_accuracy(&probs, labels);

    let (precision, recall, f1, roc_auc, top5) = if k == 2 {
        let pos: Vec<f64> = probs.column(positive_class).to_vec();
        let is_pos: Vec<bool> = labels.iter().map(|&y| y == positive_class).collect();
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for (p, &actual) in pos.iter().zip(is_pos.iter()) {
            let predicted = *p >= 0.5;
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fne > 0 { tp as f64 / (tp + fne) as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let auc = match binary_auc(&pos, &is_pos) {
            Some(a) => AucValue::Value(a),
            None => AucValue::UndefinedSingleClass,
        };
        (Some(precision), Some(recall), Some(f1), Some(auc), None)
    } else {
        // top-5 membership with index-order tie-breaking
        let kk = k.min(5);
        let correct = probs
            .rows()
            .into_iter()
            .zip(labels.iter())
            .filter(|(row, &y)| {
                let mut idx: Vec<usize> = (0..k).collect();
                idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
                idx[..kk].contains(&y)
            })
            .count();
        (None, None, None, None, Some(correct as f64 / n as f64))
    };

    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        roc_auc,
        top1: accuracy,
        top5,
        n_samples: n,
        positive_class,
        seed: None,
    })
}

/// Monotone ROC staircase from (0,0) to (1,1); tied scores collapse into
/// diagonal segments. Errors on single-class input.
pub fn roc_curve(pos_scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    if pos_scores.len() != labels.len() {
        return Err(Error::config("scores and labels lengths differ"));
    }
    let n_pos = labels.iter().filter(|&&p| p).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::data(
            "ROC curve undefined: labels contain a single class",
        ));
    }
    let mut order: Vec<usize> = (0..pos_scores.len()).collect();
    order.sort_by(|&a, &b| pos_scores[b].partial_cmp(&pos_scores[a]).expect("finite scores"));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pos_scores[order[j + 1]] == pos_scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j + 1;
    }
    Ok(points)
}

/// Trapezoidal area under a point list from `roc_curve`.
pub fn roc_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        area += (x2 - x1) * (y1 + y2) / 2.0;
    }
    area
}

pub fn roc_points_to_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (fpr, tpr) in points {
        s.push_str(&format!("{fpr},{tpr}\n"));
    }
    s
}

// ---------------------------------------------------------------------------
// Prediction distribution
// ---------------------------------------------------------------------------

/// Five-number summary of the positive-class probability within one group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    // linear interpolation at index (n - 1) * p
    let pos = (sorted.len() - 1) as f64 * p;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Per-group five-number summaries; groups appear sorted by name. Only
/// groups observed in `groups` are emitted.
pub fn prediction_distribution(pos_scores: &[f64], groups: &[String]) -> Result<Vec<GroupSummary>> {
    if pos_scores.len() != groups.len() {
        return Err(Error::config("scores and groups lengths differ"));
    }
    let mut by_group: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for (s, g) in pos_scores.iter().zip(groups.iter()) {
        by_group.entry(g.clone()).or_default().push(*s);
    }
    let mut out = Vec::with_capacity(by_group.len());
    for (group, mut vals) in by_group {
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        out.push(GroupSummary {
            group,
            n: vals.len(),
            min: vals[0],
            q1: percentile(&vals, 0.25),
            median: percentile(&vals, 0.5),
            q3: percentile(&vals, 0.75),
            max: vals[vals.len() - 1],
        });
    }
    Ok(out)
}

pub fn distribution_to_csv(rows: &[GroupSummary]) -> String {
    let mut s = String::from("group,n,min,q1,median,q3,max\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.group, r.n, r.min, r.q1, r.median, r.q3, r.max
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Threshold sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SigmaAlign,
    SigmaClf,
    TargetFraction,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<SweepAxis> {
        match name {
            "sigma_align" => Ok(SweepAxis::SigmaAlign),
            "sigma_clf" => Ok(SweepAxis::SigmaClf),
            "target_fraction" => Ok(SweepAxis::TargetFraction),
            other => Err(Error::config(format!(
                "unknown sweep axis '{other}' (known: sigma_align, sigma_clf, target_fraction)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SigmaAlign => "sigma_align",
            SweepAxis::SigmaClf => "sigma_clf",
            SweepAxis::TargetFraction => "target_fraction",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub axis_value: f64,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub n_runs: usize,
}

#[derive(Debug, Serialize)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    pub best_axis_value: f64,
}

impl SweepTable {
    pub fn rows_to_csv(&self) -> String {
        let mut s = format!("{},seed,accuracy,roc_auc\n", self.axis);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.axis_value,
                r.seed,
                r.accuracy,
                r.roc_auc.map(|a| format!("{a}")).unwrap_or_default()
            ));
        }
        s
    }

    pub fn summary_to_csv(&self) -> String {
        let mut s = format!("{},mean_accuracy,sd_accuracy,n_runs\n", self.axis);
        for r in &self.summary {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.axis_value, r.mean_accuracy, r.sd_accuracy, r.n_runs
            ));
        }
        s
    }
}

/// Trains and evaluates one run per (grid point, seed) via `runner` and
/// aggregates mean +/- sd accuracy per grid point. With `jobs > 1` runs
/// execute on a rayon pool; each run owns its model and RNG state, and
/// results are collected in grid order either way.
pub fn threshold_sweep<F>(
    axis: SweepAxis,
    grid: &[f64],
    seeds: &[u64],
    jobs: usize,
    runner: F,
) -> Result<SweepTable>
where
    F: Fn(f64, u64) -> Result<MetricsReport> + Sync,
{
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs a non-empty grid and seed list"));
    }
    let tasks: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(v, s): &(f64, u64)| -> Result<SweepRow> {
        let report = runner(v, s)
            .map_err(|e| e.annotate(&format!("at {}={v}, seed={s}", axis.name())))?;
        Ok(SweepRow {
            axis_value: v,
            seed: s,
            accuracy: report.accuracy,
            roc_auc: report.roc_auc.and_then(|a| a.value()),
        })
    };
    let results: Vec<Result<SweepRow>> = if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    } else {
        tasks.iter().map(run).collect()
    };
    let rows: Vec<SweepRow> = results.into_iter().collect::<Result<_>>()?;

    let mut summary = Vec::with_capacity(grid.len());
    for &v in grid {
        let accs: Vec<f64> = rows
            .iter()
            .filter(|r| r.axis_value == v)
            .map(|r| r.accuracy)
            .collect();
        let n = accs.len();
        let mean = accs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        summary.push(SweepSummary {
            axis_value: v,
            mean_accuracy: mean,
            sd_accuracy: sd,
            n_runs: n,
        });
    }
    let best_axis_value = summary
        .iter()
        .max_by(|a, b| a.mean_accuracy.partial_cmp(&b.mean_accuracy).unwrap())
        .map(|s| s.axis_value)
        .unwrap();
    Ok(SweepTable {
        axis: axis.name().to_string(),
        rows,
        summary,
        best_axis_value,
    })
}

// ---------------------------------------------------------------------------
// Model scoring
// ---------------------------------------------------------------------------

/// Batched evaluation pass: softmax class probabilities and labels for a
/// whole dataset, always through the domain branch the dataset is tagged
/// with.
pub fn score_dataset(model: &Model, ds: &LoadedDataset) -> Result<(Array2<f64>, Vec<usize>)> {
    if ds.is_empty() {
        return Err(Error::data("cannot evaluate an empty dataset"));
    }
    let domain = match ds.domain {
        DomainTag::Target => DomainTag::Target,
        DomainTag::Auxiliary => DomainTag::Auxiliary,
    };
    let n = ds.len();
    let mut scores = Array2::zeros((n, model.config.num_classes));
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(256) {
        let batch = make_batch(ds, chunk, None)?;
        let out = model.infer(&batch, domain)?;
        let probs = crate::transfer::softmax_rows(&out.logits);
        for (row, &i) in chunk.iter().enumerate() {
            scores.row_mut(i).assign(&probs.row(row));
        }
    }
    Ok((scores, ds.labels.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_scores_are_perfect_metrics() {
        let scores = arr2(&[[0.9, 0.1], [0.2, 0.8], [0.95, 0.05], [0.1, 0.9]]);
        let labels = [0, 1, 0, 1];
        let r = compute_metrics(&scores, &labels, 1).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.recall, Some(1.0));
        assert_eq!(r.f1, Some(1.0));
        assert_eq!(r.roc_auc, Some(AucValue::Value(1.0)));
    }

    #[test]
    fn all_tied_scores_give_half_auc() {
        let scores = arr2(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]);
        let labels = [0, 1, 0, 1];
        let r = compute_metrics(&scores, &labels, 1).unwrap();
        assert_eq!(r.roc_auc, Some(AucValue::Value(0.5)));
    }

    #[test]
    fn six_sample_hand_case() {
        // pos probs: 0.9, 0.8, 0.4 for positives; 0.7, 0.3, 0.1 for negatives
        let scores = arr2(&[
            [0.1, 0.9],
            [0.2, 0.8],
            [0.6, 0.4],
            [0.3, 0.7],
            [0.7, 0.3],
            [0.9, 0.1],
        ]);
        let labels = [1, 1, 1, 0, 0, 0];
        let r = compute_metrics(&scores, &labels, 1).unwrap();
        // pairwise oracle: pairs where pos > neg: (0.9,0.8,0.4) x (0.7,0.3,0.1)
        // 0.9 beats all 3; 0.8 beats all 3; 0.4 beats 0.3, 0.1 -> 8 of 9
        assert!((r.roc_auc.unwrap().value().unwrap() - 8.0 / 9.0).abs() < 1e-12);
        // threshold 0.5: predicted positives 0.9, 0.8, 0.7 -> tp=2 fp=1 fn=1
        assert_eq!(r.precision, Some(2.0 / 3.0));
        assert_eq!(r.recall, Some(2.0 / 3.0));
        // confusion-matrix accuracy via argmax: 0.4 row and 0.7 row wrong
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_labels_mark_auc_undefined() {
        let scores = arr2(&[[0.4, 0.6], [0.3, 0.7]]);
        let labels = [1, 1];
        let r = compute_metrics(&scores, &labels, 1).unwrap();
        assert_eq!(r.roc_auc, Some(AucValue::UndefinedSingleClass));
        assert!(roc_curve(&[0.6, 0.7], &[true, true]).is_err());
    }

    #[test]
    fn logits_are_normalized_internally() {
        let logits = arr2(&[[2.0, -1.0], [-3.0, 4.0]]);
        let r = compute_metrics(&logits, &[0, 1], 1).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn roc_curve_perfect_separation_passes_through_top_left() {
        let points = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert!(points.contains(&(0.0, 1.0)));
        assert_eq!(points.first(), Some(&(0.0, 0.0)));
        assert_eq!(points.last(), Some(&(1.0, 1.0)));
        assert!((roc_area(&points) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_auc_equals_trapezoidal_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..100 {
            let n = rng.random_range(4..40);
            // coarse grid to force plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let rank = binary_auc(&scores, &labels).unwrap();
            let trap = roc_area(&roc_curve(&scores, &labels).unwrap());
            assert!(
                (rank - trap).abs() < 1e-10,
                "rank {rank} vs trapezoid {trap}"
            );
        }
    }

    #[test]
    fn reversed_scores_reflect_the_curve() {
        let scores = [0.9, 0.7, 0.6, 0.4, 0.2];
        let labels = [true, false, true, false, true];
        let auc = binary_auc(&scores, &labels).unwrap();
        let reversed: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let auc_rev = binary_auc(&reversed, &labels).unwrap();
        assert!((auc + auc_rev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multiclass_reports_top5() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores = Array2::from_shape_fn((30, 12), |_| rng.random::<f64>());
        let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..12)).collect();
        let r = compute_metrics(&scores, &labels, 0).unwrap();
        assert!(r.top5.is_some());
        assert!(r.roc_auc.is_none());
        assert!(r.top5.unwrap() >= r.top1);
    }

    #[test]
    fn identical_scores_collapse_group_summaries() {
        let scores = vec![0.7; 6];
        let groups: Vec<String> = ["a", "a", "b", "b", "b", "a"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = prediction_distribution(&scores, &groups).unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(r.min, 0.7);
            assert_eq!(r.median, 0.7);
            assert_eq!(r.max, 0.7);
        }
    }

    #[test]
    fn disjoint_groups_do_not_overlap() {
        let scores = vec![0.1, 0.2, 0.15, 0.8, 0.9, 0.85];
        let groups: Vec<String> = ["lo", "lo", "lo", "hi", "hi", "hi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = prediction_distribution(&scores, &groups).unwrap();
        let hi = rows.iter().find(|r| r.group == "hi").unwrap();
        let lo = rows.iter().find(|r| r.group == "lo").unwrap();
        assert!(lo.max < hi.min);
    }

    #[test]
    fn percentiles_match_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..41).map(|_| rng.random::<f64>()).collect();
        let groups = vec!["g".to_string(); 41];
        let rows = prediction_distribution(&scores, &groups).unwrap();
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // n = 41: the quartile positions are exact indices 10, 20, 30
        assert_eq!(rows[0].q1, sorted[10]);
        assert_eq!(rows[0].median, sorted[20]);
        assert_eq!(rows[0].q3, sorted[30]);
    }

    #[test]
    fn sweep_table_shape_and_aggregation() {
        let grid = [0.1, 0.5, 0.9];
        let seeds = [1, 2];
        let table = threshold_sweep(SweepAxis::SigmaClf, &grid, &seeds, 1, |v, s| {
            Ok(MetricsReport {
                accuracy: v + s as f64 * 0.001,
                precision: None,
                recall: None,
                f1: None,
                roc_auc: None,
                top1: v,
                top5: None,
                n_samples: 10,
                positive_class: 1,
                seed: Some(s),
            })
        })
        .unwrap();
        assert_eq!(table.rows.len(), 6);
        assert_eq!(table.summary.len(), 3);
        assert_eq!(table.best_axis_value, 0.9);
        assert_eq!(table.summary[0].n_runs, 2);
    }

    #[test]
    fn sweep_annotates_failures_with_grid_point() {
        let err = threshold_sweep(SweepAxis::SigmaAlign, &[0.25], &[7], 1, |_, _| {
            Err(Error::data("boom"))
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sigma_align=0.25"));
        assert!(msg.contains("seed=7"));
    }
}
