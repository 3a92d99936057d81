//! Prototypical semantic alignment: target class prototypes, soft
//! assignment of auxiliary samples, label-consistency scoring and
//! filtering, and supervised contrastive alignment in projection space.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Per-class centroids of the target classifier-hidden features.
///
/// A row is defined only if at least one target sample of that class
/// contributed; reading an undefined row is an error, because a missing
/// prototype would silently distort every soft assignment.
#[derive(Debug, Clone)]
pub struct PrototypeTable {
    p: Array2<f64>,
    class_counts: Vec<usize>,
    epoch_stamp: usize,
}

impl PrototypeTable {
    pub fn num_classes(&self) -> usize {
        self.p.nrows()
    }

    pub fn dim(&self) -> usize {
        self.p.ncols()
    }

    pub fn epoch_stamp(&self) -> usize {
        self.epoch_stamp
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn row(&self, class: usize) -> Result<ArrayView1<'_, f64>> {
        if class >= self.num_classes() {
            return Err(Error::config(format!(
                "class {class} out of range (K = {})",
                self.num_classes()
            )));
        }
        if self.class_counts[class] == 0 {
            return Err(Error::data(format!(
                "prototype for class {class} is undefined: no target samples of that class"
            )));
        }
        Ok(self.p.row(class))
    }

    pub fn all_defined(&self) -> bool {
        self.class_counts.iter().all(|&c| c > 0)
    }
}

/// Per-class mean of `features` rows grouped by `labels`.
pub fn compute_prototypes(
    features: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    epoch_stamp: usize,
) -> Result<PrototypeTable> {
    if features.nrows() != labels.len() {
        return Err(Error::config(format!(
            "features ({}) and labels ({}) lengths differ",
            features.nrows(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::config("num_classes must be positive"));
    }
    let mut p = Array2::zeros((num_classes, features.ncols()));
    let mut counts = vec![0usize; num_classes];
    for (row, &label) in features.rows().into_iter().zip(labels.iter()) {
        if label >= num_classes {
            return Err(Error::data(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let mut acc = p.row_mut(label);
        acc += &row;
        counts[label] += 1;
    }
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 {
            let mut row = p.row_mut(k);
            row /= c as f64;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    "compute_prototypes",
                    format!("non-finite prototype for class {k}"),
                ));
            }
        }
    }
    Ok(PrototypeTable {
        p,
        class_counts: counts,
        epoch_stamp,
    })
}

/// Softmax over negative Euclidean (not squared) distances to every
/// prototype. Requires all rows defined.
pub fn soft_assign(f: ArrayView1<f64>, prototypes: &PrototypeTable) -> Result<Array1<f64>> {
    if f.len() != prototypes.dim() {
        return Err(Error::config(format!(
            "feature dim {} does not match prototype dim {}",
            f.len(),
            prototypes.dim()
        )));
    }
    let k = prototypes.num_classes();
    let mut neg_dist = Array1::zeros(k);
    for c in 0..k {
        let row = prototypes.row(c)?;
        let d2: f64 = f
            .iter()
            .zip(row.iter())
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum();
        neg_dist[c] = -d2.sqrt();
    }
    let max = neg_dist.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = neg_dist.mapv(|v| (v - max).exp());
    let sum: f64 = exps.sum();
    Ok(exps.mapv(|v| v / sum))
}

/// The soft-assignment mass at the sample's own label.
pub fn consistency_score(u: ArrayView1<f64>, label: usize) -> Result<f64> {
    if label >= u.len() {
        return Err(Error::data(format!(
            "label {label} out of range for assignment of length {}",
            u.len()
        )));
    }
    let sum: f64 = u.sum();
    if (sum - 1.0).abs() > 1e-6 || u.iter().any(|&v| v < -1e-9) {
        return Err(Error::data(
            "soft assignment is not on the probability simplex",
        ));
    }
    Ok(u[label])
}

/// Per auxiliary sample: soft assignment and consistency score.
#[derive(Debug, Clone)]
pub struct ConsistencyRecord {
    pub sample_id: String,
    pub assignment: Array1<f64>,
    pub eta: f64,
}

impl ConsistencyRecord {
    pub fn new(sample_id: String, assignment: Array1<f64>, label: usize) -> Result<Self> {
        let eta = consistency_score(assignment.view(), label)?;
        Ok(ConsistencyRecord {
            sample_id,
            assignment,
            eta,
        })
    }
}

/// Inclusive threshold mask: `mask[i] = etas[i] >= sigma`.
pub fn filter_mask(etas: &[f64], sigma: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::config(format!("threshold {sigma} not in [0, 1]")));
    }
    Ok(etas.iter().map(|&e| e >= sigma).collect())
}

// ---------------------------------------------------------------------------
// Supervised contrastive loss
// ---------------------------------------------------------------------------

/// Outcome of the per-anchor supervised contrastive loss. Anchors without a
/// same-label partner in the batch are signalled, not given a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupconResult {
    Value(f64),
    NoPositive,
}

fn cosine_rows(z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = z.nrows();
    let mut norms = Array1::zeros(n);
    for i in 0..n {
        let norm = z.row(i).dot(&z.row(i)).sqrt();
        if norm == 0.0 {
            return Err(Error::numeric(
                "supcon_loss",
                format!("projection row {i} has zero norm"),
            ));
        }
        if !norm.is_finite() {
            return Err(Error::numeric("supcon_loss", "non-finite projection"));
        }
        norms[i] = norm;
    }
    let mut sim = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            sim[[i, j]] = z.row(i).dot(&z.row(j)) / (norms[i] * norms[j]);
        }
    }
    Ok((sim, norms))
}

/// Supervised contrastive loss for one anchor over the whole batch:
/// `-log[(1/|Q+|) sum_p exp(sim(z_i, z_p)/tau) / sum_q exp(sim(z_i, z_q)/tau)]`
/// with cosine similarity, `Q` the batch minus the anchor and `Q+` its
/// same-label subset.
pub fn supcon_loss(
    anchor: usize,
    z: &Array2<f64>,
    labels: &[usize],
    temperature: f64,
) -> Result<SupconResult> {
    let n = z.nrows();
    if labels.len() != n {
        return Err(Error::config("labels length does not match batch"));
    }
    if anchor >= n {
        return Err(Error::config(format!("anchor {anchor} out of range")));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let (sim, _) = cosine_rows(z)?;
    Ok(supcon_from_sims(anchor, &sim, labels, temperature))
}

fn supcon_from_sims(
    anchor: usize,
    sim: &Array2<f64>,
    labels: &[usize],
    temperature: f64,
) -> SupconResult {
    let n = labels.len();
    let mut denom = 0.0;
    let mut numer = 0.0;
    let mut positives = 0usize;
    // stabilize with the max similarity over Q(i); cancels in the ratio
    let mut max_s = f64::NEG_INFINITY;
    for q in 0..n {
        if q != anchor {
            max_s = max_s.max(sim[[anchor, q]]);
        }
    }
    for q in 0..n {
        if q == anchor {
            continue;
        }
        let e = ((sim[[anchor, q]] - max_s) / temperature).exp();
        denom += e;
        if labels[q] == labels[anchor] {
            numer += e;
            positives += 1;
        }
    }
    if positives == 0 {
        return SupconResult::NoPositive;
    }
    let value = -((numer / positives as f64) / denom).ln();
    SupconResult::Value(value)
}

/// Result of the batch-level alignment loss.
#[derive(Debug)]
pub struct PsaOutcome {
    pub value: f64,
    /// Gradient with respect to the target projections (when requested).
    pub d_z_target: Option<Array2<f64>>,
    /// Gradient with respect to the auxiliary projections; rows filtered
    /// out of the union are zero.
    pub d_z_aux: Option<Array2<f64>>,
    /// Indices of auxiliary samples admitted by the threshold.
    pub aux_included: Vec<usize>,
    /// Anchors that contributed to the average.
    pub anchors_counted: usize,
    /// Anchors dropped for lack of positives.
    pub no_positive_anchors: usize,
}

/// Average supervised contrastive loss over the union of the target batch
/// and the `sigma_align`-filtered auxiliary batch. Every union member is an
/// anchor; anchors without positives are dropped from both the numerator
/// and the denominator. If every anchor is dropped the loss is 0 and
/// `anchors_counted` stays 0 so the caller can count a warning.
#[allow(clippy::too_many_arguments)]
pub fn psa_loss(
    z_target: &Array2<f64>,
    labels_target: &[usize],
    z_aux: &Array2<f64>,
    labels_aux: &[usize],
    etas: &[f64],
    sigma_align: f64,
    temperature: f64,
    with_grad: bool,
) -> Result<PsaOutcome> {
    if z_target.nrows() != labels_target.len() {
        return Err(Error::config("target labels length mismatch"));
    }
    if z_aux.nrows() != labels_aux.len() || labels_aux.len() != etas.len() {
        return Err(Error::config("aux labels/etas length mismatch"));
    }
    if z_target.nrows() == 0 {
        return Err(Error::config("psa_loss needs a non-empty target batch"));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let mask = filter_mask(etas, sigma_align)?;
    let aux_included: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| if m { Some(i) } else { None })
        .collect();

    let n_t = z_target.nrows();
    let n_union = n_t + aux_included.len();
    let dim = z_target.ncols();
    if !aux_included.is_empty() && z_aux.ncols() != dim {
        return Err(Error::config("target and aux projection dims differ"));
    }
    let mut z = Array2::zeros((n_union, dim));
    let mut labels = Vec::with_capacity(n_union);
    for i in 0..n_t {
        z.row_mut(i).assign(&z_target.row(i));
        labels.push(labels_target[i]);
    }
    for (slot, &ai) in aux_included.iter().enumerate() {
        z.row_mut(n_t + slot).assign(&z_aux.row(ai));
        labels.push(labels_aux[ai]);
    }

    let (sim, norms) = cosine_rows(&z)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut dropped = 0usize;
    // d(total)/d(sim[i][q]) accumulated per anchor, before averaging
    let mut d_sim: Option<Array2<f64>> = if with_grad {
        Some(Array2::zeros((n_union, n_union)))
    } else {
        None
    };

    for i in 0..n_union {
        let mut max_s = f64::NEG_INFINITY;
        for q in 0..n_union {
            if q != i {
                max_s = max_s.max(sim[[i, q]]);
            }
        }
        let mut denom = 0.0;
        let mut numer = 0.0;
        let mut positives = 0usize;
        for q in 0..n_union {
            if q == i {
                continue;
            }
            let e = ((sim[[i, q]] - max_s) / temperature).exp();
            denom += e;
            if labels[q] == labels[i] {
                numer += e;
                positives += 1;
            }
        }
        if positives == 0 {
            dropped += 1;
            continue;
        }
        counted += 1;
        total += -((numer / positives as f64) / denom).ln();
        if let Some(ds) = d_sim.as_mut() {
            for q in 0..n_union {
                if q == i {
                    continue;
                }
                let e = ((sim[[i, q]] - max_s) / temperature).exp();
                let mut g = e / denom / temperature;
                if labels[q] == labels[i] {
                    g -= e / numer / temperature;
                }
                ds[[i, q]] += g;
            }
        }
    }

    let value = if counted == 0 { 0.0 } else { total / counted as f64 };

    let (d_z_target, d_z_aux) = if let Some(mut ds) = d_sim {
        if counted > 0 {
            ds.mapv_inplace(|v| v / counted as f64);
        } else {
            ds.fill(0.0);
        }
        // chain through cosine similarity
        let mut d_z = Array2::<f64>::zeros((n_union, dim));
        for i in 0..n_union {
            for q in 0..n_union {
                if q == i {
                    continue;
                }
                let g = ds[[i, q]];
                if g == 0.0 {
                    continue;
                }
                let (ni, nq, s) = (norms[i], norms[q], sim[[i, q]]);
                for t in 0..dim {
                    // d sim/d z_i and d sim/d z_q
                    d_z[[i, t]] += g * (z[[q, t]] / (ni * nq) - s * z[[i, t]] / (ni * ni));
                    d_z[[q, t]] += g * (z[[i, t]] / (ni * nq) - s * z[[q, t]] / (nq * nq));
                }
            }
        }
        let mut d_t = Array2::zeros((n_t, dim));
        for i in 0..n_t {
            d_t.row_mut(i).assign(&d_z.row(i));
        }
        let mut d_a = Array2::zeros((z_aux.nrows(), z_aux.ncols().max(dim)));
        for (slot, &ai) in aux_included.iter().enumerate() {
            d_a.row_mut(ai).assign(&d_z.row(n_t + slot));
        }
        (Some(d_t), Some(d_a))
    } else {
        (None, None)
    };

    Ok(PsaOutcome {
        value,
        d_z_target,
        d_z_aux,
        aux_included,
        anchors_counted: counted,
        no_positive_anchors: dropped,
    })
}

/// Convenience used by the prototype refresh: mean of the filtered values.
pub fn mean_axis0(features: &Array2<f64>) -> Array1<f64> {
    features.mean_axis(Axis(0)).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prototype_is_mean_of_two_points() {
        let f = arr2(&[[0.0, 0.0], [2.0, 2.0]]);
        let table = compute_prototypes(&f, &[0, 0], 1, 0).unwrap();
        assert_eq!(table.row(0).unwrap().to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn single_sample_prototype_equals_the_sample() {
        let f = arr2(&[[0.5, -1.0, 3.0], [2.0, 0.0, 1.0]]);
        let table = compute_prototypes(&f, &[1, 0], 2, 3).unwrap();
        assert_eq!(table.row(1).unwrap().to_vec(), vec![0.5, -1.0, 3.0]);
        assert_eq!(table.row(0).unwrap().to_vec(), vec![2.0, 0.0, 1.0]);
        assert_eq!(table.epoch_stamp(), 3);
    }

    #[test]
    fn prototypes_match_naive_per_class_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 300;
        let d = 5;
        let k = 3;
        let f = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let table = compute_prototypes(&f, &labels, k, 0).unwrap();
        for c in 0..k {
            let mut sum = vec![0.0; d];
            let mut count = 0usize;
            for (i, &l) in labels.iter().enumerate() {
                if l == c {
                    for t in 0..d {
                        sum[t] += f[[i, t]];
                    }
                    count += 1;
                }
            }
            let row = table.row(c).unwrap();
            for t in 0..d {
                assert!((row[t] - sum[t] / count as f64).abs() < 1e-12);
            }
            assert_eq!(table.class_counts()[c], count);
        }
    }

    #[test]
    fn undefined_prototype_row_errors_with_class() {
        let f = arr2(&[[1.0, 2.0]]);
        let table = compute_prototypes(&f, &[0], 2, 0).unwrap();
        assert!(!table.all_defined());
        let err = table.row(1).unwrap_err();
        assert!(err.to_string().contains("class 1"));
        assert!(matches!(
            soft_assign(arr1(&[0.0, 0.0]).view(), &table),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn equidistant_assignment_is_uniform() {
        let f = arr2(&[[1.0, 0.0], [-1.0, 0.0]]);
        let table = compute_prototypes(&f, &[0, 1], 2, 0).unwrap();
        let u = soft_assign(arr1(&[0.0, 5.0]).view(), &table).unwrap();
        assert!((u[0] - 0.5).abs() < 1e-12);
        assert!((u[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn assignment_from_distances_zero_and_ln3() {
        // ||f - P0|| = 0, ||f - P1|| = ln 3  =>  U = [0.75, 0.25]
        let ln3 = 3f64.ln();
        let f = arr2(&[[0.0], [ln3]]);
        let table = compute_prototypes(&f, &[0, 1], 2, 0).unwrap();
        let u = soft_assign(arr1(&[0.0]).view(), &table).unwrap();
        assert!((u[0] - 0.75).abs() < 1e-12);
        assert!((u[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn assignment_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = 12;
        let d = 6;
        let f = Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..k).collect();
        let table = compute_prototypes(&f, &labels, k, 0).unwrap();
        let query: Array1<f64> = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
        let u = soft_assign(query.view(), &table).unwrap();
        // independent scalar evaluation without the max-shift trick
        let mut weights = vec![0.0; k];
        for c in 0..k {
            let mut d2 = 0.0;
            for t in 0..d {
                let diff = query[t] - table.row(c).unwrap()[t];
                d2 += diff * diff;
            }
            weights[c] = (-d2.sqrt()).exp();
        }
        let total: f64 = weights.iter().sum();
        for c in 0..k {
            assert!((u[c] - weights[c] / total).abs() < 1e-10);
        }
    }

    #[test]
    fn consistency_reads_the_label_coordinate() {
        assert_eq!(consistency_score(arr1(&[0.0, 1.0]).view(), 1).unwrap(), 1.0);
        assert_eq!(consistency_score(arr1(&[0.5, 0.5]).view(), 0).unwrap(), 0.5);
        assert_eq!(
            consistency_score(arr1(&[0.75, 0.25]).view(), 1).unwrap(),
            0.25
        );
    }

    #[test]
    fn consistency_rejects_non_simplex() {
        assert!(consistency_score(arr1(&[0.9, 0.9]).view(), 0).is_err());
        assert!(consistency_score(arr1(&[0.5, 0.5]).view(), 2).is_err());
    }

    #[test]
    fn filter_mask_boundaries() {
        assert_eq!(filter_mask(&[0.0, 0.3, 1.0], 0.0).unwrap(), vec![true; 3]);
        assert_eq!(
            filter_mask(&[0.99, 1.0], 1.0).unwrap(),
            vec![false, true]
        );
        assert_eq!(
            filter_mask(&[0.39, 0.40, 0.41], 0.4).unwrap(),
            vec![false, true, true]
        );
        assert!(filter_mask(&[0.5], 1.5).is_err());
    }

    #[test]
    fn supcon_single_positive_no_negatives_is_zero() {
        let z = arr2(&[[1.0, 0.0], [0.5, 0.5]]);
        let out = supcon_loss(0, &z, &[3, 3], 1.0).unwrap();
        match out {
            SupconResult::Value(v) => assert!(v.abs() < 1e-12),
            _ => panic!("expected a value"),
        }
    }

    #[test]
    fn supcon_hand_computed_case() {
        // anchor at (1, 0); positive identical (sim 1); negative opposite (sim -1)
        let z = arr2(&[[1.0, 0.0], [2.0, 0.0], [-3.0, 0.0]]);
        let out = supcon_loss(0, &z, &[0, 0, 1], 1.0).unwrap();
        let expected = -(std::f64::consts::E / (std::f64::consts::E + (-1.0f64).exp())).ln();
        match out {
            SupconResult::Value(v) => {
                assert!((v - expected).abs() < 1e-12);
                assert!((v - 0.1269).abs() < 1e-4);
            }
            _ => panic!("expected a value"),
        }
    }

    #[test]
    fn supcon_signals_missing_positive() {
        let z = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(supcon_loss(0, &z, &[0, 1], 1.0).unwrap(), SupconResult::NoPositive);
    }

    #[test]
    fn supcon_rejects_zero_norm() {
        let z = arr2(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(
            supcon_loss(0, &z, &[0, 0], 1.0),
            Err(Error::Numeric { .. })
        ));
    }

    /// Naive double-loop recomputation used as the oracle.
    fn supcon_naive(anchor: usize, z: &Array2<f64>, labels: &[usize], tau: f64) -> Option<f64> {
        let n = z.nrows();
        let cos = |a: usize, b: usize| -> f64 {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for t in 0..z.ncols() {
                dot += z[[a, t]] * z[[b, t]];
                na += z[[a, t]] * z[[a, t]];
                nb += z[[b, t]] * z[[b, t]];
            }
            dot / (na.sqrt() * nb.sqrt())
        };
        let mut numer = 0.0;
        let mut denom = 0.0;
        let mut pos = 0usize;
        for q in 0..n {
            if q == anchor {
                continue;
            }
            let e = (cos(anchor, q) / tau).exp();
            denom += e;
            if labels[q] == labels[anchor] {
                numer += e;
                pos += 1;
            }
        }
        if pos == 0 {
            None
        } else {
            Some(-((numer / pos as f64) / denom).ln())
        }
    }

    fn psa_naive(
        z_t: &Array2<f64>,
        y_t: &[usize],
        z_a: &Array2<f64>,
        y_a: &[usize],
        etas: &[f64],
        sigma: f64,
        tau: f64,
    ) -> f64 {
        let mut rows: Vec<Vec<f64>> = z_t.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut labels: Vec<usize> = y_t.to_vec();
        for i in 0..z_a.nrows() {
            if etas[i] >= sigma {
                rows.push(z_a.row(i).to_vec());
                labels.push(y_a[i]);
            }
        }
        let n = rows.len();
        let dim = rows[0].len();
        let z = Array2::from_shape_fn((n, dim), |(i, j)| rows[i][j]);
        let mut total = 0.0;
        let mut counted = 0usize;
        for i in 0..n {
            if let Some(v) = supcon_naive(i, &z, &labels, tau) {
                total += v;
                counted += 1;
            }
        }
        if counted == 0 {
            0.0
        } else {
            total / counted as f64
        }
    }

    #[test]
    fn supcon_matches_naive_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..20 {
            let n = rng.random_range(2..=16);
            let d = rng.random_range(2..=6);
            let z = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0) + 0.1);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            for anchor in 0..n {
                let ours = supcon_loss(anchor, &z, &labels, 1.0).unwrap();
                match (ours, supcon_naive(anchor, &z, &labels, 1.0)) {
                    (SupconResult::Value(a), Some(b)) => {
                        assert!((a - b).abs() < 1e-6, "case {case} anchor {anchor}")
                    }
                    (SupconResult::NoPositive, None) => {}
                    other => panic!("case {case}: mismatch {other:?}"),
                }
            }
        }
    }

    #[test]
    fn psa_with_impossible_threshold_uses_target_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z_t = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0) + 0.05);
        let y_t = vec![0, 0, 1, 1, 0, 1];
        let z_a = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0) + 0.05);
        let y_a = vec![0, 1, 0, 1];
        let etas = vec![0.9, 0.8, 0.7, 0.99];
        let out = psa_loss(&z_t, &y_t, &z_a, &y_a, &etas, 1.0, 1.0, false).unwrap();
        assert!(out.aux_included.is_empty());
        // equals the mean supcon over target anchors alone
        let mut expected = 0.0;
        for i in 0..6 {
            if let Some(v) = supcon_naive(i, &z_t, &y_t, 1.0) {
                expected += v;
            }
        }
        expected /= 6.0;
        assert!((out.value - expected).abs() < 1e-12);
    }

    #[test]
    fn psa_counts_everything_when_unfiltered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z_t = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0) + 0.05);
        let y_t = vec![0, 1, 0, 1, 0];
        let z_a = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0) + 0.05);
        let y_a = vec![1, 0, 1];
        let etas = vec![1.0, 1.0, 1.0];
        let out = psa_loss(&z_t, &y_t, &z_a, &y_a, &etas, 0.0, 1.0, false).unwrap();
        assert_eq!(out.aux_included, vec![0, 1, 2]);
        assert_eq!(out.anchors_counted, 8);
    }

    #[test]
    fn psa_matches_naive_on_mixed_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n_t = rng.random_range(2..=8);
            let n_a = rng.random_range(0..=8);
            let d = 4;
            let z_t = Array2::from_shape_fn((n_t, d), |_| rng.random_range(-1.0..1.0) + 0.05);
            let y_t: Vec<usize> = (0..n_t).map(|_| rng.random_range(0..2)).collect();
            let z_a = Array2::from_shape_fn((n_a, d), |_| rng.random_range(-1.0..1.0) + 0.05);
            let y_a: Vec<usize> = (0..n_a).map(|_| rng.random_range(0..2)).collect();
            let etas: Vec<f64> = (0..n_a).map(|_| rng.random_range(0.0..1.0)).collect();
            let sigma = 0.5;
            let ours = psa_loss(&z_t, &y_t, &z_a, &y_a, &etas, sigma, 1.0, false).unwrap();
            let naive = psa_naive(&z_t, &y_t, &z_a, &y_a, &etas, sigma, 1.0);
            assert!((ours.value - naive).abs() < 1e-6);
        }
    }

    #[test]
    fn psa_all_anchors_dropped_returns_zero() {
        // every union member has a unique label
        let z_t = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let out = psa_loss(
            &z_t,
            &[0, 1],
            &Array2::zeros((0, 2)),
            &[],
            &[],
            0.4,
            1.0,
            true,
        )
        .unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.anchors_counted, 0);
        assert_eq!(out.no_positive_anchors, 2);
        assert!(out.d_z_target.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psa_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n_t, n_a, d) = (3, 3, 4);
        let z_t = Array2::from_shape_fn((n_t, d), |_| rng.random_range(-1.0..1.0) + 0.1);
        let y_t = vec![0, 1, 0];
        let z_a = Array2::from_shape_fn((n_a, d), |_| rng.random_range(-1.0..1.0) + 0.1);
        let y_a = vec![1, 0, 1];
        let etas = vec![0.9, 0.2, 0.7];
        let sigma = 0.5;
        let out = psa_loss(&z_t, &y_t, &z_a, &y_a, &etas, sigma, 1.0, true).unwrap();
        let d_t = out.d_z_target.unwrap();
        let d_a = out.d_z_aux.unwrap();
        let h = 1e-6;
        let eval = |zt: &Array2<f64>, za: &Array2<f64>| {
            psa_loss(zt, &y_t, za, &y_a, &etas, sigma, 1.0, false)
                .unwrap()
                .value
        };
        for r in 0..n_t {
            for c in 0..d {
                let mut zp = z_t.clone();
                zp[[r, c]] += h;
                let mut zm = z_t.clone();
                zm[[r, c]] -= h;
                let fd = (eval(&zp, &z_a) - eval(&zm, &z_a)) / (2.0 * h);
                let rel = (fd - d_t[[r, c]]).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "target grad mismatch at ({r},{c})");
            }
        }
        for r in 0..n_a {
            for c in 0..d {
                let mut zp = z_a.clone();
                zp[[r, c]] += h;
                let mut zm = z_a.clone();
                zm[[r, c]] -= h;
                let fd = (eval(&z_t, &zp) - eval(&z_t, &zm)) / (2.0 * h);
                let rel = (fd - d_a[[r, c]]).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "aux grad mismatch at ({r},{c})");
            }
        }
        // filtered-out rows receive no gradient
        assert!(d_a.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psa_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z_t = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0) + 0.05);
        let y_t = vec![0, 1, 0, 1, 1];
        let z_a = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0) + 0.05);
        let y_a = vec![1, 0, 0, 1];
        let etas = vec![0.6, 0.3, 0.9, 0.5];
        let base = psa_loss(&z_t, &y_t, &z_a, &y_a, &etas, 0.45, 1.0, false)
            .unwrap()
            .value;
        let perm_t = [4usize, 2, 0, 3, 1];
        let z_t2 = Array2::from_shape_fn((5, 3), |(i, j)| z_t[[perm_t[i], j]]);
        let y_t2: Vec<usize> = perm_t.iter().map(|&i| y_t[i]).collect();
        let perm_a = [3usize, 1, 0, 2];
        let z_a2 = Array2::from_shape_fn((4, 3), |(i, j)| z_a[[perm_a[i], j]]);
        let y_a2: Vec<usize> = perm_a.iter().map(|&i| y_a[i]).collect();
        let etas2: Vec<f64> = perm_a.iter().map(|&i| etas[i]).collect();
        let permuted = psa_loss(&z_t2, &y_t2, &z_a2, &y_a2, &etas2, 0.45, 1.0, false)
            .unwrap()
            .value;
        assert!((base - permuted).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn soft_assignment_is_on_the_simplex(
                seed in 0u64..500,
                k in 2usize..8,
                d in 1usize..6,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = Array2::from_shape_fn((k, d), |_| rng.random_range(-5.0..5.0));
                let labels: Vec<usize> = (0..k).collect();
                let table = compute_prototypes(&f, &labels, k, 0).unwrap();
                let q: Array1<f64> = Array1::from_shape_fn(d, |_| rng.random_range(-5.0..5.0));
                let u = soft_assign(q.view(), &table).unwrap();
                let sum: f64 = u.sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                prop_assert!(u.iter().all(|&v| v >= 0.0));
                // eta bounded for every label
                for label in 0..k {
                    let eta = consistency_score(u.view(), label).unwrap();
                    prop_assert!((0.0..=1.0).contains(&eta));
                }
            }

            #[test]
            fn filter_is_monotone_in_sigma(
                etas in proptest::collection::vec(0.0f64..=1.0, 1..32),
                s1 in 0.0f64..=1.0,
                s2 in 0.0f64..=1.0,
            ) {
                let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
                let m_lo = filter_mask(&etas, lo).unwrap();
                let m_hi = filter_mask(&etas, hi).unwrap();
                for (a, b) in m_hi.iter().zip(m_lo.iter()) {
                    // kept at the higher threshold implies kept at the lower
                    prop_assert!(!a || *b);
                }
            }

            #[test]
            fn assignment_is_largest_at_the_nearest_prototype(
                seed in 0u64..500,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let k = 4;
                let d = 3;
                let f = Array2::from_shape_fn((k, d), |_| rng.random_range(-3.0..3.0));
                let labels: Vec<usize> = (0..k).collect();
                let table = compute_prototypes(&f, &labels, k, 0).unwrap();
                let target = rng.random_range(0..k);
                // query exactly at a prototype; others are almost surely farther
                let q = table.row(target).unwrap().to_owned();
                let u = soft_assign(q.view(), &table).unwrap();
                let argmax = u
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                prop_assert_eq!(argmax, target);
            }
        }
    }
}
