//! Pairwise model comparison: two-sample t-tests over per-seed stability
//! values with Benjamini-Hochberg false-discovery-rate adjustment.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("each sample needs at least two values")]
    TooFewSamples,
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("p-value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("need at least two models")]
    TooFewModels,
}

/// Which two-sample t statistic to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Pooled-variance two-sample t-test (default).
    #[default]
    Student,
    /// Unequal-variance alternative with Welch-Satterthwaite df.
    Welch,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Two-sided p-value for a mean difference between two samples.
pub fn t_test_with(kind: TTestKind, a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_var(a, ma), sample_var(b, mb));
    let (se, df) = match kind {
        TTestKind::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            ((pooled * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
        }
        TTestKind::Welch => {
            let se2 = va / na + vb / nb;
            let df = if se2 == 0.0 {
                na + nb - 2.0
            } else {
                se2.powi(2)
                    / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0))
            };
            (se2.sqrt(), df)
        }
    };
    if se == 0.0 {
        // Zero variance on both sides: equal means are indistinguishable,
        // different means are maximally separated.
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid df");
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Student's pooled-variance t-test (the default comparison).
pub fn t_test(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    t_test_with(TTestKind::Student, a, b)
}

/// Benjamini-Hochberg step-up adjustment, order-preserving with the input:
/// sort ascending, scale by m/k, take cumulative minima from the largest
/// rank down, clip at 1, unsort.
pub fn fdr_adjust(pvalues: &[f64]) -> Result<Vec<f64>, StatsError> {
    for &p in pvalues {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(StatsError::OutOfRange(p));
        }
    }
    let m = pvalues.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pvalues[i].total_cmp(&pvalues[j]));
    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0_f64;
    for k in (0..m).rev() {
        let raw = pvalues[order[k]] * m as f64 / (k + 1) as f64;
        running_min = running_min.min(raw).min(1.0);
        adjusted[order[k]] = running_min;
    }
    Ok(adjusted)
}

/// All-pairs comparison of models' per-seed stability samples, with the
/// p-values of the C(M, 2) tests adjusted jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    pub models: Vec<String>,
    pub alpha: f64,
    pub kind: TTestKind,
    /// Raw two-sided p-values; `None` on the diagonal.
    pub raw_p: Vec<Vec<Option<f64>>>,
    pub adjusted_p: Vec<Vec<Option<f64>>>,
    /// True where the adjusted p-value is below alpha.
    pub significant: Vec<Vec<bool>>,
}

impl ComparisonMatrix {
    /// Number of distinct pairwise comparisons: C(M, 2).
    pub fn comparisons(&self) -> usize {
        self.models.len() * (self.models.len() - 1) / 2
    }

    /// Renders the significance pattern as a text table (`#` significant,
    /// `.` not, blank diagonal), mirroring the black/white matrix figures.
    pub fn render_table(&self) -> String {
        let mut out = String::from("model\t");
        out.push_str(&self.models.join("\t"));
        out.push('\n');
        for (i, model) in self.models.iter().enumerate() {
            out.push_str(model);
            for j in 0..self.models.len() {
                out.push('\t');
                if i == j {
                    out.push(' ');
                } else {
                    out.push(if self.significant[i][j] { '#' } else { '.' });
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the t-test on each pair of models and adjusts the p-values jointly.
pub fn compare_models(
    samples: &[(String, Vec<f64>)],
    alpha: f64,
    kind: TTestKind,
) -> Result<ComparisonMatrix, StatsError> {
    let m = samples.len();
    if m < 2 {
        return Err(StatsError::TooFewModels);
    }
    let mut pair_indices = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            pair_indices.push((i, j));
        }
    }
    let raw: Vec<f64> = pair_indices
        .iter()
        .map(|&(i, j)| t_test_with(kind, &samples[i].1, &samples[j].1))
        .collect::<Result<_, _>>()?;
    let adjusted = fdr_adjust(&raw)?;

    let mut raw_p = vec![vec![None; m]; m];
    let mut adjusted_p = vec![vec![None; m]; m];
    let mut significant = vec![vec![false; m]; m];
    for (k, &(i, j)) in pair_indices.iter().enumerate() {
        raw_p[i][j] = Some(raw[k]);
        raw_p[j][i] = Some(raw[k]);
        adjusted_p[i][j] = Some(adjusted[k]);
        adjusted_p[j][i] = Some(adjusted[k]);
        let sig = adjusted[k] < alpha;
        significant[i][j] = sig;
        significant[j][i] = sig;
    }
    Ok(ComparisonMatrix {
        models: samples.iter().map(|(name, _)| name.clone()).collect(),
        alpha,
        kind,
        raw_p,
        adjusted_p,
        significant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.4, 0.4, 0.4, 0.4, 0.4];
        assert_eq!(t_test(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn separated_samples_give_tiny_p() {
        let zeros = [0.0, 0.0, 0.0, 0.0, 0.0];
        let ones = [1.0, 1.0001, 0.9999, 1.0002, 0.9998];
        let p = t_test(&zeros, &ones).unwrap();
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn zero_variance_different_means() {
        let p = t_test(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert_eq!(t_test(&[1.0], &[1.0, 2.0]), Err(StatsError::TooFewSamples));
    }

    #[test]
    fn welch_handles_unequal_variances() {
        let tight = [0.50, 0.51, 0.49, 0.50, 0.50];
        let loose = [0.1, 0.9, 0.3, 0.7, 0.5];
        let student = t_test_with(TTestKind::Student, &tight, &loose).unwrap();
        let welch = t_test_with(TTestKind::Welch, &tight, &loose).unwrap();
        assert!((0.0..=1.0).contains(&student));
        assert!((0.0..=1.0).contains(&welch));
        assert!(welch >= student); // fewer effective df under Welch here
    }

    #[test]
    fn bh_single_and_tied_inputs_are_unchanged() {
        assert_eq!(fdr_adjust(&[0.03]).unwrap(), vec![0.03]);
        let tied = [0.25, 0.25, 0.25, 0.25];
        assert_eq!(fdr_adjust(&tied).unwrap(), tied.to_vec());
    }

    #[test]
    fn bh_matches_the_definitional_walkthrough() {
        // sort: [.005, .01, .03, .04]; scale: [.02, .02, .04, .04];
        // cumulative min keeps them; unsort.
        let adjusted = fdr_adjust(&[0.01, 0.04, 0.03, 0.005]).unwrap();
        let expected = [0.02, 0.04, 0.04, 0.02];
        for (a, e) in adjusted.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{adjusted:?}");
        }
    }

    #[test]
    fn bh_rejects_out_of_range() {
        assert!(matches!(
            fdr_adjust(&[0.5, 1.5]),
            Err(StatsError::OutOfRange(_))
        ));
    }

    #[test]
    fn bh_is_monotone_along_the_sorted_order() {
        let ps = [0.001, 0.3, 0.048, 0.9, 0.02, 0.02, 0.77, 0.15];
        let adjusted = fdr_adjust(&ps).unwrap();
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&i, &j| ps[i].total_cmp(&ps[j]));
        for w in order.windows(2) {
            assert!(adjusted[w[0]] <= adjusted[w[1]] + 1e-15);
        }
    }

    #[test]
    fn significance_decisions_are_stable_under_readjustment() {
        let ps = [0.001, 0.04, 0.3, 0.0005, 0.9, 0.02];
        let first = fdr_adjust(&ps).unwrap();
        let second = fdr_adjust(&ps).unwrap();
        let alpha = 0.05;
        let decide = |adj: &[f64]| adj.iter().map(|p| *p < alpha).collect::<Vec<_>>();
        assert_eq!(decide(&first), decide(&second));
    }

    #[test]
    fn two_models_one_cell() {
        let samples = vec![
            ("a".to_string(), vec![0.1, 0.2, 0.15, 0.12, 0.18]),
            ("b".to_string(), vec![0.5, 0.6, 0.55, 0.52, 0.58]),
        ];
        let matrix = compare_models(&samples, 0.05, TTestKind::Student).unwrap();
        assert_eq!(matrix.comparisons(), 1);
        assert!(matrix.raw_p[0][1].is_some());
        assert!(matrix.raw_p[0][0].is_none());
        assert!(matrix.significant[0][1]);
    }

    #[test]
    fn synthetic_models_significant_exactly_where_constructed() {
        // Three well-separated groups plus a twin pair inside one group.
        let samples = vec![
            ("low1".to_string(), vec![0.10, 0.11, 0.09, 0.10, 0.10]),
            ("low2".to_string(), vec![0.10, 0.09, 0.11, 0.10, 0.10]),
            ("high".to_string(), vec![0.80, 0.81, 0.79, 0.80, 0.80]),
        ];
        let matrix = compare_models(&samples, 0.05, TTestKind::Student).unwrap();
        assert!(!matrix.significant[0][1], "twins must not differ");
        assert!(matrix.significant[0][2]);
        assert!(matrix.significant[1][2]);
    }

    #[test]
    fn relabeling_permutes_the_matrix_consistently() {
        let samples = vec![
            ("a".to_string(), vec![0.1, 0.12, 0.11, 0.1]),
            ("b".to_string(), vec![0.5, 0.52, 0.51, 0.5]),
            ("c".to_string(), vec![0.3, 0.32, 0.31, 0.3]),
        ];
        let matrix = compare_models(&samples, 0.05, TTestKind::Student).unwrap();
        let mut permuted = samples.clone();
        permuted.rotate_left(1); // (b, c, a)
        let rotated = compare_models(&permuted, 0.05, TTestKind::Student).unwrap();
        // Entry (a, b) must match entry at the new positions of a and b.
        let p_ab = matrix.adjusted_p[0][1].unwrap();
        let p_ab_rot = rotated.adjusted_p[2][0].unwrap();
        assert!((p_ab - p_ab_rot).abs() < 1e-15);
    }

    #[test]
    fn render_table_marks_significance() {
        let samples = vec![
            ("a".to_string(), vec![0.1, 0.11, 0.09, 0.10]),
            ("b".to_string(), vec![0.9, 0.91, 0.89, 0.90]),
        ];
        let matrix = compare_models(&samples, 0.05, TTestKind::Student).unwrap();
        let table = matrix.render_table();
        assert!(table.contains('#'));
        assert!(table.starts_with("model\ta\tb\n"));
    }
}
