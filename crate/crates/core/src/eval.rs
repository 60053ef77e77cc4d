//! Word error rate scoring and relative-improvement reporting.
//!
//! WER is computed from a Levenshtein alignment with unit costs; corpus
//! WER pools error and reference-token counts over utterances before
//! dividing. Reports mirror the usual baseline / system / %RI table
//! layout with one-decimal rounding (half away from zero).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("baseline WER must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("baseline condition {0:?} not present in results")]
    MissingBaseline(String),
    #[error("hypothesis ids without references: {0:?}")]
    ExtraHypotheses(Vec<String>),
    #[error("reference ids without hypotheses: {0:?}")]
    MissingHypotheses(Vec<String>),
}

/// One step of an alignment trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignOp {
    Match,
    Substitute,
    Insert,
    Delete,
}

/// Error counts and WER for one alignment or a pooled corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerResult {
    pub n_ref_tokens: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    /// Percent; infinite when the reference is empty but the hypothesis is not.
    pub wer: f64,
}

impl WerResult {
    fn from_counts(n_ref: usize, subs: usize, ins: usize, dels: usize) -> Self {
        let wer = if n_ref == 0 {
            if subs + ins + dels == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            100.0 * (subs + ins + dels) as f64 / n_ref as f64
        };
        WerResult {
            n_ref_tokens: n_ref,
            substitutions: subs,
            insertions: ins,
            deletions: dels,
            wer,
        }
    }

    pub fn total_errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Align `hyp` against `ref_tokens` with unit costs.
///
/// Ties in the backtrace prefer substitution over insertion over deletion.
pub fn align<T: PartialEq>(ref_tokens: &[T], hyp: &[T]) -> (WerResult, Vec<AlignOp>) {
    let n = ref_tokens.len();
    let m = hyp.len();
    // dp[i][j]: edit distance between ref[..i] and hyp[..j]
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        dp[i][0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub_cost = if ref_tokens[i - 1] == hyp[j - 1] { 0 } else { 1 };
            dp[i][j] = (dp[i - 1][j - 1] + sub_cost)
                .min(dp[i][j - 1] + 1)
                .min(dp[i - 1][j] + 1);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = if ref_tokens[i - 1] == hyp[j - 1] { 0 } else { 1 };
            if dp[i][j] == dp[i - 1][j - 1] + sub_cost {
                ops.push(if sub_cost == 0 {
                    AlignOp::Match
                } else {
                    AlignOp::Substitute
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && dp[i][j] == dp[i][j - 1] + 1 {
            ops.push(AlignOp::Insert);
            j -= 1;
        } else {
            ops.push(AlignOp::Delete);
            i -= 1;
        }
    }
    ops.reverse();

    let subs = ops.iter().filter(|o| **o == AlignOp::Substitute).count();
    let ins = ops.iter().filter(|o| **o == AlignOp::Insert).count();
    let dels = ops.iter().filter(|o| **o == AlignOp::Delete).count();
    (WerResult::from_counts(n, subs, ins, dels), ops)
}

/// Pool error counts over a corpus. Reference and hypothesis id sets must
/// coincide; offending ids are listed otherwise.
pub fn corpus_wer(
    refs: &BTreeMap<String, Vec<String>>,
    hyps: &BTreeMap<String, Vec<String>>,
) -> Result<WerResult, EvalError> {
    let extra: Vec<String> = hyps.keys().filter(|id| !refs.contains_key(*id)).cloned().collect();
    if !extra.is_empty() {
        return Err(EvalError::ExtraHypotheses(extra));
    }
    let missing: Vec<String> = refs.keys().filter(|id| !hyps.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingHypotheses(missing));
    }
    let mut n_ref = 0;
    let mut subs = 0;
    let mut ins = 0;
    let mut dels = 0;
    for (id, r) in refs {
        let (res, _) = align(r, &hyps[id]);
        n_ref += res.n_ref_tokens;
        subs += res.substitutions;
        ins += res.insertions;
        dels += res.deletions;
    }
    Ok(WerResult::from_counts(n_ref, subs, ins, dels))
}

/// 100 * (baseline - system) / baseline.
pub fn relative_improvement(baseline_wer: f64, system_wer: f64) -> Result<f64, EvalError> {
    if baseline_wer <= 0.0 {
        return Err(EvalError::ZeroBaseline(baseline_wer));
    }
    Ok(100.0 * (baseline_wer - system_wer) / baseline_wer)
}

/// Round to one decimal, half away from zero (table formatting convention).
pub fn round1(x: f64) -> f64 {
    (x.abs() * 10.0 + 0.5).floor() / 10.0 * x.signum()
}

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub condition: String,
    pub wer: f64,
    /// Absent on the baseline row.
    pub relative_improvement: Option<f64>,
}

/// WER table with relative improvement against a named baseline row.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub baseline: String,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    /// Build a report from (condition, wer) pairs; `baseline` must name one
    /// of them. Row order is preserved.
    pub fn new(baseline: &str, conditions: &[(String, f64)]) -> Result<Self, EvalError> {
        let base = conditions
            .iter()
            .find(|(name, _)| name == baseline)
            .ok_or_else(|| EvalError::MissingBaseline(baseline.to_string()))?
            .1;
        let rows = conditions
            .iter()
            .map(|(name, wer)| {
                let ri = if name == baseline {
                    None
                } else {
                    Some(relative_improvement(base, *wer)?)
                };
                Ok(ReportRow {
                    condition: name.clone(),
                    wer: *wer,
                    relative_improvement: ri,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        Ok(ExperimentReport {
            baseline: baseline.to_string(),
            rows,
        })
    }

    /// Machine-readable form: one `condition\twer\tri` line per row.
    pub fn to_records(&self) -> String {
        let mut out = String::from("condition\twer\tri\n");
        for row in &self.rows {
            let ri = match row.relative_improvement {
                Some(ri) => format!("{:.1}", round1(ri)),
                None => "-".to_string(),
            };
            out.push_str(&format!("{}\t{:.1}\t{}\n", row.condition, round1(row.wer), ri));
        }
        out
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .rows
            .iter()
            .map(|r| r.condition.len())
            .chain(["Condition".len()])
            .max()
            .unwrap_or(9);
        writeln!(f, "{:<width$}  {:>7}  {:>7}", "Condition", "WER", "%RI")?;
        for row in &self.rows {
            let ri = match row.relative_improvement {
                Some(ri) => format!("{:.1}", round1(ri)),
                None => "-".to_string(),
            };
            writeln!(
                f,
                "{:<width$}  {:>7.1}  {:>7}",
                row.condition,
                round1(row.wer),
                ri
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn identical_sequences_zero_wer() {
        let (res, ops) = align(&toks("a b c"), &toks("a b c"));
        assert_eq!(res.total_errors(), 0);
        assert_eq!(res.wer, 0.0);
        assert!(ops.iter().all(|o| *o == AlignOp::Match));
    }

    #[test]
    fn single_substitution() {
        let (res, _) = align(&toks("a b c"), &toks("a x c"));
        assert_eq!(res.substitutions, 1);
        assert_eq!(res.insertions, 0);
        assert_eq!(res.deletions, 0);
        assert!((res.wer - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_ref_nonempty_hyp_is_infinite() {
        let (res, _) = align(&toks(""), &toks("a b"));
        assert_eq!(res.n_ref_tokens, 0);
        assert_eq!(res.insertions, 2);
        assert!(res.wer.is_infinite());
    }

    #[test]
    fn empty_both() {
        let (res, ops) = align::<String>(&[], &[]);
        assert_eq!(res.wer, 0.0);
        assert!(ops.is_empty());
    }

    #[test]
    fn corpus_wer_pools_counts() {
        // two utterances, one perfect, one with a single error over 4 ref
        // tokens total -> 25.0
        let mut refs = BTreeMap::new();
        refs.insert("u1".to_string(), toks("a b"));
        refs.insert("u2".to_string(), toks("c d"));
        let mut hyps = BTreeMap::new();
        hyps.insert("u1".to_string(), toks("a b"));
        hyps.insert("u2".to_string(), toks("c x"));
        let res = corpus_wer(&refs, &hyps).unwrap();
        assert_eq!(res.n_ref_tokens, 4);
        assert_eq!(res.total_errors(), 1);
        assert!((res.wer - 25.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_wer_id_mismatch_lists_ids() {
        let mut refs = BTreeMap::new();
        refs.insert("u1".to_string(), toks("a"));
        let mut hyps = BTreeMap::new();
        hyps.insert("u2".to_string(), toks("a"));
        match corpus_wer(&refs, &hyps) {
            Err(EvalError::ExtraHypotheses(ids)) => assert_eq!(ids, vec!["u2".to_string()]),
            other => panic!("expected ExtraHypotheses, got {other:?}"),
        }
    }

    #[test]
    fn ri_values_match_hand_checked_references() {
        // first reference set
        let cases = [
            (24.8, 26.9, -8.5),
            (24.8, 23.3, 6.0),
            (24.8, 24.7, 0.4),
            (24.8, 23.5, 5.2),
            // second reference set
            (55.1, 68.8, -24.9),
            (55.1, 46.1, 16.3),
            (55.1, 48.4, 12.2),
            (55.1, 46.4, 15.8),
            (55.1, 47.0, 14.7),
        ];
        for (base, sys, want) in cases {
            let got = round1(relative_improvement(base, sys).unwrap());
            assert_eq!(got, want, "RI({base}, {sys})");
        }
    }

    #[test]
    fn ri_identity_is_zero() {
        assert_eq!(relative_improvement(12.5, 12.5).unwrap(), 0.0);
    }

    #[test]
    fn ri_zero_baseline_errors() {
        assert!(relative_improvement(0.0, 1.0).is_err());
    }

    #[test]
    fn report_reference_values() {
        let conds: Vec<(String, f64)> = [
            ("baseline", 12.5),
            ("ood", 15.5),
            ("ood+ft", 12.5),
            ("pooled", 13.8),
            ("pooled+ft", 12.3),
        ]
        .iter()
        .map(|(n, w)| (n.to_string(), *w))
        .collect();
        let report = ExperimentReport::new("baseline", &conds).unwrap();
        let ris: Vec<Option<f64>> = report
            .rows
            .iter()
            .map(|r| r.relative_improvement.map(round1))
            .collect();
        assert_eq!(
            ris,
            vec![None, Some(-24.0), Some(0.0), Some(-10.4), Some(1.6)]
        );
    }

    #[test]
    fn report_renders_deterministically() {
        let conds = vec![("baseline".to_string(), 10.0), ("sys".to_string(), 9.0)];
        let report = ExperimentReport::new("baseline", &conds).unwrap();
        assert_eq!(report.to_string(), report.to_string());
        assert!(report.to_string().contains("10.0"));
    }

    #[test]
    fn report_missing_baseline_errors() {
        let conds = vec![("sys".to_string(), 9.0)];
        assert!(ExperimentReport::new("baseline", &conds).is_err());
    }

    #[test]
    fn round1_half_away_from_zero() {
        assert_eq!(round1(0.05), 0.1);
        assert_eq!(round1(-0.05), -0.1);
        assert_eq!(round1(2.449), 2.4);
        assert_eq!(round1(-8.4677), -8.5);
    }
}
