//! 1-to-n function matching between two binaries and the precision@1
//! evaluation metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::diffing::{similarity, DiffError, SignatureFile};
use crate::pipeline::AnalysisStats;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("target program has no functions to rank against")]
    EmptyTarget,
    #[error(transparent)]
    Signature(#[from] DiffError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedCandidate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub entry: u64,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRanking {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub entry: u64,
    /// Signature was empty (function with no key instructions).
    pub empty_signature: bool,
    /// Descending by score; ties broken by target entry address ascending.
    pub candidates: Vec<RankedCandidate>,
    /// Top-1 has the same name, for queries whose name exists in the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_at_1: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchReport {
    pub version: String,
    pub config: Config,
    pub query_binary: String,
    pub target_binary: String,
    pub query_stats: AnalysisStats,
    pub target_stats: AnalysisStats,
    /// Ratio of eligible queries ranking their same-named function first;
    /// absent when no query name exists in the target (undefined, not 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_at_1: Option<f64>,
    pub eligible_queries: usize,
    pub rankings: Vec<QueryRanking>,
}

/// Score every query function against every target function, keeping the
/// top-N candidates per query.
pub fn rank_all(
    query: &SignatureFile,
    target: &SignatureFile,
    config: &Config,
    query_stats: AnalysisStats,
    target_stats: AnalysisStats,
) -> Result<MatchReport, RankError> {
    if target.functions.is_empty() {
        return Err(RankError::EmptyTarget);
    }
    if query.params != target.params {
        return Err(RankError::Signature(DiffError::ParamMismatch(
            query.params,
            target.params,
        )));
    }

    let target_names: std::collections::HashSet<&str> = target
        .functions
        .iter()
        .filter_map(|f| f.name.as_deref())
        .collect();

    let mut rankings = Vec::with_capacity(query.functions.len());
    let mut eligible = 0usize;
    let mut correct = 0usize;
    for qf in &query.functions {
        let qsig = qf.to_signature(query.params);
        let mut candidates = Vec::with_capacity(target.functions.len());
        for tf in &target.functions {
            let score = similarity(&qsig, &tf.to_signature(target.params))?;
            candidates.push(RankedCandidate {
                name: tf.name.clone(),
                entry: tf.entry,
                score,
            });
        }
        candidates.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are never NaN")
                .then(a.entry.cmp(&b.entry))
        });

        let correct_at_1 = match qf.name.as_deref() {
            Some(name) if target_names.contains(name) => {
                eligible += 1;
                let hit = candidates
                    .first()
                    .is_some_and(|c| c.name.as_deref() == Some(name));
                if hit {
                    correct += 1;
                }
                Some(hit)
            }
            _ => None,
        };
        candidates.truncate(config.top_n);
        rankings.push(QueryRanking {
            name: qf.name.clone(),
            entry: qf.entry,
            empty_signature: qf.empty,
            candidates,
            correct_at_1,
        });
    }

    Ok(MatchReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        query_binary: query.binary.clone(),
        target_binary: target.binary.clone(),
        query_stats,
        target_stats,
        precision_at_1: (eligible > 0).then(|| correct as f64 / eligible as f64),
        eligible_queries: eligible,
        rankings,
    })
}

/// Recompute precision@1 from a report's rankings (ground truth = name
/// equality). `None` when no query name exists in the target: undefined,
/// not zero.
pub fn precision_at_1(report: &MatchReport) -> Option<f64> {
    let eligible: Vec<&QueryRanking> = report
        .rankings
        .iter()
        .filter(|r| r.correct_at_1.is_some())
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let correct = eligible
        .iter()
        .filter(|r| r.correct_at_1 == Some(true))
        .count();
    Some(correct as f64 / eligible.len() as f64)
}

/// CSV rendering: one row per (query, candidate) pair.
pub fn report_to_csv(report: &MatchReport) -> String {
    use std::fmt::Write;
    let mut out = String::from("query,target,score,rank,correct\n");
    let display = |name: &Option<String>, entry: u64| -> String {
        name.clone().unwrap_or_else(|| format!("0x{entry:x}"))
    };
    for ranking in &report.rankings {
        for (i, c) in ranking.candidates.iter().enumerate() {
            let correct = match (i, ranking.correct_at_1) {
                (0, Some(hit)) => hit.to_string(),
                _ => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{}",
                display(&ranking.name, ranking.entry),
                display(&c.name, c.entry),
                c.score,
                i + 1,
                correct
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffing::{exact_jaccard, signature, FunctionSignature, MinHashParams};
    use std::collections::HashSet;

    fn sig_file(binary: &str, funcs: &[(&str, u64, &[&str])]) -> SignatureFile {
        let params = MinHashParams::default();
        SignatureFile {
            params,
            binary: binary.into(),
            functions: funcs
                .iter()
                .map(|(name, entry, tokens)| {
                    let tokens: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
                    let s = signature(&tokens, &params);
                    FunctionSignature {
                        name: Some(name.to_string()),
                        entry: *entry,
                        slots: s.slots,
                        empty: s.empty,
                    }
                })
                .collect(),
        }
    }

    fn default_rank(q: &SignatureFile, t: &SignatureFile) -> MatchReport {
        rank_all(
            q,
            t,
            &Config::default(),
            AnalysisStats::default(),
            AnalysisStats::default(),
        )
        .unwrap()
    }

    #[test]
    fn self_comparison_is_perfect() {
        let a = sig_file(
            "a",
            &[
                ("f", 0x10, &["cmp x", "cmp 1"]),
                ("g", 0x20, &["RET_(3)", "branch y"]),
                ("h", 0x30, &["[z]=", "=7"]),
            ],
        );
        let report = default_rank(&a, &a);
        assert_eq!(report.precision_at_1, Some(1.0));
        for r in &report.rankings {
            assert_eq!(r.candidates[0].score, 1.0);
            assert_eq!(r.correct_at_1, Some(true));
        }
    }

    #[test]
    fn candidate_list_cardinality_and_top_n() {
        let q = sig_file("q", &[("f", 0, &["a"])]);
        let t = sig_file("t", &[("x", 0, &["a"]), ("y", 1, &["b"]), ("z", 2, &["c"])]);
        let report = default_rank(&q, &t);
        assert_eq!(report.rankings[0].candidates.len(), 3);

        let small = Config { top_n: 2, ..Default::default() };
        let report = rank_all(&q, &t, &small, Default::default(), Default::default()).unwrap();
        assert_eq!(report.rankings[0].candidates.len(), 2);
    }

    #[test]
    fn shared_tokens_rank_first() {
        // Verified through the exact oracle before asserting the ranking.
        let shared: Vec<&str> = vec!["cmp VAR0", "cmp 5", "RET_(1)", "RET_(9)"];
        let disjoint: Vec<&str> = vec!["branch [VAR2]", "[VAR6]=", "=0"];
        let qs: HashSet<&str> = shared.iter().copied().collect();
        let ds: HashSet<&str> = disjoint.iter().copied().collect();
        assert_eq!(exact_jaccard(&qs, &qs), 1.0);
        assert_eq!(exact_jaccard(&qs, &ds), 0.0);

        let q = sig_file("q", &[("f", 0, &shared)]);
        let t = sig_file("t", &[("decoy", 0x1, &disjoint), ("twin", 0x2, &shared)]);
        let report = default_rank(&q, &t);
        let top = &report.rankings[0].candidates[0];
        assert_eq!(top.name.as_deref(), Some("twin"));
        assert_eq!(top.score, 1.0);
    }

    #[test]
    fn recomputed_precision_matches_report() {
        let q = sig_file("q", &[("a", 0, &["t1"]), ("b", 1, &["zz"])]);
        let t = sig_file("t", &[("a", 0, &["t1"]), ("b", 1, &["t2"])]);
        let report = default_rank(&q, &t);
        assert_eq!(precision_at_1(&report), report.precision_at_1);
        assert_eq!(report.precision_at_1, Some(0.5));
    }

    #[test]
    fn precision_ratio_arithmetic() {
        // 3 of 4 queries match by construction.
        let q = sig_file(
            "q",
            &[
                ("a", 0, &["t1"]),
                ("b", 1, &["t2"]),
                ("c", 2, &["t3"]),
                ("d", 3, &["zzz"]),
            ],
        );
        let t = sig_file(
            "t",
            &[
                ("a", 0, &["t1"]),
                ("b", 1, &["t2"]),
                ("c", 2, &["t3"]),
                ("d", 3, &["t4"]),
            ],
        );
        let report = default_rank(&q, &t);
        assert_eq!(report.eligible_queries, 4);
        assert_eq!(report.precision_at_1, Some(0.75));
    }

    #[test]
    fn no_eligible_queries_is_undefined_not_zero() {
        let q = sig_file("q", &[("only_in_q", 0, &["x"])]);
        let t = sig_file("t", &[("only_in_t", 0, &["x"])]);
        let report = default_rank(&q, &t);
        assert_eq!(report.precision_at_1, None);
        assert_eq!(report.eligible_queries, 0);
    }

    #[test]
    fn ties_break_by_entry_address() {
        let q = sig_file("q", &[("f", 0, &["a"])]);
        let t = sig_file("t", &[("late", 0x200, &["a"]), ("early", 0x100, &["a"])]);
        let report = default_rank(&q, &t);
        assert_eq!(report.rankings[0].candidates[0].name.as_deref(), Some("early"));
    }

    #[test]
    fn target_permutation_does_not_change_ranking() {
        let q = sig_file("q", &[("f", 0, &["a", "b"])]);
        let t1 = sig_file(
            "t",
            &[("x", 1, &["a"]), ("y", 2, &["a", "b"]), ("z", 3, &["q"])],
        );
        let mut t2 = t1.clone();
        t2.functions.reverse();
        let r1 = default_rank(&q, &t1);
        let r2 = default_rank(&q, &t2);
        let names = |r: &MatchReport| -> Vec<String> {
            r.rankings[0]
                .candidates
                .iter()
                .map(|c| c.name.clone().unwrap())
                .collect()
        };
        assert_eq!(names(&r1), names(&r2));
    }

    #[test]
    fn scores_are_symmetric() {
        let a = sig_file("a", &[("f", 0, &["a", "b", "c"])]);
        let b = sig_file("b", &[("g", 0, &["b", "c", "d"])]);
        let ab = default_rank(&a, &b).rankings[0].candidates[0].score;
        let ba = default_rank(&b, &a).rankings[0].candidates[0].score;
        assert_eq!(ab, ba);
    }

    #[test]
    fn duplicate_target_names_count_when_first() {
        // static duplicates: any same-named function at top-1 is correct
        let q = sig_file("q", &[("dup", 0, &["a", "b"])]);
        let t = sig_file(
            "t",
            &[("dup", 0x100, &["a", "b"]), ("dup", 0x200, &["a", "b"]), ("other", 0x300, &["z"])],
        );
        let report = default_rank(&q, &t);
        assert_eq!(report.rankings[0].correct_at_1, Some(true));
        assert_eq!(report.precision_at_1, Some(1.0));
        // deterministic tie-break picked the lower entry
        assert_eq!(report.rankings[0].candidates[0].entry, 0x100);
    }

    #[test]
    fn empty_target_is_an_error() {
        let q = sig_file("q", &[("f", 0, &["a"])]);
        let t = SignatureFile {
            params: MinHashParams::default(),
            binary: "t".into(),
            functions: vec![],
        };
        assert!(matches!(
            rank_all(&q, &t, &Config::default(), Default::default(), Default::default()),
            Err(RankError::EmptyTarget)
        ));
    }

    #[test]
    fn csv_has_rank_rows() {
        let q = sig_file("q", &[("f", 0, &["a"])]);
        let t = sig_file("t", &[("f", 0, &["a"]), ("g", 1, &["b"])]);
        let report = default_rank(&q, &t);
        let csv = report_to_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "query,target,score,rank,correct");
        assert!(lines[1].starts_with("f,f,1.000000,1,true"), "{}", lines[1]);
        assert_eq!(lines.len(), 3);
    }
}
