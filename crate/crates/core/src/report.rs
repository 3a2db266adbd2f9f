//! CSV tables and text panels for measurement and batch runs.

use std::fmt::Write as _;

use crate::balance::{BalanceEstimate, ImbalanceSummary};
use crate::level::{render_ascii, Level};
use crate::search::LevelOutcome;

pub const IMBALANCE_HEADER: &str = "level_id,wins1,wins2,draws,b,class,draw_cause_histogram";
pub const BATCH_HEADER: &str = "level_id,method,initial_b,final_b,balanced,evals_used";
pub const SUMMARY_HEADER: &str = "setup,initial_imbalance_fraction";

/// `1.0`, `0.5`, `0.35`: shortest form that round-trips.
pub fn format_b(b: f64) -> String {
    format!("{b:?}")
}

pub fn imbalance_csv(summary: &ImbalanceSummary) -> String {
    let mut out = String::from(IMBALANCE_HEADER);
    out.push('\n');
    for (id, e) in &summary.estimates {
        let _ = writeln!(
            out,
            "{id},{},{},{},{},{},{}",
            e.wins1(),
            e.wins2(),
            e.draws(),
            format_b(e.b_f64()),
            e.classify(summary.epsilon).name(),
            e.draw_histogram()
        );
    }
    out
}

/// One row of the setup summary, e.g. `A vs C,0.821`.
pub fn summary_row(setup: &str, summary: &ImbalanceSummary) -> String {
    format!("{setup},{:.3}", summary.initial_imbalance())
}

pub fn batch_csv(rows: &[LevelOutcome]) -> String {
    let mut out = String::from(BATCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.level_id,
            r.method,
            format_b(r.initial_b),
            format_b(r.final_b),
            r.balanced,
            r.evals_used
        );
    }
    out
}

/// A parsed batch CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub level_id: String,
    pub method: String,
    pub initial_b: f64,
    pub final_b: f64,
    pub balanced: bool,
    pub evals_used: u32,
}

pub fn parse_batch_csv(text: &str) -> Result<Vec<BatchRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(BATCH_HEADER) {
        return Err("missing batch header".into());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let err = |what: &str| format!("line {}: bad {what}", i + 2);
            if f.len() != 6 {
                return Err(err("field count"));
            }
            Ok(BatchRow {
                level_id: f[0].to_string(),
                method: f[1].to_string(),
                initial_b: f[2].parse().map_err(|_| err("initial_b"))?,
                final_b: f[3].parse().map_err(|_| err("final_b"))?,
                balanced: f[4].parse().map_err(|_| err("balanced"))?,
                evals_used: f[5].parse().map_err(|_| err("evals_used"))?,
            })
        })
        .collect()
}

/// Balanced fraction recomputed from CSV rows, skipping rows whose `initial_b` was already balanced.
pub fn balanced_fraction_from_rows(rows: &[BatchRow], epsilon: f64) -> Option<f64> {
    let cand: Vec<&BatchRow> = rows
        .iter()
        .filter(|r| (r.initial_b - 0.5).abs() > epsilon)
        .collect();
    if cand.is_empty() {
        return None;
    }
    Some(cand.iter().filter(|r| r.balanced).count() as f64 / cand.len() as f64)
}

/// `Unbalanced, 1.0`, with a draw note when draws make up at least half the matches.
pub fn caption(est: &BalanceEstimate, epsilon: f64) -> String {
    let label = if est.is_balanced(epsilon) {
        "Balanced"
    } else {
        "Unbalanced"
    };
    let mut s = format!("{label}, {}", format_b(est.b_f64()));
    if est.draws() > 0 && 2 * est.draws() >= est.n_sims() {
        let _ = write!(s, " (draws {:.0}%)", 100.0 * est.draw_fraction());
    }
    s
}

/// Before and after renders side by side, captions underneath.
pub fn render_panel(
    before: &Level,
    before_est: &BalanceEstimate,
    after: &Level,
    after_est: &BalanceEstimate,
    epsilon: f64,
) -> String {
    let left: Vec<String> = render_ascii(before).lines().map(str::to_string).collect();
    let right: Vec<String> = render_ascii(after).lines().map(str::to_string).collect();
    let cap_l = caption(before_est, epsilon);
    let cap_r = caption(after_est, epsilon);
    let col = left
        .iter()
        .map(String::len)
        .chain(std::iter::once(cap_l.len()))
        .max()
        .unwrap_or(0)
        + 4;
    let mut out = String::new();
    let rows = left.len().max(right.len());
    for i in 0..rows {
        let l = left.get(i).map(String::as_str).unwrap_or("");
        let r = right.get(i).map(String::as_str).unwrap_or("");
        let _ = writeln!(out, "{}", format!("{l:<col$}{r}").trim_end());
    }
    out.push('\n');
    let _ = writeln!(out, "{}", format!("{cap_l:<col$}{cap_r}").trim_end());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::Position;

    #[test]
    fn b_format() {
        assert_eq!(format_b(1.0), "1.0");
        assert_eq!(format_b(0.5), "0.5");
        assert_eq!(format_b(0.35), "0.35");
    }

    #[test]
    fn captions() {
        let won = BalanceEstimate::from_counts(10, 0, 0).unwrap();
        assert_eq!(caption(&won, 0.0), "Unbalanced, 1.0");
        let even = BalanceEstimate::from_counts(5, 5, 0).unwrap();
        assert_eq!(caption(&even, 0.0), "Balanced, 0.5");
        let drawn = BalanceEstimate::from_counts(0, 0, 10).unwrap();
        assert_eq!(caption(&drawn, 0.0), "Balanced, 0.5 (draws 100%)");
    }

    #[test]
    fn batch_round_trip() {
        let level = Level::grass(6, 6, Position::new(0, 0), Position::new(5, 5)).unwrap();
        let est = BalanceEstimate::from_counts(5, 5, 0).unwrap();
        let rows = vec![LevelOutcome {
            level_id: "level-0000".into(),
            method: "random".into(),
            initial_b: 0.9,
            final_b: 0.5,
            initially_balanced: false,
            balanced: true,
            evals_used: 12,
            final_level: level,
            final_estimate: est,
        }];
        let parsed = parse_batch_csv(&batch_csv(&rows)).unwrap();
        assert_eq!(parsed[0].initial_b, 0.9);
        assert!(parsed[0].balanced);
        assert_eq!(balanced_fraction_from_rows(&parsed, 0.0), Some(1.0));
    }

    #[test]
    fn panel_has_both_grids() {
        let a = Level::from_rows(&["GWRRRG", "GGRRRG", "GGRRRG"], Position::new(0, 0), Position::new(5, 2)).unwrap();
        let e1 = BalanceEstimate::from_counts(10, 0, 0).unwrap();
        let e2 = BalanceEstimate::from_counts(5, 5, 0).unwrap();
        let p = render_panel(&a, &e1, &a, &e2, 0.0);
        assert!(p.lines().next().unwrap().matches("ABCDEF").count() == 2);
        assert!(p.contains("Unbalanced, 1.0"));
        assert!(p.contains("Balanced, 0.5"));
    }
}
