use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::labels::{Branch, FaultReason, LabelFile, Leaf, LoopKind, PlanOutcome};
use super::stats::{cohen_kappa, mcnemar_exact, success_rate, Coverage, Kappa, McNemar, Rate};
use crate::action_model::RunResult;

/// One row of a count table. Percentages are relative to `of`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub depth: usize,
    pub rate: Option<Rate>,
}

impl Row {
    fn new(label: &str, depth: usize, count: u64, of: u64) -> Self {
        Self { label: label.into(), depth, rate: Some(Rate::new(count, of)) }
    }

    fn heading(label: &str) -> Self {
        Self { label: label.into(), depth: 0, rate: None }
    }

    fn uncounted(label: &str, count: u64) -> Self {
        Self { label: label.into(), depth: 0, rate: Some(Rate::new(count, 0)) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanCounts {
    pub true_: u64,
    pub faulty: u64,
    pub irreproducible: u64,
    pub wrong_command: u64,
    pub missing_step: u64,
    pub logic_error: u64,
}

impl PlanCounts {
    pub fn rows(&self) -> Vec<Row> {
        let judged = self.true_ + self.faulty;
        vec![
            Row::new("True", 0, self.true_, judged),
            Row::new("Faulty", 0, self.faulty, judged),
            Row::heading("Faulty analysis breakdown (multi-label)"),
            Row::new("Wrong Command", 1, self.wrong_command, self.faulty),
            Row::new("Missing Step", 1, self.missing_step, self.faulty),
            Row::new("Logic Error", 1, self.logic_error, self.faulty),
            Row::uncounted("Irreproducible", self.irreproducible),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub success: u64,
    pub menu_loop: u64,
    pub command_loop: u64,
    pub death_loop: u64,
    pub poor_decision: u64,
    pub framework: u64,
    pub error_a: u64,
    pub recovery: u64,
    pub total_failure: u64,
    pub error_b: u64,
}

impl RunCounts {
    pub fn add(&mut self, branch: Branch, leaf: Leaf) {
        let slot = match (branch, leaf) {
            (_, Leaf::Success) => &mut self.success,
            (_, Leaf::StuckInLoop(LoopKind::Menu)) => &mut self.menu_loop,
            (_, Leaf::StuckInLoop(LoopKind::Command)) => &mut self.command_loop,
            (_, Leaf::StuckInLoop(LoopKind::Death)) => &mut self.death_loop,
            (_, Leaf::PoorDecisionMaking) => &mut self.poor_decision,
            (_, Leaf::FrameworkIncapability) => &mut self.framework,
            (Branch::OnSynthSuccess, Leaf::Error) => &mut self.error_a,
            (Branch::OnSynthFailure, Leaf::Error) => &mut self.error_b,
            (_, Leaf::Recovery) => &mut self.recovery,
            (_, Leaf::TotalFailure) => &mut self.total_failure,
        };
        *slot += 1;
    }

    pub fn stuck(&self) -> u64 {
        self.menu_loop + self.command_loop + self.death_loop
    }

    pub fn agent_incapability(&self) -> u64 {
        self.stuck() + self.poor_decision
    }

    pub fn failure_a(&self) -> u64 {
        self.agent_incapability() + self.framework
    }

    pub fn branch_a(&self) -> u64 {
        self.success + self.failure_a() + self.error_a
    }

    pub fn branch_b(&self) -> u64 {
        self.recovery + self.total_failure + self.error_b
    }

    pub fn total(&self) -> u64 {
        self.branch_a() + self.branch_b()
    }

    /// Rows in the layout of the failure-analysis table. Branch rows are
    /// relative to the branch size, totals to all trials.
    pub fn rows(&self) -> Vec<Row> {
        let (a, b, n) = (self.branch_a(), self.branch_b(), self.total());
        vec![
            Row::new("A. Plan correct", 0, a, a),
            Row::new("Success (bug reproduced)", 1, self.success, a),
            Row::new("Failure", 1, self.failure_a(), a),
            Row::new("Agent Incapability", 2, self.agent_incapability(), a),
            Row::new("Stuck in Loop", 3, self.stuck(), a),
            Row::new("Menu Loop", 4, self.menu_loop, a),
            Row::new("Command Loop", 4, self.command_loop, a),
            Row::new("Death Loop", 4, self.death_loop, a),
            Row::new("Poor Decision Making", 3, self.poor_decision, a),
            Row::new("Framework Incapability", 2, self.framework, a),
            Row::new("Error", 1, self.error_a, a),
            Row::new("B. Plan faulty", 0, b, b),
            Row::new("Recovery", 1, self.recovery, b),
            Row::new("Failure", 1, self.total_failure, b),
            Row::new("Error", 1, self.error_b, b),
            Row::heading("Overall totals"),
            Row::new("Total Trials", 1, n, n),
            Row::new("Total Success", 1, self.success + self.recovery, n),
            Row::new("Total Failure", 1, self.failure_a() + self.total_failure, n),
            Row::new("Total Errors", 1, self.error_a + self.error_b, n),
        ]
    }
}

/// Figures recorded from outside the engine (manual timing, tracker history).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportedFigures {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_active_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttr_minutes: Option<f64>,
    /// Published inter-rater figures that cannot be recomputed here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_agreement: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub success: Option<Rate>,
    pub plan: PlanCounts,
    pub runs: RunCounts,
    /// Results with no human run label yet.
    pub unlabeled: u64,
    pub kappa: Option<Kappa>,
    pub mcnemar: Option<McNemar>,
    pub coverage: Option<Coverage>,
    pub cost_per_attempt_usd: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub imported: ImportedFigures,
}

/// Optional comparisons: a second rater's plan labels and a second agent's results.
#[derive(Debug, Clone, Default)]
pub struct Comparisons {
    /// Confusion matrix over True/Faulty/Irreproducible.
    pub rater_matrix: Option<Vec<Vec<u64>>>,
    pub coverage: Option<Coverage>,
    pub imported: ImportedFigures,
}

pub fn plan_index(p: PlanOutcome) -> usize {
    match p {
        PlanOutcome::True => 0,
        PlanOutcome::Faulty => 1,
        PlanOutcome::Irreproducible => 2,
    }
}

/// Aggregates results and their labels. Runs without a human label count
/// toward success rate and cost but not toward the label tables.
pub fn metrics_report(results: &[(RunResult, Option<LabelFile>)], comparisons: &Comparisons) -> MetricsReport {
    let mut report = MetricsReport { imported: comparisons.imported.clone(), ..Default::default() };
    if !results.is_empty() {
        report.success = Some(success_rate(results.iter().map(|(r, _)| &r.outcome)));
        let n = results.len() as f64;
        report.cost_per_attempt_usd = Some(results.iter().map(|(r, _)| r.cost_usd).sum::<f64>() / n);
        report.mean_iterations = Some(results.iter().map(|(r, _)| r.iterations_used as f64).sum::<f64>() / n);
    }
    for (_, labels) in results {
        let Some(l) = labels else {
            report.unlabeled += 1;
            continue;
        };
        if let Some(p) = &l.plan {
            match p.label {
                PlanOutcome::True => report.plan.true_ += 1,
                PlanOutcome::Faulty => report.plan.faulty += 1,
                PlanOutcome::Irreproducible => report.plan.irreproducible += 1,
            }
            for r in &p.faulty_reasons {
                match r {
                    FaultReason::WrongCommand => report.plan.wrong_command += 1,
                    FaultReason::MissingStep => report.plan.missing_step += 1,
                    FaultReason::LogicError => report.plan.logic_error += 1,
                }
            }
        }
        match &l.run {
            Some(r) => report.runs.add(r.branch, r.leaf),
            None => report.unlabeled += 1,
        }
    }
    report.kappa = comparisons.rater_matrix.as_deref().and_then(|m| cohen_kappa(m).ok());
    if let Some(c) = &comparisons.coverage {
        let (b, c2) = c.discordant();
        report.mcnemar = Some(mcnemar_exact(b, c2));
        report.coverage = Some(c.clone());
    }
    report
}

fn render_rows(out: &mut String, title: &str, rows: &[Row]) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{:<44} {:>6} {:>9}", "Category", "Count", "Percent");
    for r in rows {
        let label = format!("{}{}", "  ".repeat(r.depth), r.label);
        match r.rate {
            None => {
                let _ = writeln!(out, "{label}");
            }
            Some(rate) if rate.total == 0 => {
                let _ = writeln!(out, "{label:<44} {:>6} {:>9}", rate.count, "-");
            }
            Some(rate) => {
                let _ = writeln!(out, "{label:<44} {:>6} {:>9}", rate.count, rate.display(2));
            }
        }
    }
    out.push('\n');
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_rows(&mut out, "Plan correctness", &self.plan.rows());
        render_rows(&mut out, "Results and failure analysis", &self.runs.rows());
        let _ = writeln!(out, "Performance and cost");
        match self.success {
            Some(s) => {
                let _ = writeln!(out, "  Success rate: {} ({})", s.display(1), s.count);
            }
            None => {
                let _ = writeln!(out, "  Success rate: n/a (no results)");
            }
        }
        if let Some(c) = self.cost_per_attempt_usd {
            let _ = writeln!(out, "  Cost per attempt: ${c:.2}");
        }
        if let Some(m) = self.mean_iterations {
            let _ = writeln!(out, "  Mean iterations: {m:.2}");
        }
        if let Some(a) = self.imported.mean_active_minutes {
            let _ = writeln!(out, "  Active time (imported): {a:.2} min");
        }
        if let Some(m) = self.imported.mttr_minutes {
            let _ = writeln!(out, "  MTTR (imported): {m:.2} min");
        }
        if self.unlabeled > 0 {
            let _ = writeln!(out, "  Unlabeled results: {}", self.unlabeled);
        }
        if let Some(k) = self.kappa {
            match k.kappa {
                Some(v) => {
                    let _ = writeln!(out, "  Cohen's kappa: {v:.2}, agreement {:.1}%", k.agreement * 100.0);
                }
                None => {
                    let _ = writeln!(out, "  Cohen's kappa: undefined, agreement {:.1}%", k.agreement * 100.0);
                }
            }
        }
        if let (Some(k), Some(a)) = (self.imported.reported_kappa, self.imported.reported_agreement) {
            let _ = writeln!(out, "  Reported kappa (imported): {k:.2}, agreement {a:.1}%");
        }
        if let Some(c) = &self.coverage {
            let _ = writeln!(
                out,
                "  Oracle coverage: {}/{} ({}); both {}, only A {}, only B {}",
                c.union,
                c.total,
                c.rate().display(1),
                c.both,
                c.only_a,
                c.only_b
            );
        }
        if let Some(m) = self.mcnemar {
            let flag = if m.undefined { " (no discordant pairs)" } else { "" };
            let _ = writeln!(out, "  McNemar exact p: {:.2}{flag}", m.p);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_results_give_a_zeroed_report() {
        let r = metrics_report(&[], &Comparisons::default());
        assert_eq!(r.success, None);
        assert_eq!(r.runs.total(), 0);
        assert_eq!(r.plan, PlanCounts::default());
        assert!(r.render().contains("n/a"));
    }
}
