//! Token/cost accounting per pipeline step.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Which pipeline step a call is billed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepLabel {
    Step1,
    Step2,
    Step3,
    Step4,
    SelfCorrection,
}

impl StepLabel {
    pub fn name(&self) -> &'static str {
        match self {
            StepLabel::Step1 => "step1",
            StepLabel::Step2 => "step2",
            StepLabel::Step3 => "step3",
            StepLabel::Step4 => "step4",
            StepLabel::SelfCorrection => "self_correction",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

impl StepUsage {
    pub fn tokens_consumed(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, other: &StepUsage) {
        self.calls += other.calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.cost += other.cost;
    }
}

/// Thread-safe accumulator; shareable across concurrent pipeline workers.
#[derive(Debug, Default)]
pub struct UsageLedger {
    steps: Mutex<BTreeMap<StepLabel, StepUsage>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, step: StepLabel, prompt_tokens: u64, completion_tokens: u64, cost: f64) {
        let mut steps = self.steps.lock().expect("ledger lock");
        let entry = steps.entry(step).or_default();
        entry.calls += 1;
        entry.prompt_tokens += prompt_tokens;
        entry.completion_tokens += completion_tokens;
        entry.cost += cost;
    }

    pub fn merge(&self, report: &LedgerReport) {
        let mut steps = self.steps.lock().expect("ledger lock");
        for (label, usage) in &report.steps {
            steps.entry(*label).or_default().add(usage);
        }
    }

    pub fn step_usage(&self, step: StepLabel) -> StepUsage {
        self.steps.lock().expect("ledger lock").get(&step).copied().unwrap_or_default()
    }

    pub fn report(&self) -> LedgerReport {
        let steps = self.steps.lock().expect("ledger lock").clone();
        let mut total = StepUsage::default();
        for usage in steps.values() {
            total.add(usage);
        }
        LedgerReport { steps, total }
    }
}

/// Exported ledger: one row per step plus a total row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub steps: BTreeMap<StepLabel, StepUsage>,
    pub total: StepUsage,
}

impl LedgerReport {
    /// Aligned text table: tokens consumed and cost per step, then total.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>10} {:>8} {:>14} {:>12}", "Step", "Calls", "Prompt", "Completion", "Cost ($)");
        for (label, usage) in &self.steps {
            let _ = writeln!(
                out,
                "{:<18} {:>10} {:>8} {:>14} {:>12.4}",
                label.name(),
                usage.calls,
                usage.prompt_tokens,
                usage.completion_tokens,
                usage.cost
            );
        }
        let _ = writeln!(
            out,
            "{:<18} {:>10} {:>8} {:>14} {:>12.4}",
            "total",
            self.total.calls,
            self.total.prompt_tokens,
            self.total.completion_tokens,
            self.total.cost
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_sums_over_steps() {
        let ledger = UsageLedger::new();
        ledger.record(StepLabel::Step1, 100, 20, 0.01);
        ledger.record(StepLabel::Step1, 50, 10, 0.005);
        ledger.record(StepLabel::Step3, 1000, 200, 0.2);
        let report = ledger.report();
        assert_eq!(report.steps[&StepLabel::Step1].calls, 2);
        assert_eq!(report.total.prompt_tokens, 1150);
        assert_eq!(report.total.completion_tokens, 230);
        assert_eq!(report.total.calls, 3);
        let per_step: f64 = report.steps.values().map(|u| u.cost).sum();
        assert!((report.total.cost - per_step).abs() < 1e-12);
    }

    #[test]
    fn merge_accumulates() {
        let a = UsageLedger::new();
        a.record(StepLabel::Step2, 10, 5, 0.0);
        let b = UsageLedger::new();
        b.merge(&a.report());
        b.merge(&a.report());
        assert_eq!(b.step_usage(StepLabel::Step2).calls, 2);
        assert_eq!(b.step_usage(StepLabel::Step2).prompt_tokens, 20);
    }
}
