use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::episode::EpisodeRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no episode records")]
    EmptyInput,
}

/// Aggregate metrics. Conditional accuracies are `None` when their stratum is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub accuracy: f64,
    /// Episodes with at least one call in which every call succeeded, over episodes with a call.
    pub tool_sr: Option<f64>,
    /// Successful calls over all calls.
    pub call_sr: Option<f64>,
    pub acc_w_suc: Option<f64>,
    pub acc_w_uns: Option<f64>,
    pub acc_no_call: Option<f64>,
    pub multistep_rate: f64,
    /// Share of all calls per skill name, in first-seen order.
    pub usage_distribution: IndexMap<String, f64>,
    pub n_success_episodes: usize,
    pub n_unsuccessful_episodes: usize,
    pub n_no_call_episodes: usize,
}

fn frac(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(records: &[EpisodeRecord]) -> Result<EvalReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = records.len();
    let correct = |rs: &mut dyn Iterator<Item = &EpisodeRecord>| rs.filter(|r| r.answer_correct).count();
    let with_calls: Vec<&EpisodeRecord> = records.iter().filter(|r| r.n_calls > 0).collect();
    let (suc, uns): (Vec<&EpisodeRecord>, Vec<&EpisodeRecord>) = with_calls.iter().partition(|r| r.all_calls_succeeded());
    let none: Vec<&EpisodeRecord> = records.iter().filter(|r| r.n_calls == 0).collect();

    let total_calls: usize = records.iter().map(|r| r.n_calls).sum();
    let ok_calls = records
        .iter()
        .flat_map(|r| &r.tool_calls)
        .filter(|c| c.outcome == super::CallOutcome::Success)
        .count();
    let mut counts: IndexMap<String, usize> = IndexMap::new();
    for c in records.iter().flat_map(|r| &r.tool_calls) {
        *counts.entry(c.call.skill_name.clone()).or_insert(0) += 1;
    }
    let usage_distribution = counts.into_iter().map(|(k, v)| (k, v as f64 / total_calls as f64)).collect();

    Ok(EvalReport {
        n_episodes: n,
        accuracy: correct(&mut records.iter()) as f64 / n as f64,
        tool_sr: frac(suc.len(), with_calls.len()),
        call_sr: frac(ok_calls, total_calls),
        acc_w_suc: frac(correct(&mut suc.iter().copied()), suc.len()),
        acc_w_uns: frac(correct(&mut uns.iter().copied()), uns.len()),
        acc_no_call: frac(correct(&mut none.iter().copied()), none.len()),
        multistep_rate: records.iter().filter(|r| r.n_calls >= 2).count() as f64 / n as f64,
        usage_distribution,
        n_success_episodes: suc.len(),
        n_unsuccessful_episodes: uns.len(),
        n_no_call_episodes: none.len(),
    })
}

impl EvalReport {
    /// Stratum-weighted accuracy; equals `accuracy` up to rounding.
    pub fn recombined_accuracy(&self) -> f64 {
        let part = |acc: Option<f64>, k: usize| acc.unwrap_or(0.0) * k as f64;
        (part(self.acc_w_suc, self.n_success_episodes)
            + part(self.acc_w_uns, self.n_unsuccessful_episodes)
            + part(self.acc_no_call, self.n_no_call_episodes))
            / self.n_episodes as f64
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}%", 100.0 * v));
        let mut out = String::new();
        let rows = [
            ("episodes", self.n_episodes.to_string()),
            ("accuracy", pct(Some(self.accuracy))),
            ("tool SR (episode)", pct(self.tool_sr)),
            ("call SR", pct(self.call_sr)),
            ("acc w/ successful tools", pct(self.acc_w_suc)),
            ("acc w/ unsuccessful tools", pct(self.acc_w_uns)),
            ("acc w/o tool calls", pct(self.acc_no_call)),
            ("multi-step rate", pct(Some(self.multistep_rate))),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<28}{v:>10}");
        }
        if !self.usage_distribution.is_empty() {
            let _ = writeln!(out, "tool usage:");
            for (k, v) in &self.usage_distribution {
                let _ = writeln!(out, "  {k:<26}{:>10}", pct(Some(*v)));
            }
        }
        out
    }
}
