//! Exact-match span F1 with seen/unseen breakdowns, report writers and
//! prototype export.

mod export;

pub use export::{export_prototypes, parse_prototypes_tsv, prototypes_tsv, ExportedPrototype};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use crate::data::SlotSpan;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, 0 when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Overall and per-type counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreCore {
    pub overall: Counts,
    pub per_type: BTreeMap<String, Counts>,
}

impl ScoreCore {
    pub fn f1(&self) -> f64 {
        self.overall.f1()
    }
}

fn check_disjoint(spans: &[SlotSpan], which: &str, utt: usize) -> Result<()> {
    let mut sorted: Vec<&SlotSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.end < s.start {
            return Err(Error::Eval(format!(
                "{which} span {}..{} in utterance {utt} is inverted",
                s.start, s.end
            )));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start <= w[0].end {
            return Err(Error::Eval(format!(
                "overlapping {which} spans {}..{} and {}..{} in utterance {utt}",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    Ok(())
}

/// Exact-match scoring: a prediction is a true positive iff a gold span
/// has the same start, end and slot type. `gold[i]` and `predicted[i]`
/// belong to the same utterance.
pub fn span_f1(gold: &[Vec<SlotSpan>], predicted: &[Vec<SlotSpan>]) -> Result<ScoreCore> {
    if gold.len() != predicted.len() {
        return Err(Error::Eval(format!(
            "{} gold utterances but {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut core = ScoreCore::default();
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        check_disjoint(g, "gold", i)?;
        check_disjoint(p, "predicted", i)?;
        let gold_set: HashSet<&SlotSpan> = g.iter().collect();
        let pred_set: HashSet<&SlotSpan> = p.iter().collect();
        for s in p {
            let c = core.per_type.entry(s.slot.clone()).or_default();
            if gold_set.contains(s) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for s in g {
            if !pred_set.contains(s) {
                core.per_type.entry(s.slot.clone()).or_default().fn_ += 1;
            }
        }
    }
    for c in core.per_type.values() {
        core.overall.add(*c);
    }
    Ok(core)
}

/// Overall scores plus the seen and unseen slot groups of one target domain.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub domain: String,
    /// `zero-shot` or `few-shot-<k>`.
    pub setting: String,
    pub core: ScoreCore,
    pub seen: Counts,
    pub unseen: Counts,
}

pub fn setting_tag(few_shot: usize) -> String {
    if few_shot == 0 {
        "zero-shot".to_string()
    } else {
        format!("few-shot-{few_shot}")
    }
}

/// Splits per-type counts into the seen and unseen groups. A false positive
/// counts in the group of its predicted type.
pub fn seen_unseen_report(
    core: ScoreCore,
    seen: &BTreeSet<String>,
    unseen: &BTreeSet<String>,
    domain: &str,
    setting: &str,
) -> Result<EvalReport> {
    let mut s = Counts::default();
    let mut u = Counts::default();
    for (slot, c) in &core.per_type {
        if seen.contains(slot) {
            s.add(*c);
        } else if unseen.contains(slot) {
            u.add(*c);
        } else {
            return Err(Error::Eval(format!(
                "slot type `{slot}` is neither seen nor unseen in `{domain}`"
            )));
        }
    }
    Ok(EvalReport {
        domain: domain.to_string(),
        setting: setting.to_string(),
        core,
        seen: s,
        unseen: u,
    })
}

fn fmt_f(v: f64) -> String {
    format!("{v:.4}")
}

impl EvalReport {
    pub fn f1(&self) -> f64 {
        self.core.f1()
    }

    /// Human-readable summary with a per-type table.
    pub fn to_text(&self) -> String {
        let o = &self.core.overall;
        let mut out = String::new();
        let _ = writeln!(out, "domain   {}", self.domain);
        let _ = writeln!(out, "setting  {}", self.setting);
        let _ = writeln!(
            out,
            "overall  P={} R={} F1={}  (tp={} fp={} fn={})",
            fmt_f(o.precision()),
            fmt_f(o.recall()),
            fmt_f(o.f1()),
            o.tp,
            o.fp,
            o.fn_
        );
        for (name, c) in [("seen", &self.seen), ("unseen", &self.unseen)] {
            let _ = writeln!(
                out,
                "{name:<8} F1={}  (tp={} fp={} fn={})",
                fmt_f(c.f1()),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        let _ = writeln!(out, "per type:");
        for (slot, c) in &self.core.per_type {
            let _ = writeln!(
                out,
                "  {slot:<28} F1={}  tp={} fp={} fn={}",
                fmt_f(c.f1()),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        out
    }

    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "domain={}", self.domain);
        let _ = writeln!(out, "setting={}", self.setting);
        let mut group = |name: &str, c: &Counts| {
            let _ = writeln!(out, "{name}.precision={:?}", c.precision());
            let _ = writeln!(out, "{name}.recall={:?}", c.recall());
            let _ = writeln!(out, "{name}.f1={:?}", c.f1());
            let _ = writeln!(out, "{name}.tp={}", c.tp);
            let _ = writeln!(out, "{name}.fp={}", c.fp);
            let _ = writeln!(out, "{name}.fn={}", c.fn_);
        };
        group("overall", &self.core.overall);
        group("seen", &self.seen);
        group("unseen", &self.unseen);
        for (slot, c) in &self.core.per_type {
            let _ = writeln!(out, "type.{slot}.tp={}", c.tp);
            let _ = writeln!(out, "type.{slot}.fp={}", c.fp);
            let _ = writeln!(out, "type.{slot}.fn={}", c.fn_);
        }
        out
    }
}
