//! Classification, open-set, semantic, synergy and correction metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::OpenLabel;
use crate::correction::MonitorReport;
use crate::util::squeeze_whitespace;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} references")]
    Length(usize, usize),
    #[error("empty evaluation set")]
    Empty,
    #[error("id mismatch at position {index}: {pred:?} vs {gold:?}")]
    IdMismatch { index: usize, pred: String, gold: String },
}

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::Length(a, b));
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of two rates; 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    f1(a, b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Confusion counts indexed `[gold][pred]` in [`OpenLabel::ALL`] order.
pub type Confusion = [[usize; 5]; 5];

pub fn confusion_matrix(preds: &[OpenLabel], golds: &[OpenLabel]) -> Result<Confusion, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    let mut m = [[0usize; 5]; 5];
    for (p, g) in preds.iter().zip(golds) {
        m[g.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class: BTreeMap<OpenLabel, ClassScores>,
    /// Unweighted mean F1 over the classes present in the references.
    pub macro_f1: f64,
    /// Support-weighted mean F1 over the same classes.
    pub weighted_f1: f64,
    pub confusion: Confusion,
}

pub fn classification_metrics(preds: &[OpenLabel], golds: &[OpenLabel]) -> Result<ClassificationMetrics, EvalError> {
    let m = confusion_matrix(preds, golds)?;
    let n = golds.len();
    let trace: usize = (0..5).map(|i| m[i][i]).sum();
    let mut per_class = BTreeMap::new();
    for class in OpenLabel::ALL {
        let i = class.index();
        let tp = m[i][i];
        let support: usize = m[i].iter().sum();
        let predicted: usize = (0..5).map(|g| m[g][i]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.insert(
            class,
            ClassScores {
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            },
        );
    }
    let present: Vec<&ClassScores> = per_class.values().filter(|s| s.support > 0).collect();
    let macro_f1 = present.iter().map(|s| s.f1).sum::<f64>() / present.len() as f64;
    let weighted_f1 = present.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / n as f64;
    Ok(ClassificationMetrics {
        accuracy: trace as f64 / n as f64,
        per_class,
        macro_f1,
        weighted_f1,
        confusion: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenSetMetrics {
    pub k_f1: f64,
    pub u_f1: f64,
    pub hm: f64,
}

/// Known-class macro-F1 (over known classes present in the references),
/// one-vs-rest Unknown F1, and their harmonic mean.
pub fn open_set_metrics(preds: &[OpenLabel], golds: &[OpenLabel]) -> Result<OpenSetMetrics, EvalError> {
    let c = classification_metrics(preds, golds)?;
    let known: Vec<f64> = OpenLabel::KNOWN
        .iter()
        .map(|k| c.per_class[k])
        .filter(|s| s.support > 0)
        .map(|s| s.f1)
        .collect();
    let k_f1 = if known.is_empty() {
        0.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    let u_f1 = c.per_class[&OpenLabel::Unknown].f1;
    Ok(OpenSetMetrics {
        k_f1,
        u_f1,
        hm: harmonic_mean(k_f1, u_f1),
    })
}

/// One utterance's intent and slots, keyed by a caller-chosen id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticRecord {
    pub id: String,
    pub intent: String,
    pub slots: Vec<(String, String)>,
}

impl SemanticRecord {
    pub fn new(id: impl Into<String>, intent: impl Into<String>, slots: Vec<(String, String)>) -> Self {
        Self {
            id: id.into(),
            intent: intent.into(),
            slots,
        }
    }

    fn normalized_slots(&self) -> Vec<(String, String)> {
        let mut s: Vec<(String, String)> = self
            .slots
            .iter()
            .map(|(n, v)| (n.trim().to_string(), squeeze_whitespace(v)))
            .collect();
        s.sort();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticMetrics {
    pub intent_acc: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub sfa: f64,
}

/// Multiset intersection size of two sorted lists.
fn sorted_overlap<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn semantic_metrics(preds: &[SemanticRecord], golds: &[SemanticRecord]) -> Result<SemanticMetrics, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    let (mut intent_ok, mut frame_ok, mut tp, mut n_pred, mut n_gold) = (0, 0, 0, 0, 0);
    for (index, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.id != g.id {
            return Err(EvalError::IdMismatch {
                index,
                pred: p.id.clone(),
                gold: g.id.clone(),
            });
        }
        let ps = p.normalized_slots();
        let gs = g.normalized_slots();
        let intent_match = p.intent.trim() == g.intent.trim();
        intent_ok += usize::from(intent_match);
        frame_ok += usize::from(intent_match && ps == gs);
        tp += sorted_overlap(&ps, &gs);
        n_pred += ps.len();
        n_gold += gs.len();
    }
    let n = golds.len();
    let slot_precision = ratio(tp, n_pred);
    let slot_recall = ratio(tp, n_gold);
    Ok(SemanticMetrics {
        intent_acc: ratio(intent_ok, n),
        slot_precision,
        slot_recall,
        slot_f1: f1(slot_precision, slot_recall),
        sfa: ratio(frame_ok, n),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynergyCounts {
    pub both_correct: usize,
    pub both_wrong: usize,
    pub llm_corrected: usize,
    pub llm_degraded: usize,
}

impl SynergyCounts {
    pub fn total(&self) -> usize {
        self.both_correct + self.both_wrong + self.llm_corrected + self.llm_degraded
    }

    fn add(&mut self, plugin_ok: bool, final_ok: bool) {
        match (plugin_ok, final_ok) {
            (true, true) => self.both_correct += 1,
            (false, false) => self.both_wrong += 1,
            (false, true) => self.llm_corrected += 1,
            (true, false) => self.llm_degraded += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynergyReport {
    pub overall: SynergyCounts,
    pub per_class: BTreeMap<OpenLabel, SynergyCounts>,
}

pub fn synergy_analysis(
    plugin: &[OpenLabel],
    finals: &[OpenLabel],
    golds: &[OpenLabel],
) -> Result<SynergyReport, EvalError> {
    check_lengths(plugin.len(), golds.len())?;
    check_lengths(finals.len(), golds.len())?;
    let mut r = SynergyReport::default();
    for ((p, f), g) in plugin.iter().zip(finals).zip(golds) {
        r.overall.add(p == g, f == g);
        r.per_class.entry(*g).or_default().add(p == g, f == g);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCount {
    pub corrected: usize,
    pub total: usize,
    pub rate: f64,
}

impl RateCount {
    fn finish(mut self) -> Self {
        self.rate = ratio(self.corrected, self.total);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRate {
    pub overall: RateCount,
    pub per_class: BTreeMap<OpenLabel, RateCount>,
}

/// A gold anomaly counts as corrected when the final label detects it exactly
/// and the correction operator was applied. Non-anomalous golds are ignored.
pub fn correction_rate(reports: &[MonitorReport], golds: &[OpenLabel]) -> Result<CorrectionRate, EvalError> {
    if reports.len() != golds.len() {
        return Err(EvalError::Length(reports.len(), golds.len()));
    }
    let mut out = CorrectionRate::default();
    for class in OpenLabel::ALL.into_iter().filter(|c| c.is_anomaly()) {
        out.per_class.insert(class, RateCount::default());
    }
    for (r, g) in reports.iter().zip(golds) {
        if !g.is_anomaly() {
            continue;
        }
        let ok = r.label == *g && r.correction.as_ref().is_some_and(|c| c.applied);
        for rc in [&mut out.overall, out.per_class.get_mut(g).expect("anomaly class")] {
            rc.total += 1;
            rc.corrected += usize::from(ok);
        }
    }
    out.overall = out.overall.finish();
    for rc in out.per_class.values_mut() {
        *rc = rc.finish();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub per_class_f1: BTreeMap<OpenLabel, f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    #[serde(rename = "kF1")]
    pub k_f1: f64,
    #[serde(rename = "uF1")]
    pub u_f1: f64,
    #[serde(rename = "HM")]
    pub hm: f64,
    pub intent_acc: f64,
    pub slot_f1: f64,
    pub sfa: f64,
    pub recall_per_class: BTreeMap<OpenLabel, f64>,
    pub correction_rate_overall: f64,
    pub correction_rate_per_class: BTreeMap<OpenLabel, f64>,
    pub synergy_counts: SynergyCounts,
    pub synergy_per_class: BTreeMap<OpenLabel, SynergyCounts>,
    pub plugin_accuracy: f64,
    pub parse_failures: usize,
}

/// Per-sample inputs to [`MetricsReport::build`].
pub struct EvalInputs<'a> {
    pub reports: &'a [MonitorReport],
    pub golds: &'a [OpenLabel],
    pub semantic_preds: &'a [SemanticRecord],
    pub semantic_golds: &'a [SemanticRecord],
}

impl MetricsReport {
    pub fn build(inputs: &EvalInputs<'_>) -> Result<Self, EvalError> {
        let preds: Vec<OpenLabel> = inputs.reports.iter().map(|r| r.label).collect();
        let plugin: Vec<OpenLabel> = inputs.reports.iter().map(|r| r.plugin_label).collect();
        let c = classification_metrics(&preds, inputs.golds)?;
        let os = open_set_metrics(&preds, inputs.golds)?;
        let sem = if inputs.semantic_golds.is_empty() && inputs.semantic_preds.is_empty() {
            SemanticMetrics {
                intent_acc: 0.0,
                slot_precision: 0.0,
                slot_recall: 0.0,
                slot_f1: 0.0,
                sfa: 0.0,
            }
        } else {
            semantic_metrics(inputs.semantic_preds, inputs.semantic_golds)?
        };
        let syn = synergy_analysis(&plugin, &preds, inputs.golds)?;
        let cr = correction_rate(inputs.reports, inputs.golds)?;
        let plugin_acc = classification_metrics(&plugin, inputs.golds)?.accuracy;
        Ok(Self {
            samples: preds.len(),
            accuracy: c.accuracy,
            per_class_f1: c.per_class.iter().map(|(k, s)| (*k, s.f1)).collect(),
            macro_f1: c.macro_f1,
            weighted_f1: c.weighted_f1,
            k_f1: os.k_f1,
            u_f1: os.u_f1,
            hm: os.hm,
            intent_acc: sem.intent_acc,
            slot_f1: sem.slot_f1,
            sfa: sem.sfa,
            recall_per_class: c.per_class.iter().map(|(k, s)| (*k, s.recall)).collect(),
            correction_rate_overall: cr.overall.rate,
            correction_rate_per_class: cr.per_class.iter().map(|(k, r)| (*k, r.rate)).collect(),
            synergy_counts: syn.overall,
            synergy_per_class: syn.per_class,
            plugin_accuracy: plugin_acc,
            parse_failures: inputs.reports.iter().filter(|r| !r.parse_ok).count(),
        })
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let pct = |x: f64| format!("{:6.2}", 100.0 * x);
        let mut s = String::new();
        let _ = writeln!(s, "samples            {}", self.samples);
        let _ = writeln!(s, "accuracy           {}", pct(self.accuracy));
        let _ = writeln!(s, "macro F1           {}", pct(self.macro_f1));
        let _ = writeln!(s, "weighted F1        {}", pct(self.weighted_f1));
        let _ = writeln!(s, "kF1 / uF1 / HM     {} {} {}", pct(self.k_f1), pct(self.u_f1), pct(self.hm));
        let _ = writeln!(s, "intent acc         {}", pct(self.intent_acc));
        let _ = writeln!(s, "slot F1            {}", pct(self.slot_f1));
        let _ = writeln!(s, "SFA                {}", pct(self.sfa));
        let _ = writeln!(s, "plug-in accuracy   {}", pct(self.plugin_accuracy));
        let _ = writeln!(s, "correction rate    {}", pct(self.correction_rate_overall));
        let _ = writeln!(s, "parse failures     {}", self.parse_failures);
        let _ = writeln!(s, "{:<14}{:>8}{:>8}{:>12}", "class", "F1", "recall", "correction");
        for class in OpenLabel::ALL {
            let corr = self
                .correction_rate_per_class
                .get(&class)
                .map_or_else(|| "-".to_string(), |r| pct(*r));
            let _ = writeln!(
                s,
                "{:<14}{:>8}{:>8}{:>12}",
                class.as_str(),
                pct(self.per_class_f1[&class]),
                pct(self.recall_per_class[&class]),
                corr
            );
        }
        let c = &self.synergy_counts;
        let _ = writeln!(
            s,
            "synergy            both_correct={} both_wrong={} llm_corrected={} llm_degraded={}",
            c.both_correct, c.both_wrong, c.llm_corrected, c.llm_degraded
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::{package_report, Correction, StageTimings};
    use crate::atcot::LlmVerdict;
    use proptest::prelude::*;
    use OpenLabel::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn perfect_and_all_wrong() {
        let g = [Correct, Incorrect, Unknown, NonStandard];
        let m = classification_metrics(&g, &g).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        let wrong = [Incorrect, Correct, Correct, Unknown];
        assert_eq!(classification_metrics(&wrong, &g).unwrap().accuracy, 0.0);
        assert_eq!(classification_metrics(&g[..2], &g), Err(EvalError::Length(2, 4)));
        assert!(classification_metrics(&[], &[]).is_err());
    }

    #[test]
    fn four_sample_fixture() {
        let golds = [Correct, Correct, Incorrect, Incorrect];
        let preds = [Correct, Incorrect, Incorrect, Incorrect];
        let m = classification_metrics(&preds, &golds).unwrap();
        assert!(close(m.accuracy, 0.75));
        assert!(close(m.per_class[&Correct].f1, 2.0 / 3.0));
        assert!(close(m.per_class[&Incorrect].f1, 0.8));
        assert!(close(m.macro_f1, (2.0 / 3.0 + 0.8) / 2.0));
    }

    #[test]
    fn harmonic_mean_fixtures() {
        assert!(close(harmonic_mean(0.9, 0.9), 0.9));
        assert_eq!(harmonic_mean(0.8, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!(close(harmonic_mean(0.8, 0.4), 2.0 * 0.32 / 1.2));
    }

    fn rec(id: &str, intent: &str, slots: &[(&str, &str)]) -> SemanticRecord {
        SemanticRecord::new(id, intent, slots.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }

    #[test]
    fn semantic_fixtures() {
        let gold = vec![
            rec("a", "climb", &[("callsign", "CCA1"), ("altitude", "8900")]),
            rec("b", "contact", &[("callsign", "CES2"), ("frequency", "118.1"), ("heading", "270")]),
        ];
        let s = semantic_metrics(&gold, &gold).unwrap();
        assert_eq!((s.intent_acc, s.slot_f1, s.sfa), (1.0, 1.0, 1.0));

        let pred = vec![
            rec("a", "climb", &[("callsign", "CCA1"), ("altitude", "9800")]),
            rec("b", "contact", &[("callsign", "CES2"), ("frequency", " 118.1 ")]),
        ];
        let s = semantic_metrics(&pred, &gold).unwrap();
        // tp = 3 of 4 predicted, 5 gold
        assert!(close(s.slot_precision, 0.75));
        assert!(close(s.slot_recall, 0.6));
        assert!(close(s.slot_f1, 2.0 * 0.75 * 0.6 / 1.35));
        assert_eq!(s.intent_acc, 1.0);
        assert_eq!(s.sfa, 0.0);

        let swapped = vec![gold[1].clone(), gold[0].clone()];
        assert!(matches!(semantic_metrics(&swapped, &gold), Err(EvalError::IdMismatch { index: 0, .. })));
    }

    #[test]
    fn synergy_fixture() {
        let golds = [Correct, Correct, Incorrect, Incorrect, Unknown, Unknown];
        let plugin = [Correct, Incorrect, Incorrect, Correct, Unknown, Correct];
        let finals = [Correct, Correct, Incomplete, Incorrect, Unknown, Correct];
        let r = synergy_analysis(&plugin, &finals, &golds).unwrap();
        assert_eq!(
            r.overall,
            SynergyCounts {
                both_correct: 2,
                both_wrong: 1,
                llm_corrected: 2,
                llm_degraded: 1
            }
        );
        assert_eq!(r.per_class[&Incorrect].llm_degraded, 1);
        assert_eq!(r.per_class[&Incorrect].llm_corrected, 1);
        assert_eq!(r.overall.total(), 6);
        let same = synergy_analysis(&golds, &golds, &golds).unwrap();
        assert_eq!(same.overall.both_correct, 6);
    }

    fn report(label: OpenLabel, applied: bool) -> MonitorReport {
        let v = LlmVerdict::fallback(label, "", "fixture");
        let c = label.is_anomaly().then(|| Correction {
            source_instruction: "CCA1, climb to 900 meters".into(),
            corrected_readback: "climb to 900 meters, CCA1".into(),
            callsign: "CCA1".into(),
            moved_span: None,
            applied,
        });
        package_report("p", label, &v, c, StageTimings::default()).unwrap()
    }

    #[test]
    fn correction_rate_fixtures() {
        let golds = [Incorrect, Incomplete, NonStandard, Correct];
        let all = [report(Incorrect, true), report(Incomplete, true), report(NonStandard, true), report(Correct, false)];
        let r = correction_rate(&all, &golds).unwrap();
        assert_eq!(r.overall.total, 3);
        assert_eq!(r.overall.rate, 1.0);
        let none = [report(Correct, false), report(Correct, false), report(Unknown, false), report(Correct, false)];
        assert_eq!(correction_rate(&none, &golds).unwrap().overall.rate, 0.0);
        let mis = [report(Incomplete, true), report(Incomplete, true), report(NonStandard, false), report(Correct, false)];
        let r = correction_rate(&mis, &golds).unwrap();
        assert_eq!(r.overall.corrected, 1);
        assert_eq!(r.per_class[&Incomplete].rate, 1.0);
        // reference point: 488 of 505
        let rc = RateCount { corrected: 488, total: 505, rate: 0.0 }.finish();
        assert!((rc.rate * 100.0 - 96.63).abs() < 0.005);
    }

    fn label_strategy() -> impl Strategy<Value = OpenLabel> {
        (0usize..5).prop_map(|i| OpenLabel::ALL[i])
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((label_strategy(), label_strategy()), 1..60), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut crate::util::keyed_rng(seed, "perm"));
            let (ps, gs): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let a = classification_metrics(&p, &g).unwrap();
            let b = classification_metrics(&ps, &gs).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            let o = open_set_metrics(&p, &g).unwrap();
            prop_assert!(o.hm <= (o.k_f1 + o.u_f1) / 2.0 + 1e-12);
        }
    }
}
