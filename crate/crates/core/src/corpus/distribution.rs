use std::collections::BTreeMap;

use serde::Serialize;

use super::{OpenLabel, Split, UtterancePair};

/// Label counts for one split. Unlabelled pairs are counted separately.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitCounts {
    pub counts: BTreeMap<OpenLabel, usize>,
    pub unlabeled: usize,
    pub total: usize,
}

impl SplitCounts {
    pub fn count(&self, label: OpenLabel) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    /// Share of the split in percent, rounded to one decimal place.
    pub fn percentage(&self, label: OpenLabel) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (self.count(label) as f64 * 1000.0 / self.total as f64).round() / 10.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClassDistribution {
    pub splits: BTreeMap<Split, SplitCounts>,
}

impl ClassDistribution {
    pub fn split(&self, split: Split) -> SplitCounts {
        self.splits.get(&split).cloned().unwrap_or_default()
    }

    pub fn total(&self) -> usize {
        self.splits.values().map(|s| s.total).sum()
    }

    /// Fixed-width text table: one row per label, one column per split.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}", "class");
        for split in Split::ALL {
            out.push_str(&format!("{:>20}", split.as_str()));
        }
        out.push('\n');
        for label in OpenLabel::ALL {
            out.push_str(&format!("{:<14}", label.as_str()));
            for split in Split::ALL {
                let s = self.split(split);
                out.push_str(&format!(
                    "{:>20}",
                    format!("{} ({:.1}%)", s.count(label), s.percentage(label))
                ));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<14}", "total"));
        for split in Split::ALL {
            out.push_str(&format!("{:>20}", self.split(split).total));
        }
        out.push('\n');
        out
    }
}

pub fn class_distribution(corpus: &[UtterancePair]) -> ClassDistribution {
    let mut dist = ClassDistribution::default();
    for split in Split::ALL {
        dist.splits.insert(split, SplitCounts::default());
    }
    for pair in corpus {
        let entry = dist.splits.entry(pair.split).or_default();
        entry.total += 1;
        match pair.label {
            Some(label) => *entry.counts.entry(label).or_insert(0) += 1,
            None => entry.unlabeled += 1,
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(split: Split, label: OpenLabel, n: usize, tag: &str) -> Vec<UtterancePair> {
        (0..n)
            .map(|i| UtterancePair::new(format!("{tag}{i}"), "a", "b", Some(label), split))
            .collect()
    }

    #[test]
    fn empty_corpus_counts_zero() {
        let d = class_distribution(&[]);
        assert_eq!(d.total(), 0);
        for split in Split::ALL {
            for label in OpenLabel::ALL {
                assert_eq!(d.split(split).count(label), 0);
                assert_eq!(d.split(split).percentage(label), 0.0);
            }
        }
    }

    #[test]
    fn even_split_is_fifty_fifty() {
        let mut c = pairs(Split::Test, OpenLabel::Correct, 2, "c");
        c.extend(pairs(Split::Test, OpenLabel::Unknown, 2, "u"));
        let d = class_distribution(&c);
        assert_eq!(d.split(Split::Test).percentage(OpenLabel::Correct), 50.0);
        assert_eq!(d.split(Split::Test).percentage(OpenLabel::Unknown), 50.0);
    }

    #[test]
    fn counts_sum_to_corpus_size() {
        let mut c = pairs(Split::Train, OpenLabel::Correct, 5, "a");
        c.extend(pairs(Split::Calibration, OpenLabel::Unknown, 3, "b"));
        c.push(UtterancePair::new("z", "a", "b", None, Split::Test));
        let d = class_distribution(&c);
        assert_eq!(d.total(), c.len());
        assert_eq!(d.split(Split::Test).unlabeled, 1);
        assert!(d.to_table().contains("calibration"));
    }
}
