//! Empirical label statistics of a generated dataset against the configured
//! damage probabilities.

use serde::Serialize;

use crate::datamodel::labels::{Domain, Part, Phase};
use crate::datamodel::record::SampleRecord;
use crate::synthgen::damage::{DamageProbabilities, Dirt};

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// Acceptance interval for the frequency of a Bernoulli(`p`) event over `n`
/// trials: `p ± z·sqrt(p(1−p)/n)`, clipped to [0, 1]. Degenerate `p` gives a
/// zero-width interval.
pub fn binomial_interval(p: f64, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let half = z * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub label: String,
    /// Which images the frequency is taken over.
    pub subset: String,
    pub count: usize,
    pub total: usize,
    pub observed: f64,
    pub expected: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub images: usize,
    pub before: usize,
    pub after: usize,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, label: &str) -> Option<&AuditRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} images ({} before, {} after)\n{:<22} {:<7} {:>7} {:>7} {:>9} {:>9} {:>19}  {}\n",
            self.images, self.before, self.after, "label", "subset", "count", "total", "observed", "expected", "99% interval", "result"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<22} {:<7} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}..{:<8.4}  {}\n",
                r.label,
                r.subset,
                r.count,
                r.total,
                r.observed,
                r.expected,
                r.ci_low,
                r.ci_high,
                if r.pass { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

fn row(label: &str, subset: &str, count: usize, total: usize, expected: f64) -> AuditRow {
    let observed = if total == 0 { 0.0 } else { count as f64 / total as f64 };
    let (ci_low, ci_high) = binomial_interval(expected, total, Z_99);
    AuditRow {
        label: label.to_string(),
        subset: subset.to_string(),
        count,
        total,
        observed,
        expected,
        ci_low,
        ci_high,
        pass: total == 0 || (observed >= ci_low - 1e-12 && observed <= ci_high + 1e-12),
    }
}

/// Compare label frequencies of the synthetic records with `probs`.
pub fn audit(records: &[SampleRecord], probs: &DamageProbabilities) -> AuditReport {
    let synthetic: Vec<&SampleRecord> = records.iter().filter(|r| r.domain == Domain::Synthetic).collect();
    let before: Vec<&&SampleRecord> = synthetic.iter().filter(|r| r.phase == Phase::Before).collect();
    let after: Vec<&&SampleRecord> = synthetic.iter().filter(|r| r.phase == Phase::After).collect();
    let (nb, na, n) = (before.len(), after.len(), synthetic.len());
    let count_after = |f: &dyn Fn(&SampleRecord) -> bool| after.iter().filter(|r| f(r)).count();
    let [s_bent, s_broken, s_both] = probs.frame_split;
    let pf = probs.after_frame;

    let mut rows = vec![
        row("frame_damaged", "after", count_after(&|r| r.labels.frame_damaged()), na, pf),
        row("bent_only", "after", count_after(&|r| r.labels.bent && !r.labels.broken), na, pf * s_bent),
        row("broken_only", "after", count_after(&|r| !r.labels.bent && r.labels.broken), na, pf * s_broken),
        row("bent_and_broken", "after", count_after(&|r| r.labels.bent && r.labels.broken), na, pf * s_both),
        row("frame_intact", "after", count_after(&|r| !r.labels.frame_damaged()), na, 1.0 - pf),
        row("bent", "after", count_after(&|r| r.labels.bent), na, probs.p_bent()),
        row("broken", "after", count_after(&|r| r.labels.broken), na, probs.p_broken()),
    ];
    for part in Part::ALL {
        let i = part.index();
        rows.push(row(
            &format!("missing_{}", part.name()),
            "after",
            count_after(&|r| r.labels.missing[i]),
            na,
            probs.part_removed,
        ));
    }
    rows.push(row("dirt", "after", count_after(&|r| r.dirt != Dirt::None), na, probs.after_dirt));
    rows.push(row(
        "dirt",
        "before",
        before.iter().filter(|r| r.dirt != Dirt::None).count(),
        nb,
        probs.before_dirt,
    ));
    rows.push(row(
        "any_damage",
        "before",
        before.iter().filter(|r| r.labels.frame_damaged() || r.labels.missing.iter().any(|&m| m)).count(),
        nb,
        0.0,
    ));
    let after_share = if n == 0 { 0.0 } else { na as f64 / n as f64 };
    rows.push(row(
        "frame_damaged",
        "all",
        synthetic.iter().filter(|r| r.labels.frame_damaged()).count(),
        n,
        after_share * pf,
    ));
    AuditReport {
        images: n,
        before: nb,
        after: na,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::labels::{DamageLabels, Split};
    use crate::datamodel::record::ImageRef;

    fn rec(phase: Phase, labels: DamageLabels, dirt: Dirt) -> SampleRecord {
        SampleRecord {
            image: ImageRef::Path("x.png".into()),
            key: "x".into(),
            instance_id: 0,
            model: Some("m".into()),
            phase,
            labels,
            dirt,
            view_index: 0,
            background_index: 0,
            render_index: 0,
            domain: Domain::Synthetic,
            split: Split::Train,
        }
    }

    #[test]
    fn interval_examples() {
        assert_eq!(binomial_interval(0.0, 100, Z_99), (0.0, 0.0));
        let (lo, hi) = binomial_interval(0.5, 10_000, Z_99);
        assert!((hi - lo - 2.0 * Z_99 * 0.005).abs() < 1e-12);
    }

    #[test]
    fn zero_damage_config_gives_exact_zeros() {
        let records: Vec<_> = (0..20)
            .map(|i| rec(if i % 2 == 0 { Phase::Before } else { Phase::After }, DamageLabels::default(), Dirt::None))
            .collect();
        let report = audit(&records, &DamageProbabilities::none());
        assert!(report.all_pass(), "{}", report.to_table());
        assert_eq!(report.row("frame_damaged").unwrap().observed, 0.0);
        let bad = vec![rec(Phase::Before, DamageLabels { bent: true, ..Default::default() }, Dirt::None)];
        assert!(!audit(&bad, &DamageProbabilities::none()).all_pass());
    }
}
