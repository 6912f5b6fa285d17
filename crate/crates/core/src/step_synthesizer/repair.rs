use std::collections::BTreeMap;

use super::StepCluster;

pub fn multiset(steps: impl IntoIterator<Item = impl AsRef<str>>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in steps {
        *m.entry(s.as_ref().trim().to_string()).or_insert(0) += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub clusters: Vec<StepCluster>,
    pub warnings: Vec<String>,
}

/// Forces `clusters` to hold exactly the steps of `input` as a multiset.
///
/// Steps beyond their count in `input` (duplicates or unknown text) are
/// dropped, missing steps are appended to the last cluster in input order,
/// empty clusters are removed and clusters beyond `hard_max` are merged into
/// the last allowed one.
pub fn repair_clusters(input: &[String], clusters: Vec<StepCluster>, hard_max: usize) -> Repair {
    let mut remaining = multiset(input);
    let mut warnings = Vec::new();
    let mut out: Vec<StepCluster> = Vec::new();
    for (i, c) in clusters.into_iter().enumerate() {
        let mut steps = Vec::new();
        for s in c.steps {
            let s = s.trim().to_string();
            match remaining.get_mut(&s) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    steps.push(s);
                }
                _ => warnings.push(format!("dropped step not in the draft or repeated: {s:?}")),
            }
        }
        if steps.is_empty() {
            warnings.push(format!("removed empty cluster {:?}", c.title));
            continue;
        }
        let title = if c.title.trim().is_empty() { format!("Cluster {}", i + 1) } else { c.title.trim().to_string() };
        out.push(StepCluster { title, steps });
    }
    let mut missing = Vec::new();
    for s in input {
        let s = s.trim().to_string();
        if let Some(n) = remaining.get_mut(&s) {
            if *n > 0 {
                *n -= 1;
                missing.push(s);
            }
        }
    }
    if !missing.is_empty() {
        warnings.push(format!("appended {} missing step(s) to the last cluster", missing.len()));
        match out.last_mut() {
            Some(last) => last.steps.extend(missing),
            None => out.push(StepCluster { title: "Reproduce the Crash".into(), steps: missing }),
        }
    }
    let hard_max = hard_max.max(1);
    if out.len() > hard_max {
        warnings.push(format!("merged {} cluster(s) beyond the limit of {hard_max}", out.len() - hard_max));
        let tail: Vec<String> = out.drain(hard_max..).flat_map(|c| c.steps).collect();
        out[hard_max - 1].steps.extend(tail);
    }
    Repair { clusters: out, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(title: &str, steps: &[&str]) -> StepCluster {
        StepCluster { title: title.into(), steps: steps.iter().map(|s| s.to_string()).collect() }
    }

    fn input(steps: &[&str]) -> Vec<String> {
        steps.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn intact_clusters_pass_through() {
        let r = repair_clusters(&input(&["a", "b", "c"]), vec![c("x", &["a"]), c("y", &["b", "c"])], 6);
        assert_eq!(r.clusters, vec![c("x", &["a"]), c("y", &["b", "c"])]);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn drops_duplicates_and_appends_missing() {
        let r = repair_clusters(&input(&["a", "b", "c", "a"]), vec![c("x", &["a", "a", "a", "zzz"]), c("y", &["b"])], 6);
        assert_eq!(r.clusters, vec![c("x", &["a", "a"]), c("y", &["b", "c"])]);
        assert_eq!(r.warnings.len(), 3);
    }

    #[test]
    fn merges_beyond_hard_max_and_handles_no_clusters() {
        let r = repair_clusters(&input(&["a", "b", "c"]), vec![c("1", &["a"]), c("2", &["b"]), c("3", &["c"])], 2);
        assert_eq!(r.clusters, vec![c("1", &["a"]), c("2", &["b", "c"])]);
        let r = repair_clusters(&input(&["a"]), vec![], 4);
        assert_eq!(r.clusters, vec![c("Reproduce the Crash", &["a"])]);
    }
}
