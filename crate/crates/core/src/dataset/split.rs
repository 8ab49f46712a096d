//! Seeded, stratified train/test assignment.
//!
//! Label groups (attribute rows plus object categories) are visited from the
//! rarest to the most common. Each group's not-yet-assigned members are
//! shuffled and enough of them go to train to bring the group's train count to
//! `round(ratio * group_size)`. A group with two or more members is nudged to
//! keep at least one member on each side when its unassigned members allow
//! it. Records carrying no label are split by the running total. A local
//! search then flips or swaps records to bring every group within one
//! sequence of its share and the overall train count to `round(ratio * n)`.
//! Disjoint groups always end within one sequence of their share; the rest
//! is best-effort.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, SequenceRecord, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub assignments: BTreeMap<String, Split>,
    pub warnings: Vec<String>,
}

impl SplitResult {
    pub fn count(&self, split: Split) -> usize {
        self.assignments.values().filter(|s| **s == split).count()
    }
}

/// Stratification labels of one record.
pub fn split_labels(rec: &SequenceRecord) -> Vec<String> {
    let mut labels = rec.attributes.labels();
    if !rec.category.is_empty() {
        labels.push(format!("category:{}", rec.category));
    }
    labels
}

fn round_share(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

struct State {
    ratio: f64,
    rng: ChaCha8Rng,
    assigned: Vec<Option<Split>>,
    done: usize,
    train: usize,
}

impl State {
    fn assign(&mut self, members: &[usize], stratify: bool) {
        let mut fresh: Vec<usize> = members
            .iter()
            .copied()
            .filter(|i| self.assigned[*i].is_none())
            .collect();
        if fresh.is_empty() {
            return;
        }
        fresh.shuffle(&mut self.rng);
        let m = fresh.len();
        let has = |s: Split| members.iter().any(|i| self.assigned[*i] == Some(s));
        let mut k = if stratify {
            let in_train = members
                .iter()
                .filter(|i| self.assigned[**i] == Some(Split::Train))
                .count();
            round_share(self.ratio, members.len())
                .saturating_sub(in_train)
                .min(m)
        } else {
            round_share(self.ratio, self.done + m)
                .saturating_sub(self.train)
                .min(m)
        };
        if stratify && members.len() >= 2 {
            if k == 0 && !has(Split::Train) {
                k = 1;
            }
            if k == m && !has(Split::Test) && m >= 2 {
                k = m - 1;
            } else if k == m && !has(Split::Test) && has(Split::Train) {
                k = 0;
            }
        }
        for (j, i) in fresh.iter().enumerate() {
            self.assigned[*i] = Some(if j < k { Split::Train } else { Split::Test });
        }
        self.done += m;
        self.train += k;
    }
}

/// Lexicographic change in (groups a full sequence or more off their share,
/// distance of the train total from its target, summed squared deviation).
type Delta = (i64, i64, f64);

fn improves(d: Delta) -> bool {
    d.0 < 0 || (d.0 == 0 && (d.1 < 0 || (d.1 == 0 && d.2 < -1e-9)))
}

fn smaller(a: Delta, b: Delta) -> bool {
    a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)))
}

struct Balancer<'a> {
    ratio: f64,
    members: Vec<&'a Vec<usize>>,
    record_groups: Vec<Vec<usize>>,
    train_in: Vec<i64>,
    acc: Vec<i64>,
    touched: Vec<usize>,
}

impl Balancer<'_> {
    fn deviation(&self, g: usize, t: i64) -> f64 {
        t as f64 - self.ratio * self.members[g].len() as f64
    }

    fn stage(&mut self, i: usize, step: i64) {
        for &g in &self.record_groups[i] {
            if self.acc[g] == 0 {
                self.touched.push(g);
            }
            self.acc[g] += step;
        }
    }

    /// Scores the staged group changes and clears them. `None` when a group
    /// would lose its last member on one side.
    fn score(&mut self) -> Option<(i64, f64)> {
        let mut dv = 0;
        let mut ds = 0.0;
        let mut allowed = true;
        for &g in &self.touched {
            let step = std::mem::take(&mut self.acc[g]);
            if step == 0 {
                continue;
            }
            let size = self.members[g].len() as i64;
            let (old, new) = (self.train_in[g], self.train_in[g] + step);
            if size >= 2 && ((old > 0 && new == 0) || (old < size && new == size)) {
                allowed = false;
            }
            let (d0, d1) = (self.deviation(g, old), self.deviation(g, new));
            dv += i64::from(d1.abs() >= 1.0) - i64::from(d0.abs() >= 1.0);
            ds += d1 * d1 - d0 * d0;
        }
        self.touched.clear();
        allowed.then_some((dv, ds))
    }

    fn apply(&mut self, i: usize, step: i64) {
        for &g in &self.record_groups[i] {
            self.train_in[g] += step;
        }
    }
}

/// Local search after the greedy pass. Each round applies the single flip or
/// train/test swap with the best [`Delta`] until none improves. Moves never
/// empty one side of a group of two or more, and records of single-member
/// groups stay in train.
fn rebalance(assigned: &mut [Option<Split>], groups: &BTreeMap<String, Vec<usize>>, ratio: f64) {
    let n = assigned.len();
    let target = round_share(ratio, n) as i64;
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let mut record_groups = vec![Vec::new(); n];
    for (g, m) in members.iter().enumerate() {
        for i in m.iter() {
            record_groups[*i].push(g);
        }
    }
    let pinned: Vec<bool> = record_groups
        .iter()
        .map(|gs| gs.iter().any(|g| members[*g].len() == 1))
        .collect();
    let train_in = members
        .iter()
        .map(|m| {
            m.iter()
                .filter(|i| assigned[**i] == Some(Split::Train))
                .count() as i64
        })
        .collect();
    let mut b = Balancer {
        ratio,
        acc: vec![0; members.len()],
        touched: Vec::new(),
        members,
        record_groups,
        train_in,
    };
    let mut train = assigned
        .iter()
        .filter(|s| **s == Some(Split::Train))
        .count() as i64;

    for _ in 0..4 * n {
        let in_train: Vec<usize> = (0..n)
            .filter(|i| assigned[*i] == Some(Split::Train) && !pinned[*i])
            .collect();
        let in_test: Vec<usize> = (0..n)
            .filter(|i| assigned[*i] == Some(Split::Test))
            .collect();
        let mut best: Option<(Delta, usize, Option<usize>)> = None;
        let mut consider = |delta: Delta, i: usize, j: Option<usize>| {
            if improves(delta) && best.is_none_or(|(d, _, _)| smaller(delta, d)) {
                best = Some((delta, i, j));
            }
        };
        for (&i, step) in in_train
            .iter()
            .map(|i| (i, -1))
            .chain(in_test.iter().map(|i| (i, 1)))
        {
            b.stage(i, step);
            if let Some((dv, ds)) = b.score() {
                let dg = (train + step - target).abs() - (train - target).abs();
                consider((dv, dg, ds), i, None);
            }
        }
        for &i in &in_train {
            for &j in &in_test {
                b.stage(i, -1);
                b.stage(j, 1);
                if let Some((dv, ds)) = b.score() {
                    consider((dv, 0, ds), i, Some(j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        match j {
            None => {
                let step = if assigned[i] == Some(Split::Train) {
                    -1
                } else {
                    1
                };
                assigned[i] = Some(if step > 0 { Split::Train } else { Split::Test });
                b.apply(i, step);
                train += step;
            }
            Some(j) => {
                assigned[i] = Some(Split::Test);
                assigned[j] = Some(Split::Train);
                b.apply(i, -1);
                b.apply(j, 1);
            }
        }
    }
}

pub fn split_dataset(
    records: &[SequenceRecord],
    ratio: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        for label in split_labels(rec) {
            groups.entry(label).or_default().push(i);
        }
    }
    let mut order: Vec<(&String, &Vec<usize>)> = groups.iter().collect();
    order.sort_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| a.0.cmp(b.0)));

    let mut st = State {
        ratio,
        rng: ChaCha8Rng::seed_from_u64(seed),
        assigned: vec![None; records.len()],
        done: 0,
        train: 0,
    };
    let mut warnings = Vec::new();
    let mut unsatisfiable = BTreeSet::new();

    for (label, members) in order {
        if members.len() == 1 {
            let i = members[0];
            unsatisfiable.insert(label.clone());
            warnings.push(format!(
                "UnsatisfiableStratification: {label} has a single sequence ({}); assigned to train",
                records[i].name
            ));
            if st.assigned[i].is_none() {
                st.assigned[i] = Some(Split::Train);
                st.done += 1;
                st.train += 1;
            }
            continue;
        }
        st.assign(members, true);
    }
    let unlabeled: Vec<usize> = (0..records.len())
        .filter(|i| st.assigned[*i].is_none())
        .collect();
    st.assign(&unlabeled, false);
    let mut assigned = st.assigned;
    rebalance(&mut assigned, &groups, ratio);

    for (label, members) in &groups {
        if members.len() < 2 || unsatisfiable.contains(label) {
            continue;
        }
        let in_train = members.iter().any(|i| assigned[*i] == Some(Split::Train));
        let in_test = members.iter().any(|i| assigned[*i] == Some(Split::Test));
        if !(in_train && in_test) {
            warnings.push(format!("{label} is not represented in both splits"));
        }
    }
    let assignments = records
        .iter()
        .zip(assigned)
        .map(|(r, s)| (r.name.clone(), s.expect("every record assigned")))
        .collect();
    Ok(SplitResult {
        assignments,
        warnings,
    })
}
