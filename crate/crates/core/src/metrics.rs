//! Classification accuracy and (non-interpolated) average precision.
//!
//! Tie rules: the predicted class is the lowest-index maximum score; when
//! ranking videos for AP, equal scores are ordered by ascending video id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ensemble::ScoreTable;
use crate::error::{Error, Result};
use crate::features::VideoSample;
use crate::numcore::argmax;

/// Multi-hot ground truth per video id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    labels: BTreeMap<String, Vec<bool>>,
}

impl GroundTruth {
    pub fn new(labels: BTreeMap<String, Vec<bool>>) -> Self {
        GroundTruth { labels }
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a VideoSample>) -> Self {
        GroundTruth {
            labels: samples.into_iter().map(|s| (s.id.clone(), s.label.clone())).collect(),
        }
    }

    pub fn from_classes<'a>(pairs: impl IntoIterator<Item = (&'a str, usize)>, classes: usize) -> Self {
        let labels = pairs
            .into_iter()
            .map(|(id, c)| {
                let mut l = vec![false; classes];
                l[c] = true;
                (id.to_string(), l)
            })
            .collect();
        GroundTruth { labels }
    }

    pub fn get(&self, id: &str) -> Option<&[bool]> {
        self.labels.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Single class of `id`, or an error if the label is not one-hot.
    pub fn class_of(&self, id: &str) -> Result<usize> {
        let l = self.get(id).ok_or_else(|| Error::Alignment {
            difference: vec![id.to_string()],
        })?;
        let mut pos = l.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i);
        match (pos.next(), pos.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(Error::Argument(format!("video `{id}` does not have exactly one positive label"))),
        }
    }

    pub fn is_single_label(&self) -> bool {
        self.labels.values().all(|l| l.iter().filter(|&&b| b).count() == 1)
    }

    /// Checks that `table` covers exactly the labelled ids.
    pub fn check_aligned(&self, table: &ScoreTable) -> Result<()> {
        let ours: BTreeSet<&str> = self.labels.keys().map(String::as_str).collect();
        let theirs: BTreeSet<&str> = table.ids().iter().map(String::as_str).collect();
        let difference: Vec<String> = ours.symmetric_difference(&theirs).map(|s| s.to_string()).collect();
        if !difference.is_empty() {
            return Err(Error::Alignment { difference });
        }
        if let Some((id, l)) = self.labels.iter().find(|(_, l)| l.len() != table.num_classes()) {
            return Err(Error::shape(
                "ground truth",
                format!("{} classes in scores", table.num_classes()),
                format!("label of length {} for `{id}`", l.len()),
            ));
        }
        Ok(())
    }
}

/// Fraction of videos whose top-scoring class is the true class.
pub fn accuracy(scores: &ScoreTable, truth: &GroundTruth) -> Result<f64> {
    truth.check_aligned(scores)?;
    if scores.is_empty() {
        return Err(Error::Argument("accuracy of an empty score table".into()));
    }
    let mut correct = 0usize;
    for (id, row) in scores.rows() {
        if argmax(row) == truth.class_of(id)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / scores.len() as f64)
}

/// Mean over positive videos of precision at that video's rank. `None` when
/// there is no positive.
pub fn average_precision(scores: &[f64], labels: &[bool], ids: &[&str]) -> Result<Option<f64>> {
    if scores.len() != labels.len() || scores.len() != ids.len() {
        return Err(Error::shape(
            "average_precision",
            format!("{} scores", scores.len()),
            format!("{} labels, {} ids", labels.len(), ids.len()),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(ids[b])));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

/// Per-class AP over every video in the table.
pub fn per_class_ap(scores: &ScoreTable, truth: &GroundTruth) -> Result<Vec<Option<f64>>> {
    truth.check_aligned(scores)?;
    let ids: Vec<&str> = scores.ids().iter().map(String::as_str).collect();
    (0..scores.num_classes())
        .map(|c| {
            let col: Vec<f64> = scores.rows().map(|(_, r)| r[c]).collect();
            let lab: Vec<bool> = ids.iter().map(|id| truth.get(id).unwrap()[c]).collect();
            average_precision(&col, &lab, &ids)
        })
        .collect()
}

/// Mean of the defined APs; classes without positives are skipped with a
/// warning.
pub fn mean_ap(aps: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    let missing = aps.len() - defined.len();
    if missing > 0 {
        log::warn!("{missing} class(es) have no positive videos and are excluded from mAP");
    }
    if defined.is_empty() {
        return Err(Error::Data("no class has a positive video; mAP is undefined".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub ap: Option<f64>,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub samples: usize,
    /// Present when every video has exactly one label.
    pub accuracy: Option<f64>,
    pub classes: Vec<ClassRow>,
    pub map: Option<f64>,
    /// `confusion[true][predicted]`, single-label data only.
    pub confusion: Option<Vec<Vec<usize>>>,
}

pub fn evaluate(scores: &ScoreTable, truth: &GroundTruth) -> Result<EvalReport> {
    truth.check_aligned(scores)?;
    let c = scores.num_classes();
    let single = truth.is_single_label() && !scores.is_empty();
    let (acc, confusion) = if single {
        let mut conf = vec![vec![0usize; c]; c];
        for (id, row) in scores.rows() {
            conf[truth.class_of(id)?][argmax(row)] += 1;
        }
        (Some(accuracy(scores, truth)?), Some(conf))
    } else {
        (None, None)
    };
    let aps = per_class_ap(scores, truth)?;
    let map = if aps.iter().any(Option::is_some) { Some(mean_ap(&aps)?) } else { None };
    let classes = aps
        .iter()
        .enumerate()
        .map(|(k, ap)| ClassRow {
            class: scores.class_names()[k].clone(),
            ap: *ap,
            positives: scores.ids().iter().filter(|id| truth.get(id).unwrap()[k]).count(),
        })
        .collect();
    Ok(EvalReport {
        model: scores.model().to_string(),
        samples: scores.len(),
        accuracy: acc,
        classes,
        map,
        confusion,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}", self.model)?;
        writeln!(f, "samples: {}", self.samples)?;
        match self.accuracy {
            Some(a) => writeln!(f, "accuracy: {a:.6}")?,
            None => writeln!(f, "accuracy: n/a (multi-label)")?,
        }
        match self.map {
            Some(m) => writeln!(f, "mAP: {m:.6}")?,
            None => writeln!(f, "mAP: n/a")?,
        }
        writeln!(f, "class\tAP\tpositives")?;
        for row in &self.classes {
            match row.ap {
                Some(ap) => writeln!(f, "{}\t{ap:.6}\t{}", row.class, row.positives)?,
                None => writeln!(f, "{}\t-\t{}", row.class, row.positives)?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, Vec<f64>)]) -> ScoreTable {
        let c = rows[0].1.len();
        ScoreTable::new(
            "t",
            (0..c).map(|k| format!("c{k}")).collect(),
            rows.iter().map(|(id, r)| (id.to_string(), r.clone())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ap_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true], &["a", "b", "c"]).unwrap().unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ap_perfect_and_absent() {
        let ap = average_precision(&[0.1, 0.9, 0.8], &[false, true, true], &["a", "b", "c"]).unwrap();
        assert_eq!(ap, Some(1.0));
        assert_eq!(average_precision(&[0.1, 0.2], &[false, false], &["a", "b"]).unwrap(), None);
    }

    #[test]
    fn ap_ties_break_by_id() {
        // equal scores: "a" ranks before "b"
        let ap = average_precision(&[0.5, 0.5], &[false, true], &["a", "b"]).unwrap().unwrap();
        assert_eq!(ap, 0.5);
        let ap = average_precision(&[0.5, 0.5], &[false, true], &["b", "a"]).unwrap().unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn mean_ap_cases() {
        assert_eq!(mean_ap(&[Some(0.7)]).unwrap(), 0.7);
        assert_eq!(mean_ap(&[Some(1.0), Some(0.0)]).unwrap(), 0.5);
        assert_eq!(mean_ap(&[Some(1.0), None, Some(0.0)]).unwrap(), 0.5);
        assert!(mean_ap(&[None]).is_err());
    }

    #[test]
    fn accuracy_counts() {
        let t = table(&[("a", vec![0.9, 0.1]), ("b", vec![0.2, 0.8]), ("c", vec![0.6, 0.4])]);
        let truth = GroundTruth::from_classes([("a", 0), ("b", 1), ("c", 1)], 2);
        assert!((accuracy(&t, &truth).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let perfect = GroundTruth::from_classes([("a", 0), ("b", 1), ("c", 0)], 2);
        assert_eq!(accuracy(&t, &perfect).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_requires_alignment() {
        let t = table(&[("a", vec![0.9, 0.1])]);
        let truth = GroundTruth::from_classes([("z", 0)], 2);
        match accuracy(&t, &truth) {
            Err(Error::Alignment { difference }) => assert_eq!(difference, vec!["a", "z"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_is_consistent() {
        let t = table(&[("a", vec![0.9, 0.1]), ("b", vec![0.2, 0.8]), ("c", vec![0.6, 0.4])]);
        let truth = GroundTruth::from_classes([("a", 0), ("b", 1), ("c", 1)], 2);
        let r = evaluate(&t, &truth).unwrap();
        let aps: Vec<f64> = r.classes.iter().map(|c| c.ap.unwrap()).collect();
        assert!((r.map.unwrap() - aps.iter().sum::<f64>() / 2.0).abs() < 1e-12);
        assert_eq!(r.confusion.as_ref().unwrap(), &vec![vec![1, 0], vec![1, 1]]);
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(r.to_string().contains("accuracy: 0.666667"));
    }
}
