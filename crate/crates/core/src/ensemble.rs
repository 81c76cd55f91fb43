//! Score tables and score-level fusion: plain averaging, fixed convex
//! weights, and a simplex grid search for the weights on a validation split.
//!
//! Score file (tab-separated text):
//!
//! ```text
//! # hybridnet scores v1
//! # model: <provenance>
//! id  <class 0>  <class 1>  ...
//! <video id>  <score>  <score>  ...
//! ```
//!
//! Scores are written in shortest round-trip decimal form, so reading a file
//! back yields the exact same `f64` values.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, GroundTruth};

const SCORE_HEADER: &str = "# hybridnet scores v1";

/// Per-video, per-class scores produced by one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    model: String,
    class_names: Vec<String>,
    ids: Vec<String>,
    scores: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ScoreTable {
    pub fn new(model: impl Into<String>, class_names: Vec<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let c = class_names.len();
        if c == 0 {
            return Err(Error::Argument("score table needs at least one class".into()));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut scores = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        for (id, row) in rows {
            if row.len() != c {
                return Err(Error::shape("score table", format!("{c} classes"), format!("row `{id}` with {} scores", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite score for `{id}`")));
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::Data(format!("duplicate video id `{id}` in score table")));
            }
            ids.push(id);
            scores.push(row);
        }
        Ok(ScoreTable {
            model: model.into(),
            class_names,
            ids,
            scores,
            index,
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.scores[i].as_slice())
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.scores.iter().map(Vec::as_slice))
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{SCORE_HEADER}").unwrap();
        writeln!(s, "# model: {}", self.model).unwrap();
        s.push_str("id");
        for c in &self.class_names {
            s.push('\t');
            s.push_str(c);
        }
        s.push('\n');
        for (id, row) in self.rows() {
            s.push_str(id);
            for v in row {
                write!(s, "\t{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(SCORE_HEADER) {
            return Err(format!("missing `{SCORE_HEADER}` header"));
        }
        let model = lines
            .next()
            .and_then(|l| l.strip_prefix("# model: "))
            .ok_or("missing `# model:` line")?
            .to_string();
        let header = lines.next().ok_or("missing column header")?;
        let mut cols = header.split('\t');
        if cols.next() != Some("id") {
            return Err("column header must start with `id`".into());
        }
        let class_names: Vec<String> = cols.map(str::to_string).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap().to_string();
            let row = fields
                .map(|f| f.parse::<f64>().map_err(|e| format!("line {}: {e}", n + 4)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            rows.push((id, row));
        }
        ScoreTable::new(model, class_names, rows).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|m| Error::format(path, m))
    }
}

/// Ids missing from at least one table, or `Ok` when every table holds the
/// same id set and class count.
fn check_alignment(tables: &[&ScoreTable]) -> Result<()> {
    let first = tables.first().ok_or_else(|| Error::Argument("no score tables to fuse".into()))?;
    if let Some(t) = tables.iter().find(|t| t.num_classes() != first.num_classes()) {
        return Err(Error::shape(
            "score fusion",
            format!("{} classes ({})", first.num_classes(), first.model()),
            format!("{} classes ({})", t.num_classes(), t.model()),
        ));
    }
    let union: BTreeSet<&str> = tables.iter().flat_map(|t| t.ids().iter().map(String::as_str)).collect();
    let difference: Vec<String> = union
        .into_iter()
        .filter(|id| tables.iter().any(|t| t.get(id).is_none()))
        .map(str::to_string)
        .collect();
    if !difference.is_empty() {
        return Err(Error::Alignment { difference });
    }
    Ok(())
}

/// Convex combination weights, one per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    /// Normalizes non-negative weights to sum to one.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Argument("no fusion weights".into()));
        }
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Argument(format!("fusion weights must be finite and non-negative: {raw:?}")));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Argument("fusion weights sum to zero".into()));
        }
        Ok(FusionWeights(raw.iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        FusionWeights::new(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn combine(tables: &[&ScoreTable], weights: &[f64], model: String) -> Result<ScoreTable> {
    check_alignment(tables)?;
    let first = tables[0];
    let rows = first
        .ids()
        .iter()
        .map(|id| {
            let mut acc = vec![0.0; first.num_classes()];
            for (t, &w) in tables.iter().zip(weights) {
                for (a, s) in acc.iter_mut().zip(t.get(id).unwrap()) {
                    *a += w * s;
                }
            }
            (id.clone(), acc)
        })
        .collect();
    ScoreTable::new(model, first.class_names().to_vec(), rows)
}

/// Elementwise mean, aligned by video id (output follows the first table's
/// order).
pub fn average_fuse(tables: &[&ScoreTable]) -> Result<ScoreTable> {
    check_alignment(tables)?;
    if tables.len() == 1 {
        return Ok(tables[0].clone());
    }
    let n = tables.len() as f64;
    let model = format!("average({})", tables.iter().map(|t| t.model()).collect::<Vec<_>>().join(","));
    // sum then divide, so identical tables reproduce themselves exactly
    let summed = combine(tables, &vec![1.0; tables.len()], model)?;
    let rows = summed
        .rows()
        .map(|(id, r)| (id.to_string(), r.iter().map(|v| v / n).collect()))
        .collect();
    ScoreTable::new(summed.model().to_string(), summed.class_names().to_vec(), rows)
}

pub fn weighted_fuse(tables: &[&ScoreTable], weights: &FusionWeights) -> Result<ScoreTable> {
    if weights.len() != tables.len() {
        return Err(Error::Argument(format!("{} weights for {} score tables", weights.len(), tables.len())));
    }
    let model = format!(
        "weighted({})",
        tables
            .iter()
            .zip(weights.as_slice())
            .map(|(t, w)| format!("{}:{w}", t.model()))
            .collect::<Vec<_>>()
            .join(",")
    );
    combine(tables, weights.as_slice(), model)
}

/// Per-class min-max rescaling to [0, 1]; constant columns map to 0.
pub fn min_max_normalize(table: &ScoreTable) -> ScoreTable {
    let c = table.num_classes();
    let mut lo = vec![f64::INFINITY; c];
    let mut hi = vec![f64::NEG_INFINITY; c];
    for (_, row) in table.rows() {
        for k in 0..c {
            lo[k] = lo[k].min(row[k]);
            hi[k] = hi[k].max(row[k]);
        }
    }
    let rows = table
        .rows()
        .map(|(id, row)| {
            let r = (0..c)
                .map(|k| if hi[k] > lo[k] { (row[k] - lo[k]) / (hi[k] - lo[k]) } else { 0.0 })
                .collect();
            (id.to_string(), r)
        })
        .collect();
    ScoreTable::new(table.model(), table.class_names().to_vec(), rows).expect("rescaled scores stay valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Map,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "map" | "mAP" => Ok(Metric::Map),
            other => Err(format!("unknown metric `{other}` (expected accuracy or map)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::Map => "mAP",
        })
    }
}

pub fn score_metric(table: &ScoreTable, truth: &GroundTruth, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Accuracy => metrics::accuracy(table, truth),
        Metric::Map => metrics::mean_ap(&metrics::per_class_ap(table, truth)?),
    }
}

/// Result of the weight search.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub weights: FusionWeights,
    pub metric: f64,
    /// Validation metric of each single model.
    pub single: Vec<f64>,
    /// Validation metric of the uniform combination (if on the grid).
    pub uniform: Option<f64>,
}

/// All compositions of `n` into `parts` non-negative parts, lexicographically.
fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(rem: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(rem);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=rem {
            cur.push(k);
            rec(rem - k, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

const METRIC_TIE: f64 = 1e-12;

/// Exhaustive search over the weight simplex with spacing `step` (which must
/// divide 1). Returns the best validation metric; ties go to the weights
/// closest to uniform, then to the lexicographically smallest vector.
pub fn cross_validate_weights(tables: &[&ScoreTable], truth: &GroundTruth, metric: Metric, step: f64) -> Result<CvOutcome> {
    check_alignment(tables)?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Argument(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("grid step {step} does not divide 1")));
    }
    truth.check_aligned(tables[0])?;
    if metric == Metric::Accuracy {
        let classes: BTreeSet<usize> = tables[0].ids().iter().map(|id| truth.class_of(id)).collect::<Result<_>>()?;
        if classes.len() < 2 {
            return Err(Error::Data("validation split contains a single class; accuracy cannot rank weights".into()));
        }
    }

    let m = tables.len();
    let single = tables.iter().map(|t| score_metric(t, truth, metric)).collect::<Result<Vec<_>>>()?;
    let mut best: Option<(f64, f64, Vec<usize>)> = None;
    let mut uniform = None;
    for k in compositions(n, m) {
        let w: Vec<f64> = k.iter().map(|&ki| ki as f64 / n as f64).collect();
        let fused = combine(tables, &w, String::new())?;
        let value = score_metric(&fused, truth, metric)?;
        let dist: f64 = w.iter().map(|x| (x - 1.0 / m as f64).powi(2)).sum();
        if k.iter().all(|&ki| ki * m == n) {
            uniform = Some(value);
        }
        let better = match &best {
            None => true,
            Some((bv, bd, _)) => value > bv + METRIC_TIE || ((value - bv).abs() <= METRIC_TIE && dist < bd - 1e-15),
        };
        if better {
            best = Some((value, dist, k));
        }
    }
    let (value, _, k) = best.expect("the grid is never empty");
    Ok(CvOutcome {
        weights: FusionWeights::new(k.iter().map(|&ki| ki as f64).collect())?,
        metric: value,
        single,
        uniform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(model: &str, rows: &[(&str, [f64; 2])]) -> ScoreTable {
        ScoreTable::new(
            model,
            vec!["a".into(), "b".into()],
            rows.iter().map(|(id, r)| (id.to_string(), r.to_vec())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_and_identical_tables() {
        let t = table("m", &[("x", [0.2, 0.8]), ("y", [0.7, 0.1])]);
        assert_eq!(average_fuse(&[&t]).unwrap(), t);
        let f = average_fuse(&[&t, &t]).unwrap();
        for (id, row) in t.rows() {
            assert_eq!(f.get(id).unwrap(), row);
        }
    }

    #[test]
    fn complementary_tables_average_to_half() {
        let t = table("m", &[("x", [0.2, 0.9]), ("y", [0.65, 0.1])]);
        let rows = t.rows().map(|(id, r)| (id.to_string(), r.iter().map(|v| 1.0 - v).collect())).collect();
        let u = ScoreTable::new("n", t.class_names().to_vec(), rows).unwrap();
        let f = average_fuse(&[&t, &u]).unwrap();
        assert!(f.rows().all(|(_, r)| r.iter().all(|v| (v - 0.5).abs() < 1e-15)));
    }

    #[test]
    fn fusion_aligns_by_id() {
        let t = table("m", &[("x", [0.2, 0.8]), ("y", [0.6, 0.4])]);
        let u = table("n", &[("y", [0.4, 0.6]), ("x", [0.0, 1.0])]);
        let f = average_fuse(&[&t, &u]).unwrap();
        assert_eq!(f.get("x").unwrap(), &[0.1, 0.9]);
        assert_eq!(f.get("y").unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn misaligned_tables_report_difference() {
        let t = table("m", &[("x", [0.2, 0.8]), ("y", [0.6, 0.4])]);
        let u = table("n", &[("x", [0.2, 0.8]), ("z", [0.6, 0.4])]);
        match average_fuse(&[&t, &u]) {
            Err(Error::Alignment { difference }) => assert_eq!(difference, vec!["y", "z"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vertex_weights_select_table() {
        let t = table("m", &[("x", [0.2, 0.8])]);
        let u = table("n", &[("x", [0.9, 0.3])]);
        let f = weighted_fuse(&[&t, &u], &FusionWeights::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(f.get("x").unwrap(), t.get("x").unwrap());
        assert!(weighted_fuse(&[&t, &u], &FusionWeights::new(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn weights_normalize() {
        let w = FusionWeights::new(vec![2.0, 6.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
        assert!(FusionWeights::new(vec![0.0, 0.0]).is_err());
        assert!(FusionWeights::new(vec![-1.0, 2.0]).is_err());
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(10, 1), vec![vec![10]]);
        assert_eq!(compositions(10, 2).len(), 11);
        assert_eq!(compositions(10, 3).len(), 66);
        assert_eq!(compositions(2, 2), vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
    }

    #[test]
    fn cv_prefers_perfect_model() {
        let good = table("good", &[("p", [0.9, 0.1]), ("q", [0.2, 0.8]), ("r", [0.7, 0.3]), ("s", [0.4, 0.6])]);
        let bad = table("bad", &[("p", [0.1, 0.9]), ("q", [0.8, 0.2]), ("r", [0.3, 0.7]), ("s", [0.6, 0.4])]);
        let truth = GroundTruth::from_classes([("p", 0), ("q", 1), ("r", 0), ("s", 1)], 2);
        let out = cross_validate_weights(&[&good, &bad], &truth, Metric::Accuracy, 0.1).unwrap();
        assert_eq!(out.metric, 1.0);
        // every weight with w_good > 0.5 is perfect; closest to uniform is 0.6
        assert!((out.weights.as_slice()[0] - 0.6).abs() < 1e-12);
        let map = cross_validate_weights(&[&good, &bad], &truth, Metric::Map, 0.1).unwrap();
        assert_eq!(map.metric, 1.0);
        assert!(map.weights.as_slice()[0] > 0.5);
    }

    #[test]
    fn cv_single_model_and_degenerate_split() {
        let t = table("m", &[("x", [0.2, 0.8]), ("y", [0.6, 0.4])]);
        let truth = GroundTruth::from_classes([("x", 1), ("y", 0)], 2);
        let out = cross_validate_weights(&[&t], &truth, Metric::Accuracy, 0.1).unwrap();
        assert_eq!(out.weights.as_slice(), &[1.0]);
        let one_class = GroundTruth::from_classes([("x", 1), ("y", 1)], 2);
        assert!(matches!(
            cross_validate_weights(&[&t], &one_class, Metric::Accuracy, 0.1),
            Err(Error::Data(_))
        ));
        assert!(cross_validate_weights(&[&t], &truth, Metric::Accuracy, 0.3).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = ScoreTable::new(
            "lstm-spatial",
            vec!["run".into(), "jump".into()],
            vec![("v1".into(), vec![0.1 + 0.2, 1e-300]), ("v2".into(), vec![1.0 / 3.0, 0.999_999_999_999_9])],
        )
        .unwrap();
        assert_eq!(ScoreTable::from_text(&t.to_text()).unwrap(), t);
        assert!(ScoreTable::from_text("garbage").is_err());
    }
}
