//! Segmentation quality (per-class IoU, mIoU) and representation alignment
//! (retrieval curves).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::seq::index;

use crate::error::{Error, Result};
use crate::grid::{LabelMap, IGNORE_LABEL};
use crate::model::SegmentationModel;
use crate::norm::DomainTag;
use crate::rng::Rng;

/// Pixel counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel whose ground truth is not [`IGNORE_LABEL`].
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.dims() != truth.dims() {
            return Err(Error::shape(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.dims(),
                truth.dims()
            )));
        }
        let k = self.classes;
        for (p, t) in pred.data().iter().zip(truth.data()) {
            if *t == IGNORE_LABEL {
                continue;
            }
            for l in [*p, *t] {
                if l as usize >= k {
                    return Err(Error::Label { label: l, classes: k });
                }
            }
            self.counts[*t as usize * k + *p as usize] += 1;
        }
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the union is empty.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..self.classes).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.classes).map(|t| self.get(t, c)).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

/// Mean of the defined entries; `0` when none is defined.
pub fn mean_defined(ious: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Per-class IoU and mIoU over paired label maps.
pub fn miou(predictions: &[LabelMap], ground_truth: &[LabelMap], classes: usize) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} ground-truth maps",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (p, t) in predictions.iter().zip(ground_truth) {
        cm.accumulate(p, t)?;
    }
    Ok(EvalReport::from_confusion(&cm))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalCurve {
    /// `(m, average number of sources among the m nearest neighbors)`.
    pub points: Vec<(usize, f64)>,
    pub n_source: usize,
    pub n_target: usize,
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For every target vector, the `m` nearest members of the pool
/// `targets ++ sources` (Euclidean, the query itself excluded, ties broken
/// by pool index) are inspected and the sources among them counted; the
/// curve reports the average count for `m = 1..=max_m`.
pub fn retrieval_curve(source: &[Vec<f64>], target: &[Vec<f64>], max_m: usize) -> Result<RetrievalCurve> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("retrieval needs non-empty source and target sets"));
    }
    let pool_len = source.len() + target.len();
    if max_m == 0 || max_m >= pool_len {
        return Err(Error::invalid(format!(
            "max_m {max_m} must lie in [1, {pool_len})"
        )));
    }
    let dim = target[0].len();
    if source.iter().chain(target).any(|v| v.len() != dim) {
        return Err(Error::shape("representation vectors differ in length"));
    }
    let pool = |i: usize| -> &[f64] {
        if i < target.len() {
            &target[i]
        } else {
            &source[i - target.len()]
        }
    };
    let mut totals = vec![0u64; max_m];
    for (q, query) in target.iter().enumerate() {
        let mut heap = BinaryHeap::with_capacity(max_m + 1);
        for i in (0..pool_len).filter(|i| *i != q) {
            let cand = Candidate {
                dist: squared_distance(query, pool(i)),
                index: i,
            };
            if heap.len() < max_m {
                heap.push(cand);
            } else if cand < *heap.peek().expect("non-empty") {
                heap.pop();
                heap.push(cand);
            }
        }
        let nearest = heap.into_sorted_vec();
        let mut seen = 0u64;
        for (m, c) in nearest.iter().enumerate() {
            seen += u64::from(c.index >= target.len());
            totals[m] += seen;
        }
    }
    let points = totals
        .iter()
        .enumerate()
        .map(|(i, t)| (i + 1, *t as f64 / target.len() as f64))
        .collect();
    Ok(RetrievalCurve {
        points,
        n_source: source.len(),
        n_target: target.len(),
    })
}

/// Mean over `m` of `|avg(m) - m/2| / (m/2)`; `0` is perfect alignment.
pub fn alignment_deviation(curve: &RetrievalCurve) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::invalid("empty retrieval curve"));
    }
    let sum: f64 = curve
        .points
        .iter()
        .map(|(m, a)| {
            let half = *m as f64 / 2.0;
            (a - half).abs() / half
        })
        .sum();
    Ok(sum / curve.points.len() as f64)
}

/// `n` distinct flat positions out of `available`, ascending.
pub fn sample_positions(available: usize, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 || n > available {
        return Err(Error::invalid(format!(
            "cannot sample {n} of {available} representation positions"
        )));
    }
    let mut picks = index::sample(rng, available, n).into_vec();
    picks.sort_unstable();
    Ok(picks)
}

/// Evaluation-mode representation vectors at `n` grid positions drawn
/// uniformly without replacement across all images.
pub fn sample_representations(
    model: &SegmentationModel,
    images: &crate::grid::Grid4,
    tag: DomainTag,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let s = images.shape();
    let picks = sample_positions(s.n * s.h * s.w, n, rng)?;
    let z = model.representations(images, tag)?;
    let c = z.shape().c;
    Ok(picks
        .into_iter()
        .map(|p| z.data()[p * c..(p + 1) * c].to_vec())
        .collect())
}

/// Per-class IoU, mIoU and optional retrieval summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub retrieval: Option<RetrievalCurve>,
    pub alignment_deviation: Option<f64>,
}

impl EvalReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let per_class_iou = cm.per_class_iou();
        Self {
            miou: mean_defined(&per_class_iou),
            per_class_iou,
            retrieval: None,
            alignment_deviation: None,
        }
    }

    pub fn with_retrieval(mut self, curve: RetrievalCurve) -> Result<Self> {
        self.alignment_deviation = Some(alignment_deviation(&curve)?);
        self.retrieval = Some(curve);
        Ok(self)
    }

    /// Three header-identified tables (`class,iou`, `m,avg_source`,
    /// `miou,alignment_deviation,n_source,n_target`) followed by
    /// `# config_hash=<hash>`. Undefined values are empty fields.
    pub fn write_csv<W: Write>(&self, mut out: W, config_hash: &str) -> Result<()> {
        {
            let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut out);
            w.write_record(["class", "iou"])?;
            for (k, iou) in self.per_class_iou.iter().enumerate() {
                w.write_record([k.to_string(), opt(*iou)])?;
            }
            w.write_record(["m", "avg_source"])?;
            if let Some(c) = &self.retrieval {
                for (m, a) in &c.points {
                    w.write_record([m.to_string(), a.to_string()])?;
                }
            }
            w.write_record(["miou", "alignment_deviation", "n_source", "n_target"])?;
            let (ns, nt) = self
                .retrieval
                .as_ref()
                .map(|c| (c.n_source.to_string(), c.n_target.to_string()))
                .unwrap_or_default();
            w.write_record([self.miou.to_string(), opt(self.alignment_deviation), ns, nt])?;
            w.flush()?;
        }
        writeln!(out, "# config_hash={config_hash}")?;
        Ok(())
    }

    /// Parses [`EvalReport::write_csv`] output; returns the report and the
    /// config hash when present.
    pub fn read_csv<R: Read>(input: R) -> Result<(Self, Option<String>)> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text)?;
        let hash = text
            .lines()
            .filter_map(|l| l.strip_prefix("# config_hash="))
            .next_back()
            .map(str::to_string);
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let bad = |m: String| Error::Format(format!("eval report: {m}"));
        let mut section = "";
        let mut ious = Vec::new();
        let mut points = Vec::new();
        let mut summary = None;
        for rec in r.records() {
            let rec = rec?;
            let fields: Vec<&str> = rec.iter().collect();
            match fields.first().copied() {
                Some("class") => section = "class",
                Some("m") => section = "m",
                Some("miou") => section = "miou",
                _ => match section {
                    "class" if fields.len() == 2 => ious.push(parse_opt(fields[1]).map_err(bad)?),
                    "m" if fields.len() == 2 => points.push((
                        fields[0].parse::<usize>().map_err(|e| bad(e.to_string()))?,
                        fields[1].parse::<f64>().map_err(|e| bad(e.to_string()))?,
                    )),
                    "miou" if fields.len() == 4 && summary.is_none() => {
                        summary = Some((
                            fields[0].parse::<f64>().map_err(|e| bad(e.to_string()))?,
                            parse_opt(fields[1]).map_err(bad)?,
                            fields[2].to_string(),
                            fields[3].to_string(),
                        ))
                    }
                    _ => return Err(bad(format!("unexpected row {fields:?}"))),
                },
            }
        }
        let (miou, dev, ns, nt) = summary.ok_or_else(|| bad("missing summary row".into()))?;
        let retrieval = if points.is_empty() {
            None
        } else {
            Some(RetrievalCurve {
                points,
                n_source: ns.parse().map_err(|_| bad("bad n_source".into()))?,
                n_target: nt.parse().map_err(|_| bad("bad n_target".into()))?,
            })
        };
        Ok((
            Self {
                per_class_iou: ious,
                miou,
                retrieval,
                alignment_deviation: dev,
            },
            hash,
        ))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| format!("{e}"))
    }
}
