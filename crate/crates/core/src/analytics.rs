//! Opinion statistics and correlation metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dimensions::{axis_index, registry, AXIS_COUNT, BENCHMARK_ORDER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub axis_code: String,
    pub subject_id: String,
    pub opinion: i8,
}

/// Raw ternary opinions plus the set of subjects whose opinions count.
#[derive(Debug, Clone)]
pub struct AnnotationTable {
    rows: Vec<AnnotationRecord>,
    accepted: BTreeSet<String>,
    /// (video, axis) -> accepted opinions, in row order.
    index: BTreeMap<(String, usize), Vec<i8>>,
}

impl AnnotationTable {
    pub fn new(rows: Vec<AnnotationRecord>, accepted: BTreeSet<String>) -> Result<Self> {
        let mut index: BTreeMap<(String, usize), Vec<i8>> = BTreeMap::new();
        for r in &rows {
            if !(-1..=1).contains(&r.opinion) {
                return Err(Error::InvalidArgument(format!(
                    "opinion {} for video `{}` is not in {{-1, 0, 1}}",
                    r.opinion, r.video_id
                )));
            }
            let axis = axis_index(&r.axis_code)?;
            if accepted.contains(&r.subject_id) {
                index.entry((r.video_id.clone(), axis)).or_default().push(r.opinion);
            }
        }
        Ok(Self { rows, accepted, index })
    }

    /// Every subject that appears in `rows` is accepted.
    pub fn accept_all(rows: Vec<AnnotationRecord>) -> Result<Self> {
        let accepted = rows.iter().map(|r| r.subject_id.clone()).collect();
        Self::new(rows, accepted)
    }

    /// Reads `video_id,axis_code,subject_id,opinion` rows with a header line.
    pub fn from_csv<R: Read>(reader: R, accepted: Option<BTreeSet<String>>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<AnnotationRecord>, _>>()?;
        match accepted {
            Some(set) => Self::new(rows, set),
            None => Self::accept_all(rows),
        }
    }

    pub fn rows(&self) -> &[AnnotationRecord] {
        &self.rows
    }

    pub fn accepted_subjects(&self) -> &BTreeSet<String> {
        &self.accepted
    }

    /// Videos with at least one accepted opinion, sorted.
    pub fn video_ids(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.index.keys().map(|(v, _)| v).collect();
        set.into_iter().cloned().collect()
    }

    pub fn opinions(&self, video_id: &str, axis: &str) -> Result<&[i8]> {
        let a = axis_index(axis)?;
        self.index
            .get(&(video_id.to_string(), a))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NoOpinion {
                video: video_id.to_string(),
                axis: axis.to_string(),
            })
    }

    fn axis_groups(&self, axis: &str) -> Result<Vec<&[i8]>> {
        let a = axis_index(axis)?;
        let groups: Vec<&[i8]> = self
            .index
            .iter()
            .filter(|((_, k), _)| *k == a)
            .map(|(_, v)| v.as_slice())
            .collect();
        if groups.is_empty() {
            return Err(Error::Empty(format!("no accepted opinions for axis {axis}")));
        }
        Ok(groups)
    }

    /// Mean of the accepted opinions for one video and axis.
    pub fn mos(&self, video_id: &str, axis: &str) -> Result<f64> {
        Ok(mean_opinion(self.opinions(video_id, axis)?))
    }

    /// Absolute mean response: mean of |MOS| over the videos rated on `axis`.
    pub fn amr(&self, axis: &str) -> Result<f64> {
        let groups = self.axis_groups(axis)?;
        Ok(groups.iter().map(|g| mean_opinion(g).abs()).sum::<f64>() / groups.len() as f64)
    }

    /// Absolute raw response: fraction of accepted raw opinions that are not neutral.
    pub fn arr(&self, axis: &str) -> Result<f64> {
        let groups = self.axis_groups(axis)?;
        let total: usize = groups.iter().map(|g| g.len()).sum();
        let non_neutral: usize = groups.iter().map(|g| g.iter().filter(|&&o| o != 0).count()).sum();
        Ok(non_neutral as f64 / total as f64)
    }

    pub fn tendency(&self, axis: &str) -> Result<Tendency> {
        let groups = self.axis_groups(axis)?;
        Tendency::from_opinions(groups.into_iter().flatten().copied())
    }

    /// Tendency pooled over several axes.
    pub fn tendency_over(&self, axes: &[&str]) -> Result<Tendency> {
        let mut all = Vec::new();
        for a in axes {
            for g in self.axis_groups(a)? {
                all.extend_from_slice(g);
            }
        }
        Tendency::from_opinions(all)
    }

    /// `N x 16` MOS matrix over the videos rated on every axis, registry column order.
    pub fn mos_matrix(&self) -> Result<ScoreTable> {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for v in self.video_ids() {
            let row: Option<Vec<f64>> = (0..AXIS_COUNT)
                .map(|a| self.index.get(&(v.clone(), a)).map(|o| mean_opinion(o)))
                .collect();
            if let Some(row) = row {
                ids.push(v);
                values.extend(row);
            }
        }
        if ids.is_empty() {
            return Err(Error::Empty("no video is rated on all axes".into()));
        }
        let values = Array2::from_shape_vec((ids.len(), AXIS_COUNT), values).expect("row width");
        ScoreTable::new(ids, values)
    }

    /// MOS for every rated video on one axis, sorted by video id.
    pub fn axis_mos(&self, axis: &str) -> Result<Vec<(String, f64)>> {
        let a = axis_index(axis)?;
        Ok(self
            .index
            .iter()
            .filter(|((_, k), _)| *k == a)
            .map(|((v, _), o)| (v.clone(), mean_opinion(o)))
            .collect())
    }
}

fn mean_opinion(opinions: &[i8]) -> f64 {
    opinions.iter().map(|&o| o as f64).sum::<f64>() / opinions.len() as f64
}

/// Positive-to-negative opinion ratio with neutrals removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tendency {
    pub positive: usize,
    pub negative: usize,
    /// `positive / negative`; `f64::INFINITY` when there are no negatives.
    pub ratio: f64,
    pub infinite: bool,
}

impl Tendency {
    pub fn from_opinions(opinions: impl IntoIterator<Item = i8>) -> Result<Self> {
        let (mut positive, mut negative) = (0, 0);
        for o in opinions {
            match o {
                1 => positive += 1,
                -1 => negative += 1,
                _ => {}
            }
        }
        if positive + negative == 0 {
            return Err(Error::Empty("no non-neutral opinions".into()));
        }
        let infinite = negative == 0;
        let ratio = if infinite {
            f64::INFINITY
        } else {
            positive as f64 / negative as f64
        };
        Ok(Self {
            positive,
            negative,
            ratio,
            infinite,
        })
    }
}

fn check_pair(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: x.len() });
    }
    Ok(())
}

/// Pearson linear correlation.
pub fn plcc(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    check_pair(x, y)?;
    let mx = x.mean().expect("non-empty");
    let my = y.mean().expect("non-empty");
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn fractional_ranks(x: ArrayView1<'_, f64>) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson over fractional ranks.
pub fn srcc(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    check_pair(x, y)?;
    let rx = ndarray::Array1::from(fractional_ranks(x));
    let ry = ndarray::Array1::from(fractional_ranks(y));
    plcc(rx.view(), ry.view())
}

fn column_names(count: usize) -> Vec<String> {
    if count == AXIS_COUNT {
        registry().iter().map(|s| s.code.to_string()).collect()
    } else {
        (0..count).map(|k| format!("column {k}")).collect()
    }
}

/// Pairwise PLCC between columns; symmetric with an exact unit diagonal.
pub fn correlation_map(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let k = m.ncols();
    if m.nrows() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: m.nrows(),
        });
    }
    let names = column_names(k);
    let constant: Vec<String> = (0..k)
        .filter(|&c| {
            let col = m.column(c);
            col.iter().all(|&v| v == col[0])
        })
        .map(|c| names[c].clone())
        .collect();
    if !constant.is_empty() {
        return Err(Error::ConstantColumns(constant));
    }
    let mut out = Array2::eye(k);
    for a in 0..k {
        for b in a + 1..k {
            let r = plcc(m.column(a), m.column(b))?;
            out[[a, b]] = r;
            out[[b, a]] = r;
        }
    }
    Ok(out)
}

/// Per-video scores for all axes, registry column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub ids: Vec<String>,
    pub values: Array2<f64>,
}

impl ScoreTable {
    pub fn new(ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if ids.len() != values.nrows() || values.ncols() != AXIS_COUNT {
            return Err(Error::Shape(format!(
                "{} ids for a {}x{} score table",
                ids.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Alignment("duplicate video ids in score table".into()));
        }
        Ok(Self { ids, values })
    }

    /// Rows reordered to follow `ids`; every id must be present.
    pub fn aligned_to(&self, ids: &[String]) -> Result<Self> {
        let pos: HashMap<&String, usize> = self.ids.iter().enumerate().map(|(k, v)| (v, k)).collect();
        if ids.len() != self.ids.len() {
            return Err(Error::Alignment(format!(
                "{} videos vs {} videos",
                self.ids.len(),
                ids.len()
            )));
        }
        let mut values = Array2::zeros((ids.len(), AXIS_COUNT));
        for (k, id) in ids.iter().enumerate() {
            let src = *pos
                .get(id)
                .ok_or_else(|| Error::Alignment(format!("video `{id}` missing from score table")))?;
            values.row_mut(k).assign(&self.values.row(src));
        }
        Self::new(ids.to_vec(), values)
    }

    /// Header `video_id` plus the 16 codes; missing values are written as `NaN`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["video_id".to_string()];
        header.extend(registry().iter().map(|s| s.code.to_string()));
        w.write_record(&header)?;
        for (k, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.values.row(k).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv); columns may come in any order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut columns = vec![None; AXIS_COUNT];
        let mut id_col = None;
        for (k, h) in headers.iter().enumerate() {
            if h == "video_id" {
                id_col = Some(k);
            } else {
                columns[axis_index(h)?] = Some(k);
            }
        }
        let id_col = id_col.ok_or_else(|| Error::InvalidArgument("score table lacks a video_id column".into()))?;
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec[id_col].to_string());
            for c in &columns {
                let v = match c {
                    Some(k) if !rec[*k].is_empty() => rec[*k]
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("bad score `{}`: {e}", &rec[*k])))?,
                    _ => f64::NAN,
                };
                values.push(v);
            }
        }
        let n = ids.len();
        Self::new(ids, Array2::from_shape_vec((n, AXIS_COUNT), values).expect("row width"))
    }
}

/// Entry `(p, s)` is the PLCC between predicted axis `p` and subjective axis `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossDimension {
    pub matrix: Array2<f64>,
    pub row_argmax: Vec<usize>,
}

impl CrossDimension {
    /// Rows whose diagonal entry is at least every other entry in the row.
    pub fn diagonal_dominant_rows(&self) -> Vec<bool> {
        self.row_argmax
            .iter()
            .enumerate()
            .map(|(p, &best)| self.matrix[[p, p]] >= self.matrix[[p, best]])
            .collect()
    }
}

pub fn cross_dimension_matrix(predictions: &ScoreTable, subjective: &ScoreTable) -> Result<CrossDimension> {
    let pred = predictions.aligned_to(&subjective.ids)?;
    let mut matrix = Array2::zeros((AXIS_COUNT, AXIS_COUNT));
    for p in 0..AXIS_COUNT {
        for s in 0..AXIS_COUNT {
            matrix[[p, s]] = plcc(pred.values.column(p), subjective.values.column(s))?;
        }
    }
    let row_argmax = (0..AXIS_COUNT)
        .map(|p| {
            (0..AXIS_COUNT)
                .max_by(|&a, &b| matrix[[p, a]].total_cmp(&matrix[[p, b]]))
                .expect("non-empty row")
        })
        .collect();
    Ok(CrossDimension { matrix, row_argmax })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMetrics {
    pub code: String,
    /// `None` when fewer than two paired samples exist or either side is constant.
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub per_axis: Vec<AxisMetrics>,
    pub n_samples: usize,
}

impl MetricsResult {
    pub fn get(&self, code: &str) -> Option<&AxisMetrics> {
        self.per_axis.iter().find(|m| m.code == code)
    }

    /// Per-axis mean over several results (e.g. random splits), ignoring missing entries.
    pub fn mean(results: &[MetricsResult]) -> Result<MetricsResult> {
        let first = results.first().ok_or_else(|| Error::Empty("no metric results".into()))?;
        let avg = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        let per_axis = first
            .per_axis
            .iter()
            .enumerate()
            .map(|(k, m)| AxisMetrics {
                code: m.code.clone(),
                srcc: avg(results.iter().filter_map(|r| r.per_axis[k].srcc).collect()),
                plcc: avg(results.iter().filter_map(|r| r.per_axis[k].plcc).collect()),
                n: results.iter().map(|r| r.per_axis[k].n).sum::<usize>() / results.len(),
            })
            .collect();
        Ok(MetricsResult {
            per_axis,
            n_samples: results.iter().map(|r| r.n_samples).sum::<usize>() / results.len(),
        })
    }
}

/// SRCC/PLCC per axis between aligned predictions and targets. `NaN` targets are skipped.
pub fn evaluate_metrics(predictions: &ScoreTable, targets: &ScoreTable) -> Result<MetricsResult> {
    let pred = predictions.aligned_to(&targets.ids)?;
    if targets.ids.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: targets.ids.len(),
        });
    }
    let per_axis = registry()
        .iter()
        .enumerate()
        .map(|(a, spec)| {
            let (x, y): (Vec<f64>, Vec<f64>) = pred
                .values
                .column(a)
                .iter()
                .zip(targets.values.column(a))
                .filter(|(p, t)| p.is_finite() && t.is_finite())
                .map(|(p, t)| (*p, *t))
                .unzip();
            let (x, y) = (ndarray::Array1::from(x), ndarray::Array1::from(y));
            AxisMetrics {
                code: spec.code.to_string(),
                srcc: srcc(x.view(), y.view()).ok(),
                plcc: plcc(x.view(), y.view()).ok(),
                n: x.len(),
            }
        })
        .collect();
    Ok(MetricsResult {
        per_axis,
        n_samples: targets.ids.len(),
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Benchmark rows (one SRCC and one PLCC line per method) in the benchmark column order.
pub fn write_benchmark_csv<W: Write>(rows: &[(String, MetricsResult)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["method".to_string(), "metric".to_string()];
    header.extend(BENCHMARK_ORDER.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (method, result) in rows {
        for (metric, pick) in [("SRCC", true), ("PLCC", false)] {
            let mut rec = vec![method.clone(), metric.to_string()];
            for code in BENCHMARK_ORDER {
                let m = result.get(code);
                let v = m.and_then(|m| if pick { m.srcc } else { m.plcc });
                rec.push(v.map_or_else(String::new, |x| format!("{x:.6}")));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Space-aligned rendering of the same table.
pub fn write_benchmark_text<W: Write>(rows: &[(String, MetricsResult)], mut writer: W) -> Result<()> {
    let name_width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(6).max(6);
    write!(writer, "{:<name_width$}  {:<6}", "method", "metric")?;
    for code in BENCHMARK_ORDER {
        write!(writer, " {code:>7}")?;
    }
    writeln!(writer)?;
    for (method, result) in rows {
        for (metric, pick) in [("SRCC", true), ("PLCC", false)] {
            write!(writer, "{method:<name_width$}  {metric:<6}")?;
            for code in BENCHMARK_ORDER {
                let v = result.get(code).and_then(|m| if pick { m.srcc } else { m.plcc });
                write!(writer, " {:>7}", fmt_metric(v))?;
            }
            writeln!(writer)?;
        }
    }
    Ok(())
}

/// Numeric matrix with code labels on both axes.
pub fn write_matrix_csv<W: Write>(matrix: ArrayView2<'_, f64>, writer: W) -> Result<()> {
    let names = column_names(matrix.ncols());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (r, row) in matrix.rows().into_iter().enumerate() {
        let mut rec = vec![names.get(r).cloned().unwrap_or_else(|| r.to_string())];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
