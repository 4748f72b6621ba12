//! Datasets, the feature-label metric, parsing, and perturbations.
//!
//! A dataset is an ordered list of samples `xi_i = (x_i, y_i)`; index order is
//! stable and sample `i` carries the Dirac mass `delta_{xi_i}` of the induced
//! empirical distribution. Distances between samples use the feature-label
//! metric `d(xi, xi') = ||x - x'|| + (gamma/2) |y - y'|`.

use std::fmt;
use std::io::{BufRead, Write};

use rand_distr::{Distribution, Normal};

use crate::error::WdroError;
use crate::rng::substream;
use crate::Result;

const TAG_GAUSS: u64 = 0x6761_7573;
const TAG_FLIP: u64 = 0x666c_6970;
const TAG_BLOBS: u64 = 0x626c_6f62;

/// Learning task; fixes the admissible label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Labels restricted to {-1, +1}.
    Classification,
    /// Real-valued labels.
    Regression,
}

/// One data point `xi = (x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// An indexed sample collection inducing the empirical distribution.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    dim: usize,
    task: Task,
}

impl Dataset {
    /// Build a dataset, checking the invariants: at least one sample, a
    /// common feature dimension, and labels in {-1, +1} for classification.
    pub fn new(samples: Vec<LabeledSample>, task: Task) -> Result<Self> {
        if samples.is_empty() {
            return Err(WdroError::Task("no samples".into()));
        }
        let dim = samples[0].x.len();
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(WdroError::Dim {
                    expected: dim,
                    got: s.x.len(),
                });
            }
            if task == Task::Classification && s.y != 1.0 && s.y != -1.0 {
                return Err(WdroError::Task(format!(
                    "classification label at index {i} must be -1 or +1, got {}",
                    s.y
                )));
            }
        }
        Ok(Dataset { samples, dim, task })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &LabeledSample {
        &self.samples[i]
    }
}

/// Feature norm choice for the metric and its dual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        }
    }

    /// Dual norm: L1 <-> Linf, L2 self-dual.
    pub fn dual(&self) -> Norm {
        match self {
            Norm::L1 => Norm::Linf,
            Norm::L2 => Norm::L2,
            Norm::Linf => Norm::L1,
        }
    }

    /// `max { ||u|| : ||u||_2 <= 1 }` over `dim` coordinates; converts an L2
    /// ball radius into a bound under this norm.
    pub fn max_over_unit_l2_ball(&self, dim: usize) -> f64 {
        match self {
            Norm::L1 => (dim as f64).sqrt(),
            Norm::L2 | Norm::Linf => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Norm> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            other => Err(WdroError::Config(format!(
                "unknown norm '{other}' (expected l1|l2|linf)"
            ))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L1 => write!(f, "l1"),
            Norm::L2 => write!(f, "l2"),
            Norm::Linf => write!(f, "linf"),
        }
    }
}

/// Ground metric on samples: `||x - x'|| + (gamma/2) |y - y'|` with a
/// selectable feature norm, plus the Wasserstein order `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSpec {
    pub feature_norm: Norm,
    pub gamma: f64,
    pub p: u32,
}

impl MetricSpec {
    pub fn new(feature_norm: Norm, gamma: f64, p: u32) -> Result<Self> {
        if gamma.is_nan() || gamma <= 0.0 {
            return Err(WdroError::Domain(format!("gamma must be > 0, got {gamma}")));
        }
        if p < 1 {
            return Err(WdroError::Domain("Wasserstein order p must be >= 1".into()));
        }
        Ok(MetricSpec {
            feature_norm,
            gamma,
            p,
        })
    }

    pub fn distance(&self, a: &LabeledSample, b: &LabeledSample) -> f64 {
        let diff: Vec<f64> = a.x.iter().zip(&b.x).map(|(u, v)| u - v).collect();
        self.feature_norm.eval(&diff) + 0.5 * self.gamma * (a.y - b.y).abs()
    }
}

fn map_labels_classification(samples: &mut [LabeledSample]) -> Result<()> {
    let mut distinct: Vec<f64> = Vec::new();
    for s in samples.iter() {
        if !distinct.contains(&s.y) {
            distinct.push(s.y);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if distinct.len() > 2 {
        return Err(WdroError::Task(format!(
            "classification data has {} distinct labels, expected at most 2",
            distinct.len()
        )));
    }
    // Already canonical labels stay untouched so that write -> parse is the
    // identity; otherwise the raw labels map ascending to (-1, +1).
    if distinct.iter().all(|&d| d == 1.0 || d == -1.0) {
        return Ok(());
    }
    for s in samples.iter_mut() {
        s.y = if distinct.len() == 1 || s.y == distinct[1] {
            1.0
        } else {
            -1.0
        };
    }
    Ok(())
}

/// Parse LIBSVM text (`<label> <index>:<value> ...`, 1-based sparse indices)
/// into a dense dataset. The dimension is the largest index seen; for
/// classification the raw labels map ascending to (-1, +1).
pub fn parse_libsvm<R: BufRead>(reader: R, task: Task) -> Result<Dataset> {
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        let label_tok = parts.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| WdroError::Parse {
            line: lineno,
            msg: format!("invalid label '{label_tok}'"),
        })?;
        let mut feats: Vec<(usize, f64)> = Vec::new();
        for tok in parts {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| WdroError::Parse {
                line: lineno,
                msg: format!("expected <index>:<value>, got '{tok}'"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| WdroError::Parse {
                line: lineno,
                msg: format!("invalid feature index '{idx_s}'"),
            })?;
            if idx == 0 {
                return Err(WdroError::Parse {
                    line: lineno,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val_s.parse().map_err(|_| WdroError::Parse {
                line: lineno,
                msg: format!("invalid feature value '{val_s}'"),
            })?;
            if feats.iter().any(|&(i, _)| i == idx) {
                return Err(WdroError::Parse {
                    line: lineno,
                    msg: format!("duplicate feature index {idx}"),
                });
            }
            dim = dim.max(idx);
            feats.push((idx, val));
        }
        rows.push((label, feats));
    }
    if rows.is_empty() {
        return Err(WdroError::Task("no samples".into()));
    }
    let mut samples: Vec<LabeledSample> = rows
        .into_iter()
        .map(|(y, feats)| {
            let mut x = vec![0.0; dim];
            for (idx, val) in feats {
                x[idx - 1] = val;
            }
            LabeledSample { x, y }
        })
        .collect();
    if task == Task::Classification {
        map_labels_classification(&mut samples)?;
    }
    Dataset::new(samples, task)
}

/// Write a dataset densely in LIBSVM format. All coordinates are emitted with
/// 17 significant digits, so `parse_libsvm(write_libsvm(ds))` round-trips
/// bit-exactly (including the dimension).
pub fn write_libsvm<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    for s in ds.samples() {
        match ds.task() {
            Task::Classification => {
                if s.y > 0.0 {
                    write!(w, "+1")?;
                } else {
                    write!(w, "-1")?;
                }
            }
            Task::Regression => write!(w, "{:.16e}", s.y)?,
        }
        for (j, v) in s.x.iter().enumerate() {
            write!(w, " {}:{:.16e}", j + 1, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parse a numeric CSV with the label in column `label_col` (0-based) and the
/// remaining columns as features in file order.
pub fn parse_csv<R: BufRead>(
    reader: R,
    label_col: usize,
    has_header: bool,
    task: Task,
) -> Result<Dataset> {
    let mut samples: Vec<LabeledSample> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if lineno == 1 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match width {
            None => {
                if label_col >= cells.len() {
                    return Err(WdroError::Parse {
                        line: lineno,
                        msg: format!(
                            "label column {} out of range for {} columns",
                            label_col,
                            cells.len()
                        ),
                    });
                }
                width = Some(cells.len());
            }
            Some(w) if w != cells.len() => {
                return Err(WdroError::Parse {
                    line: lineno,
                    msg: format!("ragged row: expected {} columns, got {}", w, cells.len()),
                });
            }
            _ => {}
        }
        let mut x = Vec::with_capacity(cells.len() - 1);
        let mut y = 0.0;
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| WdroError::Parse {
                line: lineno,
                msg: format!("non-numeric cell '{}' at column {}", cell.trim(), col + 1),
            })?;
            if col == label_col {
                y = v;
            } else {
                x.push(v);
            }
        }
        samples.push(LabeledSample { x, y });
    }
    if samples.is_empty() {
        return Err(WdroError::Task("no samples".into()));
    }
    if task == Task::Classification {
        map_labels_classification(&mut samples)?;
    }
    Dataset::new(samples, task)
}

/// Per-coordinate affine scaling record `(min, range)` produced by
/// [`normalize`]; apply it to held-out data with [`Scaling::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub per_coord: Vec<(f64, f64)>,
}

impl Scaling {
    /// Apply the recorded map `x -> (x - min) / range` (constant coordinates,
    /// stored with range 0, map to 0).
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.per_coord.len() {
            return Err(WdroError::Dim {
                expected: self.per_coord.len(),
                got: ds.dim(),
            });
        }
        let samples = ds
            .samples()
            .iter()
            .map(|s| {
                let x = s
                    .x
                    .iter()
                    .zip(&self.per_coord)
                    .map(|(v, &(min, range))| if range > 0.0 { (v - min) / range } else { 0.0 })
                    .collect();
                LabeledSample { x, y: s.y }
            })
            .collect();
        Dataset::new(samples, ds.task())
    }

    /// One `min range` line per coordinate, 17 significant digits.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for &(min, range) in &self.per_coord {
            writeln!(w, "{:.16e} {:.16e}", min, range)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Scaling> {
        let mut per_coord = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_ascii_whitespace();
            let parse = |tok: Option<&str>| -> Result<f64> {
                tok.and_then(|t| t.parse().ok()).ok_or(WdroError::Parse {
                    line: lineno + 1,
                    msg: "expected 'min range'".into(),
                })
            };
            per_coord.push((parse(it.next())?, parse(it.next())?));
        }
        if per_coord.is_empty() {
            return Err(WdroError::Task("empty scaling record".into()));
        }
        Ok(Scaling { per_coord })
    }
}

/// Min-max normalize each feature coordinate to [0, 1]; constant coordinates
/// map to 0. Returns the scaled dataset and the scaling record.
pub fn normalize(ds: &Dataset) -> (Dataset, Scaling) {
    let m = ds.dim();
    let mut mins = vec![f64::INFINITY; m];
    let mut maxs = vec![f64::NEG_INFINITY; m];
    for s in ds.samples() {
        for (j, &v) in s.x.iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    let per_coord: Vec<(f64, f64)> = mins
        .iter()
        .zip(&maxs)
        .map(|(&min, &max)| (min, if max > min { max - min } else { 0.0 }))
        .collect();
    let scaling = Scaling { per_coord };
    let scaled = scaling.apply(ds).expect("dimensions match by construction");
    (scaled, scaling)
}

/// Add i.i.d. N(0, std^2) noise to every feature coordinate; labels are
/// untouched. Deterministic given `seed`.
pub fn perturb_gaussian(ds: &Dataset, std: f64, seed: u64) -> Result<Dataset> {
    if std < 0.0 {
        return Err(WdroError::Domain(format!(
            "noise std must be >= 0, got {std}"
        )));
    }
    let mut rng = substream(seed, &[TAG_GAUSS]);
    let normal = Normal::new(0.0, std).expect("std validated");
    let samples = ds
        .samples()
        .iter()
        .map(|s| LabeledSample {
            x: s.x.iter().map(|v| v + normal.sample(&mut rng)).collect(),
            y: s.y,
        })
        .collect();
    Dataset::new(samples, ds.task())
}

fn flip_count(rate: f64, n: usize) -> usize {
    // floor(rate * n); the 1e-9 guard keeps decimal rates like 0.3 * 10 from
    // landing one below the mathematical floor.
    ((rate * n as f64) + 1e-9).floor() as usize
}

/// Negate the labels of exactly `floor(rate * n)` distinct indices chosen
/// uniformly without replacement. Classification only.
pub fn flip_labels(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if ds.task() != Task::Classification {
        return Err(WdroError::Task("flip_labels requires classification".into()));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(WdroError::Domain(format!(
            "flip rate must be in [0, 1], got {rate}"
        )));
    }
    let n = ds.len();
    let k = flip_count(rate, n).min(n);
    let mut rng = substream(seed, &[TAG_FLIP]);
    let chosen = rand::seq::index::sample(&mut rng, n, k);
    let mut samples = ds.samples().to_vec();
    for i in chosen.iter() {
        samples[i].y = -samples[i].y;
    }
    Dataset::new(samples, Task::Classification)
}

/// Two isotropic Gaussian clusters at `±(separation/2) e_1` with labels ±1 by
/// cluster (balanced up to one) and a `label_noise` fraction of labels
/// flipped afterwards. Deterministic given `seed`.
pub fn synth_blobs(
    n: usize,
    m: usize,
    separation: f64,
    label_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 || m < 1 {
        return Err(WdroError::Domain(
            "synth_blobs requires n >= 2 and m >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(WdroError::Domain(format!(
            "label_noise must be in [0, 1], got {label_noise}"
        )));
    }
    let mut rng = substream(seed, &[TAG_BLOBS]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n_pos = n - n / 2;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (center, y) = if i < n_pos {
            (separation / 2.0, 1.0)
        } else {
            (-separation / 2.0, -1.0)
        };
        let mut x: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng)).collect();
        x[0] += center;
        samples.push(LabeledSample { x, y });
    }
    let ds = Dataset::new(samples, Task::Classification)?;
    if label_noise > 0.0 {
        let k = flip_count(label_noise, n).min(n);
        let mut rng2 = substream(seed, &[TAG_BLOBS, TAG_FLIP]);
        let chosen = rand::seq::index::sample(&mut rng2, n, k);
        let mut samples = ds.samples().to_vec();
        for i in chosen.iter() {
            samples[i].y = -samples[i].y;
        }
        return Dataset::new(samples, Task::Classification);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn metric(norm: Norm, gamma: f64) -> MetricSpec {
        MetricSpec::new(norm, gamma, 1).unwrap()
    }

    #[test]
    fn libsvm_basic() {
        let text = "+1 1:2.0 3:1.5\n-1 2:0.5\n";
        let ds = parse_libsvm(Cursor::new(text), Task::Classification).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.sample(0).x, vec![2.0, 0.0, 1.5]);
        assert_eq!(ds.sample(0).y, 1.0);
        assert_eq!(ds.sample(1).x, vec![0.0, 0.5, 0.0]);
        assert_eq!(ds.sample(1).y, -1.0);
    }

    #[test]
    fn libsvm_empty_stream_errors() {
        let err = parse_libsvm(Cursor::new(""), Task::Classification).unwrap_err();
        assert!(err.to_string().contains("no samples"));
    }

    #[test]
    fn libsvm_label_mapping_ascending() {
        let text = "1 1:1\n3 1:2\n1 1:3\n";
        let ds = parse_libsvm(Cursor::new(text), Task::Classification).unwrap();
        assert_eq!(ds.sample(0).y, -1.0);
        assert_eq!(ds.sample(1).y, 1.0);
        assert_eq!(ds.sample(2).y, -1.0);
    }

    #[test]
    fn libsvm_three_labels_is_task_error() {
        let text = "1 1:1\n2 1:2\n3 1:3\n";
        let err = parse_libsvm(Cursor::new(text), Task::Classification).unwrap_err();
        assert!(matches!(err, WdroError::Task(_)));
    }

    #[test]
    fn libsvm_malformed_line_reports_line_number() {
        let text = "+1 1:1.0\n-1 oops\n";
        match parse_libsvm(Cursor::new(text), Task::Classification) {
            Err(WdroError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_basic_and_header() {
        let ds = parse_csv(
            Cursor::new("1.0,2.0,1\n0.0,1.0,-1\n"),
            2,
            false,
            Task::Classification,
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.sample(0).x, vec![1.0, 2.0]);

        let ds = parse_csv(
            Cursor::new("a,b,label\n1.0,2.0,1\n0.0,1.0,-1\n"),
            2,
            true,
            Task::Classification,
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn csv_ragged_row_errors() {
        let err = parse_csv(
            Cursor::new("1.0,2.0,1\n0.0,1\n"),
            2,
            false,
            Task::Classification,
        )
        .unwrap_err();
        assert!(err.to_string().contains("ragged"));
    }

    #[test]
    fn csv_non_numeric_cell_reports_position() {
        match parse_csv(
            Cursor::new("1.0,x,1\n"),
            2,
            false,
            Task::Classification,
        ) {
            Err(WdroError::Parse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("column 2"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn normalize_minmax() {
        let ds = Dataset::new(
            vec![
                LabeledSample { x: vec![0.0], y: 1.0 },
                LabeledSample { x: vec![2.0], y: 1.0 },
                LabeledSample { x: vec![4.0], y: -1.0 },
            ],
            Task::Classification,
        )
        .unwrap();
        let (scaled, rec) = normalize(&ds);
        assert_eq!(scaled.sample(0).x[0], 0.0);
        assert_eq!(scaled.sample(1).x[0], 0.5);
        assert_eq!(scaled.sample(2).x[0], 1.0);
        assert_eq!(rec.per_coord, vec![(0.0, 4.0)]);
    }

    #[test]
    fn normalize_constant_coordinate_maps_to_zero() {
        let ds = Dataset::new(
            vec![
                LabeledSample { x: vec![3.0], y: 1.0 },
                LabeledSample { x: vec![3.0], y: -1.0 },
            ],
            Task::Classification,
        )
        .unwrap();
        let (scaled, rec) = normalize(&ds);
        assert_eq!(scaled.sample(0).x[0], 0.0);
        assert_eq!(scaled.sample(1).x[0], 0.0);
        assert_eq!(rec.per_coord[0].1, 0.0);
    }

    #[test]
    fn normalize_unit_range_identity() {
        let ds = Dataset::new(
            vec![
                LabeledSample { x: vec![0.0, 0.25], y: 1.0 },
                LabeledSample { x: vec![1.0, 1.0], y: 1.0 },
                LabeledSample { x: vec![0.5, 0.0], y: -1.0 },
            ],
            Task::Classification,
        )
        .unwrap();
        let (scaled, _) = normalize(&ds);
        for (s, t) in scaled.samples().iter().zip(ds.samples()) {
            for (a, b) in s.x.iter().zip(&t.x) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn scaling_round_trips_through_text() {
        let rec = Scaling {
            per_coord: vec![(0.125, 3.5), (-2.0, 0.0)],
        };
        let mut buf = Vec::new();
        rec.write(&mut buf).unwrap();
        let back = Scaling::read(Cursor::new(buf)).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn perturb_zero_std_is_identity() {
        let ds = synth_blobs(10, 3, 2.0, 0.0, 1).unwrap();
        let out = perturb_gaussian(&ds, 0.0, 9).unwrap();
        for (a, b) in out.samples().iter().zip(ds.samples()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn perturb_is_deterministic() {
        let ds = synth_blobs(10, 3, 2.0, 0.0, 1).unwrap();
        let a = perturb_gaussian(&ds, 1.0, 4).unwrap();
        let b = perturb_gaussian(&ds, 1.0, 4).unwrap();
        for (u, v) in a.samples().iter().zip(b.samples()) {
            assert_eq!(u, v);
        }
    }

    #[test]
    fn perturb_noise_mean_within_standard_error() {
        // Monte-Carlo check: the added noise at std=1 over 10^4 draws has
        // sample mean within 4 / sqrt(10^4) of zero.
        let n = 10_000;
        let ds = Dataset::new(
            (0..n)
                .map(|_| LabeledSample { x: vec![0.0], y: 1.0 })
                .collect(),
            Task::Classification,
        )
        .unwrap();
        let out = perturb_gaussian(&ds, 1.0, 123).unwrap();
        let mean: f64 = out.samples().iter().map(|s| s.x[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean = {mean}");
    }

    #[test]
    fn flip_rate_zero_and_one() {
        let ds = synth_blobs(8, 2, 2.0, 0.0, 3).unwrap();
        let same = flip_labels(&ds, 0.0, 5).unwrap();
        for (a, b) in same.samples().iter().zip(ds.samples()) {
            assert_eq!(a.y, b.y);
        }
        let flipped = flip_labels(&ds, 1.0, 5).unwrap();
        for (a, b) in flipped.samples().iter().zip(ds.samples()) {
            assert_eq!(a.y, -b.y);
        }
    }

    #[test]
    fn flip_floor_rule() {
        let ds = synth_blobs(20, 2, 2.0, 0.0, 3).unwrap();
        let out = flip_labels(&ds, 0.1, 7).unwrap();
        let flips = out
            .samples()
            .iter()
            .zip(ds.samples())
            .filter(|(a, b)| a.y != b.y)
            .count();
        assert_eq!(flips, 2);
    }

    #[test]
    fn flip_regression_is_task_error() {
        let ds = Dataset::new(
            vec![LabeledSample { x: vec![1.0], y: 0.5 }],
            Task::Regression,
        )
        .unwrap();
        assert!(matches!(
            flip_labels(&ds, 0.5, 1),
            Err(WdroError::Task(_))
        ));
    }

    #[test]
    fn blobs_two_samples_one_per_cluster() {
        let ds = synth_blobs(2, 2, 10.0, 0.0, 11).unwrap();
        assert_eq!(ds.sample(0).y, 1.0);
        assert_eq!(ds.sample(1).y, -1.0);
    }

    #[test]
    fn blobs_same_seed_identical() {
        let a = synth_blobs(30, 3, 4.0, 0.1, 42).unwrap();
        let b = synth_blobs(30, 3, 4.0, 0.1, 42).unwrap();
        for (u, v) in a.samples().iter().zip(b.samples()) {
            assert_eq!(u, v);
        }
    }

    #[test]
    fn blobs_wide_separation_linearly_separable() {
        // With separation 10 and no label noise a separator along e_1 reaches
        // zero hinge loss: margin y * theta^T x with theta = (2/sep') e_1.
        let ds = synth_blobs(60, 2, 10.0, 0.0, 7).unwrap();
        let worst_pos = ds
            .samples()
            .iter()
            .map(|s| s.y * s.x[0])
            .fold(f64::INFINITY, f64::min);
        assert!(worst_pos > 0.0, "clusters overlap unexpectedly");
        let theta0 = 1.0 / worst_pos; // scales the worst margin to exactly 1
        let hinge_sum: f64 = ds
            .samples()
            .iter()
            .map(|s| (1.0 - s.y * theta0 * s.x[0]).max(0.0))
            .sum();
        assert_eq!(hinge_sum, 0.0);
    }

    #[test]
    fn libsvm_round_trip_is_identity() {
        let ds = synth_blobs(25, 4, 3.0, 0.2, 9).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&ds, &mut buf).unwrap();
        let back = parse_libsvm(Cursor::new(buf), Task::Classification).unwrap();
        assert_eq!(back.dim(), ds.dim());
        for (a, b) in back.samples().iter().zip(ds.samples()) {
            assert_eq!(a.y, b.y);
            for (u, v) in a.x.iter().zip(&b.x) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn libsvm_regression_round_trip() {
        let ds = Dataset::new(
            vec![
                LabeledSample { x: vec![0.1, -2.5], y: 3.25 },
                LabeledSample { x: vec![1e-300, 7.0], y: -0.125 },
            ],
            Task::Regression,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_libsvm(&ds, &mut buf).unwrap();
        let back = parse_libsvm(Cursor::new(buf), Task::Regression).unwrap();
        for (a, b) in back.samples().iter().zip(ds.samples()) {
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            for (u, v) in a.x.iter().zip(&b.x) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    fn arb_sample(m: usize) -> impl Strategy<Value = LabeledSample> {
        (
            proptest::collection::vec(-50.0..50.0f64, m),
            prop_oneof![Just(-1.0), Just(1.0)],
        )
            .prop_map(|(x, y)| LabeledSample { x, y })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn metric_axioms(
            a in arb_sample(3),
            b in arb_sample(3),
            c in arb_sample(3),
            norm in prop_oneof![Just(Norm::L1), Just(Norm::L2), Just(Norm::Linf)],
        ) {
            let metric = metric(norm, 7.0);
            let dab = metric.distance(&a, &b);
            let dba = metric.distance(&b, &a);
            let dac = metric.distance(&a, &c);
            let dcb = metric.distance(&c, &b);
            prop_assert_eq!(dab, dba);
            prop_assert_eq!(metric.distance(&a, &a), 0.0);
            prop_assert!(dab <= dac + dcb + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn libsvm_write_parse_round_trip(
            samples in proptest::collection::vec(arb_sample(4), 1..20),
        ) {
            let ds = Dataset::new(samples, Task::Classification).unwrap();
            let mut buf = Vec::new();
            write_libsvm(&ds, &mut buf).unwrap();
            let back = parse_libsvm(Cursor::new(buf), Task::Classification).unwrap();
            prop_assert_eq!(back.dim(), ds.dim());
            for (a, b) in back.samples().iter().zip(ds.samples()) {
                prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
                for (u, v) in a.x.iter().zip(&b.x) {
                    prop_assert_eq!(u.to_bits(), v.to_bits());
                }
            }
        }
    }
}
