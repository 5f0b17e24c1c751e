//! Series frames, CSV ingestion, chronological splits, sliding windows and a
//! synthetic generator with known components.

mod csvio;
pub mod synth;

use std::ops::Range;

pub use csvio::{load_csv, write_csv, CsvOptions, MissingPolicy};
pub use synth::{synth_generate, Sinusoid, SynthOutput, SynthSpec, TrendSpec};

use crate::error::{Error, Result};

/// A multivariate series `N × M`, stored row-major (one row per time step).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    /// Header of the leading timestamp column.
    pub index_name: String,
    pub names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    values: Vec<f64>,
}

impl SeriesFrame {
    pub fn new(names: Vec<String>, timestamps: Option<Vec<String>>, values: Vec<f64>) -> Result<Self> {
        let m = names.len();
        if m == 0 {
            return Err(Error::Data("a frame needs at least one variable".into()));
        }
        if values.len() % m != 0 {
            return Err(Error::Data(format!(
                "{} values do not fill whole rows of {m} variables",
                values.len()
            )));
        }
        let n = values.len() / m;
        if let Some(ts) = &timestamps {
            if ts.len() != n {
                return Err(Error::Data(format!("{} timestamps for {n} rows", ts.len())));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "frame value at row {}, column `{}`",
                pos / m,
                names[pos % m]
            )));
        }
        Ok(Self {
            index_name: "date".into(),
            names,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.n_vars() + j]
    }

    /// Rows `[start, end)` as one contiguous row-major slice.
    pub fn rows(&self, range: Range<usize>) -> &[f64] {
        let m = self.n_vars();
        &self.values[range.start * m..range.end * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.n_vars()).copied().collect()
    }

    /// Copy of rows `[start, end)`.
    pub fn slice(&self, range: Range<usize>) -> SeriesFrame {
        SeriesFrame {
            index_name: self.index_name.clone(),
            names: self.names.clone(),
            timestamps: self.timestamps.as_ref().map(|ts| ts[range.clone()].to_vec()),
            values: self.rows(range).to_vec(),
        }
    }

    /// Same layout, new values (e.g. after scaling).
    pub fn with_values(&self, values: Vec<f64>) -> Result<SeriesFrame> {
        let mut out = SeriesFrame::new(self.names.clone(), self.timestamps.clone(), values)?;
        if out.len() != self.len() {
            return Err(Error::Data(format!("expected {} rows, got {}", self.len(), out.len())));
        }
        out.index_name = self.index_name.clone();
        Ok(out)
    }
}

/// How the series is cut into train, validation and test segments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSpec {
    /// Fractions of the rows; val and test get the floor, train the remainder.
    Ratios(f64, f64, f64),
    /// Explicit boundaries: train is `[0, train_end)`, val `[train_end, val_end)`,
    /// test the rest.
    Bounds { train_end: usize, val_end: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios(0.7, 0.1, 0.2)
    }
}

/// Contiguous chronological segments of one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Segments {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn lengths(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

impl SplitSpec {
    /// Checks what can be checked without knowing the series length.
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitSpec::Ratios(a, b, c) => {
                if [a, b, c].iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return Err(Error::Config {
                        key: "split".into(),
                        msg: format!("ratios must be non-negative, got ({a}, {b}, {c})"),
                    });
                }
                if (a + b + c - 1.0).abs() > 1e-9 {
                    return Err(Error::Config {
                        key: "split".into(),
                        msg: format!("ratios must sum to 1, got {}", a + b + c),
                    });
                }
            }
            SplitSpec::Bounds { train_end, val_end } => {
                if train_end > val_end {
                    return Err(Error::Config {
                        key: "split_bounds".into(),
                        msg: format!("train_end {train_end} exceeds val_end {val_end}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Splits `n` rows chronologically.
pub fn chrono_split(n: usize, spec: SplitSpec) -> Result<Segments> {
    spec.validate()?;
    let (n_train, n_val) = match spec {
        SplitSpec::Ratios(_, b, c) => {
            // the small slack keeps products like 10·0.2 = 2.0000000000000004 exact
            let floor = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
            let (val, test) = (floor(b), floor(c));
            (n - val - test, val)
        }
        SplitSpec::Bounds { train_end, val_end } => {
            if !(train_end <= val_end && val_end <= n) {
                return Err(Error::Config {
                    key: "split_bounds".into(),
                    msg: format!("need train_end <= val_end <= {n}, got {train_end}, {val_end}"),
                });
            }
            (train_end, val_end - train_end)
        }
    };
    Ok(Segments {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Sliding windows over a frame, kept as start offsets. Window `i` reads
/// input rows `[s_i, s_i + T)` and target rows `[s_i + T, s_i + T + H)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSet {
    pub split: Split,
    pub lookback: usize,
    pub horizon: usize,
    pub starts: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn input<'a>(&self, frame: &'a SeriesFrame, i: usize) -> &'a [f64] {
        let s = self.starts[i];
        frame.rows(s..s + self.lookback)
    }

    pub fn target<'a>(&self, frame: &'a SeriesFrame, i: usize) -> &'a [f64] {
        let s = self.starts[i] + self.lookback;
        frame.rows(s..s + self.horizon)
    }

    /// Last row (exclusive) touched by any window.
    pub fn extent(&self) -> usize {
        self.starts.last().map_or(0, |s| s + self.lookback + self.horizon)
    }
}

/// Number of windows `floor((N − T − H)/stride) + 1` for `N ≥ T + H`.
pub fn window_count(n: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    if n < lookback + horizon || stride == 0 {
        return 0;
    }
    (n - lookback - horizon) / stride + 1
}

/// All windows lying entirely inside `segment` of the frame.
pub fn make_windows(
    segment: Range<usize>,
    lookback: usize,
    horizon: usize,
    stride: usize,
    split: Split,
) -> Result<WindowSet> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Data(format!(
            "lookback, horizon and stride must be positive (got {lookback}, {horizon}, {stride})"
        )));
    }
    let n = segment.len();
    if n < lookback + horizon {
        return Err(Error::Data(format!(
            "{} segment has {n} rows but a window needs at least T+H = {}",
            split.name(),
            lookback + horizon
        )));
    }
    let count = window_count(n, lookback, horizon, stride);
    let starts = (0..count).map(|i| segment.start + i * stride).collect();
    Ok(WindowSet {
        split,
        lookback,
        horizon,
        starts,
    })
}

/// Per-variable standardization fitted on one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation of `rows`; constant columns get
    /// unit scale.
    pub fn fit(frame: &SeriesFrame, rows: Range<usize>) -> Result<Scaler> {
        if rows.is_empty() {
            return Err(Error::Data("cannot fit the scaler on an empty segment".into()));
        }
        let m = frame.n_vars();
        let n = rows.len() as f64;
        let data = frame.rows(rows);
        let mut mean = vec![0.0; m];
        for row in data.chunks(m) {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; m];
        for row in data.chunks(m) {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn identity(m: usize) -> Scaler {
        Scaler {
            mean: vec![0.0; m],
            std: vec![1.0; m],
        }
    }

    pub fn transform(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        let m = frame.n_vars();
        let values = frame
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % m]) / self.std[i % m])
            .collect();
        frame.with_values(values)
    }

    /// Maps row-major `[rows, M]` values back to the original units.
    pub fn inverse(&self, values: &[f64]) -> Vec<f64> {
        let m = self.mean.len();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % m] + self.mean[i % m])
            .collect()
    }
}

/// A frame standardized with train statistics plus its windows.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub frame: SeriesFrame,
    pub scaler: Scaler,
    pub segments: Segments,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl Dataset {
    /// Splits `raw`, fits the scaler on train and builds windows for each
    /// segment. Train windows use `train_stride`, val/test stride 1. A val or
    /// test segment too short for one window yields an empty set and a
    /// warning; an unusable train segment is an error.
    pub fn prepare(
        raw: &SeriesFrame,
        split: SplitSpec,
        lookback: usize,
        horizon: usize,
        train_stride: usize,
        warnings: &mut Vec<String>,
    ) -> Result<Dataset> {
        let segments = chrono_split(raw.len(), split)?;
        let scaler = Scaler::fit(raw, segments.train.clone())?;
        let frame = scaler.transform(raw)?;
        let train = make_windows(segments.train.clone(), lookback, horizon, train_stride, Split::Train)?;
        let mut optional = |split: Split| -> Result<WindowSet> {
            let range = segments.get(split);
            if range.len() < lookback + horizon {
                warnings.push(format!(
                    "{} segment has {} rows, fewer than T+H = {}; it gets no windows",
                    split.name(),
                    range.len(),
                    lookback + horizon
                ));
                return Ok(WindowSet {
                    split,
                    lookback,
                    horizon,
                    starts: Vec::new(),
                });
            }
            make_windows(range, lookback, horizon, 1, split)
        };
        let val = optional(Split::Val)?;
        let test = optional(Split::Test)?;
        Ok(Dataset {
            frame,
            scaler,
            segments,
            train,
            val,
            test,
        })
    }

    pub fn windows(&self, split: Split) -> &WindowSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize, m: usize) -> SeriesFrame {
        let names = (0..m).map(|j| format!("v{j}")).collect();
        SeriesFrame::new(names, None, (0..n * m).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn split_examples() {
        assert_eq!(chrono_split(10, SplitSpec::default()).unwrap().lengths(), (7, 1, 2));
        assert_eq!(chrono_split(10, SplitSpec::Ratios(1.0, 0.0, 0.0)).unwrap().lengths(), (10, 0, 0));
        assert_eq!(chrono_split(100, SplitSpec::default()).unwrap().lengths(), (70, 10, 20));
        let s = chrono_split(20, SplitSpec::Bounds { train_end: 12, val_end: 15 }).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..12, 12..15, 15..20));
        assert!(chrono_split(10, SplitSpec::Ratios(0.5, 0.1, 0.1)).is_err());
        assert!(chrono_split(10, SplitSpec::Ratios(1.2, -0.2, 0.0)).is_err());
        assert!(chrono_split(10, SplitSpec::Bounds { train_end: 8, val_end: 11 }).is_err());
    }

    #[test]
    fn window_examples() {
        let w = make_windows(0..30, 20, 10, 1, Split::Train).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(make_windows(0..31, 20, 10, 1, Split::Train).unwrap().len(), 2);
        assert_eq!(make_windows(0..200, 96, 96, 1, Split::Train).unwrap().len(), 9);
        let err = make_windows(0..29, 20, 10, 1, Split::Val).unwrap_err();
        assert!(err.to_string().contains("30"), "{err}");
    }

    #[test]
    fn window_slices_read_the_right_rows() {
        let f = frame(12, 2);
        let w = make_windows(3..12, 4, 2, 2, Split::Test).unwrap();
        assert_eq!(w.starts, vec![3, 5]);
        assert_eq!(w.input(&f, 1), &[10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0]);
        assert_eq!(w.target(&f, 1), &[18.0, 19.0, 20.0, 21.0]);
        assert_eq!(w.extent(), 11);
    }

    #[test]
    fn short_validation_segment_warns() {
        let mut warnings = Vec::new();
        let ds = Dataset::prepare(&frame(100, 2), SplitSpec::default(), 16, 8, 1, &mut warnings).unwrap();
        assert!(ds.val.is_empty() && ds.test.is_empty());
        assert_eq!(warnings.len(), 2);
        assert!(warnings[0].starts_with("val segment has 10 rows"));
        assert_eq!(ds.train.len(), 70 - 24 + 1);
    }

    #[test]
    fn scaler_uses_train_statistics() {
        let f = SeriesFrame::new(vec!["a".into(), "b".into()], None, vec![1.0, 5.0, 3.0, 5.0, 100.0, 7.0]).unwrap();
        let s = Scaler::fit(&f, 0..2).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        let t = s.transform(&f).unwrap();
        assert_eq!(t.values(), &[-1.0, 0.0, 1.0, 0.0, 98.0, 2.0]);
        assert_eq!(s.inverse(t.values()), f.values());
    }

    #[test]
    fn frame_rejects_non_finite_values() {
        let err = SeriesFrame::new(vec!["a".into()], None, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
