//! Series ingestion, chronological splitting, normalization and windowing.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{RngStream, Tensor};
use crate::error::{Error, Result};

/// `N` rows by `C` channels of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub timestamps: Option<Vec<String>>,
    /// Row-major `[N, C]`.
    values: Vec<f64>,
    rows: usize,
    pub channel_names: Vec<String>,
}

impl SeriesTable {
    pub fn new(
        values: Vec<f64>,
        rows: usize,
        channel_names: Vec<String>,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        let channels = channel_names.len();
        if channels == 0 {
            return Err(Error::Data("series needs at least one channel".into()));
        }
        if values.len() != rows * channels {
            return Err(Error::Data(format!(
                "{} values do not fill {rows} rows of {channels} channels",
                values.len()
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != rows {
                return Err(Error::Data(format!(
                    "{} timestamps for {rows} rows",
                    ts.len()
                )));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "row {} holds a non-finite value in channel {:?}",
                i / channels,
                channel_names[i % channels]
            )));
        }
        Ok(SeriesTable {
            timestamps,
            values,
            rows,
            channel_names,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channels() + channel]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.channels();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.value(r, channel)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// FNV-1a digest of the raw values; identifies a dataset in reports.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Column index holding timestamps; excluded from the numeric channels.
    pub timestamp_column: Option<usize>,
    pub delimiter: char,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            has_header: true,
            timestamp_column: None,
            delimiter: ',',
        }
    }
}

/// Reads a delimiter-separated numeric file, preserving row order.
///
/// Rows and columns in errors are 1-based file positions (the header, when
/// present, is row 1).
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<SeriesTable> {
    let path = path.as_ref();
    if !opts.delimiter.is_ascii() {
        return Err(Error::Config(format!(
            "delimiter {:?} must be a single ASCII character",
            opts.delimiter
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(opts.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = reader.records();
    let mut names: Option<Vec<String>> = None;
    let mut values = Vec::new();
    let mut timestamps = opts.timestamp_column.map(|_| Vec::new());
    let mut rows = 0;
    let mut width = None;
    let mut file_row = 0;

    if opts.has_header {
        if let Some(rec) = records.next() {
            file_row += 1;
            let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            names = Some(
                rec.iter()
                    .enumerate()
                    .filter(|(i, _)| Some(*i) != opts.timestamp_column)
                    .map(|(_, s)| s.to_string())
                    .collect(),
            );
            width = Some(rec.len());
        }
    }

    for rec in records {
        file_row += 1;
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        match width {
            Some(w) if w != rec.len() => {
                return Err(Error::Data(format!(
                    "row {file_row} has {} fields, expected {w}",
                    rec.len()
                )))
            }
            _ => width = Some(rec.len()),
        }
        for (col, field) in rec.iter().enumerate() {
            if Some(col) == opts.timestamp_column {
                if let Some(ts) = timestamps.as_mut() {
                    ts.push(field.to_string());
                }
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: file_row,
                column: col + 1,
                cell: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {file_row}, column {}: non-finite value {field:?}",
                    col + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }

    if rows == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let channels = values.len() / rows;
    if channels == 0 {
        return Err(Error::Data(format!("{}: no numeric columns", path.display())));
    }
    let names = names.unwrap_or_else(|| (0..channels).map(|i| format!("ch{i}")).collect());
    SeriesTable::new(values, rows, names, timestamps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    /// Statistics over `rows` of the table (population std, floored).
    pub fn fit(table: &SeriesTable, rows: std::ops::Range<usize>) -> Self {
        let n = rows.len().max(1) as f64;
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for c in 0..table.channels() {
            let m = rows.clone().map(|r| table.value(r, c)).sum::<f64>() / n;
            let v = rows
                .clone()
                .map(|r| (table.value(r, c) - m).powi(2))
                .sum::<f64>()
                / n;
            mean.push(m);
            std.push(v.sqrt().max(STD_FLOOR));
        }
        Normalizer { mean, std }
    }

    pub fn normalize(&self, value: f64, channel: usize) -> f64 {
        (value - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, value: f64, channel: usize) -> f64 {
        value * self.std[channel] + self.mean[channel]
    }
}

/// Stride-1 input/target windows from one split, in normalized units.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    pub split: Split,
    /// `[K, T, C]`.
    pub inputs: Tensor<f64>,
    /// `[K, H, C]`.
    pub targets: Tensor<f64>,
    pub normalizer: Normalizer,
    /// Table row at which each window's input starts.
    pub start_rows: Vec<usize>,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.start_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_rows.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.inputs.shape()[2]
    }
}

/// Builds every window fully inside `rows`.
pub fn windows_in(
    table: &SeriesTable,
    rows: std::ops::Range<usize>,
    lookback: usize,
    horizon: usize,
    normalizer: &Normalizer,
    split: Split,
) -> Result<WindowDataset> {
    let span = lookback + horizon;
    if rows.len() < span {
        return Err(Error::Data(format!(
            "{split} split has {} rows, needs at least {span} for one window",
            rows.len()
        )));
    }
    let c = table.channels();
    let count = rows.len() - span + 1;
    let mut inputs = Vec::with_capacity(count * lookback * c);
    let mut targets = Vec::with_capacity(count * horizon * c);
    let mut start_rows = Vec::with_capacity(count);
    for k in 0..count {
        let start = rows.start + k;
        start_rows.push(start);
        for r in start..start + lookback {
            inputs.extend((0..c).map(|ch| normalizer.normalize(table.value(r, ch), ch)));
        }
        for r in start + lookback..start + span {
            targets.extend((0..c).map(|ch| normalizer.normalize(table.value(r, ch), ch)));
        }
    }
    Ok(WindowDataset {
        split,
        inputs: Tensor::new(vec![count, lookback, c], inputs)?,
        targets: Tensor::new(vec![count, horizon, c], targets)?,
        normalizer: normalizer.clone(),
        start_rows,
    })
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
}

/// Row ranges of a chronological train/val/test split.
pub fn split_rows(rows: usize, fractions: [f64; 3]) -> Result<[std::ops::Range<usize>; 3]> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n_train = (rows as f64 * fractions[0]).floor() as usize;
    let n_val = (rows as f64 * fractions[1]).floor() as usize;
    Ok([
        0..n_train,
        n_train..n_train + n_val,
        n_train + n_val..rows,
    ])
}

/// Chronological split, train-only z-scoring, stride-1 windows per split.
pub fn make_windows(
    table: &SeriesTable,
    lookback: usize,
    horizon: usize,
    fractions: [f64; 3],
) -> Result<Splits> {
    let [train, val, test] = split_rows(table.rows(), fractions)?;
    let norm = Normalizer::fit(table, train.clone());
    Ok(Splits {
        train: windows_in(table, train, lookback, horizon, &norm, Split::Train)?,
        val: windows_in(table, val, lookback, horizon, &norm, Split::Val)?,
        test: windows_in(table, test, lookback, horizon, &norm, Split::Test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    SumOfSinusoids,
    RandomWalk,
    TrendSeasonalNoise,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-of-sinusoids" => Ok(SynthKind::SumOfSinusoids),
            "random-walk" => Ok(SynthKind::RandomWalk),
            "trend-seasonal-noise" => Ok(SynthKind::TrendSeasonalNoise),
            other => Err(Error::Config(format!("unknown synthetic series kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    /// Integer seasonal periods in rows.
    pub periods: Vec<usize>,
    pub amplitudes: Vec<f64>,
    pub noise_std: f64,
    /// Trend increment per row.
    pub trend_slope: f64,
    /// Random-walk increment std.
    pub step_std: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            periods: vec![12, 40],
            amplitudes: vec![1.0, 0.5],
            noise_std: 0.3,
            trend_slope: 0.0005,
            step_std: 0.1,
        }
    }
}

impl SynthParams {
    /// Generative formula, as echoed into report metadata.
    pub fn describe(&self, kind: SynthKind) -> String {
        let seasonal = "sum_j amp_j * sin(2*pi*(t mod p_j)/p_j + phase_cj), phase_cj ~ U[0, 2*pi)";
        match kind {
            SynthKind::SumOfSinusoids => format!(
                "x_c[t] = {seasonal} + noise_std * e; periods={:?} amplitudes={:?} noise_std={}",
                self.periods, self.amplitudes, self.noise_std
            ),
            SynthKind::RandomWalk => format!(
                "x_c[0] = 0; x_c[t] = x_c[t-1] + step_std * e; step_std={}",
                self.step_std
            ),
            SynthKind::TrendSeasonalNoise => format!(
                "x_c[t] = trend_slope * t + {seasonal} + noise_std * e; trend_slope={} periods={:?} amplitudes={:?} noise_std={}",
                self.trend_slope, self.periods, self.amplitudes, self.noise_std
            ),
        }
    }
}

/// Deterministic synthetic series; `e` is i.i.d. standard normal.
pub fn synth_series(
    kind: SynthKind,
    rows: usize,
    channels: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<SeriesTable> {
    if channels == 0 || rows == 0 {
        return Err(Error::Config("synthetic series needs rows and channels".into()));
    }
    if params.periods.len() != params.amplitudes.len() || params.periods.iter().any(|&p| p == 0) {
        return Err(Error::Config(
            "synthetic periods must be positive and pair with amplitudes".into(),
        ));
    }
    let root = RngStream::new(seed);
    let tau = std::f64::consts::TAU;
    let mut values = vec![0.0; rows * channels];
    for c in 0..channels {
        let mut phase_rng = root.derive("phase", c as u64);
        let phases: Vec<f64> = params
            .periods
            .iter()
            .map(|_| phase_rng.uniform(0.0, tau))
            .collect();
        let mut noise = root.derive("noise", c as u64);
        let mut level = 0.0;
        for t in 0..rows {
            let seasonal = || -> f64 {
                params
                    .periods
                    .iter()
                    .zip(&params.amplitudes)
                    .zip(&phases)
                    .map(|((&p, &a), &ph)| a * (tau * (t % p) as f64 / p as f64 + ph).sin())
                    .sum()
            };
            let v = match kind {
                SynthKind::SumOfSinusoids => {
                    let e = if params.noise_std > 0.0 { noise.standard_normal() } else { 0.0 };
                    seasonal() + params.noise_std * e
                }
                SynthKind::RandomWalk => {
                    if t > 0 {
                        level += params.step_std * noise.standard_normal();
                    }
                    level
                }
                SynthKind::TrendSeasonalNoise => {
                    let e = if params.noise_std > 0.0 { noise.standard_normal() } else { 0.0 };
                    params.trend_slope * t as f64 + seasonal() + params.noise_std * e
                }
            };
            values[t * channels + c] = v;
        }
    }
    let names = (0..channels).map(|c| format!("ch{c}")).collect();
    SeriesTable::new(values, rows, names, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn table(rows: usize, channels: usize, f: impl Fn(usize, usize) -> f64) -> SeriesTable {
        let values = (0..rows)
            .flat_map(|r| (0..channels).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        SeriesTable::new(values, rows, (0..channels).map(|c| format!("c{c}")).collect(), None).unwrap()
    }

    #[test]
    fn loads_plain_numeric_file() {
        let f = write_tmp("1,2\n3,4\n5,6\n");
        let t = load_csv(f.path(), &CsvOptions { has_header: false, ..Default::default() }).unwrap();
        assert_eq!((t.rows(), t.channels()), (3, 2));
        assert_eq!(t.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn header_names_channels_and_timestamps_are_kept() {
        let f = write_tmp("date,usd,eur\n2020-01-01,1.0,2.0\n2020-01-02,1.5,2.5\n");
        let opts = CsvOptions { has_header: true, timestamp_column: Some(0), delimiter: ',' };
        let t = load_csv(f.path(), &opts).unwrap();
        assert_eq!(t.channel_names, vec!["usd", "eur"]);
        assert_eq!(t.timestamps.as_ref().unwrap()[1], "2020-01-02");
        assert_eq!(t.column(1), vec![2.0, 2.5]);
    }

    #[test]
    fn bad_cell_is_named() {
        let f = write_tmp("a,b\n1,2\n3,abc\n");
        let err = load_csv(f.path(), &CsvOptions::default()).unwrap_err();
        match err {
            Error::Parse { row, column, cell } => assert_eq!((row, column, cell.as_str()), (3, 2, "abc")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn nan_row_and_empty_file_rejected() {
        let f = write_tmp("1,2\nNaN,4\n");
        let err = load_csv(f.path(), &CsvOptions { has_header: false, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        let f = write_tmp("");
        assert!(matches!(load_csv(f.path(), &CsvOptions::default()), Err(Error::Data(_))));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_csv("/nonexistent/rates.csv", &CsvOptions::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/rates.csv"));
    }

    #[test]
    fn semicolon_delimiter() {
        let f = write_tmp("1;2\n3;4\n");
        let opts = CsvOptions { has_header: false, timestamp_column: None, delimiter: ';' };
        assert_eq!(load_csv(f.path(), &opts).unwrap().channels(), 2);
    }

    #[test]
    fn window_count_single_split() {
        let t = table(12, 1, |r, _| r as f64);
        let norm = Normalizer::fit(&t, 0..12);
        let w = windows_in(&t, 0..12, 4, 2, &norm, Split::Train).unwrap();
        assert_eq!(w.len(), 7);
        // targets immediately follow inputs
        for (k, &start) in w.start_rows.iter().enumerate() {
            let last_in = w.inputs.data()[k * 4 + 3];
            let first_out = w.targets.data()[k * 2];
            assert_eq!(norm.denormalize(last_in, 0).round() as usize, start + 3);
            assert_eq!(norm.denormalize(first_out, 0).round() as usize, start + 4);
        }
    }

    #[test]
    fn window_count_formula_holds() {
        for n in 6..40 {
            for lookback in [2, 4, 6] {
                for horizon in 1..4 {
                    if n < lookback + horizon {
                        continue;
                    }
                    let t = table(n, 2, |r, c| (r * 3 + c) as f64);
                    let norm = Normalizer::fit(&t, 0..n);
                    let w = windows_in(&t, 0..n, lookback, horizon, &norm, Split::Test).unwrap();
                    assert_eq!(w.len(), n - lookback - horizon + 1);
                }
            }
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let t = table(20, 2, |r, c| if c == 0 { 5.0 } else { r as f64 });
        let s = make_windows(&t, 2, 1, [0.5, 0.25, 0.25]).unwrap();
        assert_eq!(s.train.normalizer.std[0], STD_FLOOR);
        for k in 0..s.test.len() {
            for step in 0..2 {
                assert_eq!(s.test.inputs.data()[(k * 2 + step) * 2], 0.0);
            }
        }
    }

    #[test]
    fn normalize_round_trip() {
        let t = table(30, 3, |r, c| (r as f64 * 0.37 + c as f64).sin() * 100.0);
        let n = Normalizer::fit(&t, 0..20);
        for r in 0..30 {
            for c in 0..3 {
                let v = t.value(r, c);
                assert!((n.denormalize(n.normalize(v, c), c) - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn splits_are_chronological_and_leak_free() {
        let t = table(100, 1, |r, _| (r as f64 * 0.3).cos());
        let s = make_windows(&t, 4, 2, [0.7, 0.1, 0.2]).unwrap();
        let last = |w: &WindowDataset| w.start_rows.last().unwrap() + 5;
        assert!(last(&s.train) < s.val.start_rows[0]);
        assert!(last(&s.val) < s.test.start_rows[0]);

        let mut values = t.values().to_vec();
        values[95] = 1e6;
        let tampered = SeriesTable::new(values, 100, t.channel_names.clone(), None).unwrap();
        let s2 = make_windows(&tampered, 4, 2, [0.7, 0.1, 0.2]).unwrap();
        assert_eq!(s.train.normalizer, s2.train.normalizer);
    }

    #[test]
    fn short_split_is_named() {
        let t = table(30, 1, |r, _| r as f64);
        let err = make_windows(&t, 4, 2, [0.8, 0.1, 0.1]).unwrap_err();
        assert!(err.to_string().contains("val split"), "{err}");
    }

    #[test]
    fn bad_fractions_rejected() {
        let t = table(30, 1, |r, _| r as f64);
        assert!(matches!(make_windows(&t, 2, 1, [0.5, 0.5, 0.5]), Err(Error::Config(_))));
        assert!(matches!(make_windows(&t, 2, 1, [1.0, 0.0, 0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_sinusoids_are_periodic() {
        let p = SynthParams { periods: vec![6, 10], amplitudes: vec![1.0, 0.4], noise_std: 0.0, ..Default::default() };
        let t = synth_series(SynthKind::SumOfSinusoids, 200, 2, 3, &p).unwrap();
        for r in 0..170 {
            for c in 0..2 {
                assert!((t.value(r + 30, c) - t.value(r, c)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn synthetic_series_are_seeded() {
        let p = SynthParams::default();
        for kind in [SynthKind::SumOfSinusoids, SynthKind::RandomWalk, SynthKind::TrendSeasonalNoise] {
            let a = synth_series(kind, 300, 2, 5, &p).unwrap();
            let b = synth_series(kind, 300, 2, 5, &p).unwrap();
            let c = synth_series(kind, 300, 2, 6, &p).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn random_walk_increments_are_centered() {
        let p = SynthParams { step_std: 1.0, ..Default::default() };
        let n = 100_000;
        let t = synth_series(SynthKind::RandomWalk, n + 1, 1, 17, &p).unwrap();
        let col = t.column(0);
        let mean = col.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("sawtooth".parse::<SynthKind>(), Err(Error::Config(_))));
        assert_eq!("random-walk".parse::<SynthKind>().unwrap(), SynthKind::RandomWalk);
    }
}
