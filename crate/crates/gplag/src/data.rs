//! Ingestion, validation, centering, and splitting of irregular multi-series
//! observations.
//!
//! Data are triples `(t, series, y)` for `L ≥ 2` series observed at arbitrary
//! (possibly irregular, possibly replicated) time points. Series labels from
//! CSV input are mapped to integer ids `1..=L` in order of first appearance —
//! the id-1 series is the lag baseline (its time shift is fixed at zero), so
//! row order in the input file controls which series anchors the lags.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A single measurement: time, 1-based series id, value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Time, in arbitrary but consistent units.
    pub t: f64,
    /// Series id in `1..=L`.
    pub series: usize,
    /// Measured value.
    pub y: f64,
}

/// An immutable collection of observations from `L ≥ 2` series, stored in
/// canonical order (sorted by series id, then time; ties keep input order).
///
/// Replicated time points within a series are allowed — the observation-noise
/// variance keeps the model's covariance matrix nonsingular. Construction
/// validates that every series id in `1..=L` appears at least twice and that
/// all values are finite.
#[derive(Debug, Clone)]
pub struct TimeSeriesSet {
    observations: Vec<Observation>,
    labels: Vec<String>,
    offsets: Vec<f64>,
    /// Half-open index range of each series in `observations`.
    bounds: Vec<Range<usize>>,
}

/// Outcome of [`train_test_split`]: a partition of a set into disjoint
/// train/test subsets whose union is the original.
#[derive(Debug, Clone)]
pub struct SplitResult {
    /// Training subset.
    pub train: TimeSeriesSet,
    /// Held-out subset.
    pub test: TimeSeriesSet,
    /// Seed that produced the split.
    pub seed: u64,
}

impl TimeSeriesSet {
    /// Builds a set from raw observations and per-series labels.
    ///
    /// `labels[l-1]` names series `l`; observation ids must lie in
    /// `1..=labels.len()`. Observations are sorted into canonical order.
    pub fn new(observations: Vec<Observation>, labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 series, got {}",
                labels.len()
            )));
        }
        let num_series = labels.len();
        for (i, obs) in observations.iter().enumerate() {
            if !obs.t.is_finite() || !obs.y.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite observation at index {i}: t={}, y={}",
                    obs.t, obs.y
                )));
            }
            if obs.series < 1 || obs.series > num_series {
                return Err(Error::Validation(format!(
                    "series id {} out of range 1..={num_series} at index {i}",
                    obs.series
                )));
            }
        }
        let mut observations = observations;
        // Stable sort: replicated times keep their input order.
        observations.sort_by(|p, q| {
            (p.series, p.t)
                .partial_cmp(&(q.series, q.t))
                .expect("finite values are totally ordered")
        });
        let bounds = series_bounds(&observations, num_series);
        for (l, range) in bounds.iter().enumerate() {
            if range.len() < 2 {
                return Err(Error::Validation(format!(
                    "series {} ({:?}) has {} observation(s); need at least 2",
                    l + 1,
                    labels[l],
                    range.len()
                )));
            }
        }
        Ok(Self {
            observations,
            offsets: vec![0.0; num_series],
            labels,
            bounds,
        })
    }

    /// Builds a set from per-series `(times, values)` columns, labeling the
    /// series `"1"`, `"2"`, … in order.
    pub fn from_series(series: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut observations = Vec::new();
        for (l, (times, values)) in series.iter().enumerate() {
            if times.len() != values.len() {
                return Err(Error::Argument(format!(
                    "series {}: {} times but {} values",
                    l + 1,
                    times.len(),
                    values.len()
                )));
            }
            for (&t, &y) in times.iter().zip(values) {
                observations.push(Observation {
                    t,
                    series: l + 1,
                    y,
                });
            }
        }
        let labels = (1..=series.len()).map(|l| l.to_string()).collect();
        Self::new(observations, labels)
    }

    /// A set with `num_series` series and no observations. Bypasses the
    /// two-observations-per-series invariant; used for prior-only posterior
    /// sampling, where the log likelihood of an empty set is zero.
    #[cfg(test)]
    pub(crate) fn empty(num_series: usize) -> Self {
        Self {
            observations: Vec::new(),
            offsets: vec![0.0; num_series],
            labels: (1..=num_series).map(|l| l.to_string()).collect(),
            bounds: vec![0..0; num_series],
        }
    }

    /// Builds a set without the two-observations-per-series check — a
    /// test-only escape hatch for degenerate oracle cases (single points,
    /// single-series conditionals) that the public constructors reject.
    #[cfg(test)]
    pub(crate) fn unchecked(observations: Vec<Observation>, num_series: usize) -> Self {
        let mut observations = observations;
        observations.sort_by(|p, q| {
            (p.series, p.t)
                .partial_cmp(&(q.series, q.t))
                .expect("finite values are totally ordered")
        });
        let bounds = series_bounds(&observations, num_series);
        Self {
            observations,
            offsets: vec![0.0; num_series],
            labels: (1..=num_series).map(|l| l.to_string()).collect(),
            bounds,
        }
    }

    /// Total number of observations across all series.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    /// True when the set holds no observations.
    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of series `L`.
    pub fn num_series(&self) -> usize {
        self.labels.len()
    }

    /// All observations in canonical order.
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Observations of series `l` (1-based).
    pub fn series_observations(&self, series: usize) -> &[Observation] {
        &self.observations[self.bounds[series - 1].clone()]
    }

    /// Number of observations in series `l` (1-based).
    pub fn series_len(&self, series: usize) -> usize {
        self.bounds[series - 1].len()
    }

    /// Per-series vertical offsets recorded by [`center_series`].
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Series labels; `labels()[l-1]` names series `l`.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Times of series `l` in canonical order.
    pub fn series_times(&self, series: usize) -> Vec<f64> {
        self.series_observations(series).iter().map(|o| o.t).collect()
    }

    /// Values of series `l` in canonical order.
    pub fn series_values(&self, series: usize) -> Vec<f64> {
        self.series_observations(series).iter().map(|o| o.y).collect()
    }

    /// Keeps only the observations at the given canonical indices, carrying
    /// labels and offsets over.
    fn subset(&self, keep: &[usize]) -> Self {
        let observations = keep.iter().map(|&i| self.observations[i]).collect::<Vec<_>>();
        let bounds = series_bounds(&observations, self.num_series());
        Self {
            observations,
            labels: self.labels.clone(),
            offsets: self.offsets.clone(),
            bounds,
        }
    }
}

/// Computes per-series half-open index ranges in canonically sorted data.
fn series_bounds(observations: &[Observation], num_series: usize) -> Vec<Range<usize>> {
    let mut bounds = vec![0..0; num_series];
    let mut i = 0;
    for l in 1..=num_series {
        let start = i;
        while i < observations.len() && observations[i].series == l {
            i += 1;
        }
        bounds[l - 1] = start..i;
    }
    bounds
}

/// Loads a set from a CSV file with header `t,series,y`.
///
/// The `series` column may hold arbitrary labels (strings or integers); they
/// are mapped to ids `1..=L` in order of first appearance, so the first label
/// in the file becomes the lag-baseline series.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<TimeSeriesSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let expected = ["t", "series", "y"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Format(format!(
            "expected header `t,series,y`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut labels: Vec<String> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut observations = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1; // 1-based data row, header excluded
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(Error::Parse {
                row,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let t: f64 = parse_field(&record[0], "t", row)?;
        let y: f64 = parse_field(&record[2], "y", row)?;
        let label = record[1].to_string();
        let next_id = labels.len() + 1;
        let series = *ids.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            next_id
        });
        observations.push(Observation { t, series, y });
    }
    TimeSeriesSet::new(observations, labels)
}

fn parse_field(field: &str, name: &str, row: usize) -> Result<f64> {
    let value: f64 = field.parse().map_err(|_| Error::Parse {
        row,
        message: format!("non-numeric {name} value `{field}`"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("non-finite {name} value `{field}`"),
        });
    }
    Ok(value)
}

/// Writes a set to CSV with header `t,series,y`, using the stored labels.
///
/// Values are formatted with Rust's shortest-round-trip notation, so a
/// [`load_csv`] of the output reproduces every triple bit-exactly.
pub fn save_csv<P: AsRef<Path>>(set: &TimeSeriesSet, path: P) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))?;
    writer
        .write_record(["t", "series", "y"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for obs in set.observations() {
        writer
            .write_record([
                obs.t.to_string(),
                set.labels()[obs.series - 1].clone(),
                obs.y.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Subtracts each series' sample mean from its values, recording the shift.
///
/// Offsets accumulate: centering an already-shifted set adds the new means to
/// the stored offsets, so predictions can always be mapped back to the
/// original level. The output's per-series means are zero up to round-off.
pub fn center_series(set: &TimeSeriesSet) -> TimeSeriesSet {
    let mut out = set.clone();
    for l in 1..=set.num_series() {
        let range = set.bounds[l - 1].clone();
        if range.is_empty() {
            continue;
        }
        let mean = range.clone().map(|i| set.observations[i].y).sum::<f64>() / range.len() as f64;
        for i in range {
            out.observations[i].y -= mean;
        }
        out.offsets[l - 1] += mean;
    }
    out
}

/// Splits a set into train/test subsets, keeping `round(fraction · n_l)`
/// training points per series.
///
/// When all series have the same length, the *same positional indices* (in
/// time order) are selected in every series, so the held-out time positions
/// match across series. With unequal lengths, positions are drawn
/// independently per series. Deterministic for a fixed seed.
pub fn train_test_split(set: &TimeSeriesSet, fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "fraction must lie in (0,1), got {fraction}"
        )));
    }
    let num_series = set.num_series();
    let equal_lengths = (2..=num_series).all(|l| set.series_len(l) == set.series_len(1));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut shared: Option<Vec<usize>> = None;
    for l in 1..=num_series {
        let n_l = set.series_len(l);
        let k = (fraction * n_l as f64).round() as usize;
        if k < 2 || n_l - k < 2 {
            return Err(Error::Argument(format!(
                "fraction {fraction} leaves series {l} with {k} train / {} test points; need at least 2 each",
                n_l - k
            )));
        }
        let positions: Vec<usize> = match (&shared, equal_lengths) {
            (Some(p), true) => p.clone(),
            _ => {
                let mut p = rand::seq::index::sample(&mut rng, n_l, k).into_vec();
                p.sort_unstable();
                if equal_lengths {
                    shared = Some(p.clone());
                }
                p
            }
        };
        let start = set.bounds[l - 1].start;
        let mut is_train = vec![false; n_l];
        for &p in &positions {
            is_train[p] = true;
        }
        for (offset, &tr) in is_train.iter().enumerate() {
            if tr {
                train_idx.push(start + offset);
            } else {
                test_idx.push(start + offset);
            }
        }
    }
    Ok(SplitResult {
        train: set.subset(&train_idx),
        test: set.subset(&test_idx),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file.flush().unwrap();
        file
    }

    #[test]
    fn test_load_csv_maps_labels_in_first_appearance_order() {
        let file = write_csv("t,series,y\n0,A,1.0\n1,A,2.0\n0,B,3.0\n1,B,4.0\n");
        let set = load_csv(file.path()).unwrap();
        assert_eq!(set.num_series(), 2);
        assert_eq!(set.labels(), &["A".to_string(), "B".to_string()]);
        assert_eq!(set.len(), 4);
        assert_eq!(set.series_observations(1)[0].y, 1.0);
        assert_eq!(set.series_observations(2)[1].y, 4.0);
    }

    #[test]
    fn test_load_csv_accepts_replicated_times() {
        let file = write_csv("t,series,y\n0,A,1\n0,A,2\n0,B,1\n1,B,2\n");
        let set = load_csv(file.path()).unwrap();
        assert_eq!(set.series_len(1), 2);
        let obs = set.series_observations(1);
        assert_eq!((obs[0].t, obs[1].t), (0.0, 0.0));
        // Both replicates retained, input order preserved.
        assert_eq!((obs[0].y, obs[1].y), (1.0, 2.0));
    }

    #[test]
    fn test_load_csv_rejects_singleton_series() {
        let file = write_csv("t,series,y\n0,A,1\n1,A,2\n0,B,3\n");
        let err = load_csv(file.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "got {err:?}");
        assert!(err.to_string().contains('B'));
    }

    #[test]
    fn test_load_csv_rejects_bad_header() {
        for header in ["time,series,y", "t,y,series", "t,series", "t,t,y"] {
            let file = write_csv(&format!("{header}\n0,A,1\n1,A,2\n0,B,3\n1,B,4\n"));
            let err = load_csv(file.path()).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "header `{header}` gave {err:?}");
        }
    }

    #[test]
    fn test_load_csv_parse_error_carries_row_number() {
        let file = write_csv("t,series,y\n0,A,1\n1,A,oops\n0,B,3\n1,B,4\n");
        match load_csv(file.path()).unwrap_err() {
            Error::Parse { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn test_canonical_order_sorts_by_series_then_time() {
        // B appears first, so B is series 1 (the lag baseline).
        let file = write_csv("t,series,y\n5,B,1\n1,A,2\n0,B,3\n2,A,4\n");
        let set = load_csv(file.path()).unwrap();
        assert_eq!(set.labels(), &["B".to_string(), "A".to_string()]);
        let keys: Vec<(usize, f64)> = set.observations().iter().map(|o| (o.series, o.t)).collect();
        assert_eq!(keys, vec![(1, 0.0), (1, 5.0), (2, 1.0), (2, 2.0)]);
    }

    #[test]
    fn test_center_series_subtracts_means() {
        let set = TimeSeriesSet::from_series(&[
            (vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]),
            (vec![0.0, 1.0], vec![5.0, 5.0]),
        ])
        .unwrap();
        let centered = center_series(&set);
        assert_eq!(centered.series_values(1), vec![-1.0, 0.0, 1.0]);
        assert_eq!(centered.offsets()[0], 2.0);
        assert_eq!(centered.series_values(2), vec![0.0, 0.0]);
        assert_eq!(centered.offsets()[1], 5.0);
    }

    #[test]
    fn test_center_series_hand_computed_two_series() {
        // Means are 10 and 1; values shift to (0,0) and (-1,1).
        let set = TimeSeriesSet::from_series(&[
            (vec![0.0, 1.0], vec![10.0, 10.0]),
            (vec![0.0, 1.0], vec![0.0, 2.0]),
        ])
        .unwrap();
        let centered = center_series(&set);
        assert_eq!(centered.series_values(1), vec![0.0, 0.0]);
        assert_eq!(centered.series_values(2), vec![-1.0, 1.0]);
        assert_eq!(centered.offsets(), &[10.0, 1.0]);
    }

    #[test]
    fn test_center_series_idempotent_and_offsets_accumulate() {
        let set = TimeSeriesSet::from_series(&[
            (vec![0.0, 1.0, 2.0], vec![4.0, 6.0, 8.0]),
            (vec![0.0, 1.0], vec![-3.0, 3.0]),
        ])
        .unwrap();
        let once = center_series(&set);
        let twice = center_series(&once);
        for l in 1..=2 {
            let max_abs = twice
                .series_values(l)
                .iter()
                .zip(once.series_values(l))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(max_abs <= 1e-12);
        }
        assert_eq!(twice.offsets(), once.offsets());
        assert_eq!(once.offsets(), &[6.0, 0.0]);
    }

    #[test]
    fn test_split_sizes_and_determinism() {
        let times: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let set = TimeSeriesSet::from_series(&[
            (times.clone(), vec![1.0, 2.0, 3.0, 4.0]),
            (times, vec![5.0, 6.0, 7.0, 8.0]),
        ])
        .unwrap();
        let split = train_test_split(&set, 0.5, 7).unwrap();
        assert_eq!(split.train.series_len(1), 2);
        assert_eq!(split.train.series_len(2), 2);
        assert_eq!(split.test.series_len(1), 2);
        assert_eq!(split.test.series_len(2), 2);

        let again = train_test_split(&set, 0.5, 7).unwrap();
        assert_eq!(split.train.observations(), again.train.observations());
        assert_eq!(split.test.observations(), again.test.observations());
    }

    #[test]
    fn test_split_holds_out_matching_positions_across_series() {
        let n = 100;
        let t1: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let t2: Vec<f64> = (0..n).map(|i| i as f64 + 2.0).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let set = TimeSeriesSet::from_series(&[(t1, y.clone()), (t2, y)]).unwrap();
        let split = train_test_split(&set, 0.5, 3).unwrap();
        // Same positional indices held out in both series: the test times of
        // series 2 are the test times of series 1 shifted by exactly 2.
        let test1 = split.test.series_times(1);
        let test2 = split.test.series_times(2);
        assert_eq!(test1.len(), test2.len());
        for (a, b) in test1.iter().zip(&test2) {
            assert_eq!(a + 2.0, *b);
        }
    }

    #[test]
    fn test_split_rejects_bad_fraction() {
        let set = TimeSeriesSet::from_series(&[
            (vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4]),
            (vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4]),
        ])
        .unwrap();
        for fraction in [0.0, 1.0, -0.3, 1.7] {
            assert!(matches!(
                train_test_split(&set, fraction, 0),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn test_save_load_round_trip_is_bit_exact() {
        let set = TimeSeriesSet::from_series(&[
            (
                vec![0.1, 0.2 + 1e-16, std::f64::consts::PI],
                vec![1.0 / 3.0, -2.5e-13, 7.125],
            ),
            (vec![-4.75, 9.5], vec![0.1 + 0.2, 1e300]),
        ])
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_csv(&set, file.path()).unwrap();
        let back = load_csv(file.path()).unwrap();
        assert_eq!(set.observations(), back.observations());
        assert_eq!(set.labels(), back.labels());
    }

    proptest! {
        #[test]
        fn prop_round_trip_preserves_triples(
            raw in proptest::collection::vec(
                (any::<i32>(), 0usize..3, any::<i32>()),
                6..40,
            )
        ) {
            // Map raw integers to awkward finite floats to exercise formatting.
            let mut per_series: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![], vec![]); 3];
            for (ti, l, yi) in raw {
                per_series[l].0.push(ti as f64 / 97.0);
                per_series[l].1.push(yi as f64 * 1.0e-7 + 0.377);
            }
            // Series need at least two points each; pad deterministically.
            for (l, (times, values)) in per_series.iter_mut().enumerate() {
                while times.len() < 2 {
                    times.push(1000.0 + l as f64 + times.len() as f64);
                    values.push(0.625);
                }
            }
            let set = TimeSeriesSet::from_series(&per_series).unwrap();
            let file = tempfile::NamedTempFile::new().unwrap();
            save_csv(&set, file.path()).unwrap();
            let back = load_csv(file.path()).unwrap();
            prop_assert_eq!(set.observations(), back.observations());
        }

        #[test]
        fn prop_center_means_are_zero(
            values in proptest::collection::vec(-1.0e6_f64..1.0e6, 4..30),
        ) {
            let half = values.len() / 2;
            let (v1, v2) = values.split_at(half.max(2));
            if v2.len() < 2 { return Ok(()); }
            let t1: Vec<f64> = (0..v1.len()).map(|i| i as f64).collect();
            let t2: Vec<f64> = (0..v2.len()).map(|i| i as f64).collect();
            let set = TimeSeriesSet::from_series(&[(t1, v1.to_vec()), (t2, v2.to_vec())]).unwrap();
            let centered = center_series(&set);
            let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            for l in 1..=2 {
                let vals = centered.series_values(l);
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                prop_assert!(mean.abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn prop_split_partitions_observations(
            n in 4usize..40,
            fraction in 0.2_f64..0.8,
            seed in any::<u64>(),
        ) {
            let times: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let v1: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
            let v2: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let set = TimeSeriesSet::from_series(&[(times.clone(), v1), (times, v2)]).unwrap();
            let k = (fraction * n as f64).round() as usize;
            if k < 2 || n - k < 2 { return Ok(()); }
            let split = train_test_split(&set, fraction, seed).unwrap();
            let mut merged: Vec<Observation> = split
                .train
                .observations()
                .iter()
                .chain(split.test.observations())
                .copied()
                .collect();
            merged.sort_by(|p, q| (p.series, p.t).partial_cmp(&(q.series, q.t)).unwrap());
            prop_assert_eq!(merged.as_slice(), set.observations());
        }
    }
}
