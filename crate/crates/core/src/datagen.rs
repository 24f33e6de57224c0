//! Synthetic covariate-driven appointment data.
//!
//! Each job carries four categorical covariates. They determine the mean and
//! standard deviation of its duration:
//!
//! ```text
//! mean = 1 + 0.1·day + 0.4·time + 1.5·intensity
//! std  = 0.1 + 0.2·gender + 0.2·intensity
//! ```
//!
//! The duration is drawn from the chosen family with those moments. Uniform
//! noise on (−1, 1) is then added and the result is clamped at zero.
//! Consecutive rows form scheduling periods of `n` jobs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{default_support, make_spec, sample_one, DistributionSpec, Family};
use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};

pub const GENDER_LEVELS: u8 = 2;
pub const DAY_LEVELS: u8 = 30;
pub const TIME_LEVELS: u8 = 5;
pub const INTENSITY_LEVELS: u8 = 4;
/// One-hot width: 2 + 30 + 5 + 4.
pub const ENCODED_WIDTH: usize = 41;

const GENDER_OFFSET: usize = 0;
const DAY_OFFSET: usize = 2;
const TIME_OFFSET: usize = 32;
const INTENSITY_OFFSET: usize = 37;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Covariates {
    pub gender: u8,
    pub day: u8,
    pub time: u8,
    pub intensity: u8,
}

impl Covariates {
    pub fn new(gender: u8, day: u8, time: u8, intensity: u8) -> Result<Self> {
        let c = Covariates { gender, day, time, intensity };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gender < GENDER_LEVELS
            && self.day < DAY_LEVELS
            && self.time < TIME_LEVELS
            && self.intensity < INTENSITY_LEVELS;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("covariates out of range: {self:?}")))
        }
    }

    fn random(rng: &mut SeededRng) -> Self {
        Covariates {
            gender: rng.random_range(0..GENDER_LEVELS),
            day: rng.random_range(0..DAY_LEVELS),
            time: rng.random_range(0..TIME_LEVELS),
            intensity: rng.random_range(0..INTENSITY_LEVELS),
        }
    }

    /// Columns of the four active one-hot entries.
    pub fn active_columns(&self) -> [usize; 4] {
        [
            GENDER_OFFSET + self.gender as usize,
            DAY_OFFSET + self.day as usize,
            TIME_OFFSET + self.time as usize,
            INTENSITY_OFFSET + self.intensity as usize,
        ]
    }

    pub fn encode(&self) -> [f64; ENCODED_WIDTH] {
        let mut row = [0.0; ENCODED_WIDTH];
        for c in self.active_columns() {
            row[c] = 1.0;
        }
        row
    }

    pub fn decode(row: &[f64]) -> Result<Self> {
        if row.len() != ENCODED_WIDTH {
            return Err(Error::LengthMismatch { expected: ENCODED_WIDTH, actual: row.len() });
        }
        let block = |offset: usize, width: u8| -> Result<u8> {
            let hot: Vec<usize> = (0..width as usize).filter(|&k| row[offset + k] == 1.0).collect();
            match hot.as_slice() {
                [k] => Ok(*k as u8),
                _ => Err(Error::invalid(format!("one-hot block at column {offset} has {} active entries", hot.len()))),
            }
        };
        Covariates::new(
            block(GENDER_OFFSET, GENDER_LEVELS)?,
            block(DAY_OFFSET, DAY_LEVELS)?,
            block(TIME_OFFSET, TIME_LEVELS)?,
            block(INTENSITY_OFFSET, INTENSITY_LEVELS)?,
        )
    }
}

pub fn mean_std_from_covariates(c: &Covariates) -> Result<(f64, f64)> {
    c.validate()?;
    let mean = 1.0 + 0.1 * c.day as f64 + 0.4 * c.time as f64 + 1.5 * c.intensity as f64;
    let std = 0.1 + 0.2 * c.gender as f64 + 0.2 * c.intensity as f64;
    Ok((mean, std))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub gender: u8,
    pub day: u8,
    pub time: u8,
    pub intensity: u8,
    pub duration: f64,
}

impl JobRecord {
    pub fn covariates(&self) -> Covariates {
        Covariates { gender: self.gender, day: self.day, time: self.time, intensity: self.intensity }
    }
}

/// Min–max scaling of durations to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub lo: f64,
    pub hi: f64,
}

impl Scaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::invalid(format!("degenerate scaler [{lo}, {hi}]")));
        }
        Ok(Scaler { lo, hi })
    }

    pub fn fit(values: &[f64]) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Scaler::new(lo, hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn scale(&self, value: f64) -> f64 {
        (value - self.lo) / (self.hi - self.lo)
    }

    pub fn unscale(&self, value: f64) -> f64 {
        self.lo + value * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub noise: u64,
    pub sample: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub family: Family,
    pub periods: usize,
    pub jobs: usize,
    pub seeds: Seeds,
    /// Half-width of the additive uniform label noise; 0 disables it.
    pub noise_amplitude: f64,
}

impl GenerateOptions {
    pub fn new(family: Family, periods: usize, jobs: usize, noise_seed: u64, sample_seed: u64) -> Self {
        GenerateOptions { family, periods, jobs, seeds: Seeds { noise: noise_seed, sample: sample_seed }, noise_amplitude: 1.0 }
    }
}

/// Caches one moment-matched distribution per covariate combination.
#[derive(Debug, Clone)]
pub struct DurationModel {
    family: Family,
    cache: BTreeMap<Covariates, DistributionSpec>,
}

impl DurationModel {
    pub fn new(family: Family) -> Self {
        DurationModel { family, cache: BTreeMap::new() }
    }

    pub fn spec(&mut self, c: &Covariates) -> Result<DistributionSpec> {
        if let Some(s) = self.cache.get(c) {
            return Ok(*s);
        }
        let (mean, std) = mean_std_from_covariates(c)?;
        let spec = make_spec(self.family, mean, std, default_support(mean, std))?;
        self.cache.insert(*c, spec);
        Ok(spec)
    }

    /// One noisy, clamped duration.
    pub fn draw(&mut self, c: &Covariates, sample_rng: &mut SeededRng, noise_rng: &mut SeededRng, noise: f64) -> Result<f64> {
        let spec = self.spec(c)?;
        let base = sample_one(&spec, sample_rng);
        let eps = if noise > 0.0 { noise_rng.random_range(-noise..noise) } else { 0.0 };
        Ok((base + eps).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub periods: usize,
    pub family: Option<Family>,
    pub seeds: Option<Seeds>,
    pub noise_amplitude: Option<f64>,
    /// One-hot block widths in column order: gender, day, time, intensity.
    pub encoding: Vec<usize>,
}

/// `T` periods of `n` job records, in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    jobs: usize,
    records: Vec<JobRecord>,
    scaler: Scaler,
    pub family: Option<Family>,
    pub seeds: Option<Seeds>,
    pub noise_amplitude: Option<f64>,
}

impl FeatureDataset {
    pub fn from_records(records: Vec<JobRecord>, jobs: usize) -> Result<Self> {
        if jobs < 2 {
            return Err(Error::invalid("periods need at least 2 jobs"));
        }
        if records.is_empty() || !records.len().is_multiple_of(jobs) {
            return Err(Error::Data(format!("{} records do not form whole periods of {jobs}", records.len())));
        }
        for r in &records {
            r.covariates().validate()?;
            if !(r.duration.is_finite() && r.duration >= 0.0) {
                return Err(Error::Data(format!("invalid duration {}", r.duration)));
            }
        }
        let durations: Vec<f64> = records.iter().map(|r| r.duration).collect();
        let scaler = Scaler::fit(&durations)?;
        Ok(FeatureDataset { jobs, records, scaler, family: None, seeds: None, noise_amplitude: None })
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    pub fn num_periods(&self) -> usize {
        self.records.len() / self.jobs
    }

    pub fn records(&self) -> &[JobRecord] {
        &self.records
    }

    pub fn period(&self, t: usize) -> &[JobRecord] {
        &self.records[t * self.jobs..(t + 1) * self.jobs]
    }

    pub fn periods(&self) -> impl Iterator<Item = &[JobRecord]> {
        self.records.chunks(self.jobs)
    }

    pub fn scaler(&self) -> Scaler {
        self.scaler
    }

    pub fn durations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.duration).collect()
    }

    /// Durations mapped through the dataset's min–max scaler.
    pub fn scaled_durations(&self) -> Vec<f64> {
        self.records.iter().map(|r| self.scaler.scale(r.duration)).collect()
    }

    /// Per-period duration vectors.
    pub fn duration_periods(&self) -> Vec<Vec<f64>> {
        self.periods().map(|p| p.iter().map(|r| r.duration).collect()).collect()
    }

    /// Keeps the listed periods, in the given order; the scaler is refit.
    pub fn select_periods(&self, indices: &[usize]) -> Result<FeatureDataset> {
        let mut records = Vec::with_capacity(indices.len() * self.jobs);
        for &t in indices {
            if t >= self.num_periods() {
                return Err(Error::invalid(format!("period {t} out of range")));
            }
            records.extend_from_slice(self.period(t));
        }
        let mut out = FeatureDataset::from_records(records, self.jobs)?;
        out.family = self.family;
        out.seeds = self.seeds;
        out.noise_amplitude = self.noise_amplitude;
        Ok(out)
    }

    /// Random split by period: `(train, holdout)` with `train_fraction` of
    /// the periods (at least one on each side).
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
        let t = self.num_periods();
        if t < 2 {
            return Err(Error::Data("need at least 2 periods to split".into()));
        }
        let mut order: Vec<usize> = (0..t).collect();
        let mut rng = seeded(seed);
        for i in (1..t).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let cut = ((train_fraction * t as f64).round() as usize).clamp(1, t - 1);
        Ok((self.select_periods(&order[..cut])?, self.select_periods(&order[cut..])?))
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            lo: self.scaler.lo,
            hi: self.scaler.hi,
            n: self.jobs,
            periods: self.num_periods(),
            family: self.family,
            seeds: self.seeds,
            noise_amplitude: self.noise_amplitude,
            encoding: vec![GENDER_LEVELS as usize, DAY_LEVELS as usize, TIME_LEVELS as usize, INTENSITY_LEVELS as usize],
        }
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(csv_path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        fs::write(sidecar_path(csv_path), meta + "\n")?;
        Ok(())
    }

    /// Reads a dataset CSV and its sidecar. The sidecar's scaler is kept
    /// verbatim.
    pub fn read(csv_path: &Path) -> Result<FeatureDataset> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(csv_path))?)?;
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let headers = rdr.headers()?.clone();
        let expected = ["gender", "day", "time", "intensity", "duration"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(Error::Data(format!("unexpected CSV header {:?}", headers)));
        }
        let records = rdr.deserialize().collect::<std::result::Result<Vec<JobRecord>, _>>()?;
        let mut ds = FeatureDataset::from_records(records, meta.n)?;
        ds.scaler = Scaler::new(meta.lo, meta.hi)?;
        ds.family = meta.family;
        ds.seeds = meta.seeds;
        ds.noise_amplitude = meta.noise_amplitude;
        Ok(ds)
    }
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

pub fn generate(family: Family, periods: usize, jobs: usize, noise_seed: u64, sample_seed: u64) -> Result<FeatureDataset> {
    generate_with(&GenerateOptions::new(family, periods, jobs, noise_seed, sample_seed))
}

pub fn generate_with(opts: &GenerateOptions) -> Result<FeatureDataset> {
    if opts.periods == 0 || opts.jobs < 2 {
        return Err(Error::invalid("need at least 1 period of at least 2 jobs"));
    }
    if !(opts.noise_amplitude >= 0.0 && opts.noise_amplitude.is_finite()) {
        return Err(Error::invalid("noise amplitude must be finite and non-negative"));
    }
    let mut sample_rng = seeded(opts.seeds.sample);
    let mut noise_rng = seeded(opts.seeds.noise);
    let mut model = DurationModel::new(opts.family);
    let total = opts.periods * opts.jobs;
    let mut records = Vec::with_capacity(total);
    for _ in 0..total {
        let c = Covariates::random(&mut sample_rng);
        let duration = model.draw(&c, &mut sample_rng, &mut noise_rng, opts.noise_amplitude)?;
        records.push(JobRecord { gender: c.gender, day: c.day, time: c.time, intensity: c.intensity, duration });
    }
    let mut ds = FeatureDataset::from_records(records, opts.jobs)?;
    ds.family = Some(opts.family);
    ds.seeds = Some(opts.seeds);
    ds.noise_amplitude = Some(opts.noise_amplitude);
    Ok(ds)
}

/// Row-major one-hot matrix, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFeatures {
    pub rows: usize,
    pub data: Vec<f64>,
}

impl EncodedFeatures {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * ENCODED_WIDTH..(r + 1) * ENCODED_WIDTH]
    }
}

pub fn encode(dataset: &FeatureDataset) -> EncodedFeatures {
    let mut data = Vec::with_capacity(dataset.records.len() * ENCODED_WIDTH);
    for r in &dataset.records {
        data.extend_from_slice(&r.covariates().encode());
    }
    EncodedFeatures { rows: dataset.records.len(), data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariate_formulas() {
        assert_eq!(mean_std_from_covariates(&Covariates::new(0, 0, 0, 0).unwrap()).unwrap(), (1.0, 0.1));
        let (m, s) = mean_std_from_covariates(&Covariates::new(1, 0, 0, 0).unwrap()).unwrap();
        assert_abs_diff_eq!(m, 1.0);
        assert_abs_diff_eq!(s, 0.3, epsilon = 1e-15);
        let (m, s) = mean_std_from_covariates(&Covariates::new(0, 29, 4, 3).unwrap()).unwrap();
        assert_abs_diff_eq!(m, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.7, epsilon = 1e-12);
        assert!(Covariates::new(2, 0, 0, 0).is_err());
        assert!(Covariates::new(0, 30, 0, 0).is_err());
        assert!(Covariates::new(0, 0, 5, 0).is_err());
        assert!(Covariates::new(0, 0, 0, 4).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_non_negative() {
        for fam in Family::ALL {
            let a = generate(fam, 40, 5, 1, 2).unwrap();
            let b = generate(fam, 40, 5, 1, 2).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.num_periods(), 40);
            assert!(a.records().iter().all(|r| r.duration >= 0.0));
            assert_ne!(a, generate(fam, 40, 5, 1, 3).unwrap());
        }
    }

    #[test]
    fn noiseless_draws_match_covariate_mean() {
        let c = Covariates::new(1, 12, 3, 2).unwrap();
        let (mean, std) = mean_std_from_covariates(&c).unwrap();
        for fam in Family::ALL {
            let mut model = DurationModel::new(fam);
            let mut srng = seeded(10);
            let mut nrng = seeded(11);
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| model.draw(&c, &mut srng, &mut nrng, 0.0).unwrap()).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            assert!((m - mean).abs() < 3.0 * std / (n as f64).sqrt(), "{fam}: {m} vs {mean}");
        }
    }

    #[test]
    fn encoding_layout() {
        let row = Covariates::new(0, 0, 0, 0).unwrap().encode();
        let ones: Vec<usize> = (0..ENCODED_WIDTH).filter(|&k| row[k] == 1.0).collect();
        assert_eq!(ones, vec![0, 2, 32, 37]);
        let ds = generate(Family::Uniform, 30, 3, 5, 6).unwrap();
        let enc = encode(&ds);
        assert_eq!(enc.data.len(), 90 * ENCODED_WIDTH);
        for r in 0..enc.rows {
            assert_eq!(enc.row(r).iter().sum::<f64>(), 4.0);
            assert_eq!(Covariates::decode(enc.row(r)).unwrap(), ds.records()[r].covariates());
        }
        assert!(Covariates::decode(&[0.0; ENCODED_WIDTH]).is_err());
    }

    #[test]
    fn scaler_min_max() {
        let s = Scaler::fit(&[2.0, 4.0, 6.0]).unwrap();
        let scaled: Vec<f64> = [2.0, 4.0, 6.0].iter().map(|&d| s.scale(d)).collect();
        assert_eq!(scaled, vec![0.0, 0.5, 1.0]);
        for d in [2.0, 3.3, 5.999, 17.0] {
            assert_abs_diff_eq!(s.unscale(s.scale(d)), d, epsilon = 1e-12);
        }
        assert!(Scaler::fit(&[3.0, 3.0]).is_err());
    }

    #[test]
    fn scaled_durations_lie_in_unit_interval() {
        let ds = generate(Family::Logistic, 50, 4, 7, 8).unwrap();
        let sd = ds.scaled_durations();
        assert!(sd.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(sd.contains(&0.0) && sd.contains(&1.0));
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = generate(Family::Beta, 25, 4, 3, 4).unwrap();
        ds.write(&path).unwrap();
        let back = FeatureDataset::read(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.scaler().lo.to_bits(), ds.scaler().lo.to_bits());
        assert_eq!(back.scaler().hi.to_bits(), ds.scaler().hi.to_bits());
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("gender,day,time,intensity,duration\n"));
    }

    #[test]
    fn intensity_shifts_durations_and_rows_are_not_iid() {
        let mut model = DurationModel::new(Family::Normal);
        let mut srng = seeded(1);
        let mut nrng = seeded(2);
        let lowc = Covariates::new(0, 5, 2, 0).unwrap();
        let highc = Covariates::new(0, 5, 2, 3).unwrap();
        let n = 10_000;
        let mean_of = |c: &Covariates, model: &mut DurationModel, s: &mut SeededRng, nz: &mut SeededRng| {
            (0..n).map(|_| model.draw(c, s, nz, 1.0).unwrap()).sum::<f64>() / n as f64
        };
        let low = mean_of(&lowc, &mut model, &mut srng, &mut nrng);
        let high = mean_of(&highc, &mut model, &mut srng, &mut nrng);
        assert!((high - low - 4.5).abs() < 0.1, "difference {}", high - low);

        // between-group variance of means exceeds the within-group variance
        let ds = generate(Family::Normal, 2000, 5, 3, 4).unwrap();
        let mut groups: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
        for r in ds.records() {
            groups.entry(r.intensity).or_default().push(r.duration);
        }
        let means: Vec<f64> = groups.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let grand = means.iter().sum::<f64>() / means.len() as f64;
        let between = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        let within = groups
            .values()
            .zip(&means)
            .map(|(v, m)| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
            .sum::<f64>()
            / means.len() as f64;
        assert!(between > within, "between {between} within {within}");
    }

    #[test]
    fn split_partitions_periods() {
        let ds = generate(Family::Uniform, 50, 3, 1, 1).unwrap();
        let (train, test) = ds.split(0.8, 9).unwrap();
        assert_eq!(train.num_periods(), 40);
        assert_eq!(test.num_periods(), 10);
        let mut all: Vec<JobRecord> = train.records().to_vec();
        all.extend_from_slice(test.records());
        let key = |r: &JobRecord| (r.duration.to_bits(), r.covariates());
        all.sort_by_key(key);
        let mut orig = ds.records().to_vec();
        orig.sort_by_key(key);
        assert_eq!(all, orig);
    }
}
