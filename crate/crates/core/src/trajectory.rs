//! Per-iteration records of an optimization run plus a bounded snapshot store.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;

/// Snapshot ring capacity.
pub const DEFAULT_WINDOW: usize = 16;

/// Normalized loss slope `(E_k - E_{k-1}) / E_{k-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slope {
    /// No previous loss (k = 0).
    Undefined,
    /// The previous loss was exactly zero.
    ExactFit,
    Value(f64),
}

impl Slope {
    /// Signed value with the exact-fit marker read as 0.
    pub fn value(self) -> Option<f64> {
        match self {
            Slope::Undefined => None,
            Slope::ExactFit => Some(0.0),
            Slope::Value(v) => Some(v),
        }
    }
}

impl fmt::Display for Slope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slope::Undefined => f.write_str("NA"),
            Slope::ExactFit => f.write_str("exact"),
            Slope::Value(v) => write!(f, "{v:?}"),
        }
    }
}

impl std::str::FromStr for Slope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "NA" | "" => Ok(Slope::Undefined),
            "exact" => Ok(Slope::ExactFit),
            v => v.parse().map(Slope::Value).map_err(|_| Error::Format {
                kind: "trajectory",
                reason: format!("bad slope {v:?}"),
            }),
        }
    }
}

pub fn normalized_slope(e_prev: f64, e_curr: f64) -> Slope {
    if e_prev == 0.0 {
        Slope::ExactFit
    } else {
        Slope::Value((e_curr - e_prev) / e_prev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub k: usize,
    pub loss: f64,
    pub delta: Slope,
    pub lap_var: f64,
    pub psnr_ref: Option<f64>,
}

/// Records plus recent reconstructions.
///
/// Snapshots kept: the last `window` iterates, every local maximum of the
/// sharpness series, and the running argmax of sharpness and of the
/// reference PSNR.
#[derive(Debug, Clone)]
pub struct Trajectory {
    records: Vec<Record>,
    window: usize,
    ring: VecDeque<(usize, Image)>,
    peaks: BTreeMap<usize, Image>,
    sharpest: Option<(usize, Image)>,
    best_ref: Option<(usize, Image)>,
}

impl Trajectory {
    pub fn new(window: usize) -> Self {
        Self {
            records: Vec::new(),
            window: window.max(2),
            ring: VecDeque::new(),
            peaks: BTreeMap::new(),
            sharpest: None,
            best_ref: None,
        }
    }

    /// Records-only trajectory (no snapshots), e.g. read back from CSV.
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let mut t = Self::new(DEFAULT_WINDOW);
        for (i, r) in records.iter().enumerate() {
            if r.k != i {
                return Err(Error::Format {
                    kind: "trajectory",
                    reason: format!("record {i} has k = {}", r.k),
                });
            }
        }
        t.records = records;
        Ok(t)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Appends iteration `records.len()`; the slope is derived from the
    /// previous loss.
    pub fn push(&mut self, loss: f64, lap_var: f64, psnr_ref: Option<f64>, image: &Image) -> &Record {
        let k = self.records.len();
        let delta = match self.records.last() {
            Some(prev) => normalized_slope(prev.loss, loss),
            None => Slope::Undefined,
        };
        self.records.push(Record {
            k,
            loss,
            delta,
            lap_var,
            psnr_ref,
        });
        if k >= 2 {
            let (a, b) = (self.records[k - 2].lap_var, self.records[k - 1].lap_var);
            if a < b && lap_var < b {
                if let Some(img) = self.ring.iter().find(|(j, _)| *j == k - 1).map(|(_, im)| im.clone()) {
                    self.peaks.insert(k - 1, img);
                }
            }
        }
        if self.sharpest.as_ref().is_none_or(|(j, _)| lap_var > self.records[*j].lap_var) {
            self.sharpest = Some((k, image.clone()));
        }
        if let Some(p) = psnr_ref {
            let better = match &self.best_ref {
                None => true,
                Some((j, _)) => self.records[*j].psnr_ref.is_none_or(|q| p > q),
            };
            if better {
                self.best_ref = Some((k, image.clone()));
            }
        }
        if self.ring.len() == self.window {
            self.ring.pop_front();
        }
        self.ring.push_back((k, image.clone()));
        &self.records[k]
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn record(&self, k: usize) -> Option<&Record> {
        self.records.get(k)
    }

    /// The stored reconstruction of iteration `k`, if still held.
    pub fn snapshot(&self, k: usize) -> Option<&Image> {
        self.ring
            .iter()
            .find(|(j, _)| *j == k)
            .map(|(_, im)| im)
            .or_else(|| self.peaks.get(&k))
            .or_else(|| self.sharpest.as_ref().filter(|(j, _)| *j == k).map(|(_, im)| im))
            .or_else(|| self.best_ref.as_ref().filter(|(j, _)| *j == k).map(|(_, im)| im))
    }

    pub fn peak_iterations(&self) -> impl Iterator<Item = usize> + '_ {
        self.peaks.keys().copied()
    }

    pub fn sharpest(&self) -> Option<(usize, &Image)> {
        self.sharpest.as_ref().map(|(k, im)| (*k, im))
    }

    /// Iterate with the highest reference PSNR.
    pub fn best_reference(&self) -> Option<(usize, &Image)> {
        self.best_ref.as_ref().map(|(k, im)| (*k, im))
    }

    /// Number of distinct images currently held.
    pub fn stored_snapshots(&self) -> usize {
        let mut ks: Vec<usize> = self.ring.iter().map(|(k, _)| *k).collect();
        ks.extend(self.peaks.keys());
        ks.extend(self.sharpest.iter().map(|(k, _)| *k));
        ks.extend(self.best_ref.iter().map(|(k, _)| *k));
        ks.sort_unstable();
        ks.dedup();
        ks.len()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn lap_vars(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lap_var).collect()
    }

    /// `(k, psnr)` of the best reference PSNR among the records.
    pub fn oracle(&self) -> Option<(usize, f64)> {
        argmax_psnr(&self.records)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_records_csv(&self.records, path)
    }

    /// Writes every held snapshot as `snap_<k>.dimg` into `dir`.
    pub fn write_snapshots(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut all: BTreeMap<usize, &Image> = BTreeMap::new();
        for (k, im) in self.ring.iter().chain(self.sharpest.iter()).chain(self.best_ref.iter()) {
            all.insert(*k, im);
        }
        for (k, im) in &self.peaks {
            all.insert(*k, im);
        }
        for (k, im) in all {
            io::write_dimg(dir.join(format!("snap_{k}.dimg")), im)?;
        }
        Ok(())
    }
}

pub fn argmax_psnr(records: &[Record]) -> Option<(usize, f64)> {
    records
        .iter()
        .filter_map(|r| r.psnr_ref.map(|p| (r.k, p)))
        .fold(None, |best, (k, p)| match best {
            Some((_, q)) if q >= p => best,
            _ => Some((k, p)),
        })
}

pub const CSV_HEADER: [&str; 5] = ["k", "loss", "delta_k", "lap_var", "psnr_ref"];

pub fn write_records_csv(records: &[Record], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            format!("{:?}", r.loss),
            r.delta.to_string(),
            format!("{:?}", r.lap_var),
            r.psnr_ref.map(|p| format!("{p:?}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let bad = |what: &str, v: &str| Error::Format {
        kind: "trajectory",
        reason: format!("{}: bad {what} {v:?}", path.display()),
    };
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != CSV_HEADER {
        return Err(bad("header", &header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        let f = |i: usize| row.get(i).unwrap_or("").trim();
        let k = f(0).parse().map_err(|_| bad("k", f(0)))?;
        let loss = f(1).parse().map_err(|_| bad("loss", f(1)))?;
        let delta = f(2).parse()?;
        let lap_var = f(3).parse().map_err(|_| bad("lap_var", f(3)))?;
        let psnr_ref = match f(4) {
            "" => None,
            v => Some(v.parse().map_err(|_| bad("psnr_ref", v))?),
        };
        out.push(Record {
            k,
            loss,
            delta,
            lap_var,
            psnr_ref,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;

    fn img(v: f64) -> Image {
        Image::filled(Shape::new(2, 2, 1), v)
    }

    #[test]
    fn slope_cases() {
        assert_eq!(normalized_slope(2.0, 2.0), Slope::Value(0.0));
        assert_eq!(normalized_slope(1.0, 0.9).value().map(|v| (v + 0.1).abs() < 1e-15), Some(true));
        assert_eq!(normalized_slope(0.0, 0.0), Slope::ExactFit);
    }

    #[test]
    fn records_and_peak_pinning() {
        let mut t = Trajectory::new(2);
        let laps = [1.0, 3.0, 2.0, 2.5, 4.0, 1.0, 0.5];
        for (i, &l) in laps.iter().enumerate() {
            t.push(10.0 - i as f64, l, Some(i as f64), &img(i as f64));
        }
        assert_eq!(t.records()[0].delta, Slope::Undefined);
        assert_eq!(t.peak_iterations().collect::<Vec<_>>(), vec![1, 4]);
        assert_eq!(t.snapshot(1), Some(&img(1.0)));
        assert_eq!(t.snapshot(2), None);
        assert_eq!(t.sharpest().unwrap().0, 4);
        assert_eq!(t.oracle(), Some((6, 6.0)));
        assert!(t.stored_snapshots() <= t.window() + t.peak_iterations().count() + 2);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = Trajectory::new(4);
        t.push(1.0, 0.5, None, &img(0.0));
        t.push(0.0, 0.25, Some(30.0), &img(0.0));
        t.push(0.0, 0.125, None, &img(0.0));
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("k,loss,delta_k,lap_var,psnr_ref\n0,1.0,NA,0.5,\n"));
        let back = read_records_csv(&p).unwrap();
        assert_eq!(back, t.records());
        assert_eq!(back[2].delta, Slope::ExactFit);
    }
}
