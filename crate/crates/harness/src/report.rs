//! Comparison and gap reports, their aggregates, and CSV/JSON output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scheduler: String,
    pub scene_seed: u64,
    pub dynamic: bool,
    pub motion: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub score: f64,
    /// Frame count; a mean for schedulers averaged over several episodes.
    pub frames: f64,
    /// `iso/shutter` grid indices in bracket order, space separated.
    pub settings: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scheduler: String,
    /// `all`, `dynamic` or `static`.
    pub subset: String,
    pub n: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub scheduler: String,
    pub bucket: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Absent for empty buckets.
    pub mean_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    /// Scene seed, or `mean` for the summary row.
    pub scene: String,
    pub ours: f64,
    pub worst: f64,
    pub average: f64,
    pub best: f64,
    /// `(ours − worst) / (best − worst)`; 1 when every candidate ties.
    pub attainment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: Metadata,
    pub rows: Vec<SceneRow>,
    pub aggregates: Vec<Aggregate>,
    pub buckets: Vec<BucketRow>,
    pub gap: Vec<GapRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> (usize, f64) {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n, if n == 0 { f64::NAN } else { s / n as f64 })
}

/// Scheduler names in first-appearance order.
pub fn schedulers(rows: &[SceneRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.scheduler) {
            out.push(r.scheduler.clone());
        }
    }
    out
}

pub fn aggregates(rows: &[SceneRow]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for name in schedulers(rows) {
        for subset in ["all", "dynamic", "static"] {
            let sel: Vec<&SceneRow> = rows
                .iter()
                .filter(|r| r.scheduler == name)
                .filter(|r| match subset {
                    "dynamic" => r.dynamic,
                    "static" => !r.dynamic,
                    _ => true,
                })
                .collect();
            if sel.is_empty() {
                continue;
            }
            let (n, mean_psnr) = mean(sel.iter().map(|r| r.psnr));
            out.push(Aggregate {
                scheduler: name.clone(),
                subset: subset.into(),
                n,
                mean_psnr,
                mean_ssim: mean(sel.iter().map(|r| r.ssim)).1,
                mean_score: mean(sel.iter().map(|r| r.score)).1,
            });
        }
    }
    out
}

/// Label and bounds of each bucket: `0` holds motionless scenes, then
/// `(e[i], e[i+1]]`.
pub fn bucket_bounds(edges: &[f64]) -> Vec<(String, f64, f64)> {
    let mut out = vec![("0".to_string(), 0.0, 0.0)];
    out.extend(edges.windows(2).map(|w| (format!("({},{}]", w[0], w[1]), w[0], w[1])));
    out
}

pub fn bucket_of(motion: f64, lo: f64, hi: f64) -> bool {
    if hi == 0.0 {
        motion == 0.0
    } else {
        motion > lo && motion <= hi
    }
}

pub fn buckets(rows: &[SceneRow], edges: &[f64]) -> Vec<BucketRow> {
    let mut out = Vec::new();
    for name in schedulers(rows) {
        for (label, lo, hi) in bucket_bounds(edges) {
            let (n, m) = mean(rows.iter().filter(|r| r.scheduler == name && bucket_of(r.motion, lo, hi)).map(|r| r.psnr));
            out.push(BucketRow { scheduler: name.clone(), bucket: label, lo, hi, n, mean_psnr: (n > 0).then_some(m) });
        }
    }
    out
}

pub fn attainment(ours: f64, worst: f64, best: f64) -> f64 {
    if best > worst {
        (ours - worst) / (best - worst)
    } else {
        1.0
    }
}

/// Gap rows plus a trailing `mean` row.
pub fn gap_table(per_scene: Vec<GapRow>) -> Vec<GapRow> {
    let mut out = per_scene;
    if out.is_empty() {
        return out;
    }
    let n = out.len() as f64;
    let avg = |f: fn(&GapRow) -> f64| out.iter().map(f).sum::<f64>() / n;
    let row = GapRow {
        scene: "mean".into(),
        ours: avg(|r| r.ours),
        worst: avg(|r| r.worst),
        average: avg(|r| r.average),
        best: avg(|r| r.best),
        attainment: avg(|r| r.attainment),
    };
    out.push(row);
    out
}

/// Degradation of each scheduler's bucket PSNR from the lowest to the highest
/// populated bucket.
pub fn motion_degradation(report: &Report, scheduler: &str) -> Option<f64> {
    let b: Vec<f64> = report
        .buckets
        .iter()
        .filter(|r| r.scheduler == scheduler)
        .filter_map(|r| r.mean_psnr)
        .collect();
    Some(b.first()? - b.last()?)
}

impl Report {
    pub fn new(meta: Metadata, rows: Vec<SceneRow>, edges: &[f64], gap: Vec<GapRow>) -> Self {
        let aggregates = aggregates(&rows);
        let buckets = buckets(&rows, edges);
        Self { meta, rows, aggregates, buckets, gap }
    }

    pub fn aggregate(&self, scheduler: &str, subset: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.scheduler == scheduler && a.subset == subset)
    }

    /// Every aggregate must be re-derivable from the rows, and every
    /// scheduler must cover the same scenes.
    pub fn check_consistency(&self, edges: &[f64]) -> Result<()> {
        let names = schedulers(&self.rows);
        let scenes = |n: &str| -> Vec<u64> { self.rows.iter().filter(|r| r.scheduler == n).map(|r| r.scene_seed).collect() };
        if let Some(first) = names.first() {
            let want = scenes(first);
            if let Some(bad) = names.iter().find(|n| scenes(n) != want) {
                return Err(HarnessError::Report(format!("scheduler {bad} covers different scenes")));
            }
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0) || (a.is_nan() && b.is_nan());
        let again = aggregates(&self.rows);
        if again.len() != self.aggregates.len()
            || again.iter().zip(&self.aggregates).any(|(x, y)| {
                x.scheduler != y.scheduler
                    || x.subset != y.subset
                    || x.n != y.n
                    || !close(x.mean_psnr, y.mean_psnr)
                    || !close(x.mean_ssim, y.mean_ssim)
                    || !close(x.mean_score, y.mean_score)
            })
        {
            return Err(HarnessError::Report("aggregates differ from the rows".into()));
        }
        if buckets(&self.rows, edges) != self.buckets {
            return Err(HarnessError::Report("buckets differ from the rows".into()));
        }
        Ok(())
    }

    /// Writes `<stem>.json` and one CSV per table; returns the paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        paths.push(json);
        paths.push(write_csv(dir, &format!("{stem}_rows.csv"), &self.rows)?);
        paths.push(write_csv(dir, &format!("{stem}_aggregates.csv"), &self.aggregates)?);
        paths.push(write_csv(dir, &format!("{stem}_buckets.csv"), &self.buckets)?);
        if !self.gap.is_empty() {
            paths.push(write_csv(dir, &format!("{stem}_gap.csv"), &self.gap)?);
        }
        Ok(paths)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample_rows() -> Vec<SceneRow> {
        let mut rows = Vec::new();
        for (k, name) in ["agent", "fixed"].iter().enumerate() {
            for (i, motion) in [0.0, 5.0, 20.0, 45.0, 50.0].iter().enumerate() {
                rows.push(SceneRow {
                    scheduler: name.to_string(),
                    scene_seed: i as u64,
                    dynamic: *motion > 0.0,
                    motion: *motion,
                    psnr: 30.0 - motion / 10.0 + k as f64,
                    ssim: 0.9,
                    score: -0.01 * (i + 1) as f64,
                    frames: 3.0,
                    settings: "6/7 6/1 6/13".into(),
                });
            }
        }
        rows
    }

    fn meta() -> Metadata {
        Metadata { config_hash: "h".into(), seed: 0, version: "0".into(), checkpoint_hash: "c".into() }
    }

    #[test]
    fn aggregates_match_independent_means() {
        let rows = sample_rows();
        let rep = Report::new(meta(), rows.clone(), &[0.0, 15.0, 30.0, 60.0], vec![]);
        let dyn_agent: Vec<f64> = rows.iter().filter(|r| r.scheduler == "agent" && r.dynamic).map(|r| r.psnr).collect();
        let want = dyn_agent.iter().sum::<f64>() / dyn_agent.len() as f64;
        assert!((rep.aggregate("agent", "dynamic").unwrap().mean_psnr - want).abs() < 1e-12);
        assert_eq!(rep.aggregate("fixed", "all").unwrap().n, 5);
        rep.check_consistency(&[0.0, 15.0, 30.0, 60.0]).unwrap();
        let mut broken = rep.clone();
        broken.aggregates[0].mean_psnr += 1.0;
        assert!(broken.check_consistency(&[0.0, 15.0, 30.0, 60.0]).is_err());
        let mut gappy = rep;
        gappy.rows.pop();
        gappy.aggregates = aggregates(&gappy.rows);
        gappy.buckets = buckets(&gappy.rows, &[0.0, 15.0, 30.0, 60.0]);
        assert!(gappy.check_consistency(&[0.0, 15.0, 30.0, 60.0]).is_err());
    }

    #[test]
    fn buckets_and_degradation() {
        let rep = Report::new(meta(), sample_rows(), &[0.0, 15.0, 30.0, 60.0], vec![]);
        let agent: Vec<&BucketRow> = rep.buckets.iter().filter(|b| b.scheduler == "agent").collect();
        assert_eq!(agent.iter().map(|b| b.n).collect::<Vec<_>>(), vec![1, 1, 1, 2]);
        assert!((motion_degradation(&rep, "agent").unwrap() - 4.75).abs() < 1e-12);
        let empty = Report::new(meta(), sample_rows(), &[0.0, 15.0, 30.0, 60.0, 90.0], vec![]);
        assert!(empty.buckets.iter().any(|b| b.mean_psnr.is_none()));
    }

    #[test]
    fn gap_summary_row() {
        let t = gap_table(vec![
            GapRow { scene: "1".into(), ours: -2.0, worst: -4.0, average: -3.0, best: -1.0, attainment: attainment(-2.0, -4.0, -1.0) },
            GapRow { scene: "2".into(), ours: -1.0, worst: -1.0, average: -1.0, best: -1.0, attainment: attainment(-1.0, -1.0, -1.0) },
        ]);
        assert_eq!(t.len(), 3);
        assert!((t[0].attainment - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(t[1].attainment, 1.0);
        assert_eq!(t[2].scene, "mean");
        assert!((t[2].ours + 1.5).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rep = Report::new(meta(), sample_rows(), &[0.0, 15.0, 30.0, 60.0], vec![]);
        rep.write(dir.path(), "compare").unwrap();
        let rows: Vec<SceneRow> = read_csv(&dir.path().join("compare_rows.csv")).unwrap();
        assert_eq!(rows, rep.rows);
        let b: Vec<BucketRow> = read_csv(&dir.path().join("compare_buckets.csv")).unwrap();
        assert_eq!(b, rep.buckets);
        assert_eq!(Report::read_json(&dir.path().join("compare.json")).unwrap(), rep);
    }
}
