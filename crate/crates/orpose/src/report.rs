//! Result tables, per-sample records and pose overlays.

use std::fmt::Write as _;
use std::path::Path;

use orpose_core::metrics::{joint_hits, PckResult};
use orpose_core::pose::Pose;
use orpose_core::skeleton::SkeletonSpec;
use orpose_core::synth::Image;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::image_io;

/// Which loss terms a method uses, for the ablation layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flags {
    pub src_ocl: bool,
    pub pred: bool,
    pub ant: bool,
    pub vis: bool,
}

/// One table row; PCK values are percentages. `*_std` are sample standard
/// deviations over seeds (0 for a single seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub split: String,
    pub severity: Option<u8>,
    pub flags: Flags,
    pub groups: Vec<f64>,
    pub groups_std: Vec<f64>,
    pub avg: f64,
    pub avg_std: f64,
    pub seeds: usize,
    /// Set when the run behind this row failed; the numbers are then NaN.
    pub failed: Option<String>,
}

impl ResultRow {
    pub fn from_pck(method: &str, split: &str, severity: Option<u8>, flags: Flags, pck: &PckResult, skel: &SkeletonSpec) -> Self {
        let fr = pck.fractions();
        let groups = skel
            .groups
            .iter()
            .map(|g| {
                let v: Vec<f64> = g.joints.iter().filter_map(|&j| fr[j]).collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    100.0 * v.iter().sum::<f64>() / v.len() as f64
                }
            })
            .collect::<Vec<_>>();
        let avg = 100.0 * pck.mean_over(Some(&skel.evaluated_joints()));
        ResultRow {
            method: method.into(),
            split: split.into(),
            severity,
            flags,
            groups_std: vec![0.0; groups.len()],
            groups,
            avg,
            avg_std: 0.0,
            seeds: 1,
            failed: None,
        }
    }

    pub fn failed(method: &str, split: &str, severity: Option<u8>, flags: Flags, groups: usize, why: &str) -> Self {
        ResultRow {
            method: method.into(),
            split: split.into(),
            severity,
            flags,
            groups: vec![f64::NAN; groups],
            groups_std: vec![f64::NAN; groups],
            avg: f64::NAN,
            avg_std: f64::NAN,
            seeds: 0,
            failed: Some(why.replace('\n', " ")),
        }
    }

    /// Mean and standard deviation over per-seed rows of the same method.
    /// Failed seeds are left out; the row is failed if all of them are.
    pub fn aggregate(rows: &[ResultRow]) -> Result<ResultRow> {
        let first = rows.first().ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
        let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.failed.is_none()).collect();
        if ok.is_empty() {
            let why = first.failed.clone().unwrap_or_default();
            return Ok(ResultRow::failed(&first.method, &first.split, first.severity, first.flags, first.groups.len(), &why));
        }
        let col = |f: &dyn Fn(&ResultRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (avg, avg_std) = col(&|r| r.avg);
        let (groups, groups_std) = (0..first.groups.len()).map(|g| col(&|r| r.groups[g])).unzip();
        Ok(ResultRow { groups, groups_std, avg, avg_std, seeds: ok.len(), failed: None, ..first.clone() })
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub group_names: Vec<String>,
    pub rows: Vec<ResultRow>,
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn parse_opt(path: &Path, s: &str) -> Result<f64> {
    if s.is_empty() {
        Ok(f64::NAN)
    } else {
        s.parse().map_err(|_| Error::format(path, format!("bad number {s:?}")))
    }
}

impl ResultTable {
    pub fn new(skel: &SkeletonSpec) -> Self {
        ResultTable { group_names: skel.groups.iter().map(|g| g.name.clone()).collect(), rows: Vec::new() }
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["method", "split", "severity", "src_ocl", "pred", "ant", "vis"].map(String::from).to_vec();
        h.extend(self.group_names.iter().cloned());
        h.push("Avg".into());
        h.extend(self.group_names.iter().map(|g| format!("{g}_std")));
        h.extend(["Avg_std", "seeds", "status"].map(String::from));
        h
    }

    /// Full-precision CSV; values are exact `f64` round-trips.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Config(e.to_string());
        w.write_record(self.header()).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![r.method.clone(), r.split.clone(), r.severity.map(|s| s.to_string()).unwrap_or_default()];
            let f = r.flags;
            rec.extend([f.src_ocl, f.pred, f.ant, f.vis].map(|b| u8::from(b).to_string()));
            rec.extend(r.groups.iter().map(|&v| fmt_opt(v)));
            rec.push(fmt_opt(r.avg));
            rec.extend(r.groups_std.iter().map(|&v| fmt_opt(v)));
            rec.push(fmt_opt(r.avg_std));
            rec.push(r.seeds.to_string());
            rec.push(r.failed.as_ref().map(|m| format!("failed: {m}")).unwrap_or_else(|| "ok".into()));
            w.write_record(rec).map_err(io)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fsutil::read_string(path)?;
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().map_err(|e| Error::format(path, e))?.iter().map(String::from).collect();
        if header.len() < 11 || (header.len() - 11) % 2 != 0 || header[0] != "method" {
            return Err(Error::format(path, "unexpected result table header"));
        }
        let ng = (header.len() - 11) / 2;
        let group_names = header[7..7 + ng].to_vec();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| Error::format(path, e))?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| parse_opt(path, get(i));
            let flag = |i: usize| get(i) == "1";
            let status = get(header.len() - 1);
            rows.push(ResultRow {
                method: get(0).into(),
                split: get(1).into(),
                severity: if get(2).is_empty() { None } else { Some(get(2).parse().map_err(|_| Error::format(path, "bad severity"))?) },
                flags: Flags { src_ocl: flag(3), pred: flag(4), ant: flag(5), vis: flag(6) },
                groups: (0..ng).map(|g| num(7 + g)).collect::<Result<_>>()?,
                avg: num(7 + ng)?,
                groups_std: (0..ng).map(|g| num(8 + ng + g)).collect::<Result<_>>()?,
                avg_std: num(8 + 2 * ng)?,
                seeds: get(9 + 2 * ng).parse().map_err(|_| Error::format(path, "bad seed count"))?,
                failed: status.strip_prefix("failed: ").map(String::from),
            });
        }
        Ok(ResultTable { group_names, rows })
    }

    /// Aligned text with `mean ± std` cells when more than one seed was run.
    pub fn to_text(&self) -> String {
        let mut head: Vec<String> = ["Method", "Split", "L_src^ocl", "L_pred", "L_ant", "L_vis"].map(String::from).to_vec();
        head.extend(self.group_names.iter().cloned());
        head.push("Avg".into());
        let cell = |m: f64, s: f64, n: usize| {
            if m.is_nan() {
                "-".to_string()
            } else if n > 1 {
                format!("{m:.1} ± {s:.1}")
            } else {
                format!("{m:.1}")
            }
        };
        let mark = |b: bool| if b { "x" } else { "" }.to_string();
        let mut body = Vec::new();
        for r in &self.rows {
            let split = match r.severity {
                Some(s) => format!("{} (sev {s})", r.split),
                None => r.split.clone(),
            };
            let mut line = vec![r.method.clone(), split, mark(r.flags.src_ocl), mark(r.flags.pred), mark(r.flags.ant), mark(r.flags.vis)];
            line.extend(r.groups.iter().zip(&r.groups_std).map(|(&m, &s)| cell(m, s, r.seeds)));
            line.push(cell(r.avg, r.avg_std, r.seeds));
            if let Some(f) = &r.failed {
                line.push(format!("FAILED: {f}"));
            }
            body.push(line);
        }
        let cols = head.len();
        let widths: Vec<usize> = (0..cols).map(|c| body.iter().map(|l| l[c].chars().count()).chain([head[c].chars().count()]).max().unwrap()).collect();
        let mut out = String::new();
        for line in std::iter::once(&head).chain(&body) {
            let cells: Vec<String> = line.iter().enumerate().map(|(c, s)| if c < cols { format!("{s:<w$}", w = widths[c]) } else { s.clone() }).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fsutil::write_bytes(&dir.join(format!("{stem}.csv")), self.to_csv()?.as_bytes())?;
        fsutil::write_bytes(&dir.join(format!("{stem}.txt")), self.to_text().as_bytes())
    }
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub severity: u8,
    pub pred: Vec<[f64; 2]>,
    pub gt: Vec<[f64; 2]>,
    /// Pixel distance per joint; `None` where the ground truth is invalid.
    pub errors: Vec<Option<f64>>,
    pub hits: Vec<Option<bool>>,
}

impl SampleRecord {
    pub fn new(id: usize, severity: u8, pred: &Pose, gt: &Pose, threshold: f64) -> Result<Self> {
        let hits = joint_hits(pred, gt, threshold)?;
        let errors = pred
            .coords
            .iter()
            .zip(&gt.coords)
            .zip(&gt.valid)
            .map(|((p, g), &v)| v.then(|| (p[0] - g[0]).hypot(p[1] - g[1])))
            .collect();
        Ok(SampleRecord { id, severity, pred: pred.coords.clone(), gt: gt.coords.clone(), errors, hits })
    }

    pub fn mean_error(&self) -> f64 {
        let v: Vec<f64> = self.errors.iter().flatten().copied().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// Re-tallies PCK from per-sample records.
pub fn pck_from_records(records: &[SampleRecord], joints: usize, threshold: f64) -> PckResult {
    let mut correct = vec![0; joints];
    let mut evaluated = vec![0; joints];
    for r in records {
        for (j, h) in r.hits.iter().enumerate() {
            if let Some(h) = h {
                evaluated[j] += 1;
                correct[j] += usize::from(*h);
            }
        }
    }
    PckResult { correct, evaluated, threshold }
}

fn draw_line(img: &mut Image, a: [f64; 2], b: [f64; 2], rgb: [u8; 3], radius: i64) {
    let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = ((a[0] + t * (b[0] - a[0])).round() as i64, (a[1] + t * (b[1] - a[1])).round() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as usize) < img.width && (py as usize) < img.height {
                    img.set(px as usize, py as usize, rgb);
                }
            }
        }
    }
}

/// Draws ground truth (green) and prediction (red) skeletons on a copy of `img`.
pub fn overlay(img: &Image, gt: &[[f64; 2]], pred: &[[f64; 2]], skel: &SkeletonSpec) -> Image {
    let mut out = img.clone();
    for (pose, rgb) in [(gt, [20, 200, 60]), (pred, [230, 30, 30])] {
        for &(a, b) in &skel.bones {
            draw_line(&mut out, pose[a], pose[b], rgb, 1);
        }
        for &p in pose {
            draw_line(&mut out, p, p, rgb, 2);
        }
    }
    out
}

/// Writes best-N and worst-N overlays by mean joint error.
pub fn write_overlays(dir: &Path, records: &[SampleRecord], images: &dyn Fn(usize) -> Result<Image>, skel: &SkeletonSpec, n: usize) -> Result<()> {
    if n == 0 || records.is_empty() {
        return Ok(());
    }
    let mut order: Vec<&SampleRecord> = records.iter().collect();
    order.sort_by(|a, b| a.mean_error().total_cmp(&b.mean_error()).then(a.id.cmp(&b.id)));
    let n = n.min(order.len());
    let picks = order[..n].iter().map(|r| ("best", *r)).chain(order[order.len() - n..].iter().rev().map(|r| ("worst", *r)));
    for (rank, (tag, r)) in picks.enumerate() {
        let img = overlay(&images(r.id)?, &r.gt, &r.pred, skel);
        image_io::write_rgb(&dir.join(format!("{tag}_{:02}_{:05}.png", rank % n, r.id)), &img)?;
    }
    Ok(())
}

/// Winner (highest mean Avg, first on ties) for each severity present.
pub fn winners_by_severity(table: &ResultTable) -> Vec<(u8, String, f64)> {
    let mut sev: Vec<u8> = table.rows.iter().filter_map(|r| r.severity).collect();
    sev.sort_unstable();
    sev.dedup();
    sev.into_iter()
        .filter_map(|s| {
            table
                .rows
                .iter()
                .filter(|r| r.severity == Some(s) && !r.avg.is_nan())
                .fold(None::<&ResultRow>, |best, r| match best {
                    Some(b) if b.avg >= r.avg => Some(b),
                    _ => Some(r),
                })
                .map(|r| (s, r.method.clone(), r.avg))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, sev: Option<u8>, avg: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            split: "target_eval".into(),
            severity: sev,
            flags: Flags { src_ocl: true, ..Flags::default() },
            groups: vec![avg; 6],
            groups_std: vec![0.5; 6],
            avg,
            avg_std: 0.25,
            seeds: 3,
            failed: None,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let skel = SkeletonSpec::default13();
        let mut t = ResultTable::new(&skel);
        t.rows.push(row("a", None, 1.0 / 3.0));
        t.rows.push(row("b", Some(2), 71.25));
        t.rows.push(ResultRow::failed("c", "target_eval", None, Flags::default(), 6, "boom"));
        let dir = tempfile::tempdir().unwrap();
        t.write(dir.path(), "t").unwrap();
        let back = ResultTable::read_csv(&dir.path().join("t.csv")).unwrap();
        assert_eq!(back.group_names, t.group_names);
        assert_eq!(back.rows[..2], t.rows[..2]);
        assert_eq!(back.rows[2].failed.as_deref(), Some("boom"));
        assert!(t.to_text().contains("FAILED: boom"));
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        let rows = [row("m", None, 60.0), row("m", None, 70.0), row("m", None, 80.0)];
        let a = ResultRow::aggregate(&rows).unwrap();
        assert_eq!(a.avg, 70.0);
        assert!((a.avg_std - 10.0).abs() < 1e-12);
        assert_eq!(a.seeds, 3);
    }

    #[test]
    fn winners_pick_argmax() {
        let skel = SkeletonSpec::default13();
        let mut t = ResultTable::new(&skel);
        t.rows = vec![row("a", Some(1), 50.0), row("b", Some(1), 60.0), row("a", Some(2), 40.0), row("b", Some(2), 30.0)];
        assert_eq!(winners_by_severity(&t), vec![(1, "b".into(), 60.0), (2, "a".into(), 40.0)]);
    }

    #[test]
    fn records_reproduce_pck() {
        let gt = Pose::new(vec![[10.0, 10.0], [50.0, 50.0]]);
        let pred = Pose::new(vec![[12.0, 10.0], [90.0, 50.0]]);
        let r = SampleRecord::new(0, 1, &pred, &gt, 12.8).unwrap();
        assert_eq!(r.errors, vec![Some(2.0), Some(40.0)]);
        let p = pck_from_records(&[r], 2, 12.8);
        assert_eq!(p.correct, vec![1, 0]);
        assert_eq!(p.evaluated, vec![1, 1]);
    }
}
