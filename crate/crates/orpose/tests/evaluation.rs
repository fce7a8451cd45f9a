mod common;

use orpose::dataset::{self, LabelAccess};
use orpose::pipeline::{evaluate_with, gamma_trace, severity_chart, SEVERITIES};
use orpose::report::{pck_from_records, winners_by_severity, Flags, ResultRow, ResultTable};
use orpose_core::pose::Pose;
use orpose_core::skeleton::SkeletonSpec;
use orpose_core::synth::{Domain, DomainStyle, SeverityMix, SplitSpec};
use orpose_core::train::PCK_ALPHA;

fn eval_split(dir: &std::path::Path, n: usize) -> SkeletonSpec {
    let skel = SkeletonSpec::default13();
    let s = SplitSpec { domain: Domain::Target, count: n, severity: SeverityMix::Uniform { min: 1, max: 5 }, seed: 21 };
    dataset::write_split(dir, "target_eval", &s, &DomainStyle::target(), &skel, LabelAccess::EvalOnly).unwrap();
    skel
}

#[test]
fn oracle_predictor_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let skel = eval_split(dir.path(), 6);
    let gt = dataset::read_poses(dir.path()).unwrap();
    let ev = evaluate_with(dir.path(), &skel, &mut |i, _| Ok(gt[i].clone())).unwrap();
    let row = ResultRow::from_pck("oracle", "target_eval", None, Flags::default(), &ev.pck, &skel);
    assert_eq!(row.avg, 100.0);
    assert!(row.groups.iter().all(|&g| g == 100.0));
}

#[test]
fn avg_is_recomputable_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let skel = eval_split(dir.path(), 8);
    let gt = dataset::read_poses(dir.path()).unwrap();
    // shifts joint k of sample i by (i + k) pixels: some hits, some misses
    let ev = evaluate_with(dir.path(), &skel, &mut |i, _| {
        Ok(Pose::new(gt[i].coords.iter().enumerate().map(|(k, c)| [c[0] + (i + k) as f64, c[1]]).collect()))
    })
    .unwrap();
    let threshold = PCK_ALPHA * 256.0;
    assert_eq!(pck_from_records(&ev.records, 13, threshold), ev.pck);
    let row = ResultRow::from_pck("m", "target_eval", None, Flags::default(), &ev.pck, &skel);
    let mut per_joint = Vec::new();
    for j in skel.evaluated_joints() {
        let hits: Vec<bool> = ev.records.iter().filter_map(|r| r.hits[j]).collect();
        if !hits.is_empty() {
            per_joint.push(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64);
        }
    }
    let want = 100.0 * per_joint.iter().sum::<f64>() / per_joint.len() as f64;
    assert!((row.avg - want).abs() < 1e-9, "{} vs {want}", row.avg);
    assert!(row.avg > 0.0 && row.avg < 100.0);
}

#[test]
fn gamma_trace_endpoints() {
    let t = gamma_trace(5).unwrap();
    assert_eq!(t.len(), 6);
    assert_eq!(t[0], (0.0, 1.0));
    assert_eq!(t[5].0, 5.0);
    assert!((t[5].1 - (-1.0f64).exp()).abs() < 1e-12);
}

fn severity_table(skel: &SkeletonSpec) -> ResultTable {
    let mut t = ResultTable::new(skel);
    let ng = skel.groups.len();
    for (m, base) in [("source_only", 60.0), ("full", 70.0), ("with_prior", 69.0)] {
        for s in SEVERITIES {
            let avg = base - 4.0 * s as f64 + if m == "with_prior" && s == 5 { 12.0 } else { 0.0 };
            t.rows.push(ResultRow {
                method: m.into(),
                split: "target_eval_sweep".into(),
                severity: Some(s),
                flags: Flags::default(),
                groups: vec![avg; ng],
                groups_std: vec![0.5; ng],
                avg,
                avg_std: 0.5,
                seeds: 3,
                failed: None,
            });
        }
    }
    t
}

#[test]
fn severity_chart_has_five_ticks() {
    let skel = SkeletonSpec::default13();
    let chart = severity_chart(&severity_table(&skel));
    assert_eq!(chart.x_tick_positions(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(chart.series.len(), 3);
    let svg = chart.render_svg().unwrap();
    let labels: Vec<&str> = svg.split("<text").skip(1).filter_map(|t| Some(t.split_once('>')?.1.split("</text>").next()?.trim())).collect();
    for s in 1..=5 {
        assert!(labels.contains(&s.to_string().as_str()), "tick {s} not drawn");
    }
}

#[test]
fn winner_is_argmax_of_csv() {
    let dir = tempfile::tempdir().unwrap();
    let skel = SkeletonSpec::default13();
    severity_table(&skel).write(dir.path(), "severity").unwrap();
    let back = ResultTable::read_csv(&dir.path().join("severity.csv")).unwrap();
    let winners = winners_by_severity(&back);
    assert_eq!(winners.len(), 5);
    let text = std::fs::read_to_string(dir.path().join("severity.csv")).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let avg_col = rd.headers().unwrap().iter().position(|h| h == "Avg").unwrap();
    let records: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    for (sev, method, avg) in winners {
        let mut best: Option<(&str, f64)> = None;
        for rec in records.iter().filter(|r| r.get(2) == Some(&sev.to_string()[..])) {
            let v: f64 = rec.get(avg_col).unwrap().parse().unwrap();
            if best.is_none_or(|b| v > b.1) {
                best = Some((rec.get(0).unwrap(), v));
            }
        }
        assert_eq!(best, Some((method.as_str(), avg)));
    }
    assert_eq!(winners_by_severity(&back)[4].1, "with_prior");
}
