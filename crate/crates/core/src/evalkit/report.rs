//! CSV and SVG report files.
//!
//! * `summary.csv`: `ranker,iou,auc_log,auc_linear,k_25,k_50,k_75,recall_at_10,recall_at_100,recall_at_1000,average_recall`
//! * `curves.csv`: `ranker,iou,k,recall` for every k in `1..=k_max`
//! * `recall_vs_iou.csv`: `ranker,k,iou,recall`
//! * `hits_<ranker>.csv`: `image_id,gt_index,category,gt_x_min,gt_y_min,gt_x_max,gt_y_max,status,best_index,best_x_min,best_y_min,best_x_max,best_y_max,best_iou,hit_rank`
//! * `recall_vs_k_iou<T>.svg`, `recall_vs_iou.svg`, `density/<image_id>.svg`
//!
//! Floats are written in shortest round-trip form; empty cells mean "none"
//! (an unreached recall target, a missing proposal).

use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::plot::{escape, svg_line_plot, Series};
use super::{EvalReport, HitStatus};
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One image for the proposal-density overlay.
#[derive(Clone, Debug)]
pub struct DensityImage {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    /// Link to the image, relative to the SVG file.
    pub href: Option<String>,
    /// Top-ranked proposals, best first.
    pub proposals: Vec<BBox>,
    pub gt: Vec<(BBox, HitStatus)>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains([',', '"', '\n', '/']) {
        return Err(Error::Data(format!("ranker name {name:?} must be non-empty without , \" / or newlines")));
    }
    Ok(())
}

pub fn write_curve_csv(path: &Path, reports: &[(&str, &EvalReport)]) -> Result<()> {
    let mut s = String::from("ranker,iou,k,recall\n");
    for (name, r) in reports {
        check_name(name)?;
        for c in &r.curves {
            for (i, v) in c.recall.iter().enumerate() {
                let _ = writeln!(s, "{name},{},{},{v}", c.iou, i + 1);
            }
        }
    }
    write_atomic(path, s.as_bytes())
}

/// Parse a `curves.csv` back into `(ranker, iou, recall curve)` triples.
pub fn read_curve_csv(path: &Path) -> Result<Vec<(String, f64, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out: Vec<(String, f64, Vec<f64>)> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = |m: &str| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let iou: f64 = f[1].parse().map_err(|_| bad("bad iou"))?;
        let k: usize = f[2].parse().map_err(|_| bad("bad k"))?;
        let r: f64 = f[3].parse().map_err(|_| bad("bad recall"))?;
        match out.last_mut() {
            Some(last) if last.0 == f[0] && last.1 == iou => {
                if k != last.2.len() + 1 {
                    return Err(bad("k out of sequence"));
                }
                last.2.push(r);
            }
            _ => {
                if k != 1 {
                    return Err(bad("curve does not start at k = 1"));
                }
                out.push((f[0].to_string(), iou, vec![r]));
            }
        }
    }
    Ok(out)
}

fn summary_csv(reports: &[(&str, &EvalReport)]) -> String {
    let mut s = String::from(
        "ranker,iou,auc_log,auc_linear,k_25,k_50,k_75,recall_at_10,recall_at_100,recall_at_1000,average_recall\n",
    );
    for (name, r) in reports {
        for c in &r.curves {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{},{},{},{},{},{}",
                c.iou,
                c.auc_log,
                c.auc_linear,
                opt(c.needed[0]),
                opt(c.needed[1]),
                opt(c.needed[2]),
                c.recall_at(10),
                c.recall_at(100),
                c.recall_at(1000),
                r.average_recall
            );
        }
    }
    s
}

fn hits_csv(r: &EvalReport) -> String {
    let mut s = String::from(
        "image_id,gt_index,category,gt_x_min,gt_y_min,gt_x_max,gt_y_max,status,best_index,best_x_min,best_y_min,best_x_max,best_y_max,best_iou,hit_rank\n",
    );
    for h in &r.hits {
        let g = h.gt.to_array();
        let b = h.best_box.map(|b| b.to_array());
        let bc = |i: usize| opt(b.map(|b| b[i]));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            h.image_id,
            h.gt_index,
            h.category,
            g[0],
            g[1],
            g[2],
            g[3],
            match h.status {
                HitStatus::Hit => "hit",
                HitStatus::Miss => "miss",
            },
            opt(h.best_index),
            bc(0),
            bc(1),
            bc(2),
            bc(3),
            h.best_iou,
            opt(h.hit_rank)
        );
    }
    s
}

fn density_svg(d: &DensityImage) -> String {
    let (w, h) = (d.width, d.height);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    match &d.href {
        Some(href) => {
            let _ = writeln!(
                s,
                r#"<image x="0" y="0" width="{w}" height="{h}" xlink:href="{}" opacity="0.6"/>"#,
                escape(href)
            );
        }
        None => {
            let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="#888"/>"##);
        }
    }
    let _ = writeln!(s, r#"<g fill="yellow" fill-opacity="0.04" stroke="none">"#);
    for p in &d.proposals {
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}"/>"#,
            p.x_min(),
            p.y_min(),
            p.width(),
            p.height()
        );
    }
    s.push_str("</g>\n");
    for (g, status) in &d.gt {
        let color = match status {
            HitStatus::Hit => "#00c000",
            HitStatus::Miss => "#e00000",
        };
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            g.x_min(),
            g.y_min(),
            g.width(),
            g.height()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Write every report file into `out_dir`. The first report supplies the
/// hit statuses drawn in the density overlays.
pub fn dump_reports(
    reports: &[(&str, &EvalReport)],
    density: &[DensityImage],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    for (name, _) in reports {
        check_name(name)?;
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let p = out_dir.join("curves.csv");
    write_curve_csv(&p, reports)?;
    let mut written = vec![p];
    let mut put = |name: &str, body: &str| -> Result<()> {
        let p = out_dir.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put("summary.csv", &summary_csv(reports))?;
    let mut rvi = String::from("ranker,k,iou,recall\n");
    for (name, r) in reports {
        for (t, v) in r.iou_thresholds.iter().zip(&r.recall_vs_iou) {
            let _ = writeln!(rvi, "{name},{},{t},{v}", r.config.k_fixed);
        }
    }
    put("recall_vs_iou.csv", &rvi)?;
    for (name, r) in reports {
        put(&format!("hits_{name}.csv"), &hits_csv(r))?;
        let json = serde_json::to_string_pretty(r).map_err(|e| Error::Data(e.to_string()))?;
        put(&format!("report_{name}.json"), &json)?;
    }
    if let Some((_, first)) = reports.first() {
        for c in &first.curves {
            let series: Vec<Series> = reports
                .iter()
                .filter_map(|(name, r)| {
                    r.curve(c.iou).map(|cv| Series {
                        name,
                        points: cv
                            .recall
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| ((i + 1) as f64, v))
                            .collect(),
                    })
                })
                .collect();
            let svg = svg_line_plot(
                &format!("Recall vs. number of proposals, IoU = {}", c.iou),
                "number of proposals",
                "recall",
                &series,
                true,
            );
            put(&format!("recall_vs_k_iou{}.svg", c.iou), &svg)?;
        }
        let series: Vec<Series> = reports
            .iter()
            .map(|(name, r)| Series {
                name,
                points: r.iou_thresholds.iter().copied().zip(r.recall_vs_iou.iter().copied()).collect(),
            })
            .collect();
        put(
            "recall_vs_iou.svg",
            &svg_line_plot(
                &format!("Recall vs. IoU at {} proposals", first.config.k_fixed),
                "IoU threshold",
                "recall",
                &series,
                false,
            ),
        )?;
    }
    for d in density {
        let name = format!("density/{}.svg", d.image_id);
        put(&name, &density_svg(d))?;
    }
    drop(put);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::{evaluate, EvalConfig, EvalImage};

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn report(gt: Vec<BBox>) -> EvalReport {
        let n = gt.len();
        let imgs = [EvalImage {
            image_id: "img".into(),
            proposals: vec![b(0.0, 0.0, 10.0, 10.0), b(50.0, 50.0, 53.0, 57.0), b(1.0, 0.0, 10.0, 10.0)],
            gt,
            categories: vec![0; n],
        }];
        evaluate(
            &imgs,
            &EvalConfig {
                ious: vec![0.7, 0.5],
                k_max: 7,
                k_fixed: 3,
                ..EvalConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_gt_hits_csv_is_header_only() {
        let r = report(vec![]);
        assert_eq!(hits_csv(&r).lines().count(), 1);
    }

    #[test]
    fn hit_and_miss_rows() {
        let r = report(vec![b(1.0, 0.0, 10.0, 10.0), b(30.0, 30.0, 40.0, 40.0)]);
        let csv = hits_csv(&r);
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].split(',').nth(7), Some("hit"));
        assert_eq!(rows[0].split(',').nth(14), Some("0"));
        assert_eq!(rows[1].split(',').nth(7), Some("miss"));
    }

    #[test]
    fn curve_csv_roundtrip_is_exact() {
        let r = report(vec![b(1.0, 0.0, 10.0, 10.0), b(51.0, 50.0, 53.0, 57.0), b(0.0, 0.0, 3.0, 3.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curves.csv");
        write_curve_csv(&p, &[("a", &r), ("b", &r)]).unwrap();
        let back = read_curve_csv(&p).unwrap();
        assert_eq!(back.len(), 4);
        for (i, (name, iou, curve)) in back.iter().enumerate() {
            let c = &r.curves[i % 2];
            assert_eq!(name, if i < 2 { "a" } else { "b" });
            assert_eq!(*iou, c.iou);
            assert_eq!(curve, &c.recall);
        }
    }

    #[test]
    fn dump_writes_everything() {
        let r = report(vec![b(1.0, 0.0, 10.0, 10.0)]);
        let dir = tempfile::tempdir().unwrap();
        let d = DensityImage {
            image_id: "img".into(),
            width: 64,
            height: 64,
            href: None,
            proposals: vec![b(0.0, 0.0, 10.0, 10.0)],
            gt: vec![(b(1.0, 0.0, 10.0, 10.0), HitStatus::Hit)],
        };
        dump_reports(&[("x", &r)], &[d], dir.path()).unwrap();
        for f in ["summary.csv", "curves.csv", "recall_vs_iou.csv", "hits_x.csv", "recall_vs_iou.svg", "density/img.svg"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        assert!(dir.path().join("recall_vs_k_iou0.7.svg").is_file());
        assert!(dump_reports(&[("a,b", &r)], &[], dir.path()).is_err());
    }
}
