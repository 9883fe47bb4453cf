//! SVG renderings of sweep tables.

use std::collections::BTreeMap;
use std::path::Path;

use advspur_core::experiments::{Experiment, ModelKind, SweepRecord, SweepTable};
use anyhow::{anyhow, Result};
use plotters::prelude::*;

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("plot rendering failed: {e}")
}

fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &Series,
) -> Result<()> {
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Ok(());
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(err)?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(err)?
            .label(label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

fn heatmap(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut scales: Vec<f64> = records.iter().map(|r| r.scale).collect();
    let mut eps: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
    for v in [&mut scales, &mut eps] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let index = |v: &[f64], x: f64| v.iter().position(|&y| y == x).unwrap_or(0);
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("NFS by spurious scale and budget", ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0..eps.len(), 0..scales.len())
        .map_err(err)?;
    let eps_labels = eps.clone();
    let scale_labels = scales.clone();
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("epsilon")
        .y_desc("spurious scale")
        .x_label_formatter(&|i| {
            eps_labels
                .get(*i)
                .map(|v| format!("{v}"))
                .unwrap_or_default()
        })
        .y_label_formatter(&|i| {
            scale_labels
                .get(*i)
                .map(|v| format!("{v}"))
                .unwrap_or_default()
        })
        .draw()
        .map_err(err)?;
    chart
        .draw_series(records.iter().map(|r| {
            let (i, j) = (index(&eps, r.epsilon), index(&scales, r.scale));
            let shade = ViridisRGB::get_color(r.nfs);
            Rectangle::new([(i, j), (i + 1, j + 1)], shade.filled())
        }))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

struct ViridisRGB;

impl ViridisRGB {
    /// Piecewise-linear blue-green-yellow ramp on `[0, 1]`.
    fn get_color(t: f64) -> RGBColor {
        const STOPS: [(f64, f64, f64); 5] = [
            (68.0, 1.0, 84.0),
            (59.0, 82.0, 139.0),
            (33.0, 145.0, 140.0),
            (94.0, 201.0, 98.0),
            (253.0, 231.0, 37.0),
        ];
        let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
        let k = (t.floor() as usize).min(STOPS.len() - 2);
        let f = t - k as f64;
        let (a, b) = (STOPS[k], STOPS[k + 1]);
        let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
        RGBColor(mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
    }
}

fn push(map: &mut BTreeMap<String, Vec<(f64, f64)>>, key: String, point: (f64, f64)) {
    map.entry(key).or_default().push(point);
}

/// Render the table's chart to `path`.
pub fn render(experiment: Experiment, table: &SweepTable, path: &Path) -> Result<()> {
    let records = &table.records;
    match experiment {
        Experiment::NfsSweep => {
            let mut map = BTreeMap::new();
            for r in records {
                push(
                    &mut map,
                    format!("{} eta={} m={} c={}", r.norm, r.eta, r.m, r.c),
                    (r.epsilon, r.nfs),
                );
            }
            line_chart(
                path,
                "NFS of the adversarial fit",
                "epsilon",
                "NFS",
                &map.into_iter().collect(),
            )
        }
        Experiment::ScaleHeatmap => heatmap(path, records),
        Experiment::ShiftRobustness => {
            // One curve per model at the largest budget of each norm.
            let mut top: BTreeMap<String, f64> = BTreeMap::new();
            for r in records {
                let e = top.entry(r.norm.to_string()).or_insert(r.epsilon);
                *e = e.max(r.epsilon);
            }
            let mut map = BTreeMap::new();
            for r in records {
                if Some(&r.epsilon) == top.get(&r.norm.to_string()) {
                    let kind = if r.model == ModelKind::Core {
                        "core"
                    } else {
                        "total"
                    };
                    let key = format!("{} {kind} eps={}", r.norm, r.epsilon);
                    push(
                        &mut map,
                        key,
                        (r.sigma_q.unwrap_or(0.0), r.shifted_loss.unwrap_or(f64::NAN)),
                    );
                }
            }
            line_chart(
                path,
                "Loss under correlation shift",
                "sigma_Q",
                "mean shifted loss",
                &map.into_iter().collect(),
            )
        }
        Experiment::Plateau => {
            let mut top: BTreeMap<String, f64> = BTreeMap::new();
            for r in records {
                let e = top.entry(r.norm.to_string()).or_insert(r.epsilon);
                *e = e.max(r.epsilon);
            }
            let mut map = BTreeMap::new();
            for r in records {
                if Some(&r.epsilon) == top.get(&r.norm.to_string()) {
                    push(
                        &mut map,
                        format!("{} c={} eps={}", r.norm, r.c, r.epsilon),
                        (r.m as f64, r.nfs),
                    );
                }
            }
            for pts in map.values_mut() {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            line_chart(
                path,
                "NFS at the largest budget",
                "m",
                "NFS",
                &map.into_iter().collect(),
            )
        }
    }
}
