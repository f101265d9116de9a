//! Static SVG plots of the loss history and simulated trajectories.

use anyhow::Context;
use plotters::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::files::{read_csv_columns, write_bytes, Header};

const SIZE: (u32, u32) = (800, 500);
const FLOOR: f64 = 1e-12;

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], legend: bool) -> anyhow::Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE)?;
        let xs = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let ys = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let drawn = chart.draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(1)))?;
            if legend {
                drawn
                    .label(s.label.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
            }
        }
        if legend {
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        }
        root.present()?;
    }
    Ok(svg)
}

fn save(path: &Path, svg: String, header: &Header) -> anyhow::Result<PathBuf> {
    let stamped = format!("{svg}\n<!-- {} config {} -->\n", header.toolkit, header.config_digest);
    write_bytes(path, stamped.as_bytes())?;
    Ok(path.to_path_buf())
}

fn column<'a>(cols: &'a BTreeMap<String, Vec<f64>>, name: &str, path: &Path) -> anyhow::Result<&'a Vec<f64>> {
    cols.get(name).with_context(|| format!("{}: missing column `{name}`", path.display()))
}

/// `log10` of the loss terms per epoch.
pub fn loss_history(losses_csv: &Path, out_dir: &Path, header: &Header) -> anyhow::Result<PathBuf> {
    let cols = read_csv_columns(losses_csv)?;
    let epoch = column(&cols, "epoch", losses_csv)?;
    let series = ["l_cbf", "l1", "l2", "l3", "l_p"]
        .iter()
        .map(|name| {
            let v = column(&cols, name, losses_csv)?;
            Ok(Series {
                label: name.to_string(),
                points: epoch.iter().zip(v).map(|(&e, &l)| (e, l.abs().max(FLOOR).log10())).collect(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let svg = line_chart("Loss history", "epoch", "log10 loss", &series, true)?;
    save(&out_dir.join("losses.svg"), svg, header)
}

/// Barrier value, residual and phase portraits of simulated trajectories.
pub fn trajectories(files: &[PathBuf], out_dir: &Path, header: &Header) -> anyhow::Result<Vec<PathBuf>> {
    let mut barrier = Vec::new();
    let mut residual = Vec::new();
    let mut phase = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let cols = read_csv_columns(path)?;
        let t = column(&cols, "t", path)?;
        let label = format!("#{i}");
        barrier.push(Series {
            label: label.clone(),
            points: t.iter().copied().zip(column(&cols, "barrier", path)?.iter().copied()).collect(),
        });
        residual.push(Series {
            label: label.clone(),
            points: t.iter().copied().zip(column(&cols, "residual", path)?.iter().copied()).collect(),
        });
        if let (Some(x1), Some(x2)) = (cols.get("x1"), cols.get("x2")) {
            phase.push(Series {
                label: format!("x {label}"),
                points: x1.iter().copied().zip(x2.iter().copied()).collect(),
            });
            if let (Some(h1), Some(h2)) = (cols.get("xhat1"), cols.get("xhat2")) {
                phase.push(Series {
                    label: format!("xhat {label}"),
                    points: h1.iter().copied().zip(h2.iter().copied()).collect(),
                });
            }
        }
    }
    let legend = files.len() <= 8;
    let mut written = vec![
        save(
            &out_dir.join("barrier.svg"),
            line_chart("Barrier along trajectories", "t [s]", "B(x, xhat)", &barrier, legend)?,
            header,
        )?,
        save(
            &out_dir.join("residual.svg"),
            line_chart("Barrier condition residual", "t [s]", "dB/dt + alpha B", &residual, legend)?,
            header,
        )?,
    ];
    if !phase.is_empty() {
        written.push(save(
            &out_dir.join("phase.svg"),
            line_chart("Phase portrait: state and estimate", "x1", "x2", &phase, legend)?,
            header,
        )?);
    }
    Ok(written)
}
