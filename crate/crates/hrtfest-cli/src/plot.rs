//! Static comparison plots: per-method LRE box plots and per-frequency
//! mean LMD curves.

use hrtfest::dataset::{N_BINS, SAMPLE_RATE};
use hrtfest::eval::{lmd, EvalEntry, Method, MetricReport};
use plotters::prelude::*;
use std::path::Path;

const METHODS: [Method; 4] = [
    Method::Proposed,
    Method::Random,
    Method::Generic,
    Method::Nearest,
];

fn method_color(m: Method) -> RGBColor {
    match m {
        Method::Proposed => RGBColor(200, 60, 60),
        Method::Random => RGBColor(120, 120, 120),
        Method::Generic => RGBColor(70, 130, 60),
        Method::Nearest => RGBColor(60, 90, 200),
    }
}

fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Box plot of per-task mean LRE per method.
pub fn lre_box_plot(report: &MetricReport, path: &Path) -> anyhow::Result<()> {
    let root = BitMapBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let all: Vec<f64> = report.per_task.iter().map(|t| t.mean_lre_db).collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0;
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0;
    let mut chart = ChartBuilder::on(&root)
        .caption("Per-task mean LRE by method", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..(METHODS.len() as f64), lo..hi)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("mean LRE (dB)")
        .x_labels(METHODS.len())
        .x_label_formatter(&|x| {
            METHODS
                .get(x.floor() as usize)
                .map(|m| m.to_string())
                .unwrap_or_default()
        })
        .draw()?;
    for (i, m) in METHODS.iter().enumerate() {
        let mut xs: Vec<f64> = report
            .per_task
            .iter()
            .filter(|t| t.method == *m)
            .map(|t| t.mean_lre_db)
            .collect();
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
        let (q1, q2, q3) = quartiles(&xs);
        let (min, max) = (xs[0], xs[xs.len() - 1]);
        let c = i as f64 + 0.5;
        let color = method_color(*m);
        chart.draw_series([
            PathElement::new(vec![(c, min), (c, q1)], color.stroke_width(2)),
            PathElement::new(vec![(c, q3), (c, max)], color.stroke_width(2)),
            PathElement::new(vec![(c - 0.15, q2), (c + 0.15, q2)], BLACK.stroke_width(2)),
        ])?;
        chart.draw_series([Rectangle::new(
            [(c - 0.2, q1), (c + 0.2, q3)],
            color.mix(0.4).filled(),
        )])?;
    }
    root.present()?;
    Ok(())
}

/// Per-frequency mean LMD curve for each method, averaged over tasks,
/// channels, and compared on linear magnitudes.
pub fn lmd_frequency_curves(entries: &[EvalEntry], path: &Path) -> anyhow::Result<()> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let root = BitMapBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut curves: Vec<(Method, Vec<f64>)> = Vec::new();
    let mut hi = 1.0f64;
    for m in METHODS {
        let mut acc = vec![0.0; N_BINS];
        let mut n = 0usize;
        for e in entries.iter().filter(|e| e.method == m) {
            for c in 0..2 {
                for k in 0..N_BINS {
                    let h = 10f64.powf(e.truth.values[[c, k]] / 20.0);
                    let g = 10f64.powf(e.estimate.values[[c, k]] / 20.0);
                    acc[k] += lmd(h, g)?;
                }
            }
            n += 2;
        }
        if n == 0 {
            continue;
        }
        for v in acc.iter_mut() {
            *v /= n as f64;
            hi = hi.max(*v);
        }
        curves.push((m, acc));
    }
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean LMD per frequency", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..nyquist, 0f64..(hi * 1.1))?;
    chart
        .configure_mesh()
        .x_desc("frequency (Hz)")
        .y_desc("mean LMD (dB)")
        .draw()?;
    for (m, curve) in &curves {
        let color = method_color(*m);
        chart
            .draw_series(LineSeries::new(
                curve
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (k as f64 / N_BINS as f64 * nyquist, *v)),
                color.stroke_width(2),
            ))?
            .label(m.to_string())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()?;
    root.present()?;
    Ok(())
}
