use std::path::Path;

use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use crate::CliError;

const SIZE: (u32, u32) = (1024, 640);
const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
];

/// Registers a sans-serif font from `VBONES_FONT` or a few common paths.
/// Returns false when none is usable; plots are then drawn without text.
pub fn init_font() -> bool {
    let from_env = std::env::var_os("VBONES_FONT").map(std::path::PathBuf::from);
    let candidates = from_env
        .into_iter()
        .chain(FONT_CANDIDATES.iter().map(std::path::PathBuf::from));
    for path in candidates {
        if let Ok(bytes) = std::fs::read(&path) {
            let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
            if register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                return true;
            }
        }
    }
    log::warn!("no usable font found; plots will have no text");
    false
}

fn plot_err<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Plot(format!("{e:?}"))
}

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

/// Log-scale loss curves over optimizer steps, one line per series.
pub fn training_curves(series: &[(String, Vec<f64>)], out: &Path, text: bool) -> Result<(), CliError> {
    let steps = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let positive = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|x| *x > 0.0 && x.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let (lo, hi) = if lo.is_finite() { (lo * 0.8, hi * 1.25) } else { (1e-3, 1.0) };

    let root = BitMapBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(20);
    if text {
        builder
            .caption("Training losses", ("sans-serif", 28))
            .x_label_area_size(40)
            .y_label_area_size(70);
    }
    let mut chart = builder
        .build_cartesian_2d(0..steps, (lo..hi).log_scale())
        .map_err(plot_err)?;
    let mut mesh = chart.configure_mesh();
    if text {
        mesh.x_desc("step").y_desc("loss");
    } else {
        mesh.disable_x_axis().disable_y_axis();
    }
    mesh.draw().map_err(plot_err)?;
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<(usize, f64)> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(i, v)| (i, *v))
            .collect();
        if points.is_empty() {
            continue;
        }
        let drawn = chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(plot_err)?;
        if text {
            drawn
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Bar per joint, height = mean position error in mm.
pub fn per_joint_bars(errors: &[(String, f64)], out: &Path, text: bool) -> Result<(), CliError> {
    let max = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max).max(1e-9) * 1.15;
    let n = errors.len().max(1);
    let root = BitMapBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(20);
    if text {
        builder
            .caption("Per-joint error", ("sans-serif", 28))
            .x_label_area_size(40)
            .y_label_area_size(120);
    }
    let mut chart = builder
        .build_cartesian_2d(0f64..max, (0..n - 1).into_segmented())
        .map_err(plot_err)?;
    let label = |y: &SegmentValue<usize>| match y {
        SegmentValue::CenterOf(i) => errors.get(*i).map(|(n, _)| n.clone()).unwrap_or_default(),
        _ => String::new(),
    };
    let mut mesh = chart.configure_mesh();
    mesh.disable_y_mesh();
    if text {
        mesh.x_desc("error (mm)").y_labels(n).y_label_formatter(&label);
    } else {
        mesh.disable_x_axis().disable_y_axis();
    }
    mesh.draw().map_err(plot_err)?;
    chart
        .draw_series(
            Histogram::horizontal(&chart)
                .style(PALETTE[0].filled())
                .margin(4)
                .data(errors.iter().enumerate().map(|(i, (_, e))| (i, *e))),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Per-frame error traces, one line per sequence.
pub fn per_frame_traces(traces: &[(String, Vec<f64>)], out: &Path, text: bool) -> Result<(), CliError> {
    let frames = traces.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let max = traces
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.1;
    let root = BitMapBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(20);
    if text {
        builder
            .caption("Per-frame error", ("sans-serif", 28))
            .x_label_area_size(40)
            .y_label_area_size(70);
    }
    let mut chart = builder
        .build_cartesian_2d(0..frames, 0f64..max)
        .map_err(plot_err)?;
    let mut mesh = chart.configure_mesh();
    if text {
        mesh.x_desc("frame").y_desc("error (mm)");
    } else {
        mesh.disable_x_axis().disable_y_axis();
    }
    mesh.draw().map_err(plot_err)?;
    for (k, (name, values)) in traces.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let drawn = chart
            .draw_series(LineSeries::new(values.iter().copied().enumerate(), color.stroke_width(1)))
            .map_err(plot_err)?;
        if text && k < PALETTE.len() {
            drawn
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if text && !traces.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// One panel of the two-trajectory illustration.
pub struct TrajectoryPanel {
    pub title: String,
    pub observed: Vec<(f64, f64)>,
    pub projected: Vec<(f64, f64)>,
}

/// Observed 2D trajectories against projected predictions, side by side.
pub fn trajectory_panels(panels: &[TrajectoryPanel], out: &Path, text: bool) -> Result<(), CliError> {
    let all = panels
        .iter()
        .flat_map(|p| p.observed.iter().chain(&p.projected))
        .copied();
    let (x0, x1, y0, y1) = all.fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), (x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    let pad = ((x1 - x0).max(y1 - y0) * 0.1).max(1e-6);
    let root = BitMapBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((1, panels.len().max(1)));
    for (area, panel) in areas.iter().zip(panels) {
        let mut builder = ChartBuilder::on(area);
        builder.margin(20);
        if text {
            builder
                .caption(panel.title.as_str(), ("sans-serif", 20))
                .x_label_area_size(35)
                .y_label_area_size(50);
        }
        let mut chart = builder
            .build_cartesian_2d(x0 - pad..x1 + pad, y0 - pad..y1 + pad)
            .map_err(plot_err)?;
        let mut mesh = chart.configure_mesh();
        if !text {
            mesh.disable_x_axis().disable_y_axis();
        }
        mesh.draw().map_err(plot_err)?;
        let observed = PALETTE[0];
        let projected = PALETTE[3];
        chart
            .draw_series(LineSeries::new(panel.observed.iter().copied(), observed.stroke_width(2)))
            .map_err(plot_err)?;
        chart
            .draw_series(panel.observed.iter().map(|&p| Circle::new(p, 4, observed.filled())))
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(panel.projected.iter().copied(), projected.stroke_width(2)))
            .map_err(plot_err)?;
        chart
            .draw_series(panel.projected.iter().map(|&p| Cross::new(p, 5, projected.stroke_width(2))))
            .map_err(plot_err)?;
        chart
            .draw_series(panel.observed.iter().zip(&panel.projected).map(|(&a, &b)| {
                PathElement::new([a, b], BLACK.mix(0.4).stroke_width(1))
            }))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
