//! SVG figures drawn from the same data that goes to CSV.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::grokking::{centered_moving_average, RunSummary, TrainRunRecord};
use crate::langevin::{cw_potential, CWPotentialParams, LangevinTrajectory};
use crate::nn::CvWeighting;
use crate::scaling::{ScalingFit, ScalingPoint};

const SIZE: (u32, u32) = (900, 600);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn range_of(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-12);
    (lo - pad, hi + pad)
}

/// Values of the potential on a square Cartesian grid centred on the origin.
#[derive(Debug, Clone)]
pub struct PotentialGrid {
    pub half_width: f64,
    pub n: usize,
    /// Row-major, `values[iy * n + ix]`.
    pub values: Vec<f64>,
}

impl PotentialGrid {
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + 2.0 * self.half_width * i as f64 / (self.n - 1) as f64
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    /// Radius of the grid point with the lowest potential.
    pub fn argmin_radius(&self) -> f64 {
        let (idx, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
        self.coord(idx % self.n).hypot(self.coord(idx / self.n))
    }
}

pub fn potential_grid(params: &CWPotentialParams, half_width: f64, n: usize) -> Result<PotentialGrid> {
    params.validate()?;
    if !(half_width > 0.0 && half_width.is_finite()) || n < 3 {
        return Err(Error::invalid("grid needs a positive half-width and at least 3 points per side"));
    }
    let mut grid = PotentialGrid { half_width, n, values: Vec::with_capacity(n * n) };
    for iy in 0..n {
        for ix in 0..n {
            let phi = [grid.coord(ix), grid.coord(iy)];
            grid.values.push(cw_potential(&phi, params)?);
        }
    }
    Ok(grid)
}

/// Heat map of the potential over the field plane with the analytic trough
/// circle overlaid.
pub fn plot_potential(grid: &PotentialGrid, params: &CWPotentialParams, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (700, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let h = grid.half_width;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("V(Φ), α = {}, β = {}, v = {}", params.alpha, params.beta, params.v), ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(-h..h, -h..h)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("Re Φ").y_desc("Im Φ").disable_mesh().draw().map_err(plot_err)?;

    // Drawing every cell of a fine grid bloats the SVG; subsample to at most 120 per side.
    let stride = grid.n.div_ceil(120).max(1);
    let (lo, hi) = range_of(grid.values.iter().copied());
    let half = grid.spacing() * stride as f64 / 2.0;
    let cells = (0..grid.n).step_by(stride).flat_map(|iy| {
        (0..grid.n).step_by(stride).map(move |ix| {
            let (x, y) = (grid.coord(ix), grid.coord(iy));
            let v = grid.values[iy * grid.n + ix];
            let color = HSLColor(0.72 * (hi - v) / (hi - lo), 0.85, 0.5);
            Rectangle::new([(x - half, y - half), (x + half, y + half)], color.filled())
        })
    });
    chart.draw_series(cells).map_err(plot_err)?;

    if params.has_broken_phase() {
        let r = params.trough_radius();
        let ring = (0..=200).map(|i| {
            let a = i as f64 / 200.0 * std::f64::consts::TAU;
            (r * a.cos(), r * a.sin())
        });
        chart
            .draw_series(LineSeries::new(ring, WHITE.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("r* = {r:.4}"))
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).draw().map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Two stacked panels: C_v over time and the order parameter over time.
pub fn plot_langevin(traj: &LangevinTrajectory, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((2, 1));
    let (t0, t1) = range_of(traj.times.iter().copied());
    let series: [(&str, &[f64], RGBColor); 2] = [("C_v", &traj.cv, RED), ("⟨|Φ|⟩", &traj.mean_abs_phi, BLUE)];
    for (area, (name, ys, color)) in panels.iter().zip(series) {
        let (y0, y1) = range_of(ys.iter().copied());
        let mut chart = ChartBuilder::on(area)
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(60)
            .build_cartesian_2d(t0..t1, y0..y1)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("t").y_desc(name).draw().map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(traj.times.iter().copied().zip(ys.iter().copied()), color))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Accuracy curves on the left axis, raw and smoothed C_v on the right axis,
/// and a dashed vertical line at the smoothed peak.
pub fn plot_grok(
    records: &[TrainRunRecord],
    summary: &RunSummary,
    weighting: CvWeighting,
    smooth_window: usize,
    path: &Path,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to plot"));
    }
    let epochs: Vec<f64> = records.iter().map(|r| r.epoch as f64).collect();
    let cv: Vec<f64> = records.iter().map(|r| r.cv(weighting)).collect();
    let smooth = centered_moving_average(&cv, smooth_window);
    let (e0, e1) = range_of(epochs.iter().copied());
    let (c0, c1) = range_of(cv.iter().chain(&smooth).copied());

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("p = {}, seed = {}", summary.p, summary.seed), ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .right_y_label_area_size(60)
        .build_cartesian_2d(e0..e1, 0.0..1.02)
        .map_err(plot_err)?
        .set_secondary_coord(e0..e1, c0..c1);
    chart.configure_mesh().x_desc("epoch").y_desc("accuracy").draw().map_err(plot_err)?;
    chart.configure_secondary_axes().y_desc("C_v").draw().map_err(plot_err)?;

    let acc = |f: fn(&TrainRunRecord) -> f64| records.iter().map(move |r| (r.epoch as f64, f(r)));
    chart
        .draw_series(LineSeries::new(acc(|r| r.train_acc), BLUE.mix(0.5)))
        .map_err(plot_err)?
        .label("train acc")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE.mix(0.5)));
    chart
        .draw_series(LineSeries::new(acc(|r| r.val_acc), BLUE))
        .map_err(plot_err)?
        .label("val acc")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    chart
        .draw_secondary_series(LineSeries::new(epochs.iter().copied().zip(cv.iter().copied()), RED.mix(0.3)))
        .map_err(plot_err)?;
    chart
        .draw_secondary_series(LineSeries::new(epochs.iter().copied().zip(smooth.iter().copied()), RED.stroke_width(2)))
        .map_err(plot_err)?
        .label("C_v (smoothed)")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));

    let peak = summary.cv_peak_epoch as f64;
    let dashes = (0..20).map(|i| {
        let y = 1.02 * i as f64 / 20.0;
        PathElement::new(vec![(peak, y), (peak, y + 0.025)], BLACK)
    });
    chart.draw_series(dashes).map_err(plot_err)?;
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Log–log plot of peak C_v against modulus with one-standard-deviation
/// error bars and, when given, the fitted line.
pub fn plot_scaling(points: &[ScalingPoint], fit: Option<&ScalingFit>, path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::invalid("no points to plot"));
    }
    let floor = |pt: &ScalingPoint| (pt.cv_peak_mean - pt.cv_peak_std).max(pt.cv_peak_mean * 1e-2);
    let p_lo = points.iter().map(|pt| pt.p as f64).fold(f64::INFINITY, f64::min) * 0.9;
    let p_hi = points.iter().map(|pt| pt.p as f64).fold(0.0, f64::max) * 1.1;
    let c_lo = points.iter().map(floor).fold(f64::INFINITY, f64::min) * 0.8;
    let c_hi = points.iter().map(|pt| pt.cv_peak_mean + pt.cv_peak_std).fold(0.0, f64::max) * 1.25;

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let caption = match fit {
        Some(f) => format!("C_v peak ∝ p^a, a = {:.4}, R² = {:.3}", f.exponent_a, f.r_squared),
        None => "C_v peak against modulus".to_string(),
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((p_lo..p_hi).log_scale(), (c_lo..c_hi).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("p").y_desc("peak C_v").draw().map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|pt| {
            let x = pt.p as f64;
            ErrorBar::new_vertical(x, floor(pt), pt.cv_peak_mean, pt.cv_peak_mean + pt.cv_peak_std, BLACK.filled(), 8)
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|pt| Circle::new((pt.p as f64, pt.cv_peak_mean), 4, RED.filled())))
        .map_err(plot_err)?;
    if let Some(f) = fit {
        let line = (0..=50).map(|i| {
            let p = p_lo * (p_hi / p_lo).powf(i as f64 / 50.0);
            (p, (f.intercept + f.exponent_a * p.ln()).exp())
        });
        chart.draw_series(LineSeries::new(line, BLUE)).map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
