//! SVG rendering: pen-stroke polylines, predictive-density heatmaps, and
//! window-weight maps. Output is self-contained SVG 1.1 text; the y axis is
//! flipped at render time only (screen coordinates grow downward), the data
//! layer is untouched. Rendering is deterministic given the inputs.

use crate::data::{NormStats, StrokeSeq};
use crate::error::{Error, Result};
use crate::mdn;
use crate::model::{Head, Model};
use crate::train::stroke_inputs;

#[derive(Clone, Debug)]
pub struct RenderSpec {
    pub width: f64,
    pub height: f64,
    pub stroke_width: f64,
    pub margin: f64,
    /// Heatmap raster resolution.
    pub grid_nx: usize,
    pub grid_ny: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            width: 900.0,
            height: 300.0,
            stroke_width: 1.5,
            margin: 12.0,
            grid_nx: 180,
            grid_ny: 60,
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{:.3}", v)
}

/// Cumulative positions of a stroke sequence; point i sits at the sum of
/// offsets 0..=i.
pub fn stroke_positions(seq: &StrokeSeq) -> Vec<[f64; 2]> {
    let mut pos = Vec::with_capacity(seq.points.len());
    let (mut x, mut y) = (0.0, 0.0);
    for p in &seq.points {
        x += p[0];
        y += p[1];
        pos.push([x, y]);
    }
    pos
}

struct Bounds {
    min: [f64; 2],
    max: [f64; 2],
}

#[allow(clippy::needless_range_loop)]
fn bounds_of(points: &[[f64; 2]]) -> Bounds {
    let mut b = Bounds {
        min: [f64::INFINITY; 2],
        max: [f64::NEG_INFINITY; 2],
    };
    for p in points {
        for d in 0..2 {
            b.min[d] = b.min[d].min(p[d]);
            b.max[d] = b.max[d].max(p[d]);
        }
    }
    if b.min[0] > b.max[0] {
        b.min = [0.0, 0.0];
        b.max = [1.0, 1.0];
    }
    b
}

/// Data→screen mapping that fits the bounds into the canvas with its margin
/// and flips y.
struct Transform {
    scale: f64,
    ox: f64,
    oy: f64,
    y_top: f64,
}

impl Transform {
    fn fit(b: &Bounds, spec: &RenderSpec) -> Transform {
        let bw = (b.max[0] - b.min[0]).max(1e-9);
        let bh = (b.max[1] - b.min[1]).max(1e-9);
        let scale = ((spec.width - 2.0 * spec.margin) / bw)
            .min((spec.height - 2.0 * spec.margin) / bh);
        Transform {
            scale,
            ox: spec.margin - b.min[0] * scale,
            oy: spec.margin - b.min[1] * scale,
            y_top: spec.height,
        }
    }

    fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] * self.scale + self.ox,
            self.y_top - (p[1] * self.scale + self.oy),
        ]
    }
}

fn svg_open(spec: &RenderSpec) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(spec.width),
        fmt(spec.height),
        fmt(spec.width),
        fmt(spec.height)
    )
}

/// Renders the trajectory as polylines, broken wherever the pen lifts
/// (eos = 1 ends the polyline *after* that point).
pub fn render_strokes_svg(seq: &StrokeSeq, spec: &RenderSpec) -> String {
    let positions = stroke_positions(seq);
    let tf = Transform::fit(&bounds_of(&positions), spec);

    let mut svg = svg_open(spec);
    svg.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        fmt(spec.width),
        fmt(spec.height)
    ));
    let mut line: Vec<String> = Vec::new();
    let flush = |line: &mut Vec<String>, svg: &mut String| {
        if !line.is_empty() {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"{}\" stroke-linecap=\"round\" stroke-linejoin=\"round\"/>\n",
                line.join(" "),
                fmt(spec.stroke_width)
            ));
            line.clear();
        }
    };
    for (i, pos) in positions.iter().enumerate() {
        let s = tf.apply(*pos);
        line.push(format!("{},{}", fmt(s[0]), fmt(s[1])));
        if seq.points[i][2] == 1.0 {
            flush(&mut line, &mut svg);
        }
    }
    flush(&mut line, &mut svg);
    svg.push_str("</svg>\n");
    svg
}

/// Rasterized predictive density: cell (ix, iy) holds the mixture density
/// (in normalized offset space) of the next pen position at the cell
/// centre, summed over all timesteps.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    /// Row-major, index = iy * nx + ix.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn cell_centre(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.x0 + (ix as f64 + 0.5) * self.dx,
            self.y0 + (iy as f64 + 0.5) * self.dy,
        ]
    }
}

/// Runs the model over the (raw-space) sequence and accumulates each step's
/// predictive density over a grid covering the trajectory. Densities for
/// successive predictions are added together.
pub fn density_grid(model: &Model, seq: &StrokeSeq, spec: &RenderSpec) -> Result<DensityGrid> {
    let (components, norm) = match &model.head {
        Head::Mdn {
            components, norm, ..
        } => (
            *components,
            norm.clone().unwrap_or(NormStats {
                mean: [0.0, 0.0],
                std: [1.0, 1.0],
            }),
        ),
        Head::Softmax { .. } => {
            return Err(Error::InvalidArgument(
                "density heatmaps need a mixture-density checkpoint".into(),
            ))
        }
    };

    let positions = stroke_positions(seq);
    // prediction t is anchored at the pen position *before* point t
    let mut anchors = vec![[0.0, 0.0]];
    anchors.extend_from_slice(&positions[..positions.len().saturating_sub(1)]);

    let normalized: Vec<[f64; 3]> = seq.points.iter().map(|p| norm.normalize_point(*p)).collect();
    let inputs = stroke_inputs(&normalized);
    let init = crate::lstm::fresh_states(model.params.arch());
    let fwd = crate::lstm::stack_forward(&model.params, &inputs, &init, None)?;

    let mixes: Vec<mdn::MixtureOut> = fwd
        .yhat
        .iter()
        .map(|y| mdn::split_outputs(y, components))
        .collect::<Result<_>>()?;

    let b = bounds_of(&positions);
    let pad = 0.15 * ((b.max[0] - b.min[0]) + (b.max[1] - b.min[1])).max(1.0);
    let (x0, y0) = (b.min[0] - pad, b.min[1] - pad);
    let (x1, y1) = (b.max[0] + pad, b.max[1] + pad);
    let (nx, ny) = (spec.grid_nx, spec.grid_ny);
    let dx = (x1 - x0) / nx as f64;
    let dy = (y1 - y0) / ny as f64;

    let mut values = vec![0.0; nx * ny];
    for (anchor, mix) in anchors.iter().zip(mixes.iter()) {
        for iy in 0..ny {
            let cy = y0 + (iy as f64 + 0.5) * dy;
            for ix in 0..nx {
                let cx = x0 + (ix as f64 + 0.5) * dx;
                // offset from the anchor, in normalized space
                let off = norm.normalize_point([cx - anchor[0], cy - anchor[1], 0.0]);
                let mut p = 0.0;
                for j in 0..mix.components() {
                    p += mix.weights[j]
                        * mdn::bivariate_logdensity(
                            [off[0], off[1]],
                            mix.means[j],
                            mix.devs[j],
                            mix.corrs[j],
                        )
                        .exp();
                }
                values[iy * nx + ix] += p;
            }
        }
    }

    Ok(DensityGrid {
        nx,
        ny,
        x0,
        y0,
        dx,
        dy,
        values,
    })
}

fn heat_color(t: f64) -> String {
    // black → orange → white ramp
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (t * 1.8).min(1.0)) as u8;
    let g = (255.0 * (t * 1.2 - 0.2).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (t * 2.0 - 1.0).clamp(0.0, 1.0)) as u8;
    format!("rgb({},{},{})", r, g, b)
}

fn raster_svg(values: &[f64], nx: usize, ny: usize, spec: &RenderSpec, log_scale: bool, flip_y: bool) -> String {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let cell_w = spec.width / nx as f64;
    let cell_h = spec.height / ny as f64;
    let mut svg = svg_open(spec);
    svg.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"black\"/>\n",
        fmt(spec.width),
        fmt(spec.height)
    ));
    if max > 0.0 {
        for iy in 0..ny {
            for ix in 0..nx {
                let v = values[iy * nx + ix];
                if v <= 0.0 {
                    continue;
                }
                let t = if log_scale {
                    ((v / max) * 1e4).ln_1p() / 1e4f64.ln_1p()
                } else {
                    v / max
                };
                if t < 1e-3 {
                    continue;
                }
                let sy = if flip_y { ny - 1 - iy } else { iy };
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                    fmt(ix as f64 * cell_w),
                    fmt(sy as f64 * cell_h),
                    fmt(cell_w + 0.05),
                    fmt(cell_h + 0.05),
                    heat_color(t)
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Density heatmap with a log-scaled color ramp.
pub fn render_density_heatmap(model: &Model, seq: &StrokeSeq, spec: &RenderSpec) -> Result<String> {
    let grid = density_grid(model, seq, spec)?;
    Ok(raster_svg(&grid.values, grid.nx, grid.ny, spec, true, true))
}

/// Window-weight map: t runs horizontally, u vertically, intensity ∝ φ(t,u).
pub fn render_window_heatmap(phi: &[Vec<f64>], spec: &RenderSpec) -> String {
    let t_len = phi.len();
    let u_len = phi.first().map(|r| r.len()).unwrap_or(0);
    if t_len == 0 || u_len == 0 {
        let mut svg = svg_open(spec);
        svg.push_str("</svg>\n");
        return svg;
    }
    // transpose: raster rows are u (vertical axis), columns are t
    let mut values = vec![0.0; t_len * u_len];
    for (t, row) in phi.iter().enumerate() {
        for (u, &v) in row.iter().enumerate() {
            values[u * t_len + t] = v;
        }
    }
    raster_svg(&values, t_len, u_len, spec, false, false)
}
