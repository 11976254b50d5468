//! Direct SVG emission for the environment map and learning curves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use stlcbf::sim::{CurveRow, InitBox};
use stlcbf::stl::PredicateShape;

const WIDTH: f64 = 640.0;
const MARGIN: f64 = 24.0;
const SUPERELLIPSE_POINTS: usize = 128;

/// A path to draw, tagged with the method that produced it.
pub struct Path<'a> {
    pub method: &'a str,
    pub points: Vec<[f64; 2]>,
}

struct Frame {
    min: [f64; 2],
    scale: f64,
    height: f64,
}

impl Frame {
    fn fit(lo: [f64; 2], hi: [f64; 2]) -> Self {
        let span = [(hi[0] - lo[0]).max(1e-9), (hi[1] - lo[1]).max(1e-9)];
        let scale = (WIDTH - 2.0 * MARGIN) / span[0];
        Frame {
            min: lo,
            scale,
            height: span[1] * scale + 2.0 * MARGIN,
        }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.min[0]) * self.scale
    }

    fn y(&self, v: f64) -> f64 {
        self.height - MARGIN - (v - self.min[1]) * self.scale
    }
}

fn method_colour(method: &str) -> &'static str {
    match method {
        "barriernet" => "#1f77b4",
        "fcnet" => "#ff7f0e",
        _ => "#7f7f7f",
    }
}

/// Regions, obstacles, the initial box and trajectories in world
/// coordinates. Names in `avoided` are drawn as obstacles.
pub fn environment(
    shapes: &BTreeMap<String, PredicateShape>,
    avoided: &BTreeSet<String>,
    init: &InitBox,
    paths: &[Path<'_>],
) -> String {
    let mut lo = init.min;
    let mut hi = init.max;
    let mut grow = |p: [f64; 2], r: f64| {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d] - r);
            hi[d] = hi[d].max(p[d] + r);
        }
    };
    let concrete: Vec<(&String, PredicateShape)> = shapes
        .iter()
        .filter_map(|(n, s)| s.resolve(shapes).ok().map(|s| (n, s)))
        .collect();
    for (_, s) in &concrete {
        if let (Some(c), Some(r)) = (s.center(), s.bounding_radius()) {
            grow(c, r);
        }
    }
    for p in paths.iter().flat_map(|p| &p.points) {
        grow(*p, 0.0);
    }
    for d in 0..2 {
        lo[d] -= 0.5;
        hi[d] += 0.5;
    }
    let fr = Frame::fit(lo, hi);

    let mut s = String::new();
    header(&mut s, WIDTH, fr.height);
    s.push_str("<g id=\"shapes\">\n");
    for (name, shape) in &concrete {
        let (fill, stroke) = if avoided.contains(*name) {
            ("#d62728", "#8b0000")
        } else {
            ("#2ca02c", "#006400")
        };
        let style = format!("fill=\"{fill}\" fill-opacity=\"0.35\" stroke=\"{stroke}\"");
        match shape {
            PredicateShape::Circle { center, radius, .. } => {
                let _ = writeln!(
                    s,
                    "<circle class=\"shape\" data-name=\"{name}\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\" {style}/>",
                    fr.x(center[0]),
                    fr.y(center[1]),
                    radius * fr.scale
                );
            }
            PredicateShape::Superellipse {
                center, semi_axes, ..
            } => {
                let mut d = String::new();
                for k in 0..SUPERELLIPSE_POINTS {
                    let th = std::f64::consts::TAU * k as f64 / SUPERELLIPSE_POINTS as f64;
                    let (sn, cs) = th.sin_cos();
                    let px = center[0] + semi_axes[0] * cs.signum() * cs.abs().sqrt();
                    let py = center[1] + semi_axes[1] * sn.signum() * sn.abs().sqrt();
                    let cmd = if k == 0 { 'M' } else { 'L' };
                    let _ = write!(d, "{cmd}{:.3},{:.3} ", fr.x(px), fr.y(py));
                }
                d.push('Z');
                let _ = writeln!(
                    s,
                    "<path class=\"shape\" data-name=\"{name}\" d=\"{d}\" {style}/>"
                );
            }
            PredicateShape::Named { .. } => continue,
        }
        if let Some(c) = shape.center() {
            let _ = writeln!(
                s,
                "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" text-anchor=\"middle\">{name}</text>",
                fr.x(c[0]),
                fr.y(c[1])
            );
        }
    }
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        "<rect id=\"init\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"none\" stroke=\"#000\" stroke-dasharray=\"4 3\"/>",
        fr.x(init.min[0]),
        fr.y(init.max[1]),
        (init.max[0] - init.min[0]) * fr.scale,
        (init.max[1] - init.min[1]) * fr.scale
    );
    s.push_str("<g id=\"trajectories\">\n");
    for p in paths {
        let pts: Vec<String> = p
            .points
            .iter()
            .map(|q| format!("{:.2},{:.2}", fr.x(q[0]), fr.y(q[1])))
            .collect();
        let _ = writeln!(
            s,
            "<polyline class=\"trajectory\" data-method=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" stroke-opacity=\"0.8\"/>",
            p.method,
            pts.join(" "),
            method_colour(p.method)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

type Series = (&'static str, &'static str, fn(&CurveRow) -> f64);

/// Mean and minimum robustness against iteration.
pub fn learning_curve(curve: &[CurveRow]) -> String {
    let height = 360.0;
    let mut s = String::new();
    header(&mut s, WIDTH, height);
    let ys = curve
        .iter()
        .flat_map(|r| [r.mean_robustness, r.min_robustness])
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = ys.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let n = curve.len().max(2) as f64 - 1.0;
    let px = |i: f64| MARGIN + i / n * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| height - MARGIN - (v - lo) / (hi - lo) * (height - 2.0 * MARGIN);
    let _ = writeln!(
        s,
        "<line id=\"zero\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"3 3\"/>",
        px(0.0),
        py(0.0),
        px(n),
        py(0.0)
    );
    let series: [Series; 2] = [
        ("mean_robustness", "#1f77b4", |r| r.mean_robustness),
        ("min_robustness", "#d62728", |r| r.min_robustness),
    ];
    for (name, colour, get) in series {
        let pts: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{:.2},{:.2}", px(i as f64), py(get(r))))
            .collect();
        let _ = writeln!(
            s,
            "<polyline class=\"series\" data-name=\"{name}\" points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"16\" font-size=\"12\">robustness per iteration ({lo:.3} to {hi:.3})</text>"
    );
    s.push_str("</svg>\n");
    s
}

fn header(s: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        s,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.3} {h:.3}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>");
}
