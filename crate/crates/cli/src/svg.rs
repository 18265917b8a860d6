//! Small SVG writer with fixed number formatting, so plots are byte-stable.

use std::fmt::Write as _;

use swgtoy_core::{Dataset, Trajectory};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn raw(&mut self, element: &str) {
        self.body.push_str(element);
        self.body.push('\n');
    }

    pub fn line(&mut self, (x1, y1): (f64, f64), (x2, y2): (f64, f64), stroke: &str, width: f64) {
        self.raw(&format!(
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{}"/>"#,
            num(x1),
            num(y1),
            num(x2),
            num(y2),
            num(width)
        ));
    }

    pub fn polyline(
        &mut self,
        points: &[(f64, f64)],
        stroke: &str,
        width: f64,
        clip: Option<&str>,
    ) {
        if points.len() < 2 {
            return;
        }
        let mut pts = String::new();
        for (i, (x, y)) in points.iter().enumerate() {
            if i > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{},{}", num(*x), num(*y));
        }
        let clip = clip
            .map(|c| format!(r#" clip-path="url(#{c})""#))
            .unwrap_or_default();
        self.raw(&format!(
            r#"<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{}" stroke-opacity="0.7"{clip}/>"#,
            num(width)
        ));
    }

    pub fn circle(&mut self, (cx, cy): (f64, f64), r: f64, fill: &str) {
        self.raw(&format!(
            r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}"/>"#,
            num(cx),
            num(cy),
            num(r)
        ));
    }

    pub fn text(&mut self, (x, y): (f64, f64), size: f64, anchor: &str, content: &str) {
        self.raw(&format!(
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="{}" text-anchor="{anchor}">{}</text>"#,
            num(x),
            num(y),
            num(size),
            escape(content)
        ));
    }

    pub fn clip_rect(&mut self, id: &str, (x, y): (f64, f64), w: f64, h: f64) {
        self.raw(&format!(
            r#"<defs><clipPath id="{id}"><rect x="{}" y="{}" width="{}" height="{}"/></clipPath></defs>"#,
            num(x),
            num(y),
            num(w),
            num(h)
        ));
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = num(self.width),
            h = num(self.height)
        )
    }
}

/// Maps data coordinates into a plot area with a margin.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    left: f64,
    top: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.w,
            self.top + (self.y.1 - y) / (self.y.1 - self.y.0) * self.h,
        )
    }

    fn axes(&self, svg: &mut Svg) {
        let (l, t, r, b) = (self.left, self.top, self.left + self.w, self.top + self.h);
        svg.line((l, b), (r, b), "#333", 1.0);
        svg.line((l, t), (l, b), "#333", 1.0);
        svg.text((l, b + 16.0), 11.0, "middle", &format_tick(self.x.0));
        svg.text((r, b + 16.0), 11.0, "middle", &format_tick(self.x.1));
        svg.text((l - 6.0, b), 11.0, "end", &format_tick(self.y.0));
        svg.text((l - 6.0, t + 4.0), 11.0, "end", &format_tick(self.y.1));
    }
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn padded(lo: f64, hi: f64, pad: f64) -> (f64, f64) {
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let p = (hi - lo) * pad;
        (lo - p, hi + p)
    }
}

/// Dataset points, endpoints and the first `paths` trajectories of a 2-D
/// ensemble, zoomed to the data.
pub fn ensemble_plot(
    title: &str,
    dataset: &Dataset,
    trajectories: &[Trajectory],
    paths: usize,
) -> String {
    let xs: Vec<f64> = dataset.points().map(|p| p[0]).collect();
    let ys: Vec<f64> = dataset.points().map(|p| p[1]).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        padded(lo, hi, 0.35)
    };
    let (mut xr, mut yr) = (range(&xs), range(&ys));
    // Equal aspect ratio on a square canvas.
    let half = ((xr.1 - xr.0).max(yr.1 - yr.0)) / 2.0;
    let (cx, cy) = ((xr.0 + xr.1) / 2.0, (yr.0 + yr.1) / 2.0);
    xr = (cx - half, cx + half);
    yr = (cy - half, cy + half);
    let frame = Frame {
        x: xr,
        y: yr,
        left: 60.0,
        top: 40.0,
        w: 400.0,
        h: 400.0,
    };
    let mut svg = Svg::new(500.0, 480.0);
    svg.clip_rect("plot", (frame.left, frame.top), frame.w, frame.h);
    svg.text((250.0, 24.0), 14.0, "middle", title);
    frame.axes(&mut svg);
    for (i, tr) in trajectories.iter().take(paths).enumerate() {
        let pts: Vec<(f64, f64)> = tr
            .records
            .iter()
            .map(|r| frame.map(r.x[0], r.x[1]))
            .collect();
        svg.polyline(&pts, color(i + 2), 1.0, Some("plot"));
    }
    for tr in trajectories {
        let (px, py) = frame.map(tr.endpoint[0], tr.endpoint[1]);
        if tr.unstable
            || !(frame.left..=frame.left + frame.w).contains(&px)
            || !(frame.top..=frame.top + frame.h).contains(&py)
        {
            continue;
        }
        svg.circle((px, py), 1.5, color(0));
    }
    for p in dataset.points() {
        svg.circle(frame.map(p[0], p[1]), 4.0, color(1));
    }
    svg.finish()
}

/// One line per series over a shared x axis. Non-finite values break the line.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let finite = series
        .iter()
        .flat_map(|(_, s)| s.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let frame = Frame {
        x: padded(x0, x1, 0.0),
        y: padded(y0.min(0.0), y1, 0.05),
        left: 70.0,
        top: 40.0,
        w: 480.0,
        h: 300.0,
    };
    let mut svg = Svg::new(720.0, 390.0);
    svg.text((310.0, 24.0), 14.0, "middle", title);
    frame.axes(&mut svg);
    svg.text(
        (frame.left + frame.w / 2.0, frame.top + frame.h + 34.0),
        12.0,
        "middle",
        x_label,
    );
    svg.text((14.0, frame.top + frame.h / 2.0), 12.0, "start", y_label);
    for (i, (name, points)) in series.iter().enumerate() {
        let mut run: Vec<(f64, f64)> = Vec::new();
        for &(x, y) in points {
            if x.is_finite() && y.is_finite() {
                run.push(frame.map(x, y));
            } else {
                svg.polyline(&run, color(i), 1.5, None);
                run.clear();
            }
        }
        if run.len() == 1 {
            svg.circle(run[0], 2.5, color(i));
        }
        svg.polyline(&run, color(i), 1.5, None);
        let ly = frame.top + 14.0 + 16.0 * i as f64;
        svg.line(
            (frame.left + frame.w + 14.0, ly - 4.0),
            (frame.left + frame.w + 34.0, ly - 4.0),
            color(i),
            2.0,
        );
        svg.text((frame.left + frame.w + 40.0, ly), 11.0, "start", name);
    }
    svg.finish()
}
