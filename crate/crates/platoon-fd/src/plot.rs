//! Self-contained SVG scatter/curve plots of the three fundamental-diagram
//! planes, with an optional fitted triangular overlay drawn as two branches
//! that meet at the critical point.

use platoon_fd_core::aggregate::BinnedSeries;
use platoon_fd_core::edie::TrafficState;
use platoon_fd_core::tfd::TfdParams;
use platoon_fd_core::units;

use crate::tables::Plane;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 56.0;
/// Scatter points beyond this are thinned by striding.
const MAX_SCATTER: usize = 4000;
/// Curved fitted branches are sampled at this many vertices.
const BRANCH_SAMPLES: usize = 64;

/// Everything one plot can show; only `scatter` is mandatory context —
/// layers render independently and may each be absent.
#[derive(Debug, Clone, Copy)]
pub struct PlotLayers<'a> {
    pub plane: Plane,
    pub title: &'a str,
    /// Raw traffic states (SI units; converted for display).
    pub scatter: &'a [TrafficState],
    /// Bin-mean curve, drawn in file order.
    pub binned: Option<&'a BinnedSeries>,
    /// Fitted triangular overlay.
    pub params: Option<&'a TfdParams>,
    /// Effective configuration, embedded as an SVG comment.
    pub config: &'a str,
}

impl Plane {
    fn axis_titles(self) -> (&'static str, &'static str) {
        match self {
            Plane::FlowDensity => ("density [veh/km]", "flow [veh/h]"),
            Plane::SpeedDensity => ("density [veh/km]", "speed [km/h]"),
            Plane::SpeedFlow => ("flow [veh/h]", "speed [km/h]"),
        }
    }

    /// Project reporting-unit quantities onto this plane's axes.
    fn project_xy(self, k: f64, v: f64, q: f64) -> (f64, f64) {
        match self {
            Plane::FlowDensity => (k, q),
            Plane::SpeedDensity => (k, v),
            Plane::SpeedFlow => (q, v),
        }
    }
}

/// Polyline vertices in data coordinates.
type Branch = Vec<(f64, f64)>;

/// Both fitted branches in data coordinates; they share the apex vertex.
fn fitted_branches(plane: Plane, p: &TfdParams) -> (Branch, Branch) {
    let apex = plane.project_xy(p.k_cr(), p.v_f(), p.capacity());
    match plane {
        Plane::FlowDensity => {
            (vec![(0.0, 0.0), apex], vec![apex, (p.k_jam(), 0.0)])
        }
        Plane::SpeedDensity => {
            let mut congested = vec![apex];
            for i in 1..=BRANCH_SAMPLES {
                let k = p.k_cr() + (p.k_jam() - p.k_cr()) * i as f64 / BRANCH_SAMPLES as f64;
                congested.push((k, p.w() * (p.k_jam() - k) / k));
            }
            (vec![(0.0, p.v_f()), apex], congested)
        }
        Plane::SpeedFlow => {
            let mut congested = vec![apex];
            for i in 1..=BRANCH_SAMPLES {
                let k = p.k_cr() + (p.k_jam() - p.k_cr()) * i as f64 / BRANCH_SAMPLES as f64;
                let q = p.w() * (p.k_jam() - k);
                congested.push((q, if k > 0.0 { q / k } else { 0.0 }));
            }
            (vec![(0.0, p.v_f()), apex], congested)
        }
    }
}

/// Round a raw step up to the nearest 1/2/5 × 10ⁿ.
fn nice_step(raw: f64) -> f64 {
    if raw.is_nan() || raw <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(raw.log10().floor());
    for mult in [1.0, 2.0, 5.0, 10.0] {
        if mult * mag >= raw {
            return mult * mag;
        }
    }
    10.0 * mag
}

fn fmt_tick(value: f64, step: f64) -> String {
    if step >= 1.0 {
        format!("{value:.0}")
    } else if step >= 0.1 {
        format!("{value:.1}")
    } else {
        format!("{value:.2}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_LEFT + v / self.x_max * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - v / self.y_max * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn point(&self, (dx, dy): (f64, f64)) -> String {
        format!("{:.2},{:.2}", self.x(dx), self.y(dy))
    }
}

/// Render one plane to a standalone SVG document.
pub fn render(layers: &PlotLayers) -> String {
    let plane = layers.plane;

    // Scatter in reporting units, decimated to a readable density.
    let stride = layers.scatter.len().div_ceil(MAX_SCATTER).max(1);
    let scatter: Vec<(f64, f64)> = layers
        .scatter
        .iter()
        .step_by(stride)
        .map(|s| {
            plane.project_xy(
                units::density_to_veh_per_km(s.k),
                units::speed_to_kmh(s.v),
                units::flow_to_veh_per_h(s.q),
            )
        })
        .collect();
    let curve: Vec<(f64, f64)> = layers
        .binned
        .map(|b| b.points.iter().map(|p| plane.project_xy(p.k_mean, p.v_mean, p.q_mean)).collect())
        .unwrap_or_default();
    let branches = layers.params.map(|p| fitted_branches(plane, p));

    // Origin-anchored bounds over every visible layer, with 5% headroom.
    let mut x_max = 0f64;
    let mut y_max = 0f64;
    let mut grow = |&(x, y): &(f64, f64)| {
        x_max = x_max.max(x);
        y_max = y_max.max(y);
    };
    scatter.iter().for_each(&mut grow);
    curve.iter().for_each(&mut grow);
    if let Some((free, congested)) = &branches {
        free.iter().for_each(&mut grow);
        congested.iter().for_each(&mut grow);
    }
    let frame = Frame {
        x_max: if x_max > 0.0 { 1.05 * x_max } else { 1.0 },
        y_max: if y_max > 0.0 { 1.05 * y_max } else { 1.0 },
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\" \
         width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<!-- platoon-fd {} | config: {} -->\n",
        env!("CARGO_PKG_VERSION"),
        layers.config.replace("--", "- -"),
    ));
    svg.push_str(
        "<style>\n\
         .bg { fill: #ffffff; }\n\
         .grid { stroke: #e4e7eb; stroke-width: 1; }\n\
         .axis { stroke: #30343a; stroke-width: 1.5; }\n\
         text { font-family: system-ui, -apple-system, sans-serif; fill: #30343a; font-size: 13px; }\n\
         .title { font-size: 16px; font-weight: 600; }\n\
         .pt { fill: #5b8db8; fill-opacity: 0.35; stroke: none; }\n\
         .bin { fill: none; stroke: #14508c; stroke-width: 2; }\n\
         .bin-pt { fill: #14508c; }\n\
         .tfd-free { fill: none; stroke: #c03a2b; stroke-width: 2.25; }\n\
         .tfd-congested { fill: none; stroke: #c03a2b; stroke-width: 2.25; stroke-dasharray: 7 4; }\n\
         </style>\n",
    );
    svg.push_str(&format!("<rect class=\"bg\" x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\"/>\n"));

    // Grid and ticks.
    let x_step = nice_step(frame.x_max / 6.0);
    let y_step = nice_step(frame.y_max / 6.0);
    let mut tick = x_step;
    while tick <= frame.x_max {
        let px = frame.x(tick);
        svg.push_str(&format!(
            "<line class=\"grid\" x1=\"{px:.2}\" y1=\"{MARGIN_TOP}\" x2=\"{px:.2}\" y2=\"{:.2}\"/>\n",
            HEIGHT - MARGIN_BOTTOM
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_BOTTOM + 20.0,
            fmt_tick(tick, x_step)
        ));
        tick += x_step;
    }
    let mut tick = y_step;
    while tick <= frame.y_max {
        let py = frame.y(tick);
        svg.push_str(&format!(
            "<line class=\"grid\" x1=\"{MARGIN_LEFT}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\"/>\n",
            WIDTH - MARGIN_RIGHT
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 8.0,
            py + 4.0,
            fmt_tick(tick, y_step)
        ));
        tick += y_step;
    }

    // Axes and labels.
    svg.push_str(&format!(
        "<line class=\"axis\" x1=\"{MARGIN_LEFT}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\"/>\n",
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT
    ));
    svg.push_str(&format!(
        "<line class=\"axis\" x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{:.2}\"/>\n",
        HEIGHT - MARGIN_BOTTOM
    ));
    let (x_title, y_title) = plane.axis_titles();
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_title)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
        escape(y_title)
    ));
    svg.push_str(&format!(
        "<text class=\"title\" x=\"{:.2}\" y=\"28\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(layers.title)
    ));

    if !scatter.is_empty() {
        svg.push_str("<g>\n");
        for p in &scatter {
            svg.push_str(&format!(
                "<circle class=\"pt\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\"/>\n",
                frame.x(p.0),
                frame.y(p.1)
            ));
        }
        svg.push_str("</g>\n");
    }

    if !curve.is_empty() {
        let pts: Vec<String> = curve.iter().map(|p| frame.point(*p)).collect();
        if curve.len() > 1 {
            svg.push_str(&format!("<polyline class=\"bin\" points=\"{}\"/>\n", pts.join(" ")));
        }
        for p in &curve {
            svg.push_str(&format!(
                "<circle class=\"bin-pt\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\"/>\n",
                frame.x(p.0),
                frame.y(p.1)
            ));
        }
    }

    if let Some((free, congested)) = &branches {
        for (class, pts) in [("tfd-free", free), ("tfd-congested", congested)] {
            let encoded: Vec<String> = pts.iter().map(|p| frame.point(*p)).collect();
            svg.push_str(&format!(
                "<polyline class=\"{class}\" points=\"{}\"/>\n",
                encoded.join(" ")
            ));
        }
    }

    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use platoon_fd_core::trajectory::DriverMode;
    use std::sync::Arc;

    fn state(k: f64, v: f64) -> TrafficState {
        TrafficState {
            t: 0.0,
            k,
            q: k * v,
            v,
            dataset_id: Arc::from("plot"),
            driver_mode: DriverMode::Human,
        }
    }

    fn params() -> TfdParams {
        TfdParams::new(126.0, 21.3, 104.4).unwrap()
    }

    #[test]
    fn branches_meet_at_the_critical_point() {
        for plane in [Plane::FlowDensity, Plane::SpeedDensity, Plane::SpeedFlow] {
            let p = params();
            let layers = PlotLayers {
                plane,
                title: "t",
                scatter: &[],
                binned: None,
                params: Some(&p),
                config: "",
            };
            let svg = render(&layers);
            let apex_data = plane.project_xy(p.k_cr(), p.v_f(), p.capacity());
            // Both fitted branches must contain the identically formatted
            // apex vertex; rebuild the frame the same way render does.
            let (free, congested) = fitted_branches(plane, &p);
            let mut x_max = 0f64;
            let mut y_max = 0f64;
            for pt in free.iter().chain(&congested) {
                x_max = x_max.max(pt.0);
                y_max = y_max.max(pt.1);
            }
            let frame = Frame { x_max: 1.05 * x_max, y_max: 1.05 * y_max };
            let apex = frame.point(apex_data);
            let hits = svg.matches(&apex).count();
            assert!(hits >= 2, "{plane:?}: apex `{apex}` appears {hits} times");
            assert!(svg.contains("tfd-free") && svg.contains("tfd-congested"));
        }
    }

    #[test]
    fn no_fit_means_no_overlay() {
        let states = vec![state(0.02, 25.0), state(0.05, 15.0)];
        let layers = PlotLayers {
            plane: Plane::FlowDensity,
            title: "scatter only",
            scatter: &states,
            binned: None,
            params: None,
            config: "none",
        };
        let svg = render(&layers);
        assert!(!svg.contains("<polyline class=\"tfd-"));
        assert_eq!(svg.matches("<circle class=\"pt\"").count(), 2);
        assert!(svg.starts_with("<svg ") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn dense_scatter_is_decimated() {
        let states: Vec<_> = (0..10_000).map(|i| state(0.01 + 1e-6 * i as f64, 20.0)).collect();
        let layers = PlotLayers {
            plane: Plane::SpeedDensity,
            title: "dense",
            scatter: &states,
            binned: None,
            params: None,
            config: "",
        };
        let svg = render(&layers);
        let circles = svg.matches("<circle class=\"pt\"").count();
        assert!(circles <= MAX_SCATTER, "{circles} scatter points rendered");
        assert!(circles >= MAX_SCATTER / 3);
    }

    #[test]
    fn titles_are_escaped() {
        let layers = PlotLayers {
            plane: Plane::SpeedFlow,
            title: "a<b & c",
            scatter: &[],
            binned: None,
            params: None,
            config: "x",
        };
        let svg = render(&layers);
        assert!(svg.contains("a&lt;b &amp; c"));
    }
}
