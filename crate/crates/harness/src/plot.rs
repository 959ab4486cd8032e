//! SVG rendering of a trial trace: obstacles, goal, executed path with
//! backup segments drawn in their own stroke, and body footprints.

use std::fmt::Write;
use std::path::Path;

use safempd_core::{Aabb, Obstacle};

use crate::error::{HarnessError, Result};
use crate::trace::{read_trace, StepRecord, TraceHeader, TraceRecord};

/// Pixels per meter.
const SCALE: f64 = 30.0;
/// Footprints are drawn every this many steps, plus the final state.
const FOOTPRINT_EVERY: usize = 10;

const STYLE: &str = "\
.world{fill:#fafafa;stroke:#444;stroke-width:1}\
.obstacle{fill:#9e9e9e;stroke:#616161}\
.goal{fill:none;stroke:#2e7d32;stroke-width:2}\
.body{fill:none;stroke:#1565c0;stroke-opacity:0.5}\
.trajectory,.nominal{fill:none;stroke:#1565c0;stroke-width:2}\
.fallback{fill:none;stroke:#c62828;stroke-width:2;stroke-dasharray:6 3}";

struct Frame {
    world: Aabb,
}

impl Frame {
    fn x(&self, x: f64) -> f64 {
        (x - self.world.min[0]) * SCALE
    }
    fn y(&self, y: f64) -> f64 {
        (self.world.max[1] - y) * SCALE
    }
}

/// Polyline runs of consecutive steps sharing a fallback flag. Each run
/// starts at the state before its first transition, so runs connect.
fn runs(steps: &[StepRecord]) -> Vec<(bool, Vec<[f64; 2]>)> {
    let mut out: Vec<(bool, Vec<[f64; 2]>)> = Vec::new();
    for pair in steps.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let p = |s: &StepRecord| [s.state[0], s.state[1]];
        match out.last_mut() {
            Some((flag, pts)) if *flag == b.fallback => pts.push(p(b)),
            _ => out.push((b.fallback, vec![p(a), p(b)])),
        }
    }
    out
}

pub fn render_svg(header: &TraceHeader, steps: &[StepRecord]) -> String {
    let f = Frame { world: header.world };
    let w = (header.world.max[0] - header.world.min[0]) * SCALE;
    let h = (header.world.max[1] - header.world.min[1]) * SCALE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.3} {h:.3}\">"
    );
    let _ = writeln!(s, "<title>{} ({}, {}, seed {})</title>", header.scenario, header.system, header.mode, header.seed);
    let _ = writeln!(s, "<style>{STYLE}</style>");
    let _ = writeln!(s, "<rect class=\"world\" x=\"0\" y=\"0\" width=\"{w:.3}\" height=\"{h:.3}\"/>");
    for o in &header.obstacles {
        match o {
            Obstacle::Circle { center, radius } => {
                let _ = writeln!(
                    s,
                    "<circle class=\"obstacle\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\"/>",
                    f.x(center[0]),
                    f.y(center[1]),
                    radius * SCALE
                );
            }
            Obstacle::Box { min, max } => {
                let _ = writeln!(
                    s,
                    "<rect class=\"obstacle\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\"/>",
                    f.x(min[0]),
                    f.y(max[1]),
                    (max[0] - min[0]) * SCALE,
                    (max[1] - min[1]) * SCALE
                );
            }
        }
    }
    let g = &header.goal;
    let _ = writeln!(
        s,
        "<circle class=\"goal\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\"/>",
        f.x(g.position[0]),
        f.y(g.position[1]),
        g.tolerance * SCALE
    );
    let last = steps.len().saturating_sub(1);
    for step in steps.iter().filter(|st| st.t % FOOTPRINT_EVERY == 0 || st.t == last) {
        for b in &step.bodies {
            let _ = writeln!(
                s,
                "<circle class=\"body\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\"/>",
                f.x(b.center[0]),
                f.y(b.center[1]),
                b.radius * SCALE
            );
        }
    }
    let runs = runs(steps);
    let any_fallback = runs.iter().any(|(fb, _)| *fb);
    for (fallback, pts) in &runs {
        let class = match (any_fallback, fallback) {
            (false, _) => "trajectory",
            (true, false) => "nominal",
            (true, true) => "fallback",
        };
        let mut d = String::new();
        for (i, p) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.3},{:.3}", if i == 0 { "M" } else { " L" }, f.x(p[0]), f.y(p[1]));
        }
        let _ = writeln!(s, "<path class=\"{class}\" d=\"{d}\"/>");
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(trace: &Path, out: &Path) -> Result<()> {
    let records = read_trace(trace)?;
    let mut header = None;
    let mut steps = Vec::new();
    for r in records {
        match r {
            TraceRecord::Header(h) => header = Some(h),
            TraceRecord::Step(s) => steps.push(s),
            _ => {}
        }
    }
    let header = header.ok_or_else(|| HarnessError::Trace {
        path: trace.to_path_buf(),
        message: "missing header".into(),
    })?;
    std::fs::write(out, render_svg(&header, &steps)).map_err(|e| HarnessError::io(out, e))
}
