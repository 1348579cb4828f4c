//! Minimal line charts: actual series plus one polyline per method.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const COLORS: [&str; 5] = ["#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub actual: Vec<f64>,
    /// `(method, predictions)` in file order.
    pub methods: Vec<(String, Vec<f64>)>,
}

impl PlotData {
    /// Parses `step,actual,predicted,method` rows.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some("step,actual,predicted,method") {
            return Err("expected header `step,actual,predicted,method`".into());
        }
        let mut actual: Vec<f64> = Vec::new();
        let mut methods: Vec<(String, Vec<f64>)> = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            let [step, a, p, method] = cells.as_slice() else {
                return Err(format!("line {}: expected 4 cells", i + 2));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: `{s}` is not a number", i + 2));
            let step: usize = step.parse().map_err(|_| format!("line {}: bad step `{step}`", i + 2))?;
            let (a, p) = (num(a)?, num(p)?);
            if methods.last().map(|m| m.0.as_str()) != Some(*method) {
                methods.push((method.to_string(), Vec::new()));
            }
            let series = &mut methods.last_mut().expect("pushed above").1;
            if step != series.len() {
                return Err(format!("line {}: step {step} out of order", i + 2));
            }
            series.push(p);
            if step == actual.len() {
                actual.push(a);
            }
        }
        Ok(Self { actual, methods })
    }

    pub fn render(&self, title: &str) -> String {
        let all = self.actual.iter().chain(self.methods.iter().flat_map(|m| m.1.iter()));
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let steps = self
            .methods
            .iter()
            .map(|m| m.1.len())
            .chain([self.actual.len()])
            .max()
            .unwrap_or(0)
            .max(2);
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let x = |t: usize| LEFT + plot_w * t as f64 / (steps - 1) as f64;
        let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(title)
        );
        let (x0, y0, x1, y1) = (LEFT, TOP + plot_h, LEFT + plot_w, TOP);
        let _ = writeln!(s, r#"<g class="axes" stroke="black" stroke-width="1">"#);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
        let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="10">"#);
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
                x0 - 6.0,
                y(v) + 3.0
            );
        }
        for i in 0..=4 {
            let t = (steps - 1) * i / 4;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
                x(t),
                y0 + 16.0
            );
        }
        let _ = writeln!(s, "</g>");

        let mut legend = vec![("actual".to_string(), "black")];
        let _ = writeln!(s, "{}", polyline(&self.actual, "black", "actual", &x, &y));
        for (i, (name, values)) in self.methods.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let _ = writeln!(s, "{}", polyline(values, color, name, &x, &y));
            legend.push((name.clone(), color));
        }
        let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
        for (i, (name, color)) in legend.iter().enumerate() {
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
        }
        let _ = writeln!(s, "</g>");
        s.push_str("</svg>\n");
        s
    }
}

fn polyline(values: &[f64], color: &str, name: &str, x: &dyn Fn(usize) -> f64, y: &dyn Fn(f64) -> f64) -> String {
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(t, v)| format!("{:.2},{:.2}", x(t), y(*v)))
        .collect();
    format!(
        r#"<polyline class="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        escape(name),
        points.join(" ")
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
