//! Static SVG emission for the three artifact plots: duality-gap histories,
//! training-loss curves, and the gamma ablation bars. No display server, no
//! dependencies; each datum becomes an explicit SVG element so plots are
//! greppable in tests.

use std::fmt::Write as _;
use std::path::Path;

use crate::trainer::StepRecord;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// CSV of `iter,gap`: log-scale line with one marker per iteration.
    Gap,
    /// Metrics JSONL: loss against step.
    Loss,
    /// Ablation CSV: one bar per gamma at the median win rate over seeds.
    Ablation,
}

pub const PLOT_KINDS: &[&str] = &["gap", "loss", "ablation"];

impl PlotKind {
    pub fn parse(s: &str) -> Result<Self, Error> {
        match s {
            "gap" => Ok(PlotKind::Gap),
            "loss" => Ok(PlotKind::Loss),
            "ablation" => Ok(PlotKind::Ablation),
            _ => Err(Error::Config(format!(
                "unknown plot kind '{s}'; known kinds: {}",
                PLOT_KINDS.join(", ")
            ))),
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let span = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x_min, x_max) = span(xs);
        let (y_min, y_max) = span(ys);
        Frame { x_min, x_max, y_min, y_max }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (H - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{title}</text>\n",
        W / 2.0
    )
}

fn axes(frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let x0 = MARGIN;
    let x1 = W - MARGIN;
    let y0 = H - MARGIN;
    let y1 = MARGIN;
    let _ = writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\">{x_label}</text>",
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"12\" transform=\"rotate(-90 18 {})\">{y_label}</text>",
        H / 2.0,
        H / 2.0
    );
    for frac in [0.0, 0.5, 1.0] {
        let xv = frame.x_min + frac * (frame.x_max - frame.x_min);
        let yv = frame.y_min + frac * (frame.y_max - frame.y_min);
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"10\">{xv:.3}</text>",
            frame.px(xv),
            y0 + 16.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"10\">{yv:.3}</text>",
            x0 - 6.0,
            frame.py(yv) + 3.0
        );
    }
    s
}

fn line_plot(xs: &[f64], ys: &[f64], title: &str, x_label: &str, y_label: &str) -> String {
    let frame = Frame::new(xs, ys);
    let mut s = svg_open(title);
    s.push_str(&axes(&frame, x_label, y_label));
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>",
        pts.join(" ")
    );
    for (x, y) in xs.iter().zip(ys) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"steelblue\"/>",
            frame.px(*x),
            frame.py(*y)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn parse_two_column_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let a = parts.next().unwrap_or("");
        let b = parts
            .next()
            .ok_or_else(|| Error::Config(format!("line {}: expected two columns", i + 1)))?;
        // Skip a header row.
        if i == 0 && a.parse::<f64>().is_err() {
            continue;
        }
        let x: f64 = a
            .parse()
            .map_err(|_| Error::Config(format!("line {}: bad number '{a}'", i + 1)))?;
        let y: f64 = b
            .parse()
            .map_err(|_| Error::Config(format!("line {}: bad number '{b}'", i + 1)))?;
        xs.push(x);
        ys.push(y);
    }
    if xs.is_empty() {
        return Err(Error::Config("no data rows in input".into()));
    }
    Ok((xs, ys))
}

fn render_gap(text: &str) -> Result<String, Error> {
    let (xs, ys) = parse_two_column_csv(text)?;
    // Gaps span orders of magnitude; plot log10, flooring at 1e-300.
    let logs: Vec<f64> = ys.iter().map(|g| g.max(1e-300).log10()).collect();
    Ok(line_plot(&xs, &logs, "Duality gap", "iteration", "log10 gap"))
}

fn render_loss(text: &str) -> Result<String, Error> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(line)
            .map_err(|e| Error::Config(format!("metrics line {}: {e}", i + 1)))?;
        xs.push(rec.step as f64);
        ys.push(rec.loss);
    }
    if xs.is_empty() {
        return Err(Error::Config("no data rows in input".into()));
    }
    Ok(line_plot(&xs, &ys, "Training loss", "step", "loss"))
}

fn median(v: &mut Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn render_ablation(text: &str) -> Result<String, Error> {
    // gamma,seed,winrate,... -> median winrate per gamma, in grid order.
    let mut gammas: Vec<f64> = Vec::new();
    let mut per_gamma: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if i == 0 && cols[0].parse::<f64>().is_err() {
            continue;
        }
        if cols.len() < 3 {
            return Err(Error::Config(format!("line {}: expected >= 3 columns", i + 1)));
        }
        let g: f64 = cols[0]
            .parse()
            .map_err(|_| Error::Config(format!("line {}: bad gamma '{}'", i + 1, cols[0])))?;
        let w: f64 = cols[2]
            .parse()
            .map_err(|_| Error::Config(format!("line {}: bad winrate '{}'", i + 1, cols[2])))?;
        match gammas.iter().position(|x| (x - g).abs() < 1e-12) {
            Some(idx) => per_gamma[idx].push(w),
            None => {
                gammas.push(g);
                per_gamma.push(vec![w]);
            }
        }
    }
    if gammas.is_empty() {
        return Err(Error::Config("no data rows in input".into()));
    }
    let medians: Vec<f64> = per_gamma.iter_mut().map(median).collect();

    let mut s = svg_open("Win rate vs reference by gamma");
    let n = gammas.len();
    let y_max = medians.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    let band = (W - 2.0 * MARGIN) / n as f64;
    let y0 = H - MARGIN;
    let _ = writeln!(
        s,
        "<line x1=\"{MARGIN}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>",
        W - MARGIN
    );
    for (i, (g, m)) in gammas.iter().zip(&medians).enumerate() {
        let x = MARGIN + i as f64 * band + band * 0.15;
        let bw = band * 0.7;
        let h = m / y_max * (H - 2.0 * MARGIN);
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{h:.2}\" \
             fill=\"steelblue\"/>",
            y0 - h
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{g:.3}</text>",
            x + bw / 2.0,
            y0 + 16.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"10\">{m:.3}</text>",
            x + bw / 2.0,
            y0 - h - 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Render `input` as SVG of the given kind and write it to `output`.
pub fn render_plot(kind: PlotKind, input: &Path, output: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(input)?;
    let svg = match kind {
        PlotKind::Gap => render_gap(&text)?,
        PlotKind::Loss => render_loss(&text)?,
        PlotKind::Ablation => render_ablation(&text)?,
    };
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(output, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_matches(haystack: &str, needle: &str) -> usize {
        haystack.matches(needle).count()
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(PlotKind::parse("gap").unwrap(), PlotKind::Gap);
        assert_eq!(PlotKind::parse("loss").unwrap(), PlotKind::Loss);
        assert_eq!(PlotKind::parse("ablation").unwrap(), PlotKind::Ablation);
        let err = PlotKind::parse("pie").unwrap_err().to_string();
        assert!(err.contains("gap") && err.contains("loss") && err.contains("ablation"));
    }

    #[test]
    fn gap_plot_has_one_marker_per_row() {
        let svg = render_gap("iter,gap\n1,0.5\n2,0.05\n3,0.005\n").unwrap();
        assert_eq!(count_matches(&svg, "<circle"), 3);
        assert!(svg.contains("<polyline"));
        assert!(render_gap("iter,gap\n").is_err());
        assert!(render_gap("").is_err());
    }

    #[test]
    fn loss_plot_from_metrics() {
        let lines = "\
{\"step\":1,\"loss\":0.7,\"mean_logit\":0.1,\"lambda\":0.001}\n\
{\"step\":2,\"loss\":0.6,\"mean_logit\":0.2,\"winrate_vs_ref\":0.55,\"lambda\":0.002}\n";
        let svg = render_loss(lines).unwrap();
        assert_eq!(count_matches(&svg, "<circle"), 2);
        assert!(render_loss("").is_err());
    }

    #[test]
    fn ablation_one_bar_per_gamma() {
        let csv = "gamma,seed,winrate,ci_halfwidth,mean_score_a,mean_score_b\n\
                   0,1,0.5,0.01,,\n0,2,0.52,0.01,,\n0.5,1,0.7,0.01,,\n1,1,0.66,0.01,,\n";
        let svg = render_ablation(csv).unwrap();
        assert_eq!(count_matches(&svg, "<rect x="), 3);
        // Median of 0.5/0.52 shows up, not either raw value count.
        assert!(svg.contains("0.510"));
    }

    #[test]
    fn render_plot_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("gaps.csv");
        std::fs::write(&input, "1,0.1\n2,0.01\n").unwrap();
        let out = dir.path().join("gaps.svg");
        render_plot(PlotKind::Gap, &input, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("<svg"));
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(render_plot(PlotKind::Gap, &empty, &out).is_err());
    }
}
