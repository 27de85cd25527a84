//! CSV tables and the SVG plot.

use std::io::Write;

use lowprec_core::experiment::{MeanMetrics, SceneEval, SweepRow, SweepSummary};
use lowprec_core::metrics::DiversityReport;

use crate::error::CliError;

fn num(v: f64) -> String {
    format!("{v}")
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub const SWEEP_HEADER: [&str; 13] = [
    "method",
    "K",
    "rep",
    "members",
    "dice",
    "recall",
    "precision",
    "tp_sim",
    "fp_sim",
    "allpos_sim",
    "l_recall",
    "l_precision",
    "lesion_accuracy",
];

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> Result<(), CliError> {
    let mut w = writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let members = r.members.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";");
        let div = |f: fn(&DiversityReport) -> f64| r.diversity.as_ref().map(|d| num(f(d))).unwrap_or_default();
        let m = &r.metrics;
        w.write_record([
            r.method.clone(),
            r.k.to_string(),
            r.rep.to_string(),
            members,
            num(m.dice),
            num(m.recall),
            num(m.precision),
            div(|d| d.tp_similarity),
            div(|d| d.fp_similarity),
            div(|d| d.allpos_similarity),
            num(m.l_recall),
            num(m.l_precision),
            num(m.lesion_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const METRIC_NAMES: [&str; 6] = ["dice", "recall", "precision", "l_recall", "l_precision", "lesion_accuracy"];

pub fn write_summary<W: Write>(summary: &[SweepSummary], out: W) -> Result<(), CliError> {
    let mut w = writer(out);
    let mut header = vec!["method".to_string(), "K".into(), "n".into()];
    for name in METRIC_NAMES {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    for s in summary {
        let mut rec = vec![s.method.clone(), s.k.to_string(), s.n.to_string()];
        for (mean, std) in s.mean.to_array().into_iter().zip(s.std.to_array()) {
            rec.push(num(mean));
            rec.push(num(std));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_evaluation<W: Write>(evals: &[SceneEval], out: W) -> Result<(), CliError> {
    let mut w = writer(out);
    w.write_record([
        "scene", "tp", "fp", "fn", "tn", "dice", "recall", "precision", "gl", "pl", "ltp", "l_recall",
        "l_precision", "lesion_accuracy",
    ])?;
    for e in evals {
        let (p, l) = (&e.pixel, &e.lesion);
        w.write_record([
            e.scene.to_string(),
            p.tp.to_string(),
            p.fp.to_string(),
            p.fn_.to_string(),
            p.tn.to_string(),
            num(p.dice),
            num(p.recall),
            num(p.precision),
            l.gl.to_string(),
            l.pl.to_string(),
            l.ltp.to_string(),
            num(l.l_recall),
            num(l.l_precision),
            num(l.accuracy()),
        ])?;
    }
    let m = MeanMetrics::of(evals);
    let blank = String::new;
    w.write_record([
        "mean".to_string(),
        blank(),
        blank(),
        blank(),
        blank(),
        num(m.dice),
        num(m.recall),
        num(m.precision),
        blank(),
        blank(),
        blank(),
        num(m.l_recall),
        num(m.l_precision),
        num(m.lesion_accuracy),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_diversity<W: Write>(
    per_scene: &[(usize, DiversityReport)],
    mean: &DiversityReport,
    out: W,
) -> Result<(), CliError> {
    let mut w = writer(out);
    w.write_record([
        "scene",
        "pairs",
        "tp_sim",
        "fp_sim",
        "allpos_sim",
        "tp_undefined",
        "fp_undefined",
        "allpos_undefined",
    ])?;
    let rows = per_scene.iter().map(|(i, r)| (i.to_string(), r)).chain([("mean".to_string(), mean)]);
    for (label, r) in rows {
        w.write_record([
            label,
            r.pairs.to_string(),
            num(r.tp_similarity),
            num(r.fp_similarity),
            num(r.allpos_similarity),
            r.tp_undefined.to_string(),
            r.fp_undefined.to_string(),
            r.allpos_undefined.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Dice, recall and precision against K, one panel each, one line per method,
/// with whiskers at one standard deviation.
pub fn sweep_svg(summary: &[SweepSummary]) -> String {
    let (pw, ph, margin) = (260.0, 200.0, 40.0);
    let width = 3.0 * (pw + margin) + margin;
    let height = ph + 3.0 * margin + 20.0;
    let mut methods: Vec<&str> = Vec::new();
    for s in summary {
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
    }
    let k_max = summary.iter().map(|s| s.k).max().unwrap_or(1).max(2) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let panels: [(&str, fn(&MeanMetrics) -> f64); 3] =
        [("Dice", |m| m.dice), ("Recall", |m| m.recall), ("Precision", |m| m.precision)];
    for (p, (title, field)) in panels.iter().enumerate() {
        let x0 = margin + p as f64 * (pw + margin);
        let y0 = margin;
        let sx = |k: f64| x0 + (k - 1.0) / (k_max - 1.0) * pw;
        let sy = |v: f64| y0 + (1.0 - v.clamp(0.0, 1.0)) * ph;
        svg += &format!(
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{title}</text>\n",
            x0 + pw / 2.0,
            y0 - 8.0
        );
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            svg += &format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>\n",
                x0 - 4.0,
                sy(tick) + 4.0
            );
        }
        for k in 1..=k_max as usize {
            svg += &format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{k}</text>\n",
                sx(k as f64),
                y0 + ph + 14.0
            );
        }
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">K</text>\n",
            x0 + pw / 2.0,
            y0 + ph + 30.0
        );
        for (mi, method) in methods.iter().enumerate() {
            let colour = COLOURS[mi % COLOURS.len()];
            let pts: Vec<&SweepSummary> = summary.iter().filter(|s| s.method == *method).collect();
            let path: Vec<String> = pts
                .iter()
                .map(|s| format!("{:.2},{:.2}", sx(s.k as f64), sy(field(&s.mean))))
                .collect();
            svg += &format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            );
            for s in pts {
                let (x, m, sd) = (sx(s.k as f64), field(&s.mean), field(&s.std));
                svg += &format!(
                    "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{colour}\"/>\n\
                     <circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{colour}\"/>\n",
                    sy(m - sd),
                    sy(m + sd),
                    sy(m)
                );
            }
        }
    }
    for (mi, method) in methods.iter().enumerate() {
        let x = margin + mi as f64 * 160.0;
        let y = height - 12.0;
        svg += &format!(
            "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{}\"/>\n<text x=\"{}\" y=\"{y}\">{method}</text>\n",
            y - 6.0,
            COLOURS[mi % COLOURS.len()],
            x + 16.0,
            method = escape(method)
        );
    }
    svg += "</svg>\n";
    svg
}
