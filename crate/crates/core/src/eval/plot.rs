use super::PrPoint;

const SIZE: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Standalone SVG of a precision/recall curve drawn as a step polyline.
pub fn pr_curve_svg(curve: &[PrPoint], title: &str) -> String {
    let px = |r: f64| MARGIN + r * SIZE;
    let py = |p: f64| MARGIN + (1.0 - p) * SIZE;
    let mut pts = vec![format!("{:.2},{:.2}", px(0.0), py(curve.first().map_or(0.0, |p| p.precision)))];
    let mut prev_r = 0.0;
    for p in curve {
        pts.push(format!("{:.2},{:.2}", px(prev_r), py(p.precision)));
        pts.push(format!("{:.2},{:.2}", px(p.recall), py(p.precision)));
        prev_r = p.recall;
    }
    let total = SIZE + 2.0 * MARGIN;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total}\" height=\"{total}\" viewBox=\"0 0 {total} {total}\">\n"
    );
    s.push_str(&format!(
        "  <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"#888\"/>\n"
    ));
    s.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        total / 2.0,
        MARGIN / 2.0,
        escape(title)
    ));
    s.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">recall</text>\n",
        total / 2.0,
        total - 10.0
    ));
    s.push_str(&format!(
        "  <text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">precision</text>\n",
        total / 2.0,
        total / 2.0
    ));
    s.push_str(&format!(
        "  <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.join(" ")
    ));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed() {
        let svg = pr_curve_svg(
            &[PrPoint { recall: 0.5, precision: 1.0 }, PrPoint { recall: 1.0, precision: 0.5 }],
            "fish <0>",
        );
        assert!(roxmltree::Document::parse(&svg).is_ok());
        assert!(svg.contains("fish &lt;0&gt;"));
    }
}
