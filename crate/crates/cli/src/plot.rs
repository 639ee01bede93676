//! Minimal SVG line chart of a log spectrum with artifact annotations.

use std::fmt::Write as _;

use dlfp_core::{LabeledPeak, LogPsd};

const W: f64 = 900.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(lp: &LogPsd, peaks: &[LabeledPeak], title: &str) -> String {
    let f_max = lp.fs / 2.0;
    // Ignore the DC bin and floored bins when choosing the y range.
    let visible: Vec<f64> = lp.db.iter().skip(1).copied().filter(|d| *d > -199.0).collect();
    let mut lo = visible.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = visible.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() || hi - lo < 1e-9 {
        lo = -100.0;
        hi = 0.0;
    }
    lo = (lo / 10.0).floor() * 10.0;
    hi = (hi / 10.0).ceil() * 10.0 + 10.0;

    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x = |f: f64| LEFT + f / f_max * pw;
    let y = |d: f64| TOP + (hi - d.max(lo)) / (hi - lo) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{LEFT}" y="16" font-size="13">{}</text>"#, escape(title)).unwrap();

    let mut step = 10.0;
    while (hi - lo) / step > 10.0 {
        step *= 2.0;
    }
    let mut d = lo;
    while d <= hi + 1e-9 {
        let yy = y(d);
        writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#e4e4e4"/><text x="{:.1}" y="{:.1}" text-anchor="end">{d:.0}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            yy + 4.0
        )
        .unwrap();
        d += step;
    }
    let mut f = 0.0;
    while f <= f_max + 1e-9 {
        let xx = x(f);
        writeln!(
            s,
            r##"<line x1="{xx:.1}" y1="{TOP}" x2="{xx:.1}" y2="{:.1}" stroke="#e4e4e4"/><text x="{xx:.1}" y="{:.1}" text-anchor="middle">{f:.0}</text>"##,
            H - BOTTOM,
            H - BOTTOM + 16.0
        )
        .unwrap();
        f += 25.0;
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Frequency (Hz)</text>"#,
        LEFT + pw / 2.0,
        H - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">Power (dB V²/Hz)</text>"#,
        TOP + ph / 2.0
    )
    .unwrap();

    let points: Vec<String> = lp
        .freqs
        .iter()
        .zip(&lp.db)
        .map(|(&f, &d)| format!("{:.2},{:.2}", x(f), y(d)))
        .collect();
    writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f4e99" stroke-width="1.2" points="{}"/>"##,
        points.join(" ")
    )
    .unwrap();

    for p in peaks {
        let color = match p.label_name() {
            "ASH" => "#c0392b",
            "IMH" => "#8e44ad",
            "SSH" => "#d35400",
            "ORM" => "#27ae60",
            _ => "#7f8c8d",
        };
        let (xx, yy) = (x(p.freq), y(p.db));
        writeln!(
            s,
            r#"<line x1="{xx:.1}" y1="{:.1}" x2="{xx:.1}" y2="{:.1}" stroke="{color}" stroke-dasharray="3,2"/><text x="{xx:.1}" y="{:.1}" fill="{color}" text-anchor="middle">{} {:.1}</text>"#,
            yy - 4.0,
            yy - 18.0,
            yy - 22.0,
            p.label_name(),
            p.freq
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
