//! Minimal chart rendering for run logs and ablation reports. Everything
//! is drawn directly into an RGB buffer: polylines for loss curves, filled
//! bars for per-arm metrics, and a tiny 3x5 bitmap font for labels.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::segeval::AblationReport;
use crate::trainer::LogRecord;

const BG: Rgb<u8> = Rgb([250, 250, 248]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const SERIES_COLORS: [Rgb<u8>; 6] = [
    Rgb([214, 69, 65]),   // red
    Rgb([31, 119, 180]),  // blue
    Rgb([44, 160, 44]),   // green
    Rgb([148, 103, 189]), // purple
    Rgb([255, 127, 14]),  // orange
    Rgb([23, 190, 190]),  // teal
];

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        let mut img = RgbImage::new(w, h);
        for p in img.pixels_mut() {
            *p = BG;
        }
        Canvas { img }
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, color);
            }
        }
    }

    /// 3x5 font, doubled to 6x10; supports a-z, 0-9 and a little
    /// punctuation. Unknown characters render as a space.
    fn text(&mut self, x: i64, y: i64, s: &str, color: Rgb<u8>) {
        let mut cx = x;
        for ch in s.chars() {
            let glyph = glyph3x5(ch);
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (1 << (2 - col)) != 0 {
                        self.fill_rect(cx + col as i64 * 2, y + row as i64 * 2, 2, 2, color);
                    }
                }
            }
            cx += 8;
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.img.save(path)?;
        Ok(())
    }
}

#[rustfmt::skip]
fn glyph3x5(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b011, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        'a' => [0b000, 0b011, 0b101, 0b101, 0b011],
        'b' => [0b100, 0b110, 0b101, 0b101, 0b110],
        'c' => [0b000, 0b011, 0b100, 0b100, 0b011],
        'd' => [0b001, 0b011, 0b101, 0b101, 0b011],
        'e' => [0b010, 0b101, 0b111, 0b100, 0b011],
        'f' => [0b001, 0b010, 0b111, 0b010, 0b010],
        'g' => [0b011, 0b101, 0b011, 0b001, 0b110],
        'h' => [0b100, 0b110, 0b101, 0b101, 0b101],
        'i' => [0b010, 0b000, 0b010, 0b010, 0b010],
        'j' => [0b001, 0b000, 0b001, 0b101, 0b010],
        'k' => [0b100, 0b101, 0b110, 0b110, 0b101],
        'l' => [0b010, 0b010, 0b010, 0b010, 0b001],
        'm' => [0b000, 0b110, 0b111, 0b101, 0b101],
        'n' => [0b000, 0b110, 0b101, 0b101, 0b101],
        'o' => [0b000, 0b010, 0b101, 0b101, 0b010],
        'p' => [0b000, 0b110, 0b101, 0b110, 0b100],
        'q' => [0b000, 0b011, 0b101, 0b011, 0b001],
        'r' => [0b000, 0b011, 0b100, 0b100, 0b100],
        's' => [0b000, 0b011, 0b110, 0b001, 0b110],
        't' => [0b010, 0b111, 0b010, 0b010, 0b001],
        'u' => [0b000, 0b101, 0b101, 0b101, 0b011],
        'v' => [0b000, 0b101, 0b101, 0b101, 0b010],
        'w' => [0b000, 0b101, 0b101, 0b111, 0b011],
        'x' => [0b000, 0b101, 0b010, 0b010, 0b101],
        'y' => [0b000, 0b101, 0b011, 0b001, 0b110],
        'z' => [0b000, 0b111, 0b011, 0b110, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
        '(' => [0b001, 0b010, 0b010, 0b010, 0b001],
        ')' => [0b100, 0b010, 0b010, 0b010, 0b100],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        '%' => [0b101, 0b001, 0b010, 0b100, 0b101],
        _ => [0, 0, 0, 0, 0],
    }
}

/// Render the loss curves of a run log to a PNG.
pub fn plot_loss_curves(records: &[LogRecord], out: &Path) -> Result<()> {
    let (w, h) = (900u32, 540u32);
    let (ml, mr, mt, mb) = (70i64, 20i64, 20i64, 50i64);
    let mut canvas = Canvas::new(w, h);
    let plot_w = w as i64 - ml - mr;
    let plot_h = h as i64 - mt - mb;

    type Series<'a> = (&'a str, Box<dyn Fn(&LogRecord) -> f64>);
    let series: [Series; 5] = [
        ("total_g", Box::new(|r| r.losses.total_g)),
        ("total_d", Box::new(|r| r.losses.total_d)),
        ("rec", Box::new(|r| r.losses.rec)),
        ("sem", Box::new(|r| r.losses.sem_st + r.losses.sem_ts)),
        ("adv", Box::new(|r| r.losses.adv_st + r.losses.adv_ts)),
    ];

    // bounds
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for r in records {
        for (_, f) in &series {
            let v = f(r);
            ymin = ymin.min(v);
            ymax = ymax.max(v);
        }
    }
    if records.is_empty() || !ymin.is_finite() {
        ymin = 0.0;
        ymax = 1.0;
    }
    if (ymax - ymin).abs() < 1e-9 {
        ymax = ymin + 1.0;
    }
    let xmax = records.last().map(|r| r.step as f64).unwrap_or(1.0).max(1.0);

    let to_px = |step: f64, value: f64| -> (i64, i64) {
        let x = ml + ((step / xmax) * plot_w as f64) as i64;
        let y = mt + plot_h - (((value - ymin) / (ymax - ymin)) * plot_h as f64) as i64;
        (x, y)
    };

    // axes
    canvas.line(ml, mt, ml, mt + plot_h, AXIS);
    canvas.line(ml, mt + plot_h, ml + plot_w, mt + plot_h, AXIS);
    canvas.text(ml + plot_w / 2 - 16, h as i64 - 22, "step", AXIS);
    for tick in 0..=4 {
        let value = ymin + (ymax - ymin) * tick as f64 / 4.0;
        let (_, y) = to_px(0.0, value);
        canvas.line(ml - 4, y, ml, y, AXIS);
        canvas.text(4, y - 5, &format!("{value:8.2}"), AXIS);
    }

    for (i, (name, f)) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let mut prev: Option<(i64, i64)> = None;
        for r in records {
            let p = to_px(r.step as f64, f(r));
            if let Some(q) = prev {
                canvas.line(q.0, q.1, p.0, p.1, color);
            }
            prev = Some(p);
        }
        // legend
        let lx = ml + 10 + (i as i64) * 140;
        let ly = mt + 6;
        canvas.fill_rect(lx, ly, 10, 10, color);
        canvas.text(lx + 14, ly, name, AXIS);
    }
    canvas.save(out)
}

/// Render per-arm mean mIoU / accuracy bars to a PNG.
pub fn plot_ablation_bars(report: &AblationReport, out: &Path) -> Result<()> {
    let (w, h) = (720u32, 480u32);
    let (ml, mr, mt, mb) = (70i64, 20i64, 30i64, 60i64);
    let mut canvas = Canvas::new(w, h);
    let plot_w = w as i64 - ml - mr;
    let plot_h = h as i64 - mt - mb;

    canvas.line(ml, mt, ml, mt + plot_h, AXIS);
    canvas.line(ml, mt + plot_h, ml + plot_w, mt + plot_h, AXIS);
    for tick in 0..=5 {
        let frac = tick as f64 / 5.0;
        let y = mt + plot_h - (frac * plot_h as f64) as i64;
        canvas.line(ml - 4, y, ml, y, AXIS);
        canvas.text(12, y - 5, &format!("{:3.0}%", frac * 100.0), AXIS);
    }

    let n = report.summaries.len().max(1) as i64;
    let group_w = plot_w / n;
    let bar_w = (group_w / 3).max(4);
    for (i, s) in report.summaries.iter().enumerate() {
        let gx = ml + i as i64 * group_w;
        let miou_h = (s.mean_miou.clamp(0.0, 1.0) * plot_h as f64) as i64;
        let acc_h = (s.mean_pixel_accuracy.clamp(0.0, 1.0) * plot_h as f64) as i64;
        canvas.fill_rect(gx + group_w / 6, mt + plot_h - miou_h, bar_w, miou_h, SERIES_COLORS[1]);
        canvas.fill_rect(
            gx + group_w / 6 + bar_w + 4,
            mt + plot_h - acc_h,
            bar_w,
            acc_h,
            SERIES_COLORS[2],
        );
        canvas.text(gx + group_w / 6, mt + plot_h + 8, &format!("({})", s.arm), AXIS);
        canvas.text(
            gx + group_w / 6,
            mt + plot_h + 24,
            &format!("{:2.0}:{:2.0}", 100.0 * s.mean_miou, 100.0 * s.mean_pixel_accuracy),
            AXIS,
        );
    }
    // legend
    canvas.fill_rect(ml + 8, mt - 20, 10, 10, SERIES_COLORS[1]);
    canvas.text(ml + 22, mt - 20, "miou", AXIS);
    canvas.fill_rect(ml + 108, mt - 20, 10, 10, SERIES_COLORS[2]);
    canvas.text(ml + 122, mt - 20, "acc", AXIS);
    canvas.save(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossBreakdown;
    use crate::segeval::{AblationCell, ArmSummary};
    use crate::trainer::AblationArm;

    fn record(step: u64, v: f64) -> LogRecord {
        LogRecord {
            step,
            wall_ms: step * 10,
            losses: LossBreakdown {
                adv_st: -v,
                adv_ts: -v / 2.0,
                g_adv_st: v / 3.0,
                g_adv_ts: v / 4.0,
                sem_st: v,
                sem_ts: v / 2.0,
                rec: v / 5.0,
                total_d: v,
                total_g: 2.0 * v,
            },
        }
    }

    #[test]
    fn loss_curve_png_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("curves.png");
        let records: Vec<LogRecord> =
            (1..=50).map(|s| record(s * 10, 1.0 / s as f64 + 0.2)).collect();
        plot_loss_curves(&records, &out).unwrap();
        let img = image::open(&out).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (900, 540));
        // something other than background got drawn
        assert!(img.pixels().any(|p| p.0 != [250, 250, 248]));
    }

    #[test]
    fn empty_log_still_renders_axes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("empty.png");
        plot_loss_curves(&[], &out).unwrap();
        assert!(out.is_file());
    }

    #[test]
    fn ablation_bars_png_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bars.png");
        let report = AblationReport {
            cells: vec![AblationCell {
                arm: AblationArm::A,
                seed: 0,
                miou: 0.3,
                pixel_accuracy: 0.6,
                report_path: dir.path().join("m.json"),
            }],
            summaries: vec![
                ArmSummary {
                    arm: AblationArm::A,
                    label: "synthetic".into(),
                    seeds: 1,
                    mean_miou: 0.3,
                    mean_pixel_accuracy: 0.6,
                },
                ArmSummary {
                    arm: AblationArm::E,
                    label: "cycle+sem+weight".into(),
                    seeds: 1,
                    mean_miou: 0.55,
                    mean_pixel_accuracy: 0.8,
                },
            ],
        };
        plot_ablation_bars(&report, &out).unwrap();
        assert!(out.is_file());
    }
}
