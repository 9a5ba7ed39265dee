//! `motionseg flow` — inspect and transform Middlebury `.flo` files.

use std::path::PathBuf;

use image::{ImageFormat, Rgb, RgbImage};
use motionseg::datasets::{read_flo, write_flo};
use motionseg::nn::Map;
use ndarray::s;

use crate::error::CliError;

#[derive(clap::Args, Debug)]
pub struct FlowArgs {
    #[command(subcommand)]
    pub command: FlowCommand,
}

#[derive(clap::Subcommand, Debug)]
pub enum FlowCommand {
    /// Print dimensions and the peak displacement magnitude.
    Info { path: PathBuf },
    /// Scale displacement values and/or crop to a top-left window.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Multiply every displacement component by this factor.
        #[arg(long)]
        scale: Option<f32>,
        /// Crop to the top-left HxW window, e.g. `--crop 32x48`.
        #[arg(long, value_parser = parse_dims)]
        crop: Option<(usize, usize)>,
    },
    /// Render the field as a color-wheel PNG: hue encodes direction,
    /// saturation encodes magnitude relative to the frame's maximum.
    Visualize { input: PathBuf, output: PathBuf },
}

fn parse_dims(text: &str) -> Result<(usize, usize), String> {
    let (h, w) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{text}`"))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("bad dimension `{s}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn describe(flow: &Map<f32>) -> String {
    let (h, w, _) = flow.dim();
    let max = flow.iter().fold(0f32, |m, v| m.max(v.abs()));
    format!("{h}×{w}, max |v| = {max}")
}

pub fn run(args: &FlowArgs) -> Result<(), CliError> {
    match &args.command {
        FlowCommand::Info { path } => {
            let flow = read_flo(path)?;
            println!("{}", describe(&flow));
        }
        FlowCommand::Convert { input, output, scale, crop } => {
            let mut flow = read_flo(input)?;
            if let Some(s) = scale {
                flow.mapv_inplace(|v| v * s);
            }
            if let Some((ch, cw)) = *crop {
                let (h, w, _) = flow.dim();
                if ch == 0 || cw == 0 || ch > h || cw > w {
                    return Err(CliError::usage(format!(
                        "crop {ch}x{cw} does not fit the {h}x{w} flow field"
                    )));
                }
                flow = flow.slice(s![..ch, ..cw, ..]).to_owned();
            }
            write_flo(&flow, output)?;
            println!("{}", describe(&flow));
        }
        FlowCommand::Visualize { input, output } => {
            let flow = read_flo(input)?;
            let image = colorize(&flow);
            image
                .save_with_format(output, ImageFormat::Png)
                .map_err(|e| CliError::Image { path: output.clone(), source: e })?;
            let (h, w, _) = flow.dim();
            println!("wrote {h}×{w} visualization to {}", output.display());
        }
    }
    Ok(())
}

/// Zero flow renders as pure white; direction picks the hue and relative
/// magnitude the saturation, so the strongest vector is fully colored.
fn colorize(flow: &Map<f32>) -> RgbImage {
    let (h, w, _) = flow.dim();
    let max_mag = flow
        .outer_iter()
        .flat_map(|row| {
            row.outer_iter()
                .map(|px| (px[0] * px[0] + px[1] * px[1]).sqrt())
                .collect::<Vec<_>>()
        })
        .fold(0f32, f32::max);
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let u = flow[[y as usize, x as usize, 0]];
        let v = flow[[y as usize, x as usize, 1]];
        if max_mag <= 0.0 {
            return Rgb([255, 255, 255]);
        }
        let mag = (u * u + v * v).sqrt() / max_mag;
        let angle = v.atan2(u);
        let hue = (angle / std::f32::consts::PI + 1.0) / 2.0; // [0, 1)
        hsv_to_rgb(hue, mag.clamp(0.0, 1.0), 1.0)
    })
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> Rgb<u8> {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let sector = h6 as usize % 6;
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let byte = |x: f32| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([byte(r), byte(g), byte(b)])
}
