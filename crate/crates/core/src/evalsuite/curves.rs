//! Per-episode reward-curve export: a CSV of raw and start-offset prefix
//! scores plus a rendered line plot.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::critic::CriticModel;
use crate::dataio::{subsample_indices, FrameSampleConfig};
use crate::taskworld::EpisodeRecord;
use crate::{Error, Result};

const PLOT_W: u32 = 360;
const PLOT_H: u32 = 240;
const MARGIN: u32 = 30;

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as u32).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + (x1 - x0) * t).round() as i64;
        let y = (y0 + (y1 - y0) * t).round() as i64;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn plot_curve(points: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([250, 250, 250]));
    let (xmin, xmax) = (
        points.first().map(|p| p.0 as f64).unwrap_or(0.0),
        points.last().map(|p| p.0 as f64).unwrap_or(1.0),
    );
    let ymin = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(0.0);
    let ymax = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let yspan = (ymax - ymin).max(1e-9);
    let xspan = (xmax - xmin).max(1e-9);
    let sx = |x: f64| MARGIN as f64 + (x - xmin) / xspan * (PLOT_W - 2 * MARGIN) as f64;
    let sy = |y: f64| (PLOT_H - MARGIN) as f64 - (y - ymin) / yspan * (PLOT_H - 2 * MARGIN) as f64;
    // axes and zero line
    let axis = Rgb([120, 120, 120]);
    draw_line(&mut img, MARGIN as f64, sy(ymin), MARGIN as f64, sy(ymax), axis);
    draw_line(&mut img, sx(xmin), sy(0.0), sx(xmax), sy(0.0), axis);
    let pen = Rgb([30, 90, 200]);
    for w in points.windows(2) {
        draw_line(&mut img, sx(w[0].0 as f64), sy(w[0].1), sx(w[1].0 as f64), sy(w[1].1), pen);
    }
    img.save(path)
        .map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            msg: format!("could not write plot: {e}"),
        })
}

/// For each episode, write `ep_NNNN.csv` with one row per sampled prefix
/// (`frame_index, raw_score, offset_score`, offsets anchored so the episode
/// start scores 0) and a matching `ep_NNNN.png` line plot. Returns the CSV
/// paths.
pub fn export_reward_curves(
    model: &CriticModel<f32>,
    episodes: &[EpisodeRecord],
    sampling: &FrameSampleConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csvs = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        let caption = match &ep.caption {
            Some(c) => c.clone(),
            None => crate::taskworld::task_by_id(&ep.task_id)?.caption,
        };
        let idx = subsample_indices(ep.frames.len(), sampling, 0)?;
        let frames: Vec<_> = idx.iter().map(|&t| ep.frames[t].clone()).collect();
        let ps = model.score_prefixes(&frames, &caption)?;
        let r0 = ps.scores[0];
        let mut csv = String::from("frame_index,raw_score,offset_score\n");
        let mut points = Vec::with_capacity(idx.len());
        for (k, &t) in idx.iter().enumerate() {
            let raw = ps.scores[k];
            csv.push_str(&format!("{t},{raw},{}\n", raw - r0));
            points.push((t, raw - r0));
        }
        let csv_path = out_dir.join(format!("ep_{i:04}.csv"));
        fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
        plot_curve(&points, &out_dir.join(format!("ep_{i:04}.png")))?;
        csvs.push(csv_path);
    }
    Ok(csvs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{CriticConfig, Vocab};
    use crate::taskworld::{enumerate_tasks, generate_episode, ExpertPolicy};

    #[test]
    fn csv_rows_and_offset_anchor() {
        let cfg = CriticConfig {
            embed_dim: 16,
            text_layers: 1,
            frame_layers: 1,
            temporal_layers: 1,
            temporal_heads: 2,
            frame_patch: 16,
            ..Default::default()
        };
        let vocab = Vocab::build(enumerate_tasks().iter().map(|t| t.caption.as_str()));
        let model = CriticModel::<f32>::init(cfg, vocab, 0).unwrap();
        let task = &enumerate_tasks()[0];
        let ep = generate_episode(task, &mut ExpertPolicy, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sampling = FrameSampleConfig::default();
        let csvs = export_reward_curves(&model, std::slice::from_ref(&ep), &sampling, dir.path()).unwrap();
        assert_eq!(csvs.len(), 1);
        let text = std::fs::read_to_string(&csvs[0]).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        let expected = subsample_indices(ep.frames.len(), &sampling, 0).unwrap().len();
        assert_eq!(lines.len(), expected + 1, "header plus one row per prefix");
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[2].parse::<f64>().unwrap(), 0.0, "first offset score is 0");
        assert!(dir.path().join("ep_0000.png").exists());

        // deterministic file contents
        let dir2 = tempfile::tempdir().unwrap();
        let csvs2 = export_reward_curves(&model, std::slice::from_ref(&ep), &sampling, dir2.path()).unwrap();
        assert_eq!(std::fs::read(&csvs[0]).unwrap(), std::fs::read(&csvs2[0]).unwrap());
    }
}
