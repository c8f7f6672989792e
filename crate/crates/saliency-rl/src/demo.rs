//! Frame dumps from the environment and an offline run of the perception
//! pipeline over a directory of frames.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use saliency_core::agent::{region_segments, PerceptionParams};
use saliency_core::env::{Action, EnvConfig, Gallery};
use saliency_core::flow::{estimate_flow, flow_gradient, FlowField};
use saliency_core::flowseg::{extract_background, segment_foreground, BackgroundOutcome, SegLabeling, NOISE};
use saliency_core::knowledge::KnowledgeDataset;
use saliency_core::raster::{to_grayscale, BBox, Frame};

use crate::netpbm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpPolicy {
    Scripted,
    Noop,
    Shoot,
}

/// Writes `frame_NNNN.ppm` and `mask_NNNN.pgm` for the reset frame and
/// each of `steps` steps.
pub fn dump_frames(env: &EnvConfig, seed: u64, steps: usize, policy: DumpPolicy, out: &Path) -> Result<usize> {
    fs::create_dir_all(out)?;
    let (mut g, first) = Gallery::reset(env, seed)?;
    let mut outcome = first;
    let mut written = 0;
    loop {
        netpbm::write_ppm(&out.join(format!("frame_{written:04}.ppm")), &outcome.frame)?;
        netpbm::write_mask(&out.join(format!("mask_{written:04}.pgm")), &outcome.truth.mask)?;
        written += 1;
        if written > steps || g.is_done() {
            break;
        }
        let a = match policy {
            DumpPolicy::Scripted => g.scripted_action(),
            DumpPolicy::Noop => Action::Noop,
            DumpPolicy::Shoot => Action::Shoot,
        };
        outcome = g.step(a)?;
    }
    Ok(written)
}

/// Segments found between a pair of consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    /// Index of the later frame.
    pub frame: usize,
    pub skipped: bool,
    pub boxes: Vec<(BBox, Option<usize>)>,
}

fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    files.sort();
    Ok(files)
}

/// u and v remapped as 128 + 16·d, clamped; invalid pixels are 0.
fn flow_planes(flow: &FlowField) -> (Vec<u8>, Vec<u8>) {
    let (w, h) = (flow.width(), flow.height());
    let (mut u, mut v) = (vec![0u8; w * h], vec![0u8; w * h]);
    let q = |d: f64| (128.0 + 16.0 * d).round().clamp(1.0, 255.0) as u8;
    for y in 0..h {
        for x in 0..w {
            if flow.is_valid(x, y) {
                u[y * w + x] = q(flow.u(x, y));
                v[y * w + x] = q(flow.v(x, y));
            }
        }
    }
    (u, v)
}

/// Background 0, noise 32, regions spread over 64..=255.
fn label_plane(labels: &SegLabeling, background: &[bool]) -> Vec<u8> {
    labels
        .labels
        .iter()
        .zip(background)
        .map(|(&l, &bg)| match (l, bg) {
            (_, true) => 0,
            (NOISE, _) => 32,
            (l, _) => 64 + ((l as usize * 47) % 192) as u8,
        })
        .collect()
}

fn draw_box(frame: &mut Frame, b: &BBox, rgb: [u8; 3]) {
    let Some(b) = b.clamped(frame.width(), frame.height()) else { return };
    for x in b.x0..b.x1() {
        frame.set_pixel(x as usize, b.y0 as usize, rgb);
        frame.set_pixel(x as usize, (b.y1() - 1) as usize, rgb);
    }
    for y in b.y0..b.y1() {
        frame.set_pixel(b.x0 as usize, y as usize, rgb);
        frame.set_pixel((b.x1() - 1) as usize, y as usize, rgb);
    }
}

/// Runs flow, segmentation and (given a knowledge dataset) categorisation
/// on each consecutive pair of `*.ppm` frames in `frames`, writing
/// `flow_u_NNNN.pgm`, `flow_v_NNNN.pgm`, `seg_NNNN.pgm`, `overlay_NNNN.ppm`
/// and `labels_NNNN.txt` into `out`.
pub fn pipeline_demo(frames: &Path, out: &Path, params: &PerceptionParams, knowledge: Option<&KnowledgeDataset>, seed: u64) -> Result<Vec<PairResult>> {
    let files = ppm_files(frames)?;
    if files.len() < 2 {
        bail!("need at least two frames in {}, found {}", frames.display(), files.len());
    }
    fs::create_dir_all(out)?;
    let mut prev = to_grayscale(&netpbm::read_ppm(&files[0]).with_context(|| format!("reading {}", files[0].display()))?);
    let mut results = Vec::new();
    for (i, path) in files.iter().enumerate().skip(1) {
        let frame = netpbm::read_ppm(path).with_context(|| format!("reading {}", path.display()))?;
        let gray = to_grayscale(&frame);
        if (gray.width(), gray.height()) != (prev.width(), prev.height()) {
            bail!("{} differs in size from the previous frame", path.display());
        }
        let flow = estimate_flow(&prev, &gray, &params.flow)?;
        let (u, v) = flow_planes(&flow);
        let (w, h) = (gray.width(), gray.height());
        fs::write(out.join(format!("flow_u_{i:04}.pgm")), netpbm::encode_pgm_bytes(w, h, &u))?;
        fs::write(out.join(format!("flow_v_{i:04}.pgm")), netpbm::encode_pgm_bytes(w, h, &v))?;
        let grad = flow_gradient(&flow);
        let (skipped, boxes, seg) = match extract_background(&grad, &params.seg, seed ^ i as u64) {
            BackgroundOutcome::FrameSkipped { .. } => (true, Vec::new(), vec![0u8; w * h]),
            BackgroundOutcome::Found(bg) => {
                let labels = segment_foreground(&grad, &bg, &params.seg);
                let segs = region_segments(&labels, &flow, &gray, params);
                let mut boxes = Vec::new();
                for s in &segs {
                    let c = match knowledge {
                        Some(k) if k.version() >= 1 => k.categorize(&s.descriptor, &params.cluster)?,
                        _ => None,
                    };
                    boxes.push((s.bbox, c));
                }
                (false, boxes, label_plane(&labels, &bg.mask))
            }
        };
        fs::write(out.join(format!("seg_{i:04}.pgm")), netpbm::encode_pgm_bytes(w, h, &seg))?;
        let mut overlay = frame.clone();
        for (b, _) in &boxes {
            draw_box(&mut overlay, b, [255, 255, 0]);
        }
        netpbm::write_ppm(&out.join(format!("overlay_{i:04}.ppm")), &overlay)?;
        let mut text = if skipped { String::from("# frame skipped: background too small\n") } else { String::new() };
        for (b, c) in &boxes {
            let cat = c.map_or_else(|| "unlabeled".to_string(), |c| c.to_string());
            text.push_str(&format!("{} {} {} {} {cat}\n", b.x0, b.y0, b.w, b.h));
        }
        fs::write(out.join(format!("labels_{i:04}.txt")), text)?;
        results.push(PairResult { frame: i, skipped, boxes });
        prev = gray;
    }
    Ok(results)
}
