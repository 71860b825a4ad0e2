use std::fs;
use std::path::{Path, PathBuf};

use mhenet::checkpoint;
use mhenet::data::{images_by_stem, io, DEPTH_DIR, GT_DIR, RGB_DIR};

use crate::config::RunConfig;
use crate::{set_threads, CliError, CliResult, PredictArgs};

/// Run the model on every RGB/depth pair under `--input` and write `M2` as
/// `<out>/<id>.png` at the ground-truth size when a mask exists, otherwise
/// at the RGB size. With `--all-heads`, `M1` and `M3` go to `<out>/M1` and
/// `<out>/M3`. Returns the written `M2` paths.
pub fn cmd_predict(a: &PredictArgs) -> CliResult<Vec<PathBuf>> {
    set_threads(a.common.threads);
    let (net, params) = checkpoint::load(&a.checkpoint, None)?;
    // Flags and config files describe the network the caller expects.
    if a.common.config.is_some() || a.common.channels.is_some() || a.common.ablate.is_some() {
        let mut expected = RunConfig::resolve(&a.common)?.network;
        if a.common.config.is_none() {
            let mut base = net.config.clone();
            if let Some(c) = a.common.channels {
                base.channels = c;
            }
            if a.common.ablate.is_some() {
                base.ablation = expected.ablation;
            }
            expected = base;
        }
        net.config.check_compatible(&expected)?;
    }
    let [h, w] = a.common.size.unwrap_or(net.config.input_size);
    if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
        return Err(CliError::Failed(format!("input size {h}x{w} must be a positive multiple of 32")));
    }
    let out = a.common.out.clone().unwrap_or_else(|| PathBuf::from("predictions"));
    let dirs: Vec<PathBuf> = if a.all_heads {
        vec![out.join("M1"), out.clone(), out.join("M3")]
    } else {
        vec![out.clone()]
    };
    for d in &dirs {
        fs::create_dir_all(d).map_err(|e| CliError::file(d, e))?;
    }

    let rgbs = images_by_stem(&a.input.join(RGB_DIR))?;
    let depths = images_by_stem(&a.input.join(DEPTH_DIR))?;
    let gt_dir = a.input.join(GT_DIR);
    let gts = if gt_dir.is_dir() { images_by_stem(&gt_dir)? } else { Vec::new() };
    let mut written = Vec::new();
    for (id, rgb_path) in &rgbs {
        let depth_path = depths
            .iter()
            .find(|(d, _)| d == id)
            .map(|(_, p)| p)
            .ok_or_else(|| CliError::Failed(format!("{id}: no depth map in {}", a.input.join(DEPTH_DIR).display())))?;
        let rgb = io::read_rgb(rgb_path)?;
        let depth = io::read_gray(depth_path)?;
        let target = match gts.iter().find(|(g, _)| g == id) {
            Some((_, p)) => {
                let s = io::read_gray(p)?.shape();
                (s.h, s.w)
            }
            None => (rgb.shape().h, rgb.shape().w),
        };
        let masks = net.predict(&params, &rgb.resized(h, w), &depth.resized(h, w))?;
        let name = format!("{id}.png");
        if a.all_heads {
            for (m, d) in masks.iter().zip(&dirs) {
                io::write_gray(d.join(&name), &m.resized(target.0, target.1))?;
            }
        } else {
            io::write_gray(out.join(&name), &masks[1].resized(target.0, target.1))?;
        }
        written.push(out.join(&name));
    }
    if written.is_empty() {
        return Err(CliError::Failed(format!("no images under {}", a.input.join(RGB_DIR).display())));
    }
    println!("wrote {} masks to {}", written.len(), display(&out));
    Ok(written)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
