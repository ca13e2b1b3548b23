use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde_json::json;

use dgconv::anchors::{fit_priors, generate_templates, load_anchors, save_anchors};
use dgconv::codec::{decode_map, DecodeOptions, Layout, OutputVector};
use dgconv::geometry::{enclosing_rect, nms, refine_alpha, RefineConfig};
use dgconv::kitti::{emit_labels, read_calib, read_labels, LabelRecord, Precision};
use dgconv::losses::{background_components, component_losses, total_loss, CornerDepthTarget, LossBreakdown};
use dgconv::Tensor;

use crate::{AnchorsCmd, DecodeArgs, LossArgs, Status};

/// `*.txt` files of a directory, sorted by name.
pub fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"));
    files.sort();
    Ok(files)
}

pub fn anchors(cmd: AnchorsCmd) -> Result<Status> {
    let AnchorsCmd::Fit { labels, calib, classes, stride, width, height, out } = cmd;
    let mut gts = Vec::new();
    let mut skipped = 0;
    for path in label_files(&labels)? {
        let name = path.file_name().expect("listed files have names");
        let k = read_calib(calib.join(name)).with_context(|| format!("calibration for {}", path.display()))?;
        for r in read_labels(&path).with_context(|| format!("reading {}", path.display()))? {
            if !classes.contains(&r.kind) {
                continue;
            }
            let b = r.box3d(0);
            // boxes reaching behind the camera have no enclosing rectangle
            if enclosing_rect(&k, &b).is_err() {
                skipped += 1;
                continue;
            }
            gts.push((b, k));
        }
    }
    let fit = fit_priors(&generate_templates(), &gts, stride, (width, height))?;
    save_anchors(&out, &fit.anchors).with_context(|| format!("writing {}", out.display()))?;
    let matched = fit.anchors.iter().filter(|a| a.match_count > 0).count();
    println!("boxes: {} used, {skipped} skipped", gts.len());
    println!("templates: {} total, {matched} matched", fit.anchors.len());
    let g = fit.global_prior;
    println!("global prior: z={:.3} w={:.3} h={:.3} l={:.3} alpha={:.3}", g[0], g[1], g[2], g[3], g[4]);
    if fit.all_fallback {
        println!("warning: no template matched any box; every prior is the global mean");
    }
    println!("wrote {}", out.display());
    Ok(Status::Pass)
}

pub fn decode(args: DecodeArgs) -> Result<Status> {
    let map = Tensor::load(&args.output).with_context(|| format!("reading {}", args.output.display()))?;
    let anchors = load_anchors(&args.anchors).with_context(|| format!("reading {}", args.anchors.display()))?;
    let calib = read_calib(&args.calib).with_context(|| format!("reading {}", args.calib.display()))?;
    let n_c = args.classes.len();
    let background_class = match args.background.as_str() {
        "none" => None,
        s => {
            let i: usize = s.parse().with_context(|| format!("background slot {s:?}"))?;
            ensure!(i < n_c, "background slot {i} outside {n_c} classes");
            Some(i)
        }
    };
    ensure!(args.batch < map.batch(), "batch item {} of {}", args.batch, map.batch());
    let opts = DecodeOptions { n_c, stride: args.stride, score_threshold: args.score_threshold, background_class };
    let dets: Vec<_> =
        decode_map(&map, &anchors, &calib, opts)?.into_iter().filter(|d| d.batch == args.batch).collect();
    let mut records = Vec::new();
    for class in 0..n_c {
        let of_class: Vec<_> = dets.iter().filter(|d| d.decoded.box3d.class_id == class).collect();
        let boxes: Vec<_> = of_class.iter().map(|d| (d.decoded.box2d, d.decoded.box3d.score)).collect();
        for i in nms(&boxes, args.nms) {
            let d = &of_class[i].decoded;
            let b3 = if args.refine { refine_alpha(&d.box3d, &d.box2d, &calib, RefineConfig::default()) } else { d.box3d };
            records.push(LabelRecord::from_detection(&args.classes[class], &d.box2d, &b3));
        }
    }
    let text = emit_labels(&records, Precision::Fixed2);
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("{} detections ({} before suppression) written to {}", records.len(), dets.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(Status::Pass)
}

fn vector_at(t: &Tensor, b: usize, a: usize, per: usize, row: usize, col: usize, n_c: usize) -> Result<OutputVector> {
    let v: Vec<f64> = (0..per).map(|s| t.at(b, a * per + s, row, col)).collect();
    Ok(OutputVector::from_slice(&v, n_c)?)
}

/// Target anchors carry one-hot class scores; an anchor whose hot slot is
/// the background slot, or that has none, is background.
pub fn loss(args: LossArgs) -> Result<Status> {
    let pred = Tensor::load(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let target = Tensor::load(&args.target).with_context(|| format!("reading {}", args.target.display()))?;
    let anchors = load_anchors(&args.anchors).with_context(|| format!("reading {}", args.anchors.display()))?;
    pred.check_same_dims(&target).context("prediction and target extents")?;
    ensure!(args.background < args.n_c, "background slot {} outside {} classes", args.background, args.n_c);
    let per = Layout::new(args.n_c).len();
    let [n, c, h, w] = pred.dims();
    if c != anchors.len() * per {
        bail!("{c} channels, expected {} anchors × {per}", anchors.len());
    }
    let mode = if args.per_corner_depth { CornerDepthTarget::CornerDepths } else { CornerDepthTarget::CenterDepth };
    let mut sum = LossBreakdown::default();
    let (mut fg, mut bg) = (0usize, 0usize);
    for b in 0..n {
        for row in 0..h {
            for col in 0..w {
                for a in 0..anchors.len() {
                    let pv = vector_at(&pred, b, a, per, row, col, args.n_c)?;
                    let tv = vector_at(&target, b, a, per, row, col, args.n_c)?;
                    let hot = tv.scores.iter().position(|&s| s > 0.0).filter(|&i| i != args.background);
                    let at = |what: &str| format!("{what} at batch {b}, cell ({row}, {col}), anchor {a}");
                    let s_t = pv.scores[hot.unwrap_or(args.background)];
                    let comps = match hot {
                        Some(_) => {
                            fg += 1;
                            component_losses(&pv, &tv, s_t, mode).with_context(|| at("foreground"))?
                        }
                        None => {
                            bg += 1;
                            background_components(s_t).with_context(|| at("background"))?
                        }
                    };
                    sum.accumulate(&total_loss(comps, s_t, args.gamma).with_context(|| at("anchor"))?);
                }
            }
        }
    }
    let count = (fg + bg).max(1) as f64;
    if args.json {
        let row = |v: f64| json!({ "sum": v, "mean": v / count });
        let report = json!({
            "anchors": fg + bg,
            "foreground": fg,
            "background": bg,
            "gamma": args.gamma,
            "class_loss": row(sum.class_loss),
            "loss_2d": row(sum.loss_2d),
            "loss_3d": row(sum.loss_3d),
            "loss_corner": row(sum.loss_corner),
            "total": row(sum.total),
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("anchors: {} ({fg} foreground, {bg} background), gamma {}", fg + bg, args.gamma);
        println!("{:<12}{:>16}{:>16}", "term", "sum", "mean");
        for (name, v) in [
            ("class", sum.class_loss),
            ("2d", sum.loss_2d),
            ("3d", sum.loss_3d),
            ("corner", sum.loss_corner),
            ("total", sum.total),
        ] {
            println!("{name:<12}{v:>16.8}{:>16.8}", v / count);
        }
    }
    Ok(Status::Pass)
}
