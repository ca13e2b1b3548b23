use anyhow::{Context, Result};
use serde_json::json;

use dgconv::dgfilter::{adaptive_weights, dilation_histogram, shift_pool, DGFilterParams, DilationWeights};
use dgconv::eval::{ap, kitti_frame, pr_curve, ApVariant, Difficulty, PrCurve};
use dgconv::geometry::{iou2d, iou3d};
use dgconv::kitti::{read_labels, LabelRecord};
use dgconv::Tensor;

use crate::detect::label_files;
use crate::{EvalArgs, InspectCmd, Metric, Status};

fn curve(frames: &[(Vec<LabelRecord>, Vec<LabelRecord>)], class: &str, level: Difficulty, metric: Metric, iou: f64) -> PrCurve {
    match metric {
        Metric::Box2d => {
            let fs: Vec<_> = frames.iter().map(|(g, p)| kitti_frame(g, p, class, level, |r| r.box2d())).collect();
            pr_curve(&fs, iou2d, iou)
        }
        _ => {
            let fs: Vec<_> = frames.iter().map(|(g, p)| kitti_frame(g, p, class, level, |r| r.box3d(0))).collect();
            // DontCare and malformed boxes have no footprint and never overlap
            pr_curve(&fs, |a, b| iou3d(a, b).unwrap_or(0.0), iou)
        }
    }
}

pub fn run(args: EvalArgs) -> Result<Status> {
    let mut frames = Vec::new();
    for path in label_files(&args.gt)? {
        let gts = read_labels(&path).with_context(|| format!("reading {}", path.display()))?;
        let pred_path = args.pred.join(path.file_name().expect("listed files have names"));
        let preds = if pred_path.exists() {
            read_labels(&pred_path).with_context(|| format!("reading {}", pred_path.display()))?
        } else {
            Vec::new()
        };
        frames.push((gts, preds));
    }
    let metrics: &[(Metric, &str)] = match args.metric {
        Metric::Box2d => &[(Metric::Box2d, "2d")],
        Metric::Box3d => &[(Metric::Box3d, "3d")],
        Metric::Both => &[(Metric::Box2d, "2d"), (Metric::Box3d, "3d")],
    };
    let mut rows = Vec::new();
    for class in &args.classes {
        for level in Difficulty::ALL {
            for &(metric, mname) in metrics {
                let c = curve(&frames, class, level, metric, args.iou);
                let aps = (c.num_gt > 0).then(|| (ap(&c, ApVariant::R11), ap(&c, ApVariant::R40)));
                rows.push((class.clone(), level, mname, c.num_gt, c.points.len(), aps));
            }
        }
    }
    if args.json {
        let out: Vec<_> = rows
            .iter()
            .map(|(class, level, metric, num_gt, dets, aps)| {
                json!({
                    "class": class,
                    "difficulty": level.name(),
                    "metric": metric,
                    "ground_truth": num_gt,
                    "detections": dets,
                    "ap_r11": aps.map(|a| a.0),
                    "ap_r40": aps.map(|a| a.1),
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&json!({ "frames": frames.len(), "iou": args.iou, "results": out }))?);
    } else {
        println!("frames: {}, IoU threshold {}", frames.len(), args.iou);
        println!("{:<12}{:<10}{:<7}{:>6}{:>6}{:>10}{:>10}", "class", "level", "metric", "gt", "dets", "AP|R11", "AP|R40");
        for (class, level, metric, num_gt, dets, aps) in &rows {
            let (a, b) = match aps {
                Some((a, b)) => (format!("{a:.4}"), format!("{b:.4}")),
                None => ("-".into(), "-".into()),
            };
            println!("{class:<12}{:<10}{metric:<7}{num_gt:>6}{dets:>6}{a:>10}{b:>10}", level.name());
        }
    }
    Ok(Status::Pass)
}

pub fn inspect(cmd: InspectCmd) -> Result<Status> {
    let InspectCmd::Dilation { input, seed, op, weights, json } = cmd;
    let w = match (weights, input) {
        (Some(path), _) => {
            let t = Tensor::load(&path).with_context(|| format!("reading {}", path.display()))?;
            DilationWeights::from_tensor(&t)?
        }
        (None, Some(path)) => {
            let t = Tensor::load(&path).with_context(|| format!("reading {}", path.display()))?;
            let seed = seed.context("--seed is required with --input")?;
            let p = DGFilterParams::new(t.channels(), op.k, op.d, op.n_f, seed)?;
            adaptive_weights(&shift_pool(&t, op.n_f)?, &p)?
        }
        (None, None) => unreachable!("clap requires one of --input and --weights"),
    };
    let hist = dilation_histogram(&w);
    let (n, c, d) = w.dims();
    if json {
        println!("{}", serde_json::to_string_pretty(&json!({ "batch": n, "channels": c, "rates": d, "histogram": hist }))?);
    } else {
        println!("rows: {} ({n} batch × {c} channels), rates: {d}", n * c);
        for (i, v) in hist.iter().enumerate() {
            println!("rate {}: {v:.6}", i + 1);
        }
    }
    Ok(Status::Pass)
}
